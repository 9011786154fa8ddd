"""Shared test oracles: finite differences, random system sampling, fixtures.

Everything here is independent of the closed-form implementations it checks:
finite differences approximate gradients/Hessians from energy values alone,
and random operating points are built by evaluating the power balance at
sampled voltages so they satisfy it by construction.
"""

import numpy as np

import gridcert as gc
from gridcert.linearization import assemble_energy_hessian


def fd_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h / 2
        g[i] = (f(x + e) - f(x - e)) / h
    return g


def fd_hessian(f, x, h=2e-4, refine=False):
    """Central-difference Hessian; `refine` adds one Richardson step (O(h^4))."""
    if refine:
        return (4.0 * fd_hessian(f, x, h / 2) - fd_hessian(f, x, h)) / 3.0
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    E = np.eye(n) * (h / 2)
    f0 = f(x)
    for i in range(n):
        for j in range(i, n):
            if i == j:
                H[i, i] = (f(x + 2 * E[i]) - 2 * f0 + f(x - 2 * E[i])) / h**2
            else:
                p = (f(x + E[i] + E[j]) - f(x + E[i] - E[j])
                     - f(x - E[i] + E[j]) + f(x - E[i] - E[j]))
                H[i, j] = H[j, i] = p / h**2
    return H


def random_reactances(rng):
    return float(rng.uniform(0.05, 0.35)), float(rng.uniform(0.05, 0.35))


def random_operating_point(rng, x_q, margin=0.1):
    """Valid operating point for a device with the given q-axis reactance."""
    for _ in range(200):
        V = float(rng.uniform(0.9, 1.1))
        P = float(rng.uniform(-2.0, 2.0))
        Q = float(rng.uniform(-0.5, 2.0))
        if Q + V**2 / x_q > margin:
            return gc.OperatingPoint(V=V, P=P, Q=Q)
    raise AssertionError("could not sample a valid operating point")


def random_two_axis(rng, x_d=None, x_q=None):
    if x_d is None:
        x_d, x_q = random_reactances(rng)
    return gc.TwoAxisGenerator(
        M=float(rng.uniform(0.05, 0.5)), D=float(rng.uniform(0.5, 5.0)),
        tau_d=float(rng.uniform(1.0, 8.0)), tau_q=float(rng.uniform(0.3, 3.0)),
        X_d=x_d, X_q=x_q,
        X_d_prime=x_d * float(rng.uniform(0.3, 0.7)),
        X_q_prime=x_q * float(rng.uniform(0.3, 0.7)),
    )


def random_system(rng, angle_scale=0.35, n_bus=None, allow_loads=True):
    """Random connected system at an exact stationary power flow.

    Angles and voltages are sampled, (P, Q) computed from the balance, and a
    device drawn per bus; operating points outside a device's capability
    region trigger a resample of its reactances. Returns (system, flow) or
    None when no valid draw was found.
    """
    n = int(rng.integers(2, 5)) if n_bus is None else n_bus
    lines = []
    for j in range(1, n):
        i = int(rng.integers(0, j))
        lines.append(gc.Line(i, j, float(rng.uniform(2.0, 40.0))))
    for _ in range(int(rng.integers(0, n))):
        i, j = rng.choice(n, size=2, replace=False)
        lines.append(gc.Line(int(i), int(j), float(rng.uniform(2.0, 40.0))))
    net = gc.Network.from_lines(n, lines)

    theta = rng.uniform(-angle_scale, angle_scale, n)
    V = rng.uniform(0.95, 1.05, n)
    P, Q = gc.power_balance(theta, V, net)

    kinds = ["two_axis", "vsg", "fdc"] + (["load"] if allow_loads else [])
    devices = []
    n_dev = 0
    for i in range(n):
        kind = str(rng.choice(kinds))
        if kind == "load" and n_dev == 0 and i == n - 1:
            kind = "vsg"  # keep at least one device with an internal angle
        if kind == "load":
            devices.append(gc.ConstantPowerLoad(P_ref=float(P[i]), Q_ref=float(Q[i])))
            continue
        op = None
        for _ in range(40):
            x_d, x_q = random_reactances(rng)
            if Q[i] + V[i] ** 2 / x_q > 0.05:
                op = (x_d, x_q)
                break
        if op is None:
            return None
        x_d, x_q = op
        n_dev += 1
        M = float(rng.uniform(0.05, 0.5))
        D = float(rng.uniform(0.5, 5.0))
        if kind == "two_axis":
            devices.append(random_two_axis(rng, x_d, x_q))
        elif kind == "vsg":
            devices.append(gc.VsgInverter(M=M, D=D, X_d=x_d, X_q=x_q))
        else:
            devices.append(gc.DroopInverter(D=D, X_d=x_d, X_q=x_q))
    if n_dev == 0:
        return None
    system = gc.PowerSystem(net, devices)
    flow = gc.PowerFlowSolution(theta=theta, V=V, P=P, Q=Q, residual=0.0, iterations=0)
    return system, flow


def voltage_regular(system, eq, margin=1e-6):
    """True when the algebraic (theta, V) block of the energy Hessian is positive definite.

    The closed-form certificate and the eigenvalue oracle are provably
    equivalent on this set; constant-power loads at heavily stressed
    operating points can leave it.
    """
    H = assemble_energy_hessian(system, eq)
    return float(np.linalg.eigvalsh(H.vv)[0]) > margin


def verdict_margins(report, eig_report):
    """Distance of each verdict from its marginal boundary."""
    cert_vals = [abs(g) for g in report.gammas.values()]
    if report.min_eig is not None:
        cert_vals.append(abs(report.min_eig))
    rest = [ev for ev in eig_report.eigenvalues if ev != eig_report.zero_eigenvalue]
    eig_margin = min((abs(ev.real) for ev in rest), default=np.inf)
    return min(cert_vals), eig_margin


def three_bus_doc(x3=(0.1, 0.069), M=0.2, D=1.0, tau_d=5.0, tau_q=1.0,
                  kind1="two_axis", kind3="vsg"):
    """Config document for the bundled 3-bus study with adjustable bus-3 reactances."""
    if kind1 == "two_axis":
        dev1 = {"kind": "two_axis", "M": M, "D": D, "tau_d": tau_d, "tau_q": tau_q,
                "X_d": 0.1, "X_q": 0.069, "X_d_prime": 0.05, "X_q_prime": 0.03}
    else:
        dev1 = {"kind": kind1, "M": M, "D": D, "X_d": 0.1, "X_q": 0.069}
    dev3 = {"kind": kind3, "M": M, "D": D, "X_d": x3[0], "X_q": x3[1]}
    if kind3 == "fdc":
        dev3 = {"kind": "fdc", "D": D, "X_d": x3[0], "X_q": x3[1]}
    return {
        "omega0": 376.99111843077515,
        "buses": [
            {"id": 1, "device": dev1, "spec": {"type": "pv", "P": 1.0, "V": 1.0}},
            {"id": 2, "device": {"kind": "vsg", "M": M, "D": D, "X_d": 0.1, "X_q": 0.069},
             "spec": {"type": "pq", "P": -3.5, "Q": -0.5}},
            {"id": 3, "device": dev3, "spec": {"type": "slack", "theta": 0.0, "V": 1.0}},
        ],
        "lines": [{"from": 1, "to": 2, "b": 40.0}, {"from": 2, "to": 3, "b": 45.0}],
    }


def solved(cfg):
    return gc.solve_power_flow(cfg.system.net, cfg.bus_specs)


TABLE1 = {
    "theta": np.array([-0.0308, -0.0560, 0.0]),
    "V": np.array([1.0000, 0.9931, 1.0000]),
    "P": np.array([1.0000, -3.5000, 2.5000]),
    "Q": np.array([0.2886, -0.5000, 0.3805]),
}
