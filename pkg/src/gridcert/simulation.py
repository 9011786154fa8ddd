"""Nonlinear time-domain integration of the differential-algebraic power system.

Semi-explicit index-1 treatment: device states advance with classical
fixed-step RK4 while the bus voltages (theta_i, V_i) are re-solved by Newton
at every stage so that device outputs match the network power balance. Along
trajectories the total Bregman storage (relative to a chosen equilibrium) is
tracked; for exact solutions it decays at the analytic dissipation rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .certificate import network_hessian
from .network import power_balance
from .system import Equilibrium, PowerSystem

__all__ = [
    "AlgebraicSolveError",
    "solve_bus_voltages",
    "algebraic_residual",
    "bregman_storage",
    "dissipation_rate",
    "Trajectory",
    "perturbed_state",
    "simulate",
]


class AlgebraicSolveError(RuntimeError):
    """Per-stage Newton solve of the bus voltages failed to converge."""


def _split_states(system, x):
    slices = system.state_slices()
    return [np.asarray(x[sl], dtype=float) for sl in slices]


def _voltage_gradient(system, states, v, setpoints):
    """Gradient of the total energy with respect to interleaved (theta, V)."""
    theta = v[0::2]
    V = v[1::2]
    P_net, Q_net = power_balance(theta, V, system.net)
    g = np.empty_like(v)
    g[0::2] = P_net
    g[1::2] = Q_net / V
    for i, dev in enumerate(system.devices):
        gd = dev.energy_gradient(states[i], theta[i], V[i], setpoints[i], system.omega0)
        g[2 * i] += gd[-2]
        g[2 * i + 1] += gd[-1]
    return g


def _voltage_hessian(system, states, v, setpoints):
    theta = v[0::2]
    V = v[1::2]
    H = network_hessian(theta, V, system.net.B)
    for i, dev in enumerate(system.devices):
        Hd = dev.energy_hessian(states[i], theta[i], V[i], setpoints[i], system.omega0)
        H[2 * i:2 * i + 2, 2 * i:2 * i + 2] += Hd[-2:, -2:]
    return H


def algebraic_residual(system, states, v, setpoints):
    """Infinity norm of the (P, Q) mismatch between device outputs and network balance."""
    theta = v[0::2]
    V = v[1::2]
    P_net, Q_net = power_balance(theta, V, system.net)
    worst = 0.0
    for i, dev in enumerate(system.devices):
        P, Q = dev.output_power(states[i], theta[i], V[i], setpoints[i])
        worst = max(worst, abs(P - P_net[i]), abs(Q - Q_net[i]))
    return worst


def solve_bus_voltages(system, states, v_guess, setpoints, tol=1e-10, max_iter=30):
    """Newton solve of the bus voltages for fixed device states.

    The residual is the gradient of the total energy in the bus variables
    (equivalently the device/network power mismatch with Q scaled by 1/V);
    the Jacobian is the corresponding voltage Hessian. Converges from the
    previous step's voltages during integration. Raises AlgebraicSolveError
    on divergence, which simulate() treats as a step rejection.
    """
    if isinstance(states, np.ndarray):
        states = _split_states(system, states)
    v = np.array(v_guess, dtype=float)
    for _ in range(max_iter):
        if np.any(v[1::2] <= 0) or not np.all(np.isfinite(v)):
            raise AlgebraicSolveError("bus voltage iterate left the feasible region")
        g = _voltage_gradient(system, states, v, setpoints)
        if np.max(np.abs(g)) <= 0.1 * tol:
            break
        H = _voltage_hessian(system, states, v, setpoints)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise AlgebraicSolveError("singular voltage Jacobian") from exc
        v = v - step
    else:
        raise AlgebraicSolveError(
            f"voltage Newton did not converge in {max_iter} iterations "
            f"(residual {np.max(np.abs(g)):.3e})"
        )
    res = algebraic_residual(system, states, v, setpoints)
    if res > tol:
        raise AlgebraicSolveError(f"voltage solve residual {res:.3e} exceeds {tol:.1e}")
    return v


def bregman_storage(system, eq: Equilibrium, states, v):
    """Total storage: energy minus its first-order expansion at the equilibrium.

    Zero with zero gradient at the equilibrium itself; serves as the Lyapunov
    function along simulated trajectories.
    """
    if isinstance(states, np.ndarray):
        states = _split_states(system, states)
    theta = v[0::2]
    V = v[1::2]
    theta_s = np.asarray(eq.flow.theta, dtype=float)
    V_s = np.asarray(eq.flow.V, dtype=float)

    _, Q_net_s = power_balance(theta_s, V_s, system.net)
    W = _network_energy(system, theta, V) - _network_energy(system, theta_s, V_s)
    # network gradient at the equilibrium: (P*, Q*/V*) per bus
    W -= float(np.dot(eq.flow.P, theta - theta_s) + np.dot(Q_net_s / V_s, V - V_s))

    for i, dev in enumerate(system.devices):
        sp = eq.setpoints[i]
        xs = eq.states[i]
        W += dev.energy(states[i], theta[i], V[i], sp, system.omega0)
        W -= dev.energy(xs, theta_s[i], V_s[i], sp, system.omega0)
        gs = dev.energy_gradient(xs, theta_s[i], V_s[i], sp, system.omega0)
        dz = np.concatenate([states[i] - xs, [theta[i] - theta_s[i], V[i] - V_s[i]]])
        W -= float(np.dot(gs, dz))
    return float(W)


def _network_energy(system, theta, V):
    D = np.subtract.outer(theta, theta)
    W = system.net.B * np.outer(V, V)
    return -0.5 * float((W * np.cos(D)).sum())


def dissipation_rate(system, states, v, setpoints):
    """Analytic storage decay rate: -sum D ddelta^2/omega0 - sum tau dE^2/(X - X')."""
    if isinstance(states, np.ndarray):
        states = _split_states(system, states)
    theta = v[0::2]
    V = v[1::2]
    rate = 0.0
    for i, dev in enumerate(system.devices):
        deriv = dev.state_derivative(states[i], theta[i], V[i], setpoints[i], system.omega0)
        rate += dev.dissipation_rate(deriv, system.omega0)
    return rate


@dataclass
class Trajectory:
    """Sampled states of one simulation run.

    x rows are concatenated device states, v rows interleaved (theta, V),
    W the Bregman storage per sample. `diagnostic` is set when the run was
    truncated by an algebraic solve failure.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    W: np.ndarray
    truncated: bool = False
    diagnostic: str | None = None
    system: PowerSystem | None = field(default=None, repr=False)
    equilibrium: Equilibrium | None = field(default=None, repr=False)

    def deviations(self):
        """Per-sample 2-norm distance to the reference stationary set.

        Stationarity is defined up to a uniform phase shift of all angles, so
        the distance is minimized over that shift: the mean deviation of the
        angle coordinates (device deltas and bus thetas) is projected out.
        """
        system = self.system
        x_s = self.equilibrium.x()
        v_s = self.equilibrium.v()
        n_x = x_s.size
        angle_mask = np.zeros(n_x + v_s.size, dtype=bool)
        for dev, sl in zip(system.devices, system.state_slices()):
            if dev.n_states:
                angle_mask[sl.start] = True
        angle_mask[n_x::2] = True
        dz = np.hstack([self.x - x_s, self.v - v_s])
        shift = dz[:, angle_mask].mean(axis=1)
        dz[:, angle_mask] -= shift[:, None]
        return np.linalg.norm(dz, axis=1)


def perturbed_state(eq: Equilibrium, bus, delta_shift):
    """Equilibrium device states with one rotor angle shifted by `delta_shift` radians."""
    dev = eq.system.devices[bus]
    if dev.n_states == 0:
        raise ValueError(f"bus {bus} hosts a load; it has no angle to perturb")
    x0 = eq.x().copy()
    sl = eq.system.state_slices()[bus]
    x0[sl.start] += delta_shift
    return x0


def _derivative(system, states, v, setpoints):
    theta = v[0::2]
    V = v[1::2]
    parts = [
        dev.state_derivative(states[i], theta[i], V[i], setpoints[i], system.omega0)
        for i, dev in enumerate(system.devices)
    ]
    return np.concatenate(parts) if parts else np.zeros(0)


def simulate(system, eq: Equilibrium, x0=None, dt=1e-3, t_end=1.0, record_every=1):
    """Fixed-step RK4 integration with a Newton voltage solve at every stage.

    Starts from device states `x0` (default: the equilibrium itself) with the
    bus voltages re-solved for consistency. On an algebraic solve failure the
    trajectory is truncated and returned with a diagnostic instead of raising.
    """
    setpoints = eq.setpoints
    x = np.array(x0 if x0 is not None else eq.x(), dtype=float)
    n_steps = int(round(t_end / dt))

    v = solve_bus_voltages(system, _split_states(system, x), eq.v(), setpoints)

    ts = [0.0]
    xs = [x.copy()]
    vs = [v.copy()]
    Ws = [bregman_storage(system, eq, x, v)]
    truncated = False
    diagnostic = None

    def rhs(x_stage, v_warm):
        states = _split_states(system, x_stage)
        v_stage = solve_bus_voltages(system, states, v_warm, setpoints)
        return _derivative(system, states, v_stage, setpoints), v_stage

    for k in range(n_steps):
        try:
            k1, v1 = rhs(x, v)
            k2, v2 = rhs(x + 0.5 * dt * k1, v1)
            k3, v3 = rhs(x + 0.5 * dt * k2, v2)
            k4, v4 = rhs(x + dt * k3, v3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            v = solve_bus_voltages(system, _split_states(system, x), v4, setpoints)
        except AlgebraicSolveError as exc:
            truncated = True
            diagnostic = f"truncated at t={ts[-1]:.6g}s: {exc}"
            break
        if (k + 1) % record_every == 0 or k == n_steps - 1:
            ts.append((k + 1) * dt)
            xs.append(x.copy())
            vs.append(v.copy())
            Ws.append(bregman_storage(system, eq, x, v))

    return Trajectory(
        t=np.array(ts),
        x=np.array(xs),
        v=np.array(vs),
        W=np.array(Ws),
        truncated=truncated,
        diagnostic=diagnostic,
        system=system,
        equilibrium=eq,
    )
