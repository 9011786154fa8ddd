"""Bus component models and their energy functions.

Four device kinds can sit at a bus:

* TwoAxisGenerator -- synchronous machine with rotor angle, frequency
  deviation and d/q internal voltages behind transient reactances.
* VsgInverter -- virtual synchronous generator (swing equation with an
  internal voltage source behind the synchronous reactances).
* DroopInverter -- frequency droop control, the small-inertia limit of the
  VSG (first-order angle dynamics).
* ConstantPowerLoad -- grid-following load drawing fixed (P, Q).

Each device exposes its grid output power, the right-hand side of its state
equation, the stationary setpoint/state realizing a given operating point,
and its stored-energy function together with closed-form gradients and
Hessians over (internal states..., theta, V). The Hessians feed both the
stability certificate cross-checks and the linearized-dynamics oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OMEGA0_DEFAULT",
    "OperatingPoint",
    "Setpoint",
    "CapabilityError",
    "internal_phase",
    "stationary_setpoint",
    "reduced_stiffness_blocks",
    "Device",
    "TwoAxisGenerator",
    "VsgInverter",
    "DroopInverter",
    "ConstantPowerLoad",
    "device_from_dict",
]

#: Nominal angular frequency [rad/s]; only trajectories and eigenvalues scale
#: with it, the certificate verdict does not.
OMEGA0_DEFAULT = 2 * math.pi * 60.0

_STATIONARY_TOL = 1e-10


@dataclass(frozen=True)
class OperatingPoint:
    """Stationary voltage magnitude and power injection seen at one bus."""

    V: float
    P: float
    Q: float

    def __post_init__(self):
        if not self.V > 0:
            raise ValueError(f"bus voltage must be positive, got V={self.V}")


@dataclass(frozen=True)
class Setpoint:
    """Constant inputs realizing an operating point: mechanical power and field voltage."""

    P_m: float
    V_fd: float


class CapabilityError(ValueError):
    """Operating point outside generator capability: Q + V^2/X_q must be positive."""


def internal_phase(op, X_q):
    """Phase of the internal voltage source relative to the bus voltage.

    phi = arctan(P / (Q + V^2/X_q)), well-defined in (-pi/2, pi/2) only when
    the denominator is positive; otherwise the operating point cannot be
    realized on the principal branch and CapabilityError is raised.
    """
    den = op.Q + op.V**2 / X_q
    if den <= 0:
        raise CapabilityError(
            f"operating point outside generator capability: Q + V^2/X_q = {den:.6g} <= 0"
        )
    return math.atan(op.P / den)


def stationary_setpoint(op, X_d, X_q):
    """Mechanical power and field voltage that hold the device at `op`.

    Invariant under uniform phase shifts of the target flow (depends on the
    operating point only through V, P, Q).
    """
    phi = internal_phase(op, X_q)
    V_fd = (X_d * op.P / op.V) * math.sin(phi) + (X_d * op.Q / op.V + op.V) * math.cos(phi)
    return Setpoint(P_m=op.P, V_fd=V_fd)


def reduced_stiffness_blocks(op, X_d, X_q):
    """Closed-form blocks of the reduced energy Hessian at an operating point.

    Returns (h_dd, h_dv, h_vv): the scalar angle-angle entry, the 1x2
    angle-(theta, V) row and the 2x2 (theta, V) block of the device energy
    Hessian after the internal voltages are eliminated. h_dd is the
    synchronizing power coefficient d P / d delta at the operating point.
    """
    phi = internal_phase(op, X_q)
    vq = op.V * math.cos(phi)
    vd = op.V * math.sin(phi)
    h_dd = vq**2 / X_q + vd**2 / X_d + op.Q
    c = (op.P + (1.0 / X_q - 1.0 / X_d) * vd * vq) / op.V
    h_dv = np.array([-h_dd, c])
    h_vv = np.array([[h_dd, -c], [-c, (vd**2 / X_q + vq**2 / X_d) / op.V**2]])
    return h_dd, h_dv, h_vv


def _require_positive(**kwargs):
    for name, value in kwargs.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


class Device:
    """Common interface of all bus components.

    State vectors are 1-d arrays ordered as `state_names`; energy gradients
    and Hessians are over (states..., theta, V).
    """

    kind = ""
    state_names: tuple[str, ...] = ()

    @property
    def n_states(self):
        return len(self.state_names)

    def stationary_setpoint(self, op):
        return stationary_setpoint(op, self.X_d, self.X_q)

    def stationary_state(self, theta_star, op, omega0=OMEGA0_DEFAULT):
        """Device state at equilibrium for bus angle `theta_star` and operating point `op`.

        Verified against the zero-derivative post-condition before returning.
        """
        setpoint = self.stationary_setpoint(op)
        state = self._stationary_state(theta_star, op, setpoint)
        deriv = self.state_derivative(state, theta_star, op.V, setpoint, omega0)
        if deriv.size and np.max(np.abs(deriv)) > _STATIONARY_TOL:
            raise RuntimeError(
                f"{self.kind} stationary state residual {np.max(np.abs(deriv)):.3e} "
                f"exceeds {_STATIONARY_TOL:.1e}"
            )
        return state

    # subclasses implement:
    #   _stationary_state(theta_star, op, setpoint) -> ndarray
    #   output_power(state, theta, V, setpoint) -> (P, Q)
    #   state_derivative(state, theta, V, setpoint, omega0) -> ndarray
    #   energy(state, theta, V, setpoint, omega0) -> float
    #   energy_gradient(state, theta, V, setpoint, omega0) -> ndarray
    #   energy_hessian(state, theta, V, setpoint, omega0) -> ndarray
    #   damping_block(omega0) -> ndarray over internal states
    #   dissipation_rate(deriv, omega0) -> float


class TwoAxisGenerator(Device):
    """Two-axis synchronous generator.

    States (delta, omega, E_q, E_d): rotor angle, per-unit frequency
    deviation, and q/d internal voltages. The grid connection goes through
    the transient reactances:

        I_d = (E_q - V_q)/X_d',   I_q = (V_d - E_d)/X_q'

    with V_q = V cos(delta - theta), V_d = V sin(delta - theta).
    """

    kind = "two_axis"
    state_names = ("delta", "omega", "E_q", "E_d")

    def __init__(self, M, D, tau_d, tau_q, X_d, X_q, X_d_prime, X_q_prime):
        _require_positive(M=M, D=D, tau_d=tau_d, tau_q=tau_q, X_d=X_d, X_q=X_q,
                          X_d_prime=X_d_prime, X_q_prime=X_q_prime)
        if not X_d_prime < X_d:
            raise ValueError(f"transient reactance X_d'={X_d_prime} must be below X_d={X_d}")
        if not X_q_prime < X_q:
            raise ValueError(f"transient reactance X_q'={X_q_prime} must be below X_q={X_q}")
        self.M = M
        self.D = D
        self.tau_d = tau_d
        self.tau_q = tau_q
        self.X_d = X_d
        self.X_q = X_q
        self.X_d_prime = X_d_prime
        self.X_q_prime = X_q_prime

    def _vqd(self, state, theta, V):
        a = state[0] - theta
        return V * math.cos(a), V * math.sin(a)

    def currents(self, state, theta, V):
        vq, vd = self._vqd(state, theta, V)
        I_d = (state[2] - vq) / self.X_d_prime
        I_q = (vd - state[3]) / self.X_q_prime
        return I_d, I_q

    def output_power(self, state, theta, V, setpoint=None):
        vq, vd = self._vqd(state, theta, V)
        E_q, E_d = state[2], state[3]
        xdp, xqp = self.X_d_prime, self.X_q_prime
        P = E_q * vd / xdp - E_d * vq / xqp + (1.0 / xqp - 1.0 / xdp) * vd * vq
        Q = E_q * vq / xdp + E_d * vd / xqp - (vd**2 / xqp + vq**2 / xdp)
        return P, Q

    def state_derivative(self, state, theta, V, setpoint, omega0=OMEGA0_DEFAULT):
        P, _ = self.output_power(state, theta, V)
        I_d, I_q = self.currents(state, theta, V)
        return np.array([
            omega0 * state[1],
            (-self.D * state[1] - P + setpoint.P_m) / self.M,
            (-state[2] - (self.X_d - self.X_d_prime) * I_d + setpoint.V_fd) / self.tau_d,
            (-state[3] + (self.X_q - self.X_q_prime) * I_q) / self.tau_q,
        ])

    def _stationary_state(self, theta_star, op, setpoint):
        phi = internal_phase(op, self.X_q)
        vq = op.V * math.cos(phi)
        vd = op.V * math.sin(phi)
        E_d = (1.0 - self.X_q_prime / self.X_q) * vd
        E_q = (self.X_d_prime * setpoint.V_fd + (self.X_d - self.X_d_prime) * vq) / self.X_d
        return np.array([theta_star + phi, 0.0, E_q, E_d])

    def energy(self, state, theta, V, setpoint=None, omega0=OMEGA0_DEFAULT):
        vq, vd = self._vqd(state, theta, V)
        _, omega, E_q, E_d = state
        return (omega0 * self.M * omega**2 / 2
                + E_q**2 / (2 * (self.X_d - self.X_d_prime))
                + E_d**2 / (2 * (self.X_q - self.X_q_prime))
                + (vd - E_d) ** 2 / (2 * self.X_q_prime)
                + (E_q - vq) ** 2 / (2 * self.X_d_prime))

    def energy_gradient(self, state, theta, V, setpoint=None, omega0=OMEGA0_DEFAULT):
        vq, vd = self._vqd(state, theta, V)
        I_d, I_q = self.currents(state, theta, V)
        a = state[0] - theta
        dU_ddelta = I_q * vq + I_d * vd
        dU_dV = I_q * math.sin(a) - I_d * math.cos(a)
        return np.array([
            dU_ddelta,
            omega0 * self.M * state[1],
            state[2] / (self.X_d - self.X_d_prime) + I_d,
            state[3] / (self.X_q - self.X_q_prime) - I_q,
            -dU_ddelta,
            dU_dV,
        ])

    def energy_hessian(self, state, theta, V, setpoint=None, omega0=OMEGA0_DEFAULT):
        vq, vd = self._vqd(state, theta, V)
        I_d, I_q = self.currents(state, theta, V)
        a = state[0] - theta
        s, c = math.sin(a), math.cos(a)
        xdp, xqp = self.X_d_prime, self.X_q_prime
        h_dd = vq**2 / xqp + vd**2 / xdp + I_d * vq - I_q * vd
        h_dV = s * vq / xqp - c * vd / xdp + I_q * c + I_d * s
        # order: delta, omega, E_q, E_d, theta, V
        H = np.zeros((6, 6))
        H[0, 0] = h_dd
        H[0, 2] = H[2, 0] = vd / xdp
        H[0, 3] = H[3, 0] = -vq / xqp
        H[0, 4] = H[4, 0] = -h_dd
        H[0, 5] = H[5, 0] = h_dV
        H[1, 1] = omega0 * self.M
        H[2, 2] = 1.0 / (self.X_d - xdp) + 1.0 / xdp
        H[2, 4] = H[4, 2] = -vd / xdp
        H[2, 5] = H[5, 2] = -c / xdp
        H[3, 3] = 1.0 / (self.X_q - xqp) + 1.0 / xqp
        H[3, 4] = H[4, 3] = vq / xqp
        H[3, 5] = H[5, 3] = -s / xqp
        H[4, 4] = h_dd
        H[4, 5] = H[5, 4] = -h_dV
        H[5, 5] = s**2 / xqp + c**2 / xdp
        return H

    def damping_block(self, omega0=OMEGA0_DEFAULT):
        return np.array([
            [0.0, -1.0 / self.M, 0.0, 0.0],
            [1.0 / self.M, self.D / (omega0 * self.M**2), 0.0, 0.0],
            [0.0, 0.0, (self.X_d - self.X_d_prime) / self.tau_d, 0.0],
            [0.0, 0.0, 0.0, (self.X_q - self.X_q_prime) / self.tau_q],
        ])

    def dissipation_rate(self, deriv, omega0=OMEGA0_DEFAULT):
        d_delta, _, d_Eq, d_Ed = deriv
        return -(self.D * d_delta**2 / omega0
                 + self.tau_d * d_Eq**2 / (self.X_d - self.X_d_prime)
                 + self.tau_q * d_Ed**2 / (self.X_q - self.X_q_prime))


class _GridFormingBase(Device):
    """Shared output/energy math of the VSG and droop inverters.

    Both act as a voltage source V_fd behind the synchronous reactances:

        I_d = (V_fd - V_q)/X_d,   I_q = V_d/X_q.
    """

    def _vqd(self, state, theta, V):
        a = state[0] - theta
        return V * math.cos(a), V * math.sin(a)

    def currents(self, state, theta, V, setpoint):
        vq, vd = self._vqd(state, theta, V)
        return (setpoint.V_fd - vq) / self.X_d, vd / self.X_q

    def output_power(self, state, theta, V, setpoint):
        vq, vd = self._vqd(state, theta, V)
        P = setpoint.V_fd * vd / self.X_d + (1.0 / self.X_q - 1.0 / self.X_d) * vd * vq
        Q = setpoint.V_fd * vq / self.X_d - (vd**2 / self.X_q + vq**2 / self.X_d)
        return P, Q

    def _potential(self, state, theta, V, setpoint):
        vq, vd = self._vqd(state, theta, V)
        return vd**2 / (2 * self.X_q) + (setpoint.V_fd - vq) ** 2 / (2 * self.X_d)

    def _angle_gradient(self, state, theta, V, setpoint):
        """(dU/ddelta, dU/dV) of the reactance potential; dU/dtheta is the negation."""
        vq, vd = self._vqd(state, theta, V)
        I_d, I_q = self.currents(state, theta, V, setpoint)
        a = state[0] - theta
        return I_q * vq + I_d * vd, I_q * math.sin(a) - I_d * math.cos(a)

    def _angle_hessian(self, state, theta, V, setpoint):
        """3x3 Hessian of the reactance potential over (delta, theta, V)."""
        vq, vd = self._vqd(state, theta, V)
        I_d, I_q = self.currents(state, theta, V, setpoint)
        a = state[0] - theta
        s, c = math.sin(a), math.cos(a)
        h_dd = vq**2 / self.X_q + vd**2 / self.X_d + I_d * vq - I_q * vd
        h_dV = s * vq / self.X_q - c * vd / self.X_d + I_q * c + I_d * s
        return np.array([
            [h_dd, -h_dd, h_dV],
            [-h_dd, h_dd, -h_dV],
            [h_dV, -h_dV, s**2 / self.X_q + c**2 / self.X_d],
        ])


class VsgInverter(_GridFormingBase):
    """Virtual synchronous generator: swing equation behind synchronous reactances."""

    kind = "vsg"
    state_names = ("delta", "omega")

    def __init__(self, M, D, X_d, X_q):
        _require_positive(M=M, D=D, X_d=X_d, X_q=X_q)
        self.M = M
        self.D = D
        self.X_d = X_d
        self.X_q = X_q

    def state_derivative(self, state, theta, V, setpoint, omega0=OMEGA0_DEFAULT):
        P, _ = self.output_power(state, theta, V, setpoint)
        return np.array([
            omega0 * state[1],
            (-self.D * state[1] - P + setpoint.P_m) / self.M,
        ])

    def _stationary_state(self, theta_star, op, setpoint):
        return np.array([theta_star + internal_phase(op, self.X_q), 0.0])

    def energy(self, state, theta, V, setpoint, omega0=OMEGA0_DEFAULT):
        return omega0 * self.M * state[1] ** 2 / 2 + self._potential(state, theta, V, setpoint)

    def energy_gradient(self, state, theta, V, setpoint, omega0=OMEGA0_DEFAULT):
        dU_ddelta, dU_dV = self._angle_gradient(state, theta, V, setpoint)
        return np.array([dU_ddelta, omega0 * self.M * state[1], -dU_ddelta, dU_dV])

    def energy_hessian(self, state, theta, V, setpoint, omega0=OMEGA0_DEFAULT):
        Ha = self._angle_hessian(state, theta, V, setpoint)
        H = np.zeros((4, 4))
        idx = np.array([0, 2, 3])  # delta, theta, V positions
        H[np.ix_(idx, idx)] = Ha
        H[1, 1] = omega0 * self.M
        return H

    def damping_block(self, omega0=OMEGA0_DEFAULT):
        return np.array([
            [0.0, -1.0 / self.M],
            [1.0 / self.M, self.D / (omega0 * self.M**2)],
        ])

    def dissipation_rate(self, deriv, omega0=OMEGA0_DEFAULT):
        return -self.D * deriv[0] ** 2 / omega0


class DroopInverter(_GridFormingBase):
    """Frequency droop control: first-order angle dynamics D*ddelta/dt = omega0 (P_m - P)."""

    kind = "fdc"
    state_names = ("delta",)

    def __init__(self, D, X_d, X_q):
        _require_positive(D=D, X_d=X_d, X_q=X_q)
        self.D = D
        self.X_d = X_d
        self.X_q = X_q

    def state_derivative(self, state, theta, V, setpoint, omega0=OMEGA0_DEFAULT):
        P, _ = self.output_power(state, theta, V, setpoint)
        return np.array([omega0 * (setpoint.P_m - P) / self.D])

    def _stationary_state(self, theta_star, op, setpoint):
        return np.array([theta_star + internal_phase(op, self.X_q)])

    def energy(self, state, theta, V, setpoint, omega0=OMEGA0_DEFAULT):
        return self._potential(state, theta, V, setpoint)

    def energy_gradient(self, state, theta, V, setpoint, omega0=OMEGA0_DEFAULT):
        dU_ddelta, dU_dV = self._angle_gradient(state, theta, V, setpoint)
        return np.array([dU_ddelta, -dU_ddelta, dU_dV])

    def energy_hessian(self, state, theta, V, setpoint, omega0=OMEGA0_DEFAULT):
        return self._angle_hessian(state, theta, V, setpoint)

    def damping_block(self, omega0=OMEGA0_DEFAULT):
        return np.array([[omega0 / self.D]])

    def dissipation_rate(self, deriv, omega0=OMEGA0_DEFAULT):
        return -self.D * deriv[0] ** 2 / omega0


class ConstantPowerLoad(Device):
    """Grid-following load: consumes (P_ref, Q_ref) regardless of the bus voltage.

    Consumption is negative under the device-to-bus sign convention. The load
    has no internal state; its energy function is -P_ref*theta - Q_ref*ln(V).
    """

    kind = "load"
    state_names = ()

    def __init__(self, P_ref, Q_ref):
        self.P_ref = float(P_ref)
        self.Q_ref = float(Q_ref)

    def stationary_setpoint(self, op):
        return None

    def _stationary_state(self, theta_star, op, setpoint):
        scale = max(1.0, abs(self.P_ref), abs(self.Q_ref))
        if abs(op.P - self.P_ref) > 1e-8 * scale or abs(op.Q - self.Q_ref) > 1e-8 * scale:
            raise ValueError(
                f"constant-power load ({self.P_ref}, {self.Q_ref}) cannot realize "
                f"operating point (P={op.P}, Q={op.Q})"
            )
        return np.zeros(0)

    def output_power(self, state, theta, V, setpoint=None):
        return self.P_ref, self.Q_ref

    def state_derivative(self, state, theta, V, setpoint=None, omega0=OMEGA0_DEFAULT):
        return np.zeros(0)

    def energy(self, state, theta, V, setpoint=None, omega0=OMEGA0_DEFAULT):
        return -self.P_ref * theta - self.Q_ref * math.log(V)

    def energy_gradient(self, state, theta, V, setpoint=None, omega0=OMEGA0_DEFAULT):
        return np.array([-self.P_ref, -self.Q_ref / V])

    def energy_hessian(self, state, theta, V, setpoint=None, omega0=OMEGA0_DEFAULT):
        return np.array([[0.0, 0.0], [0.0, self.Q_ref / V**2]])

    def damping_block(self, omega0=OMEGA0_DEFAULT):
        return np.zeros((0, 0))

    def dissipation_rate(self, deriv, omega0=OMEGA0_DEFAULT):
        return 0.0


_DEVICE_FIELDS = {
    "two_axis": (TwoAxisGenerator, ("M", "D", "tau_d", "tau_q", "X_d", "X_q", "X_d_prime", "X_q_prime")),
    "vsg": (VsgInverter, ("M", "D", "X_d", "X_q")),
    "fdc": (DroopInverter, ("D", "X_d", "X_q")),
    "load": (ConstantPowerLoad, ("P_ref", "Q_ref")),
}


def device_from_dict(doc):
    """Build a device from a config mapping with a `kind` key."""
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in _DEVICE_FIELDS:
        raise ValueError(f"unknown device kind {kind!r}; expected one of {sorted(_DEVICE_FIELDS)}")
    cls, fields = _DEVICE_FIELDS[kind]
    missing = [f for f in fields if f not in doc]
    if missing:
        raise ValueError(f"device kind {kind!r} missing parameters {missing}")
    extra = [f for f in doc if f not in fields]
    if extra:
        raise ValueError(f"device kind {kind!r} got unexpected parameters {extra}")
    return cls(**{f: float(doc[f]) for f in fields})
