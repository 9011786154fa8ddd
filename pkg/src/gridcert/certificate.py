"""Closed-form small-signal stability certificate from the stationary power flow.

The test needs nothing beyond the stationary power flow, the device
synchronous reactances and the network susceptance matrix:

* every generator/grid-forming bus must have a positive synchronizing power
  coefficient, and
* the 2N x 2N matrix diag(per-bus stiffness blocks) + network Hessian must be
  positive semidefinite on the complement of the uniform-phase-shift
  direction.

Verdicts are stable / unstable / marginal; the rotational zero mode is
deflated by projection before the eigenvalue test so it cannot mask genuine
negative modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .devices import CapabilityError, ConstantPowerLoad, internal_phase
from .network import Network

__all__ = [
    "CERT_TOL",
    "CertificateError",
    "synchronizing_coefficient",
    "bus_stiffness_block",
    "load_stiffness_block",
    "network_hessian",
    "structural_null_vector",
    "deflated_min_eig",
    "StabilityReport",
    "certify",
]

#: Absolute eigenvalue tolerance separating stable / marginal / unstable.
CERT_TOL = 1e-8


class CertificateError(RuntimeError):
    """Raised when certificate quantities are undefined at the given point."""


def synchronizing_coefficient(op, X_d, X_q):
    """Per-bus synchronizing power coefficient gamma at an operating point.

    gamma = Q + V^2 cos^2(phi)/X_q + V^2 sin^2(phi)/X_d with phi the internal
    phase. Positive gamma means the device produces restoring active power
    against angle perturbations.
    """
    phi = internal_phase(op, X_q)
    return op.Q + op.V**2 * math.cos(phi) ** 2 / X_q + op.V**2 * math.sin(phi) ** 2 / X_d


def bus_stiffness_block(op, X_d, X_q):
    """2x2 (theta, V) stiffness block of a generator/grid-forming bus.

    Equals the Schur complement of the reduced device Hessian onto (theta, V)
    after eliminating the internal angle; only the (V, V) entry is nonzero.
    Requires a positive synchronizing coefficient.
    """
    phi = internal_phase(op, X_q)
    gamma = synchronizing_coefficient(op, X_d, X_q)
    if gamma <= 0:
        raise CertificateError(
            f"synchronizing coefficient {gamma:.6g} <= 0; stiffness block undefined"
        )
    c2 = math.cos(phi) ** 2
    s2 = math.sin(phi) ** 2
    num = (op.V**4 / (X_q * X_d)
           - op.P**2
           + (op.V**2 * c2 / X_d + op.V**2 * s2 / X_q) * op.Q
           - 2.0 * (1.0 / X_q - 1.0 / X_d) * op.P * op.V**2 * math.cos(phi) * math.sin(phi))
    return np.array([[0.0, 0.0], [0.0, num / (op.V**2 * gamma)]])


def load_stiffness_block(Q_ref, V):
    """2x2 (theta, V) stiffness block of a constant-power load: diag(0, Q_ref/V^2).

    Negative whenever the load consumes reactive power, which is how a
    grid-following load degrades synchronization.
    """
    if not V > 0:
        raise ValueError(f"bus voltage must be positive, got V={V}")
    return np.array([[0.0, 0.0], [0.0, Q_ref / V**2]])


def network_hessian(theta, V, B):
    """2N x 2N Hessian of the network energy over interleaved (theta_i, V_i).

    Built from the susceptance matrix and the voltage phasors alone; it is
    the transmission network's contribution to the stability condition and
    annihilates the uniform phase-shift direction.
    """
    theta = np.asarray(theta, dtype=float)
    V = np.asarray(V, dtype=float)
    n = theta.size
    D = np.subtract.outer(theta, theta)
    C = np.cos(D)
    S = np.sin(D)
    W = B * np.outer(V, V)

    tt = -W * C
    np.fill_diagonal(tt, 0.0)
    np.fill_diagonal(tt, -tt.sum(axis=1))

    tv = B * S * V[:, None]
    np.fill_diagonal(tv, (B * S * V[None, :]).sum(axis=1))

    vv = -B * C
    np.fill_diagonal(vv, -np.diag(B))

    L = np.empty((2 * n, 2 * n))
    L[0::2, 0::2] = tt
    L[0::2, 1::2] = tv
    L[1::2, 0::2] = tv.T
    L[1::2, 1::2] = vv
    return L


def structural_null_vector(n_bus):
    """Unit vector of the uniform phase shift: ones on theta slots, zeros on V slots."""
    n = np.zeros(2 * n_bus)
    n[0::2] = 1.0
    return n / np.linalg.norm(n)


def _complement_basis(unit):
    """Orthonormal basis of the complement of a unit vector (Householder columns)."""
    m = unit.size
    w = unit.copy()
    w[0] -= 1.0
    nw = np.linalg.norm(w)
    if nw < 1e-14:
        return np.eye(m)[:, 1:]
    w /= nw
    H = np.eye(m) - 2.0 * np.outer(w, w)
    return H[:, 1:]


def deflated_min_eig(M, null_unit):
    """Smallest eigenvalue and eigenvector of M restricted to the complement of null_unit."""
    Z = _complement_basis(null_unit)
    vals, vecs = np.linalg.eigh(Z.T @ M @ Z)
    return float(vals[0]), Z @ vecs[:, 0]


@dataclass
class StabilityReport:
    """Certificate outcome: per-bus coefficients, condition matrix spectrum edge, verdict."""

    gammas: dict
    verdict: str
    min_eig: float | None = None
    witness: np.ndarray | None = None
    violating_bus: int | None = None
    condition_matrix: np.ndarray | None = None
    network: np.ndarray | None = None
    null_residual: float | None = None
    tol: float = CERT_TOL

    def to_json_dict(self):
        doc = {
            "verdict": self.verdict,
            "gammas": {str(k): v for k, v in sorted(self.gammas.items())},
            "min_eig": self.min_eig,
        }
        if self.witness is not None:
            doc["witness"] = [float(w) for w in self.witness]
        if self.violating_bus is not None:
            doc["violating_bus"] = self.violating_bus
        return doc

    def to_text(self):
        lines = [f"verdict: {self.verdict}"]
        for bus, g in sorted(self.gammas.items()):
            lines.append(f"  gamma[{bus}] = {g:.6f}")
        if self.min_eig is not None:
            lines.append(f"  min eigenvalue (deflated) = {self.min_eig:.6e}")
        if self.violating_bus is not None:
            lines.append(f"  positivity condition violated at bus {self.violating_bus}")
        return "\n".join(lines)


def certify(flow, system, tol=CERT_TOL, bus_ids=None):
    """Evaluate the closed-form stability condition at a stationary power flow.

    `flow` must satisfy the network power balance; every generator/GFM bus
    must be inside its capability region (CapabilityError propagates
    otherwise). Returns a StabilityReport; verdicts within `tol` of either
    condition boundary are classed marginal.
    """
    net: Network = system.net
    n = net.n_bus
    ids = list(bus_ids) if bus_ids is not None else list(range(n))

    residual = system.balance_residual(flow)
    scale = max(1.0, float(np.max(np.abs(net.B))) if n > 1 else 1.0)
    if residual > 1e-6 * scale:
        raise CertificateError(
            f"power flow does not satisfy the balance equations (residual {residual:.3e})"
        )

    gammas = {}
    blocks = []
    worst_bus = None
    worst_gamma = np.inf
    for i, dev in enumerate(system.devices):
        op = system.operating_point(flow, i)
        if isinstance(dev, ConstantPowerLoad):
            blocks.append(load_stiffness_block(dev.Q_ref, op.V))
            continue
        g = synchronizing_coefficient(op, dev.X_d, dev.X_q)
        gammas[ids[i]] = g
        if g < worst_gamma:
            worst_gamma = g
            worst_bus = ids[i]
        blocks.append(None)  # filled below once positivity is known

    if gammas and worst_gamma < -tol:
        return StabilityReport(gammas=gammas, verdict="unstable", violating_bus=worst_bus, tol=tol)
    if gammas and worst_gamma <= tol:
        return StabilityReport(gammas=gammas, verdict="marginal", violating_bus=worst_bus, tol=tol)

    M = network_hessian(flow.theta, flow.V, net.B)
    L = M.copy()
    for i, dev in enumerate(system.devices):
        block = blocks[i]
        if block is None:
            op = system.operating_point(flow, i)
            block = bus_stiffness_block(op, dev.X_d, dev.X_q)
        M[2 * i:2 * i + 2, 2 * i:2 * i + 2] += block

    null_unit = structural_null_vector(n)
    null_residual = float(np.max(np.abs(M @ null_unit)))
    min_eig, vec = deflated_min_eig(M, null_unit)

    if min_eig > tol:
        verdict = "stable"
    elif min_eig >= -tol:
        verdict = "marginal"
    else:
        verdict = "unstable"

    return StabilityReport(
        gammas=gammas,
        verdict=verdict,
        min_eig=min_eig,
        witness=vec if verdict == "unstable" else None,
        condition_matrix=M,
        network=L,
        null_residual=null_residual,
        tol=tol,
    )
