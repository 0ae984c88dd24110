"""Decomposed dynamics and numeric trajectory-independence checks.

A dynamics law on SE_2(3) is carried as ``dg/dt = xi(t) g + Xt(g) + g zeta(t)``
where ``Xt`` vanishes at the identity.  ``Xt`` is supplied left-trivialized:
``tilde_x(g)`` is a 9-vector and the tangent value is ``g @ hat(tilde_x(g))``.

The checkers evaluate the group-affine style identities at sampled points
and report the largest Frobenius residual.  The ODE right-hand sides return
5x5 tangent matrices and are meant to be fed to :func:`relkal.lie.rk4_step`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import lie
from .lie import GroupElement, hat

__all__ = [
    "ConditionReport",
    "DecomposedField",
    "RTIPreconditionError",
    "check_eti",
    "check_l_rti",
    "check_r_rti",
    "error_ode_left",
    "error_ode_right",
    "reconstruct_field",
    "rel_error_ode",
    "relative_ode_left",
    "relative_ode_right",
    "sample_points",
    "vehicle_field",
]

DEFAULT_THRESHOLD = 1e-9


class RTIPreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class DecomposedField:
    """``xi`` and ``zeta`` map time to 9-vectors; ``tilde_x`` maps a group element to a 9-vector."""

    xi: Callable[[float], np.ndarray]
    zeta: Callable[[float], np.ndarray]
    tilde_x: Callable[[GroupElement], np.ndarray]

    def tilde(self, g):
        """Tangent value of the state-dependent part at ``g`` (5x5)."""
        return g.matrix() @ hat(self.tilde_x(g))


@dataclass(frozen=True)
class ConditionReport:
    condition: str
    max_residual: float
    sample_count: int
    threshold: float

    @property
    def verdict(self):
        return "pass" if self.max_residual <= self.threshold else "fail"

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        return {
            "condition": self.condition,
            "max_residual": float(self.max_residual),
            "sample_count": int(self.sample_count),
            "threshold": float(self.threshold),
            "verdict": self.verdict,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def vehicle_field(inputs, gravity=9.81):
    """Split of the strapdown kinematics with gravity on the right and IMU inputs on the left.

    ``inputs(t)`` returns ``(omega, accel)`` in the body frame.  The
    state-dependent part is ``(0, 0, v)`` in the 5x5 embedding, i.e.
    ``(0, 0, R^T v)`` once left-trivialized.
    """
    xi_vec = np.zeros(9)
    xi_vec[5] = gravity

    def xi(t):
        return xi_vec

    def zeta(t):
        omega, accel = inputs(t)
        return np.concatenate([omega, accel, np.zeros(3)])

    def tilde_x(g):
        out = np.zeros(g.batch_shape + (9,))
        out[..., 6:9] = np.einsum("...ji,...j->...i", g.R, g.v)
        return out

    return DecomposedField(xi=xi, zeta=zeta, tilde_x=tilde_x)


def reconstruct_field(d, g, t):
    """``hat(xi) g + Xt(g) + g hat(zeta)`` as a 5x5 tangent matrix."""
    G = g.matrix()
    return hat(d.xi(t)) @ G + d.tilde(g) + G @ hat(d.zeta(t))


def sample_points(rng, n, horizon=(0.0, 30.0), scale=2.0):
    """Draw ``n`` triples ``(h, g, t)``; group samples are exp of uniform vectors on ``[-scale, scale]^9``."""
    out = []
    for _ in range(n):
        h = lie.exp(rng.uniform(-scale, scale, 9))
        g = lie.exp(rng.uniform(-scale, scale, 9))
        t = rng.uniform(*horizon)
        out.append((h, g, float(t)))
    return out


def _report(name, residuals, threshold):
    if len(residuals) == 0:
        raise ValueError("sample list is empty")
    return ConditionReport(name, float(np.max(residuals)), len(residuals), threshold)


def check_eti(d, samples, threshold=DEFAULT_THRESHOLD):
    """Residual of ``Xt(hg) = h Xt(g) + Xt(h) g`` over the samples."""
    res = []
    for h, g, _ in samples:
        H, G = h.matrix(), g.matrix()
        r = d.tilde(h @ g) - H @ d.tilde(g) - d.tilde(h) @ G
        res.append(np.linalg.norm(r))
    return _report("ETI", res, threshold)


def check_l_rti(d1, d2, samples, threshold=DEFAULT_THRESHOLD):
    res = []
    for h, g, t in samples:
        H, G = h.matrix(), g.matrix()
        dxi = hat(d2.xi(t) - d1.xi(t))
        r = (
            d2.tilde(h @ g)
            - H @ d2.tilde(g)
            - d1.tilde(h) @ G
            - H @ dxi @ G
            + dxi @ H @ G
        )
        res.append(np.linalg.norm(r))
    return _report("L-RTI", res, threshold)


def check_r_rti(d1, d2, samples, threshold=DEFAULT_THRESHOLD):
    res = []
    for h, g, t in samples:
        H, G = h.matrix(), g.matrix()
        dzeta = hat(d1.zeta(t) - d2.zeta(t))
        r = (
            d1.tilde(h @ g)
            - H @ d2.tilde(g)
            - d1.tilde(h) @ G
            - H @ dzeta @ G
            + H @ G @ dzeta
        )
        res.append(np.linalg.norm(r))
    return _report("R-RTI", res, threshold)


def error_ode_left(d, f, t):
    """Autonomous flow of ``f = g^-1 gbar``: ``Xt(f) + f zeta - zeta f``."""
    F = f.matrix()
    Z = hat(d.zeta(t))
    return d.tilde(f) + F @ Z - Z @ F


def error_ode_right(d, h, t):
    """Autonomous flow of ``h = gbar g^-1``: ``Xt(h) + xi h - h xi``."""
    Hm = h.matrix()
    X = hat(d.xi(t))
    return d.tilde(h) + X @ Hm - Hm @ X


def relative_ode_left(d1, d2, g12, t):
    """Flow of ``g12 = g1^-1 g2``."""
    G = g12.matrix()
    left = hat(d2.xi(t) - d1.xi(t) - d1.zeta(t))
    return left @ G + d2.tilde(g12) + G @ hat(d2.zeta(t))


def relative_ode_right(d1, d2, g12, t):
    """Flow of ``g12 = g1 g2^-1``."""
    G = g12.matrix()
    right = hat(d1.zeta(t) - d2.zeta(t) - d2.xi(t))
    return hat(d1.xi(t)) @ G + d1.tilde(g12) + G @ right


def rel_error_ode(d1, d2, err, chirality, rel_chirality, t, verify=True, n_verify=8):
    """Flow of the estimation error of a relative state.

    ``rel_chirality`` picks the relative state (``"L"``: ``g1^-1 g2``,
    ``"R"``: ``g1 g2^-1``); ``chirality`` picks the error (``"L"``:
    ``g12^-1 gbar12``, ``"R"``: ``gbar12 g12^-1``).  With ``verify`` the
    matching RTI condition is spot-checked at time ``t`` first.
    """
    if chirality not in ("L", "R") or rel_chirality not in ("L", "R"):
        raise ValueError("chirality must be 'L' or 'R'")
    if verify:
        rng = np.random.default_rng(0)
        samples = [(h, g, t) for h, g, _ in sample_points(rng, n_verify)]
        check = check_l_rti if rel_chirality == "L" else check_r_rti
        report = check(d1, d2, samples)
        if not report.passed:
            raise RTIPreconditionError(
                f"RTI precondition violated: {report.condition} residual "
                f"{report.max_residual:.3e} exceeds {report.threshold:.1e}"
            )
    E = err.matrix()
    if rel_chirality == "L":
        tilde = d2.tilde(err)
        if chirality == "L":
            Z = hat(d2.zeta(t))
            return tilde + E @ Z - Z @ E
        X = hat(d2.xi(t) - d1.xi(t) - d1.zeta(t))
        return tilde + X @ E - E @ X
    tilde = d1.tilde(err)
    if chirality == "L":
        Z = hat(d1.zeta(t) - d2.zeta(t) - d2.xi(t))
        return tilde + E @ Z - Z @ E
    X = hat(d1.xi(t))
    return tilde + X @ E - E @ X
