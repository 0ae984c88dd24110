"""Relative invariant Kalman filters on SE_2(3) and a quaternion EKF baseline.

Beliefs use concentrated Gaussians on the group:

* chirality ``"L"``: ``g = gbar exp(-theta)`` with ``theta ~ N(0, P)``,
  i.e. the left-invariant error ``f = g^-1 gbar = exp(theta)``;
* chirality ``"R"``: ``g = exp(-phi) gbar`` with ``phi ~ N(0, P)``,
  i.e. the right-invariant error ``h = gbar g^-1 = exp(phi)``.

All routines broadcast over leading batch dimensions of the mean and
covariance, so one call can advance a whole Monte Carlo ensemble.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import lie
from .lie import GroupElement, adjoint_matrix, hat, skew
from .models import ImuInput, ImuNoiseSpec, block_action, lift_pseudo, measure

__all__ = [
    "Belief",
    "CASES",
    "DegenerateInnovationError",
    "FilterDivergence",
    "IMU_ALPHA",
    "IMU_BETA",
    "ProcessNoiseCase",
    "QekfState",
    "apply_correction",
    "convert_chirality",
    "joseph_covariance",
    "kalman_gain",
    "lrkf_correct_zL",
    "lrkf_correct_zR",
    "lrkf_jacobian_zL",
    "lrkf_jacobian_zR",
    "lrkf_propagate",
    "matrix_A",
    "matrix_G",
    "qekf_correct",
    "qekf_jacobian",
    "qekf_propagate",
    "qekf_step",
    "rrkf_correct_zL",
    "rrkf_correct_zR",
    "rrkf_jacobian_zL",
    "rrkf_jacobian_zR",
    "rrkf_propagate",
]

COND_LIMIT = 1e12

IMU_ALPHA = ImuNoiseSpec(sigma_g=6.108e-5, sigma_a=1.373e-3)
IMU_BETA = ImuNoiseSpec(sigma_g=1.2218e-3, sigma_a=1.2355e-2)


class FilterDivergence(FloatingPointError):
    pass


class DegenerateInnovationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ProcessNoiseCase:
    sigma1: ImuNoiseSpec
    sigma2: ImuNoiseSpec
    label: str


CASES = {
    "I": ProcessNoiseCase(IMU_ALPHA, IMU_BETA, "I"),
    "II": ProcessNoiseCase(IMU_ALPHA, IMU_ALPHA, "II"),
    "III": ProcessNoiseCase(IMU_BETA, IMU_ALPHA, "III"),
}


@dataclass(frozen=True)
class Belief:
    mean: GroupElement
    cov: np.ndarray
    chirality: str

    def __post_init__(self):
        if self.chirality not in ("L", "R"):
            raise ValueError("chirality must be 'L' or 'R'")
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    def __getitem__(self, idx):
        return Belief(self.mean[idx], self.cov[idx], self.chirality)

    def to_json(self):
        return json.dumps(
            {
                "chirality": self.chirality,
                "mean": self.mean.to_dict(),
                "cov": self.cov.reshape(-1).tolist(),
            }
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            GroupElement.from_dict(d["mean"]),
            np.reshape(d["cov"], (9, 9)),
            d["chirality"],
        )


# derivative of the state-dependent field (0, 0, v) at the identity
_DX_TILDE = np.zeros((9, 9))
_DX_TILDE[6:9, 3:6] = np.eye(3)


def matrix_A(zeta):
    """Linearized error dynamics, ``A(zeta) theta = DXt(e) theta + ad_theta zeta``.

    Depends on the input only, never on the estimate.
    """
    return _DX_TILDE - lie.ad_matrix(zeta)


def matrix_G(g):
    """Matrix of ``Ad_g``; the propagation uses ``matrix_G(gbar^-1)`` or ``matrix_G(gbar)``."""
    return adjoint_matrix(g)


def convert_chirality(b, target=None):
    """Re-express a belief with the other error convention (first-order equivalent)."""
    target = target or ("R" if b.chirality == "L" else "L")
    if target == b.chirality:
        return b
    if target == "R":
        Ad = adjoint_matrix(b.mean)
    else:
        Ad = adjoint_matrix(b.mean.inverse())
    cov = Ad @ b.cov @ np.swapaxes(Ad, -1, -2)
    return Belief(b.mean, _symmetrize(cov), target)


def _symmetrize(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def _clamp_psd(P):
    """Zero out slightly negative eigenvalues (``> -1e-9 trace``) left by round-off."""
    P = _symmetrize(P)
    w = np.linalg.eigvalsh(P)
    tr = np.trace(P, axis1=-2, axis2=-1)
    bad = (w.min(axis=-1) < 0) & (w.min(axis=-1) > -1e-9 * np.abs(tr))
    if np.any(bad):
        w_b, V_b = np.linalg.eigh(P[bad])
        w_b = np.maximum(w_b, 0.0)
        P = P.copy()
        P[bad] = _symmetrize((V_b * w_b[..., None, :]) @ np.swapaxes(V_b, -1, -2))
    return P


def _stage_inputs(u):
    """Inputs at the start, midpoint and end of a step."""
    if isinstance(u, ImuInput):
        z = u.zeta()
        return z, z, z
    if len(u) != 3:
        raise ValueError("expected one ImuInput or three (start, mid, end)")
    return tuple(ui.zeta() for ui in u)


def _mean_rhs(M, z1, z2):
    """``-zeta1 g + Xt(g) + g zeta2`` on 5x5 matrices for the vehicle model."""
    out = -hat(z1) @ M + M @ hat(z2)
    out[..., :3, 4] += M[..., :3, 3]
    return out


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FilterDivergence("non-finite value in filter input")


def _propagate(b, u1, u2, case, dt, chirality):
    if dt <= 0:
        raise ValueError("dt must be positive")
    if b.chirality != chirality:
        raise ValueError(f"expected a belief with chirality {chirality}")
    z1s, z2s = _stage_inputs(u1), _stage_inputs(u2)
    _check_finite(b.mean.R, b.mean.v, b.mean.x, b.cov, *z1s, *z2s)
    S1 = case.sigma1.covariance()
    S2 = case.sigma2.covariance()

    def rhs(M, P, z1, z2):
        g = GroupElement.from_matrix(M)
        if chirality == "L":
            A = matrix_A(z2)
            G = matrix_G(g.inverse())
            Q = S2 + G @ S1 @ np.swapaxes(G, -1, -2)
        else:
            A = matrix_A(z1)
            G = matrix_G(g)
            Q = S1 + G @ S2 @ np.swapaxes(G, -1, -2)
        dP = A @ P + P @ np.swapaxes(A, -1, -2) + Q
        return _mean_rhs(M, z1, z2), dP

    M0, P0 = b.mean.matrix(), b.cov
    k1m, k1p = rhs(M0, P0, z1s[0], z2s[0])
    k2m, k2p = rhs(M0 + 0.5 * dt * k1m, P0 + 0.5 * dt * k1p, z1s[1], z2s[1])
    k3m, k3p = rhs(M0 + 0.5 * dt * k2m, P0 + 0.5 * dt * k2p, z1s[1], z2s[1])
    k4m, k4p = rhs(M0 + dt * k3m, P0 + dt * k3p, z1s[2], z2s[2])
    M = M0 + dt / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
    P = P0 + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return Belief(GroupElement.from_matrix(M).project(), _clamp_psd(P), chirality)


def lrkf_propagate(b, u1, u2, case, dt):
    """Mean by the noise-free relative kinematics, covariance by ``A(zeta2)`` and ``Ad_{gbar^-1}``.

    ``u1``/``u2`` are either single readings held over the step or
    ``(start, mid, end)`` triples.
    """
    return _propagate(b, u1, u2, case, dt, "L")


def rrkf_propagate(b, u1, u2, case, dt):
    return _propagate(b, u1, u2, case, dt, "R")


def kalman_gain(P, H, noise_cov):
    """Kalman gain through a Cholesky factorization of the innovation covariance."""
    Ht = np.swapaxes(H, -1, -2)
    S = H @ P @ Ht + noise_cov
    S = _symmetrize(S)
    cond = np.linalg.cond(S)
    if np.any(~np.isfinite(cond) | (cond > COND_LIMIT)):
        raise DegenerateInnovationError(
            f"degenerate innovation covariance (condition number {np.nanmax(cond):.3e})"
        )
    C = np.linalg.cholesky(S)
    # S^-1 H P, then transpose: L = P H^T S^-1
    Y = np.linalg.solve(C, H @ P)
    X = np.linalg.solve(np.swapaxes(C, -1, -2), Y)
    return np.swapaxes(X, -1, -2), S


def joseph_covariance(P, L, H, noise_cov):
    """``(I - L H) P (I - L H)^T + L Sigma L^T``."""
    IKH = np.eye(P.shape[-1]) - L @ H
    return IKH @ P @ np.swapaxes(IKH, -1, -2) + L @ noise_cov @ np.swapaxes(L, -1, -2)


def apply_correction(b, gain, innovation, H):
    """Posterior from a given gain: retract ``-gain @ innovation`` on the belief's side."""
    delta = np.einsum("...ij,...j->...i", gain, innovation)
    step = lie.exp(-delta)
    mean = b.mean @ step if b.chirality == "L" else step @ b.mean
    P = (np.eye(b.cov.shape[-1]) - gain @ H) @ b.cov
    return Belief(mean, _clamp_psd(P), b.chirality)


def _resolve_noise(sigma_z, R_est):
    if callable(sigma_z):
        return sigma_z(R_est)
    return np.asarray(sigma_z, dtype=float)


def _block_rotation(R, n_blocks):
    R = np.asarray(R)
    out = np.zeros(R.shape[:-2] + (3 * n_blocks, 3 * n_blocks))
    for i in range(n_blocks):
        out[..., 3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = R
    return out


def _expected(mean, model):
    """Noise-free measurement of the mean (vectorized)."""
    return measure(mean, model)


def lrkf_jacobian_zL(model):
    """``(H_tilde, H)`` for the lifted left measurement; both are constant."""
    nb = model.n_dirs
    Ht = np.zeros((5 * (nb + 1), 9))
    Ht[0:3, 6:9] = -np.eye(3)
    for i, b in enumerate(model.directions):
        Ht[5 * (i + 1) : 5 * (i + 1) + 3, 0:3] = skew(b)
    _, _, Pi = lift_pseudo(np.zeros(model.dim), model)
    return Ht, Pi @ Ht


def lrkf_jacobian_zR(mean, model):
    Rt = np.swapaxes(mean.R, -1, -2)
    H = np.zeros(mean.batch_shape + (model.dim, 9))
    H[..., 0:3, 0:3] = skew(np.einsum("...ij,...j->...i", Rt, mean.x))
    H[..., 0:3, 6:9] = np.eye(3)
    for i, b in enumerate(model.directions):
        H[..., 3 + 3 * i : 6 + 3 * i, 0:3] = -skew(Rt @ b)
    return H


def rrkf_jacobian_zL(mean, model):
    H = np.zeros(mean.batch_shape + (model.dim, 9))
    H[..., 0:3, 0:3] = skew(mean.x)
    H[..., 0:3, 6:9] = -np.eye(3)
    for i, b in enumerate(model.directions):
        H[..., 3 + 3 * i : 6 + 3 * i, 0:3] = skew(mean.R @ b)
    return H


def rrkf_jacobian_zR(model):
    H = np.zeros((model.dim, 9))
    H[0:3, 6:9] = np.eye(3)
    for i, b in enumerate(model.directions):
        H[3 + 3 * i : 6 + 3 * i, 0:3] = -skew(b)
    return H


def _require(b, chirality, model, kind):
    if b.chirality != chirality:
        raise ValueError(f"expected a belief with chirality {chirality}")
    if model.kind != kind:
        raise ValueError(f"expected a {kind}-invariant measurement model")


def lrkf_correct_zL(b, z, model, sigma_z):
    """Left filter, sensors on vehicle 1, via the lifted pseudo-measurement.

    ``sigma_z`` is the measurement covariance or a callable of the estimated
    relative attitude returning it.
    """
    _require(b, "L", model, "left")
    tilde_z, B, Pi = lift_pseudo(z, model)
    Ginv = block_action(b.mean.inverse().matrix(), model.n_dirs + 1)
    nu = np.einsum("ij,...j->...i", Pi, np.einsum("...ij,...j->...i", Ginv, tilde_z) - B)
    _, H = lrkf_jacobian_zL(model)
    D = _block_rotation(b.mean.R, model.n_dirs + 1)
    noise = np.swapaxes(D, -1, -2) @ _resolve_noise(sigma_z, b.mean.R) @ D
    L, _ = kalman_gain(b.cov, H, noise)
    return apply_correction(b, L, nu, H)


def lrkf_correct_zR(b, z, model, sigma_z):
    """Left filter, sensors on vehicle 2, standard linearized update."""
    _require(b, "L", model, "right")
    H = lrkf_jacobian_zR(b.mean, model)
    nu = np.asarray(z) - _expected(b.mean, model)
    L, _ = kalman_gain(b.cov, H, _resolve_noise(sigma_z, b.mean.R))
    return apply_correction(b, L, nu, H)


def rrkf_correct_zL(b, z, model, sigma_z):
    """Right filter, sensors on vehicle 1, standard linearized update."""
    _require(b, "R", model, "left")
    H = rrkf_jacobian_zL(b.mean, model)
    nu = np.asarray(z) - _expected(b.mean, model)
    L, _ = kalman_gain(b.cov, H, _resolve_noise(sigma_z, b.mean.R))
    return apply_correction(b, L, nu, H)


def rrkf_correct_zR(b, z, model, sigma_z):
    """Right filter, sensors on vehicle 2, via the lifted pseudo-measurement."""
    _require(b, "R", model, "right")
    tilde_z, B, Pi = lift_pseudo(z, model)
    G = block_action(b.mean.matrix(), model.n_dirs + 1)
    nu = np.einsum("ij,...j->...i", Pi, np.einsum("...ij,...j->...i", G, tilde_z) - B)
    H = rrkf_jacobian_zR(model)
    D = _block_rotation(b.mean.R, model.n_dirs + 1)
    noise = D @ _resolve_noise(sigma_z, b.mean.R) @ np.swapaxes(D, -1, -2)
    L, _ = kalman_gain(b.cov, H, noise)
    return apply_correction(b, L, nu, H)


# ---------------------------------------------------------------------------
# quaternion EKF baseline
#
# State: unit quaternion q (scalar first) for the relative attitude R, plus
# v and x.  Error: R = Rbar Exp(dtheta), v = vbar + dv, x = xbar + dx.


def quat_mul(p, q):
    pw, pv = p[..., :1], p[..., 1:]
    qw, qv = q[..., :1], q[..., 1:]
    w = pw * qw - np.sum(pv * qv, axis=-1, keepdims=True)
    v = pw * qv + qw * pv + np.cross(pv, qv)
    return np.concatenate([w, v], axis=-1)


def quat_to_rot(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def quat_exp(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < 1e-8
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(half) / np.where(small, 1.0, theta))
    return np.concatenate([np.cos(half), k * phi], axis=-1)


def rot_to_quat(R):
    phi = lie.so3_log(R)
    return quat_exp(phi)


def _quat_normalize(q):
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    # fixed sign keeps the representation unique
    return np.where(q[..., :1] < 0, -q, q)


@dataclass(frozen=True)
class QekfState:
    q: np.ndarray
    v: np.ndarray
    x: np.ndarray
    cov: np.ndarray

    def __getitem__(self, idx):
        return QekfState(self.q[idx], self.v[idx], self.x[idx], self.cov[idx])

    @property
    def mean(self):
        return GroupElement(quat_to_rot(self.q), self.v, self.x)

    @classmethod
    def from_group(cls, g, cov):
        return cls(_quat_normalize(rot_to_quat(g.R)), g.v.copy(), g.x.copy(), np.asarray(cov, float))


def _qekf_rhs(q, v, x, P, z1, z2, S1, S2):
    w1, a1 = z1[..., 0:3], z1[..., 3:6]
    w2, a2 = z2[..., 0:3], z2[..., 3:6]
    R = quat_to_rot(q)
    zero = np.zeros_like(w1[..., :1])
    dq = 0.5 * quat_mul(q, np.concatenate([zero, w2], -1)) - 0.5 * quat_mul(
        np.concatenate([zero, w1], -1), q
    )
    W1 = skew(w1)
    dv = -np.einsum("...ij,...j->...i", W1, v) - a1 + np.einsum("...ij,...j->...i", R, a2)
    dx = -np.einsum("...ij,...j->...i", W1, x) + v

    batch = P.shape[:-2]
    F = np.zeros(batch + (9, 9))
    F[..., 0:3, 0:3] = -skew(w2)
    F[..., 3:6, 0:3] = -R @ skew(a2)
    F[..., 3:6, 3:6] = -W1
    F[..., 6:9, 3:6] = np.eye(3)
    F[..., 6:9, 6:9] = -W1
    Rt = np.swapaxes(R, -1, -2)
    G1 = np.zeros(batch + (9, 6))
    G1[..., 0:3, 0:3] = Rt
    G1[..., 3:6, 0:3] = -skew(v)
    G1[..., 3:6, 3:6] = np.eye(3)
    G1[..., 6:9, 0:3] = -skew(x)
    G2 = np.zeros(batch + (9, 6))
    G2[..., 0:3, 0:3] = -np.eye(3)
    G2[..., 3:6, 3:6] = -R
    Q = G1 @ S1 @ np.swapaxes(G1, -1, -2) + G2 @ S2 @ np.swapaxes(G2, -1, -2)
    dP = F @ P + P @ np.swapaxes(F, -1, -2) + Q
    return dq, dv, dx, dP


def qekf_propagate(s, u1, u2, case, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    z1s, z2s = _stage_inputs(u1), _stage_inputs(u2)
    _check_finite(s.q, s.v, s.x, s.cov, *z1s, *z2s)
    S1 = case.sigma1.covariance()[:6, :6]
    S2 = case.sigma2.covariance()[:6, :6]
    y0 = (s.q, s.v, s.x, s.cov)
    stages = ((0.0, 0), (0.5, 1), (0.5, 1), (1.0, 2))
    ks = []
    prev = None
    for frac, idx in stages:
        y = y0 if prev is None else tuple(a + frac * dt * k for a, k in zip(y0, prev))
        prev = _qekf_rhs(*y, z1s[idx], z2s[idx], S1, S2)
        ks.append(prev)
    out = [
        a + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        for a, k1, k2, k3, k4 in zip(y0, *ks)
    ]
    return QekfState(_quat_normalize(out[0]), out[1], out[2], _clamp_psd(out[3]))


def qekf_jacobian(s, model):
    """Measurement Jacobian with respect to ``(dtheta, dv, dx)`` at the current estimate."""
    R = quat_to_rot(s.q)
    batch = s.cov.shape[:-2]
    H = np.zeros(batch + (model.dim, 9))
    if model.kind == "left":
        H[..., 0:3, 6:9] = np.eye(3)
        for i, b in enumerate(model.directions):
            H[..., 3 + 3 * i : 6 + 3 * i, 0:3] = -R @ skew(b)
    else:
        Rt = np.swapaxes(R, -1, -2)
        H[..., 0:3, 0:3] = -skew(np.einsum("...ij,...j->...i", Rt, s.x))
        H[..., 0:3, 6:9] = -Rt
        for i, b in enumerate(model.directions):
            H[..., 3 + 3 * i : 6 + 3 * i, 0:3] = skew(Rt @ b)
    return H


def qekf_correct(s, z, model, sigma_z):
    H = qekf_jacobian(s, model)
    nu = np.asarray(z) - _expected(s.mean, model)
    R = quat_to_rot(s.q)
    L, _ = kalman_gain(s.cov, H, _resolve_noise(sigma_z, R))
    delta = np.einsum("...ij,...j->...i", L, nu)
    q = _quat_normalize(quat_mul(s.q, quat_exp(delta[..., 0:3])))
    P = _clamp_psd((np.eye(9) - L @ H) @ s.cov)
    return QekfState(q, s.v + delta[..., 3:6], s.x + delta[..., 6:9], P)


def qekf_step(s, u1, u2, case, z, model, dt, sigma_z=None):
    """Propagate over ``dt``; correct with ``z`` when one is given."""
    s = qekf_propagate(s, u1, u2, case, dt)
    if z is not None:
        s = qekf_correct(s, z, model, sigma_z)
    return s
