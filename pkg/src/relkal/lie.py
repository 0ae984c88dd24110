"""SO(3) and SE_2(3) primitives.

Every function accepts arrays with arbitrary leading batch dimensions, so a
"group element" can stand for a whole Monte Carlo ensemble at once.  The
element ``g = (R, v, x)`` embeds as the 5x5 matrix::

    [[R, v, x],
     [0, 1, 0],
     [0, 0, 1]]

and algebra vectors are ordered ``(omega, a, u)``; ``a`` and ``u`` are the
4th and 5th columns of the hat matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CutLocusError",
    "GroupElement",
    "ad_matrix",
    "adjoint_matrix",
    "compose",
    "exp",
    "hat",
    "inverse",
    "left_jacobian",
    "left_jacobian_inv",
    "log",
    "project_so3",
    "rotation_angle",
    "skew",
    "so3_exp",
    "so3_log",
    "vee",
    "vee3",
]

# below this angle the closed forms switch to 4th order Taylor expansions
SMALL_ANGLE = 1e-4
# log refuses rotations closer than this to the cut locus
CUT_LOCUS_MARGIN = 1e-6


class CutLocusError(ValueError):
    """Raised when log is asked for a rotation angle at or near pi."""


def skew(w):
    """Map ``(..., 3)`` vectors to ``(..., 3, 3)`` skew matrices, ``skew(x) @ y == cross(x, y)``."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape + (3,))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee3(m):
    """Inverse of :func:`skew`.  The skew-symmetric part of ``m`` is used."""
    m = np.asarray(m, dtype=float)
    return 0.5 * np.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        axis=-1,
    )


def _mv(m, v):
    return np.einsum("...ij,...j->...i", m, v)


def _angle_coefficients(theta):
    """Return ``sin(t)/t``, ``(1-cos t)/t^2`` and ``(t-sin t)/t^3``."""
    t = np.asarray(theta, dtype=float)
    small = t < SMALL_ANGLE
    ts = np.where(small, 1.0, t)
    t2 = t * t
    t4 = t2 * t2
    a = np.where(small, 1.0 - t2 / 6.0 + t4 / 120.0, np.sin(ts) / ts)
    b = np.where(small, 0.5 - t2 / 24.0 + t4 / 720.0, (1.0 - np.cos(ts)) / ts**2)
    c = np.where(
        small, 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0, (ts - np.sin(ts)) / ts**3
    )
    return a, b, c


def so3_exp(phi):
    """Rodrigues formula for ``(..., 3)`` rotation vectors."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a, b, _ = _angle_coefficients(theta)
    K = skew(phi)
    KK = K @ K
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * KK


def left_jacobian(phi):
    """Left Jacobian of SO(3), ``J = I + (1-cos)/t^2 K + (t-sin)/t^3 K^2``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    _, b, c = _angle_coefficients(theta)
    K = skew(phi)
    return np.eye(3) + b[..., None, None] * K + c[..., None, None] * (K @ K)


def left_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < SMALL_ANGLE
    ts = np.where(small, 1.0, theta)
    t2 = theta * theta
    # 1/t^2 - cot(t/2)/(2t), finite up to (but excluding) t = 2*pi
    coef = np.where(
        small,
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0,
        1.0 / ts**2 - 1.0 / (2.0 * ts * np.tan(ts / 2.0)),
    )
    K = skew(phi)
    return np.eye(3) - 0.5 * K + coef[..., None, None] * (K @ K)


def rotation_angle(R):
    """Angle in ``[0, pi]`` of a rotation; equals ``acos((tr R - 1) / 2)`` without its round-off near 0."""
    R = np.asarray(R, dtype=float)
    sin_part = np.linalg.norm(vee3(R), axis=-1)
    cos_part = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(sin_part, cos_part)


def so3_log(R, check=True):
    """Rotation vector of ``R``.

    With ``check`` set, angles within ``CUT_LOCUS_MARGIN`` of pi raise
    :class:`CutLocusError`; otherwise such entries come back as NaN.
    """
    R = np.asarray(R, dtype=float)
    theta = rotation_angle(R)
    near_pi = theta >= np.pi - CUT_LOCUS_MARGIN
    if check and np.any(near_pi):
        raise CutLocusError(
            f"near cut locus: rotation angle {np.max(theta):.9f} rad is within "
            f"{CUT_LOCUS_MARGIN} of pi"
        )
    small = theta < SMALL_ANGLE
    ts = np.where(small, 1.0, theta)
    t2 = theta * theta
    # theta / sin(theta), applied to vee(R - R^T)/2
    scale = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, ts / np.sin(ts))
    phi = scale[..., None] * vee3(R)
    if not check:
        phi = np.where(near_pi[..., None], np.nan, phi)
    return phi


def project_so3(R):
    """Nearest rotation matrix in the Frobenius sense (orthogonal polar factor)."""
    R = np.asarray(R, dtype=float)
    bad = ~np.isfinite(R).all(axis=(-2, -1))
    if np.any(bad):
        # non-finite entries stay non-finite instead of breaking the SVD
        R = np.where(bad[..., None, None], np.eye(3), R)
    U, _, Vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, 2] *= d[..., None]
    out = U @ Vt
    if np.any(bad):
        out = np.where(bad[..., None, None], np.nan, out)
    return out


@dataclass(frozen=True)
class GroupElement:
    """An element (or a batch of elements) of SE_2(3).

    ``R`` has shape ``(..., 3, 3)``; ``v`` and ``x`` have shape ``(..., 3)``.
    No validation happens on construction because Runge-Kutta stages pass
    through slightly non-orthogonal rotations; use :meth:`is_valid` to check.
    """

    R: np.ndarray
    v: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))

    @classmethod
    def identity(cls, batch_shape=()):
        batch_shape = tuple(batch_shape)
        R = np.broadcast_to(np.eye(3), batch_shape + (3, 3)).copy()
        return cls(R, np.zeros(batch_shape + (3,)), np.zeros(batch_shape + (3,)))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[..., :3, :3].copy(), m[..., :3, 3].copy(), m[..., :3, 4].copy())

    @property
    def batch_shape(self):
        return self.R.shape[:-2]

    def matrix(self):
        out = np.zeros(self.batch_shape + (5, 5))
        out[..., :3, :3] = self.R
        out[..., :3, 3] = self.v
        out[..., :3, 4] = self.x
        out[..., 3, 3] = 1.0
        out[..., 4, 4] = 1.0
        return out

    def inverse(self):
        return inverse(self)

    def __matmul__(self, other):
        return compose(self, other)

    def __getitem__(self, idx):
        return GroupElement(self.R[idx], self.v[idx], self.x[idx])

    def project(self):
        """Same element with its rotation snapped back onto SO(3)."""
        return GroupElement(project_so3(self.R), self.v, self.x)

    def is_valid(self, tol=1e-9):
        RtR = np.swapaxes(self.R, -1, -2) @ self.R
        ortho = np.abs(RtR - np.eye(3)).max(axis=(-2, -1)) <= tol
        det = np.abs(np.linalg.det(self.R) - 1.0) <= tol
        finite = (
            np.isfinite(self.R).all(axis=(-2, -1))
            & np.isfinite(self.v).all(axis=-1)
            & np.isfinite(self.x).all(axis=-1)
        )
        return bool(np.all(ortho & det & finite))

    def allclose(self, other, atol=1e-10):
        return (
            np.allclose(self.R, other.R, atol=atol, rtol=0)
            and np.allclose(self.v, other.v, atol=atol, rtol=0)
            and np.allclose(self.x, other.x, atol=atol, rtol=0)
        )

    def to_dict(self):
        return {
            "R": self.R.reshape(-1).tolist(),
            "v": self.v.reshape(-1).tolist(),
            "x": self.x.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.reshape(d["R"], (3, 3)), np.reshape(d["v"], 3), np.reshape(d["x"], 3)
        )


def compose(g1, g2):
    """``(R1 R2, R1 v2 + v1, R1 x2 + x1)``."""
    return GroupElement(g1.R @ g2.R, _mv(g1.R, g2.v) + g1.v, _mv(g1.R, g2.x) + g1.x)


def inverse(g):
    Rt = np.swapaxes(g.R, -1, -2)
    return GroupElement(Rt, -_mv(Rt, g.v), -_mv(Rt, g.x))


def hat(w):
    """``(..., 9)`` algebra vectors to ``(..., 5, 5)`` algebra matrices."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (5, 5))
    out[..., :3, :3] = skew(w[..., 0:3])
    out[..., :3, 3] = w[..., 3:6]
    out[..., :3, 4] = w[..., 6:9]
    return out


def vee(m):
    m = np.asarray(m, dtype=float)
    return np.concatenate([vee3(m[..., :3, :3]), m[..., :3, 3], m[..., :3, 4]], axis=-1)


def exp(w):
    """Closed-form exponential of ``(..., 9)`` algebra vectors."""
    w = np.asarray(w, dtype=float)
    phi = w[..., 0:3]
    J = left_jacobian(phi)
    return GroupElement(so3_exp(phi), _mv(J, w[..., 3:6]), _mv(J, w[..., 6:9]))


def log(g, check=True):
    """Local inverse of :func:`exp`.  Raises :class:`CutLocusError` near angle pi."""
    phi = so3_log(g.R, check=check)
    Jinv = left_jacobian_inv(phi)
    return np.concatenate([phi, _mv(Jinv, g.v), _mv(Jinv, g.x)], axis=-1)


def adjoint_matrix(g):
    """``[[R, 0, 0], [v^R, R, 0], [x^R, 0, R]]`` so that ``hat(Ad w) = g hat(w) g^-1``."""
    R = g.R
    out = np.zeros(g.batch_shape + (9, 9))
    out[..., 0:3, 0:3] = R
    out[..., 3:6, 3:6] = R
    out[..., 6:9, 6:9] = R
    out[..., 3:6, 0:3] = skew(g.v) @ R
    out[..., 6:9, 0:3] = skew(g.x) @ R
    return out


def ad_matrix(w):
    """``[[W, 0, 0], [A^, W, 0], [V^, 0, W]]`` with ``W = skew(omega)``."""
    w = np.asarray(w, dtype=float)
    W = skew(w[..., 0:3])
    out = np.zeros(w.shape[:-1] + (9, 9))
    out[..., 0:3, 0:3] = W
    out[..., 3:6, 3:6] = W
    out[..., 6:9, 6:9] = W
    out[..., 3:6, 0:3] = skew(w[..., 3:6])
    out[..., 6:9, 0:3] = skew(w[..., 6:9])
    return out


def rk4_step(rhs, t, g, dt):
    """One classical Runge-Kutta step of ``dg/dt = rhs(t, g)`` on the 5x5 embedding.

    ``rhs`` returns tangent values as ``(..., 5, 5)`` matrices.  The stages
    live in the ambient matrix space; only the final rotation is projected
    back to SO(3).
    """
    M = g.matrix()
    k1 = rhs(t, g)
    k2 = rhs(t + 0.5 * dt, GroupElement.from_matrix(M + 0.5 * dt * k1))
    k3 = rhs(t + 0.5 * dt, GroupElement.from_matrix(M + 0.5 * dt * k2))
    k4 = rhs(t + dt, GroupElement.from_matrix(M + dt * k3))
    M_next = M + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return GroupElement.from_matrix(M_next).project()
