"""Vehicle kinematics, ground truth synthesis and relative measurement models.

Frames: the inertial third axis points down along gravity, so gravity is
``+GRAVITY * e3``.  The relative state is ``g12 = g1^-1 g2``: attitude of
vehicle 2 in the body frame of vehicle 1, with velocity and position of
vehicle 2 relative to vehicle 1 resolved in that same frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import lie
from .lie import GroupElement, skew

__all__ = [
    "GRAVITY",
    "DegenerateFrameError",
    "ImuInput",
    "ImuNoiseSpec",
    "MeasurementModel",
    "MeasurementNoise",
    "TrajectoryPair",
    "TruthSample",
    "attitude_from_trajectory",
    "attitude_rate",
    "direction_noise_cov",
    "imu_from_trajectory",
    "initial_truth",
    "lift_pseudo",
    "measure",
    "measure_left",
    "measure_right",
    "measurement_cov",
    "nominal_inputs",
    "default_directions",
    "relative_truth_step",
    "trajectory_pair",
    "vehicle_rhs",
    "vehicle_states",
]

GRAVITY = 9.81
E3 = np.array([0.0, 0.0, 1.0])


class DegenerateFrameError(ValueError):
    pass


@dataclass(frozen=True)
class ImuInput:
    """Body angular rate (rad/s) and specific force (m/s^2)."""

    omega: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float))

    def zeta(self):
        """The left-translated input ``(omega, accel, 0)`` as a 9-vector."""
        z = np.zeros(np.broadcast_shapes(self.omega.shape, self.accel.shape)[:-1] + (9,))
        z[..., 0:3] = self.omega
        z[..., 3:6] = self.accel
        return z

    def __getitem__(self, idx):
        return ImuInput(self.omega[idx], self.accel[idx])


@dataclass(frozen=True)
class ImuNoiseSpec:
    """White noise densities: gyro in rad/s/sqrt(Hz), accelerometer in m/s^2/sqrt(Hz)."""

    sigma_g: float
    sigma_a: float

    def __post_init__(self):
        if self.sigma_g < 0 or self.sigma_a < 0:
            raise ValueError("noise densities must be nonnegative")

    def covariance(self):
        """9x9 continuous-time covariance ``diag(sg^2 I, sa^2 I, 0)``."""
        return np.diag(
            np.r_[np.full(3, self.sigma_g**2), np.full(3, self.sigma_a**2), np.zeros(3)]
        )


def default_directions():
    """The three reference directions of the desk scenario, normalized."""
    b = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    return b / np.linalg.norm(b, axis=1, keepdims=True)


@dataclass(frozen=True)
class MeasurementModel:
    """Position plus direction sensing of the relative state.

    ``kind="left"`` means sensors on vehicle 1 (``z = [x; R b_i]``);
    ``kind="right"`` means sensors on vehicle 2 (``z = [-R^T x; R^T b_i]``).
    """

    kind: str
    directions: np.ndarray = field(default_factory=default_directions)
    sigma_pos: float = 0.5
    sigma_dir: float = np.deg2rad(5.0)
    rate: float = 2.0

    def __post_init__(self):
        if self.kind not in ("left", "right"):
            raise ValueError(f"kind must be 'left' or 'right', got {self.kind!r}")
        b = np.atleast_2d(np.asarray(self.directions, dtype=float)).reshape(-1, 3)
        if b.size and np.max(np.abs(np.linalg.norm(b, axis=1) - 1.0)) > 1e-12:
            raise ValueError("direction vectors must have unit norm")
        if self.rate <= 0:
            raise ValueError("measurement rate must be positive")
        if self.sigma_pos < 0 or self.sigma_dir < 0:
            raise ValueError("measurement noise must be nonnegative")
        object.__setattr__(self, "directions", b)

    @property
    def n_dirs(self):
        return self.directions.shape[0]

    @property
    def dim(self):
        return 3 + 3 * self.n_dirs


class MeasurementNoise(NamedTuple):
    """One draw of measurement noise: additive position noise and per-direction rotation vectors."""

    position: np.ndarray  # (..., 3)
    rotation: np.ndarray  # (..., n_dirs, 3)


@dataclass(frozen=True)
class TruthSample:
    """Ground truth at one instant.

    ``u1``/``u2`` are the IMU readings handed to the filters; ``u1_noisy``/
    ``u2_noisy`` are those readings with the process noise applied, which is
    what actually drives the true vehicles over the step that ends here.
    """

    t: float
    g1: GroupElement
    g2: GroupElement
    g12: GroupElement
    u1: ImuInput
    u2: ImuInput
    u1_noisy: ImuInput
    u2_noisy: ImuInput


class TrajectoryPair(NamedTuple):
    x1: np.ndarray
    dx1: np.ndarray
    ddx1: np.ndarray
    x2: np.ndarray
    dx2: np.ndarray
    ddx2: np.ndarray


def trajectory_pair(t):
    """Circle for vehicle 1, Lissajous curve for vehicle 2, with analytic derivatives.

    Works elementwise on array ``t``; outputs have shape ``t.shape + (3,)``.
    """
    t = np.asarray(t, dtype=float)
    z = np.zeros_like(t)
    c2, s2 = np.cos(0.2 * t), np.sin(0.2 * t)
    c1, s1 = np.cos(0.1 * t), np.sin(0.1 * t)
    x1 = np.stack([1.5 * c2 + 1.0, 1.5 * s2 + 1.0, z], axis=-1)
    dx1 = np.stack([-0.3 * s2, 0.3 * c2, z], axis=-1)
    ddx1 = np.stack([-0.06 * c2, -0.06 * s2, z], axis=-1)
    x2 = np.stack([2.0 * s1, 2.0 * s2, z + 2.0], axis=-1)
    dx2 = np.stack([0.2 * c1, 0.4 * c2, z], axis=-1)
    ddx2 = np.stack([-0.02 * s1, -0.08 * s2, z], axis=-1)
    return TrajectoryPair(x1, dx1, ddx1, x2, dx2, ddx2)


def _frame(xdot):
    xdot = np.asarray(xdot, dtype=float)
    speed = np.linalg.norm(xdot, axis=-1, keepdims=True)
    if np.any(speed <= 1e-9):
        raise DegenerateFrameError("degenerate frame: trajectory tangent vanishes")
    c1 = xdot / speed
    n = E3 - (c1 @ E3)[..., None] * c1
    n_norm = np.linalg.norm(n, axis=-1, keepdims=True)
    if np.any(n_norm <= 1e-6):
        raise DegenerateFrameError("degenerate frame: tangent parallel to gravity")
    c3 = n / n_norm
    c2 = np.cross(c3, c1)
    return c1, c2, c3, speed, n_norm


def attitude_from_trajectory(xdot, xddot=None):
    """Body frame with the first axis along the velocity and the third axis as close to down as possible."""
    c1, c2, c3, _, _ = _frame(xdot)
    return np.stack([c1, c2, c3], axis=-1)


def attitude_rate(xdot, xddot):
    """Time derivative of :func:`attitude_from_trajectory` along the trajectory."""
    xddot = np.asarray(xddot, dtype=float)
    c1, c2, c3, speed, n_norm = _frame(xdot)
    dc1 = (xddot - (np.sum(c1 * xddot, axis=-1, keepdims=True)) * c1) / speed
    dn = -(dc1 @ E3)[..., None] * c1 - (c1 @ E3)[..., None] * dc1
    dc3 = (dn - np.sum(c3 * dn, axis=-1, keepdims=True) * c3) / n_norm
    dc2 = np.cross(dc3, c1) + np.cross(c3, dc1)
    return np.stack([dc1, dc2, dc3], axis=-1)


def imu_from_trajectory(R, Rdot, vdot, gravity=GRAVITY):
    """Noise-free IMU readings: ``omega = vee(R^T Rdot)``, ``accel = R^T (vdot - g e3)``."""
    R = np.asarray(R, dtype=float)
    Rt = np.swapaxes(R, -1, -2)
    omega = lie.vee3(Rt @ np.asarray(Rdot, dtype=float))
    accel = np.einsum("...ij,...j->...i", Rt, np.asarray(vdot, dtype=float) - gravity * E3)
    return ImuInput(omega, accel)


def vehicle_states(t, gravity=GRAVITY):
    """Analytic states and IMU readings of both vehicles at time(s) ``t``.

    Returns ``(g1, g2, u1, u2)``.
    """
    tr = trajectory_pair(t)
    R1 = attitude_from_trajectory(tr.dx1)
    R2 = attitude_from_trajectory(tr.dx2)
    u1 = imu_from_trajectory(R1, attitude_rate(tr.dx1, tr.ddx1), tr.ddx1, gravity)
    u2 = imu_from_trajectory(R2, attitude_rate(tr.dx2, tr.ddx2), tr.ddx2, gravity)
    return GroupElement(R1, tr.dx1, tr.x1), GroupElement(R2, tr.dx2, tr.x2), u1, u2


def nominal_inputs(t, gravity=GRAVITY):
    """IMU readings ``(u1, u2)`` of the desk scenario at time ``t``."""
    _, _, u1, u2 = vehicle_states(t, gravity)
    return u1, u2


def vehicle_rhs(g, omega, accel, gravity=GRAVITY):
    """Tangent ``[[R omega^, R accel + g e3, v]]`` of the strapdown kinematics (5x5)."""
    out = np.zeros(g.batch_shape + (5, 5))
    out[..., :3, :3] = g.R @ skew(omega)
    out[..., :3, 3] = np.einsum("...ij,...j->...i", g.R, accel) + gravity * E3
    out[..., :3, 4] = g.v
    return out


def initial_truth(t0=0.0, gravity=GRAVITY):
    g1, g2, u1, u2 = vehicle_states(t0, gravity)
    return TruthSample(t0, g1, g2, g1.inverse() @ g2, u1, u2, u1, u2)


def relative_truth_step(state, dt, noise, inputs=nominal_inputs, gravity=GRAVITY):
    """Advance both vehicles by ``dt`` under noisy IMU inputs.

    ``noise`` is ``(w1g, w1a, w2g, w2a)``, each broadcastable to the batch
    shape; it is held constant over the step while the nominal readings from
    ``inputs(t)`` vary across the Runge-Kutta stages.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    w1g, w1a, w2g, w2a = (np.asarray(w, dtype=float) for w in noise)
    t = state.t

    def make_rhs(which):
        def rhs(s, g):
            u1, u2 = inputs(s)
            if which == 1:
                return vehicle_rhs(g, u1.omega - w1g, u1.accel - w1a, gravity)
            return vehicle_rhs(g, u2.omega - w2g, u2.accel - w2a, gravity)

        return rhs

    g1 = lie.rk4_step(make_rhs(1), t, state.g1, dt)
    g2 = lie.rk4_step(make_rhs(2), t, state.g2, dt)
    u1, u2 = inputs(t + dt)
    return TruthSample(
        t + dt,
        g1,
        g2,
        g1.inverse() @ g2,
        u1,
        u2,
        ImuInput(u1.omega - w1g, u1.accel - w1a),
        ImuInput(u2.omega - w2g, u2.accel - w2a),
    )


def _rotate_directions(dirs, rotation):
    if rotation is None:
        return dirs
    return np.einsum("...ij,...j->...i", lie.so3_exp(rotation), dirs)


def measure_left(g12, model, noise=None):
    """``[x; R b_1; ...]`` with additive position noise and rotated directions."""
    if model.kind != "left":
        raise ValueError("measure_left needs a left-invariant measurement model")
    x = g12.x
    dirs = np.einsum("...ij,kj->...ki", g12.R, model.directions)
    if noise is not None:
        x = x + noise.position
        dirs = _rotate_directions(dirs, noise.rotation)
    return np.concatenate([x, dirs.reshape(dirs.shape[:-2] + (-1,))], axis=-1)


def measure_right(g12, model, noise=None):
    """``[-R^T x; R^T b_1; ...]`` with the same noise construction as :func:`measure_left`."""
    if model.kind != "right":
        raise ValueError("measure_right needs a right-invariant measurement model")
    Rt = np.swapaxes(g12.R, -1, -2)
    x = -np.einsum("...ij,...j->...i", Rt, g12.x)
    dirs = np.einsum("...ij,kj->...ki", Rt, model.directions)
    if noise is not None:
        x = x + noise.position
        dirs = _rotate_directions(dirs, noise.rotation)
    return np.concatenate([x, dirs.reshape(dirs.shape[:-2] + (-1,))], axis=-1)


def measure(g12, model, noise=None):
    if model.kind == "left":
        return measure_left(g12, model, noise)
    return measure_right(g12, model, noise)


def direction_noise_cov(b, sigma_dir, n_samples=100_000, seed=0):
    """Empirical covariance of ``exp(w^) b - b`` with ``w ~ N(0, sigma_dir^2 I)``."""
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    b = np.asarray(b, dtype=float)
    if sigma_dir == 0:
        return np.zeros((3, 3))
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, sigma_dir, size=(n_samples, 3))
    d = lie.so3_exp(w) @ b - b
    cov = np.cov(d, rowvar=False)
    return 0.5 * (cov + cov.T)


def measurement_cov(model, R_est, dir_covs):
    """Measurement covariance evaluated at an estimated relative attitude.

    Direction noise is isotropic in rotation, so the covariance of a
    rotated direction ``y = M b`` is ``M C_b M^T``.  The per-direction
    covariances ``dir_covs`` (shape ``(n_dirs, 3, 3)``) are computed once
    for the reference directions and rotated here: by ``R`` for the left
    model and ``R^T`` for the right one.
    """
    R_est = np.asarray(R_est, dtype=float)
    batch = R_est.shape[:-2]
    M = R_est if model.kind == "left" else np.swapaxes(R_est, -1, -2)
    m = model.dim
    out = np.zeros(batch + (m, m))
    out[..., 0:3, 0:3] = model.sigma_pos**2 * np.eye(3)
    Mt = np.swapaxes(M, -1, -2)
    for i in range(model.n_dirs):
        s = slice(3 + 3 * i, 6 + 3 * i)
        out[..., s, s] = M @ dir_covs[i] @ Mt
    return out


def lift_pseudo(z, model):
    """Pad each 3-block of ``z`` to a 5-vector so the measurement becomes a linear group action.

    Returns ``(tilde_z, B, Pi)`` with ``Pi @ tilde_z == z``.  The position
    block gets ``(0, 1)``, direction blocks get ``(0, 0)``.
    """
    z = np.asarray(z, dtype=float)
    nb = model.n_dirs
    if z.shape[-1] != 3 + 3 * nb:
        raise ValueError(f"measurement length {z.shape[-1]} does not match 3 + 3*{nb}")
    blocks = z.reshape(z.shape[:-1] + (nb + 1, 3))
    tilde = np.zeros(z.shape[:-1] + (nb + 1, 5))
    tilde[..., :3] = blocks
    tilde[..., 0, 4] = 1.0
    B = np.zeros((nb + 1, 5))
    B[0, 4] = 1.0
    B[1:, :3] = model.directions
    Pi = np.kron(np.eye(nb + 1), np.hstack([np.eye(3), np.zeros((3, 2))]))
    return tilde.reshape(z.shape[:-1] + (5 * (nb + 1),)), B.reshape(-1), Pi


def block_action(g_matrix, n_blocks):
    """``I_n (x) g``: block-diagonal stacking of a 5x5 matrix (batched)."""
    g_matrix = np.asarray(g_matrix)
    batch = g_matrix.shape[:-2]
    out = np.zeros(batch + (5 * n_blocks, 5 * n_blocks))
    for i in range(n_blocks):
        out[..., 5 * i : 5 * i + 5, 5 * i : 5 * i + 5] = g_matrix
    return out

