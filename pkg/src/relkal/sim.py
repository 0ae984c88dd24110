"""Desk scenario, Monte Carlo harness, error metric and CSV export.

Every run draws its noise from three independent streams keyed by
``(master_seed, run_index, stream)``, so a given run index sees the same
truth and the same measurement noise whichever filter is being scored.
Runs are simulated in fixed-size chunks with all arithmetic batched over
the runs of a chunk; chunk boundaries do not depend on the thread count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__, filters, lie
from .filters import CASES, Belief, ProcessNoiseCase, QekfState
from .lie import GroupElement
from .models import (
    GRAVITY,
    ImuInput,
    MeasurementModel,
    MeasurementNoise,
    TruthSample,
    direction_noise_cov,
    measure,
    measurement_cov,
    relative_truth_step,
    vehicle_states,
)

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "RunResult",
    "MonteCarloSummary",
    "NoiseStreams",
    "build_initial_belief",
    "case_matrix",
    "error_metric",
    "monte_carlo",
    "run_batch",
    "run_matrix",
    "run_once",
    "simulate_truth",
    "summary_csv",
    "plot_data_csv",
    "per_run_csv",
]

FILTERS = ("LRKF", "RRKF", "QEKF")
MEASUREMENTS = ("z_L", "z_R")
STREAMS = {"imu1": 0, "imu2": 1, "meas": 2}
DIVERGENCE_POS = 1e3
DEFAULT_CHUNK = 100

DEFAULT_INITIAL_ERROR = (
    (0.0, 0.0, math.pi / 2),
    (0.5, 0.8, -0.4),
    (0.0, 1.0, -1.0),
)


class ConfigError(ValueError):
    pass


def default_P0():
    return np.diag(np.r_[np.full(3, (math.pi / 6) ** 2), np.full(6, 4.0)])


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of the simulation matrix.

    ``initial_error`` holds the attitude rotation vector (rad, applied on
    the right of the true attitude), the velocity offset and the position
    offset.  ``p0`` is the left-error covariance; the right filter gets it
    through ``pr_init`` (``"truth"`` conjugates by the inverse of the true
    initial state, ``"estimate"`` by the initial estimate).
    """

    case: ProcessNoiseCase = CASES["I"]
    filter: str = "LRKF"
    measurement: str = "z_L"
    n_runs: int = 100
    master_seed: int = 0
    duration: float = 30.0
    dt: float = 0.01
    meas_rate: float = 2.0
    initial_error: tuple = DEFAULT_INITIAL_ERROR
    p0: np.ndarray = field(default_factory=default_P0)
    sigma_pos: float = 0.5
    sigma_dir: float = math.radians(5.0)
    pr_init: str = "truth"
    process_noise: bool = True
    measurement_noise: bool = True

    def __post_init__(self):
        if isinstance(self.case, str):
            if self.case not in CASES:
                raise ConfigError(f"unknown case {self.case!r}")
            object.__setattr__(self, "case", CASES[self.case])
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(
            self, "initial_error", tuple(tuple(float(c) for c in e) for e in self.initial_error)
        )
        self.validate()

    def validate(self):
        if self.filter not in FILTERS:
            raise ConfigError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if self.measurement not in MEASUREMENTS:
            raise ConfigError(f"measurement must be one of {MEASUREMENTS}, got {self.measurement!r}")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.dt <= 0 or self.duration <= 0 or self.meas_rate <= 0:
            raise ConfigError("dt, duration and meas_rate must be positive")
        ratio = 1.0 / (self.meas_rate * self.dt)
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ConfigError("dt must divide the measurement period 1/meas_rate")
        steps = self.duration / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("duration/dt must be an integer step count")
        if self.p0.shape != (9, 9):
            raise ConfigError("p0 must be 9x9")
        if np.min(np.linalg.eigvalsh(0.5 * (self.p0 + self.p0.T))) < 0:
            raise ConfigError("p0 must be positive semidefinite")
        if len(self.initial_error) != 3 or any(len(e) != 3 for e in self.initial_error):
            raise ConfigError("initial_error must be three 3-vectors")
        if self.pr_init not in ("truth", "estimate"):
            raise ConfigError("pr_init must be 'truth' or 'estimate'")

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))

    @property
    def meas_every(self):
        return int(round(1.0 / (self.meas_rate * self.dt)))

    @property
    def label(self):
        return f"{self.filter}|{self.measurement}|{self.case.label}"

    def measurement_model(self):
        kind = "left" if self.measurement == "z_L" else "right"
        return MeasurementModel(kind, sigma_pos=self.sigma_pos, sigma_dir=self.sigma_dir, rate=self.meas_rate)

    def to_dict(self):
        d = asdict(self)
        d["case"] = self.case.label
        d["p0"] = self.p0.tolist()
        d["initial_error"] = [list(e) for e in self.initial_error]
        return d

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class RunResult:
    """Per-step error table with columns ``(t, att_deg, vel_mps, pos_m, combined)``."""

    run_index: int
    steps: np.ndarray
    total_error: float
    diverged: bool = False
    nees: np.ndarray | None = None

    def __post_init__(self):
        if self.steps.ndim != 2 or self.steps.shape[1] != 5:
            raise ValueError("steps must have shape (n, 5)")


@dataclass
class MonteCarloSummary:
    config: ScenarioConfig
    mean_total_error: float
    std_total_error: float
    n_diverged: int
    total_errors: np.ndarray
    diverged: np.ndarray
    runs: list | None = None

    @property
    def n_valid(self):
        return int(np.sum(~self.diverged))

    @property
    def stderr(self):
        return self.std_total_error / math.sqrt(max(self.n_valid, 1))


def error_metric(truth, est):
    """``(pos_m, vel_mps, att_deg, combined)``; broadcasts over batches."""
    pos = np.linalg.norm(truth.x - est.x, axis=-1)
    vel = np.linalg.norm(truth.v - est.v, axis=-1)
    # acos((tr(R^T Rbar) - 1) / 2) in its atan2 form, which stays accurate near zero
    att = np.degrees(lie.rotation_angle(np.swapaxes(truth.R, -1, -2) @ est.R))
    return pos, vel, att, pos + vel + att


def _initial_mean(cfg, truth0):
    att, dv, dx = (np.asarray(e) for e in cfg.initial_error)
    return GroupElement(
        truth0.R @ lie.so3_exp(att),
        truth0.v + dv,
        truth0.x + dx,
    )


def build_initial_belief(cfg, truth0):
    """Initial belief of the configured filter; a :class:`QekfState` for the baseline."""
    mean = _initial_mean(cfg, truth0)
    batch = mean.batch_shape
    P = np.broadcast_to(cfg.p0, batch + (9, 9)).copy()
    if cfg.filter == "LRKF":
        return Belief(mean, P, "L")
    if cfg.filter == "RRKF":
        Ad = lie.adjoint_matrix(truth0.inverse() if cfg.pr_init == "truth" else mean)
        PR = Ad @ P @ np.swapaxes(Ad, -1, -2)
        return Belief(mean, 0.5 * (PR + np.swapaxes(PR, -1, -2)), "R")
    return QekfState.from_group(mean, P)


class NoiseStreams:
    """Per-run Philox generators keyed by ``(master_seed, run_index, stream)``."""

    def __init__(self, master_seed, run_index):
        self.master_seed = int(master_seed)
        self.run_index = int(run_index)

    def generator(self, stream):
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.run_index, STREAMS[stream]))
        return np.random.Generator(np.random.Philox(ss))

    def draw(self, cfg, n_dirs):
        """``(imu1, imu2, meas)`` standard normals; imu arrays are ``(n_steps, 6)``."""
        imu1 = self.generator("imu1").standard_normal((cfg.n_steps, 6))
        imu2 = self.generator("imu2").standard_normal((cfg.n_steps, 6))
        n_meas = cfg.n_steps // cfg.meas_every
        meas = self.generator("meas").standard_normal((n_meas, 3 + 3 * n_dirs))
        return imu1, imu2, meas


class _InputTable:
    """Nominal IMU readings precomputed on the half-step grid."""

    def __init__(self, cfg):
        self.h = cfg.dt / 2.0
        t = np.arange(2 * cfg.n_steps + 1) * self.h
        _, _, self.u1, self.u2 = vehicle_states(t)

    def index(self, s):
        k = int(round(s / self.h))
        if abs(k * self.h - s) > 1e-9:
            raise ValueError(f"time {s} is off the input grid")
        return k

    def __call__(self, s):
        k = self.index(s)
        return self.u1[k], self.u2[k]

    def step(self, k):
        """Inputs of vehicles 1 and 2 at the start, midpoint and end of step ``k``."""
        idx = (2 * k, 2 * k + 1, 2 * k + 2)
        return tuple(self.u1[i] for i in idx), tuple(self.u2[i] for i in idx)


@dataclass
class TruthBatch:
    """Relative truth and noisy measurements for a chunk of runs."""

    run_indices: np.ndarray
    g12: GroupElement  # batch shape (n_steps + 1, n_runs)
    z: np.ndarray  # (n_meas, n_runs, m)
    digest: list


def _hash_arrays(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def simulate_truth(cfg, run_indices, table=None):
    """Integrate both vehicles for the given runs and synthesize the measurements."""
    run_indices = np.asarray(run_indices, dtype=int)
    table = table or _InputTable(cfg)
    model = cfg.measurement_model()
    draws = [NoiseStreams(cfg.master_seed, r).draw(cfg, model.n_dirs) for r in run_indices]
    imu1 = np.stack([d[0] for d in draws], axis=1)
    imu2 = np.stack([d[1] for d in draws], axis=1)
    meas = np.stack([d[2] for d in draws], axis=1)
    digest = [_hash_arrays(*d) for d in draws]

    scale = 1.0 / math.sqrt(cfg.dt) if cfg.process_noise else 0.0
    s1, s2 = cfg.case.sigma1, cfg.case.sigma2
    w1 = imu1 * scale * np.r_[np.full(3, s1.sigma_g), np.full(3, s1.sigma_a)]
    w2 = imu2 * scale * np.r_[np.full(3, s2.sigma_g), np.full(3, s2.sigma_a)]

    n = len(run_indices)
    g1, g2, u1, u2 = vehicle_states(0.0)
    bc = lambda g: GroupElement(*(np.broadcast_to(a, (n,) + a.shape).copy() for a in (g.R, g.v, g.x)))
    state = TruthSample(0.0, bc(g1), bc(g2), bc(g1.inverse() @ g2), u1, u2, u1, u2)
    R = np.empty((cfg.n_steps + 1, n, 3, 3))
    v = np.empty((cfg.n_steps + 1, n, 3))
    x = np.empty((cfg.n_steps + 1, n, 3))
    R[0], v[0], x[0] = state.g12.R, state.g12.v, state.g12.x
    for k in range(cfg.n_steps):
        noise = (w1[k, :, :3], w1[k, :, 3:], w2[k, :, :3], w2[k, :, 3:])
        state = relative_truth_step(state, cfg.dt, noise, inputs=table)
        state = replace(state, t=(k + 1) * cfg.dt)
        R[k + 1], v[k + 1], x[k + 1] = state.g12.R, state.g12.v, state.g12.x
    g12 = GroupElement(R, v, x)

    epochs = np.arange(1, meas.shape[0] + 1) * cfg.meas_every
    mscale = 1.0 if cfg.measurement_noise else 0.0
    noise = MeasurementNoise(
        meas[..., :3] * model.sigma_pos * mscale,
        meas[..., 3:].reshape(meas.shape[:-1] + (model.n_dirs, 3)) * model.sigma_dir * mscale,
    )
    z = measure(g12[epochs], model, noise)
    return TruthBatch(run_indices, g12, z, digest)


def _filter_fns(cfg):
    if cfg.filter == "LRKF":
        prop = filters.lrkf_propagate
        corr = filters.lrkf_correct_zL if cfg.measurement == "z_L" else filters.lrkf_correct_zR
    elif cfg.filter == "RRKF":
        prop = filters.rrkf_propagate
        corr = filters.rrkf_correct_zL if cfg.measurement == "z_L" else filters.rrkf_correct_zR
    else:
        prop = filters.qekf_propagate
        corr = filters.qekf_correct
    return prop, corr


def _error_vector(cfg, truth, est):
    """Estimation error in the filter's own coordinates, for NEES."""
    if cfg.filter == "LRKF":
        return lie.log(truth.inverse() @ est, check=False)
    if cfg.filter == "RRKF":
        return lie.log(est @ truth.inverse(), check=False)
    dtheta = lie.so3_log(np.swapaxes(est.R, -1, -2) @ truth.R, check=False)
    return np.concatenate([dtheta, truth.v - est.v, truth.x - est.x], axis=-1)


def _state_arrays(s):
    if isinstance(s, QekfState):
        return s.q, s.v, s.x, s.cov
    return s.mean.R, s.mean.v, s.mean.x, s.cov


def _replace_rows(s, mask, fallback):
    if isinstance(s, QekfState):
        q, v, x, P = (a.copy() for a in _state_arrays(s))
        q[mask], v[mask], x[mask], P[mask] = fallback.q[mask], fallback.v[mask], fallback.x[mask], fallback.cov[mask]
        return QekfState(q, v, x, P)
    R, v, x, P = (a.copy() for a in _state_arrays(s))
    fb = fallback
    R[mask], v[mask], x[mask], P[mask] = fb.mean.R[mask], fb.mean.v[mask], fb.mean.x[mask], fb.cov[mask]
    return Belief(GroupElement(R, v, x), P, s.chirality)


def _nonfinite(s):
    bad = np.zeros(s.cov.shape[0], dtype=bool)
    for a in _state_arrays(s):
        bad |= ~np.all(np.isfinite(a.reshape(a.shape[0], -1)), axis=1)
    return bad


def run_batch(cfg, truth, table=None, dir_covs=None, with_nees=False, on_step=None):
    """Score one filter against a precomputed :class:`TruthBatch`; returns a list of RunResult.

    ``on_step(k, state)`` is called with the filter state after every step.
    """
    table = table or _InputTable(cfg)
    model = cfg.measurement_model()
    if dir_covs is None:
        dir_covs = _dir_covs(model)
    sigma_z = lambda R_est: measurement_cov(model, R_est, dir_covs)
    prop, corr = _filter_fns(cfg)

    n = len(truth.run_indices)
    g0 = truth.g12[0]
    state = build_initial_belief(cfg, g0)
    exact = replace(cfg, initial_error=((0, 0, 0),) * 3)
    diverged = np.zeros(n, dtype=bool)
    errs = np.empty((cfg.n_steps + 1, n, 4))
    nees = np.full((cfg.n_steps + 1, n), np.nan) if with_nees else None

    def record(k, s):
        nonlocal diverged
        est = s.mean
        tk = truth.g12[k]
        e = np.stack(error_metric(tk, est), axis=-1)
        bad = _nonfinite(s) | ~np.all(np.isfinite(e), axis=-1) | (e[:, 0] > DIVERGENCE_POS)
        diverged |= bad
        errs[k] = np.where(diverged[:, None], np.nan, e)
        if with_nees:
            ev = _error_vector(cfg, tk, est)
            sol = np.linalg.solve(s.cov + 1e-15 * np.eye(9), ev[..., None])[..., 0]
            nees[k] = np.where(diverged, np.nan, np.sum(ev * sol, axis=-1))
        if not np.any(diverged):
            return s
        # a well-posed stand-in at the current truth keeps the batch math finite
        return _replace_rows(s, diverged, build_initial_belief(exact, tk))

    state = record(0, state)
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(cfg.n_steps):
            u1, u2 = table.step(k)
            state = prop(state, u1, u2, cfg.case, cfg.dt)
            if (k + 1) % cfg.meas_every == 0:
                m = (k + 1) // cfg.meas_every - 1
                state = corr(state, truth.z[m], model, sigma_z)
            state = record(k + 1, state)
            if on_step is not None:
                on_step(k + 1, state)

    t = np.arange(cfg.n_steps + 1) * cfg.dt
    out = []
    for j, r in enumerate(truth.run_indices):
        e = errs[:, j]
        steps = np.column_stack([t, e[:, 2], e[:, 1], e[:, 0], e[:, 3]])
        total = float("nan") if diverged[j] else float(np.mean(e[:, 3]))
        out.append(RunResult(int(r), steps, total, bool(diverged[j]), None if nees is None else nees[:, j]))
    return out


_DIR_COV_CACHE = {}


def _dir_covs(model):
    key = (model.directions.tobytes(), float(model.sigma_dir))
    if key not in _DIR_COV_CACHE:
        _DIR_COV_CACHE[key] = np.stack(
            [direction_noise_cov(b, model.sigma_dir) for b in model.directions]
        )
    return _DIR_COV_CACHE[key]


def run_once(cfg, run_index, with_nees=False):
    """Simulate a single run; the same ``run_index`` replays the same noise for any filter."""
    truth = simulate_truth(cfg, [run_index])
    return run_batch(cfg, truth, with_nees=with_nees)[0]


def _chunks(n_runs, chunk):
    return [np.arange(s, min(s + chunk, n_runs)) for s in range(0, n_runs, chunk)]


def _summarize(cfg, runs, keep_runs):
    totals = np.array([r.total_error for r in runs])
    div = np.array([r.diverged for r in runs])
    valid = totals[~div]
    mean = float(np.mean(valid)) if valid.size else float("nan")
    std = float(np.std(valid, ddof=1)) if valid.size > 1 else 0.0
    return MonteCarloSummary(cfg, mean, std, int(div.sum()), totals, div, runs if keep_runs else None)


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def monte_carlo(cfg, threads=1, chunk=DEFAULT_CHUNK, keep_runs=False, with_nees=False):
    """TotalError statistics over ``cfg.n_runs`` runs; diverged runs are counted and excluded."""
    table = _InputTable(cfg)
    dcov = _dir_covs(cfg.measurement_model())

    def work(idx):
        truth = simulate_truth(cfg, idx, table)
        return run_batch(cfg, truth, table, dcov, with_nees)

    runs = [r for part in _map(work, _chunks(cfg.n_runs, chunk), threads) for r in part]
    return _summarize(cfg, runs, keep_runs)


def case_matrix(base=None):
    """The 18 configurations: filters x measurements x process noise cases."""
    base = base or ScenarioConfig()
    return [
        replace(base, filter=f, measurement=m, case=CASES[c])
        for m in MEASUREMENTS
        for f in FILTERS
        for c in ("I", "II", "III")
    ]


def run_matrix(base=None, threads=1, chunk=DEFAULT_CHUNK, keep_runs=False):
    """Run all 18 cells, integrating each truth chunk once and sharing it across filters."""
    configs = case_matrix(base)
    groups = {}
    for c in configs:
        groups.setdefault((c.case.label, c.measurement), []).append(c)

    def work(item):
        (_, _), cfgs = item
        first = cfgs[0]
        table = _InputTable(first)
        dcov = _dir_covs(first.measurement_model())
        results = {c.label: [] for c in cfgs}
        for idx in _chunks(first.n_runs, chunk):
            truth = simulate_truth(first, idx, table)
            for c in cfgs:
                results[c.label].extend(run_batch(c, truth, table, dcov))
        return results

    merged = {}
    for part in _map(work, list(groups.items()), threads):
        merged.update(part)
    return [_summarize(c, merged[c.label], keep_runs) for c in configs]


# ---------------------------------------------------------------------------
# export


def metadata_lines(seed, config_hash, **extra):
    lines = [f"# relkal {__version__}", f"# seed={seed}", f"# config_hash={config_hash}"]
    lines += [f"# {k}={v}" for k, v in extra.items()]
    return lines


def _csv(header_lines, columns, rows):
    buf = io.StringIO()
    for line in header_lines:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return "nan" if not np.isfinite(x) else repr(float(x))


def summary_csv(summaries, header_lines=()):
    rows = [
        (
            s.config.filter,
            s.config.measurement,
            s.config.case.label,
            s.config.n_runs,
            _fmt(s.mean_total_error),
            _fmt(s.std_total_error),
            s.n_diverged,
        )
        for s in summaries
    ]
    cols = ("filter", "measurement", "case", "n_runs", "mean_total_error", "std_total_error", "n_diverged")
    return _csv(header_lines, cols, rows)


def plot_data_csv(summaries, header_lines=()):
    """Long format: one bar per (measurement panel, filter, case)."""
    rows = [
        (
            s.config.measurement,
            s.config.filter,
            s.config.case.label,
            f"{s.config.filter}-{s.config.case.label}",
            _fmt(s.mean_total_error),
            _fmt(s.stderr),
        )
        for s in summaries
    ]
    cols = ("panel", "filter", "case", "bar", "total_error", "stderr")
    return _csv(header_lines, cols, rows)


def per_run_csv(result, header_lines=()):
    cols = ["t", "att_err_deg", "vel_err_mps", "pos_err_m", "combined"]
    data = result.steps
    if result.nees is not None:
        cols.append("nees")
        data = np.column_stack([data, result.nees])
    rows = [[_fmt(v) for v in row] for row in data]
    return _csv(header_lines, cols, rows)
