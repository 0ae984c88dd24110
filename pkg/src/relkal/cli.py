"""Command line entry point: ``relkal simulate | matrix | audit``.

Configuration files are JSON objects whose keys mirror
:class:`relkal.sim.ScenarioConfig` plus a few output options.  Angles in
files are degrees.  Flags override file values.

Exit codes: 0 success, 2 configuration error, 3 every run diverged,
4 unexpected audit verdicts.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, sim, sti
from .filters import CASES
from .models import nominal_inputs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_AUDIT = 4

SCENARIO_KEYS = {
    "case",
    "filter",
    "measurement",
    "n_runs",
    "seed",
    "duration",
    "dt",
    "meas_rate",
    "initial_error",
    "p0",
    "sigma_pos_m",
    "sigma_dir_deg",
    "pr_init",
    "process_noise",
    "measurement_noise",
}
OUTPUT_KEYS = {"out", "threads", "per_run", "nees", "verbose"}

FILTER_FLAGS = {"lrkf": "LRKF", "rrkf": "RRKF", "qekf": "QEKF"}
MEAS_FLAGS = {"zl": "z_L", "zr": "z_R"}


class CliConfigError(ValueError):
    pass


def load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliConfigError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise CliConfigError("config must be a JSON object")
    unknown = set(data) - SCENARIO_KEYS - OUTPUT_KEYS
    if unknown:
        raise CliConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return data


def _seed(raw, args):
    if args.seed is not None:
        return args.seed
    if "seed" in raw:
        return raw["seed"]
    env = os.environ.get("RELKAL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise CliConfigError(f"RELKAL_SEED is not an integer: {env!r}") from e
    return 0


def scenario_from(raw, args):
    """Merge file values and flags into a validated ScenarioConfig."""
    kw = {}
    if "case" in raw:
        kw["case"] = raw["case"]
    if "filter" in raw:
        kw["filter"] = FILTER_FLAGS.get(str(raw["filter"]).lower(), raw["filter"])
    if "measurement" in raw:
        m = str(raw["measurement"]).lower().replace("_", "")
        kw["measurement"] = MEAS_FLAGS.get(m, raw["measurement"])
    for key in ("n_runs", "duration", "dt", "meas_rate", "pr_init", "process_noise", "measurement_noise"):
        if key in raw:
            kw[key] = raw[key]
    if "sigma_pos_m" in raw:
        kw["sigma_pos"] = float(raw["sigma_pos_m"])
    if "sigma_dir_deg" in raw:
        kw["sigma_dir"] = math.radians(float(raw["sigma_dir_deg"]))
    if "initial_error" in raw:
        ie = raw["initial_error"]
        try:
            kw["initial_error"] = (
                tuple(np.radians(ie["attitude_deg"])),
                tuple(ie["velocity"]),
                tuple(ie["position"]),
            )
        except (KeyError, TypeError) as e:
            raise CliConfigError(
                "initial_error needs keys attitude_deg, velocity, position"
            ) from e
    if "p0" in raw:
        kw["p0"] = np.asarray(raw["p0"], dtype=float)

    if getattr(args, "case", None):
        kw["case"] = args.case
    if getattr(args, "filter", None):
        kw["filter"] = FILTER_FLAGS[args.filter]
    if getattr(args, "measurement", None):
        kw["measurement"] = MEAS_FLAGS[args.measurement]
    if getattr(args, "runs", None) is not None:
        kw["n_runs"] = args.runs
    kw["master_seed"] = _seed(raw, args)
    if "case" in kw and kw["case"] not in CASES:
        raise CliConfigError(f"case: unknown value {kw['case']!r}")
    try:
        return sim.ScenarioConfig(**kw)
    except (sim.ConfigError, TypeError, ValueError) as e:
        raise CliConfigError(str(e)) from e


def _out_dir(raw, args):
    out = Path(args.out or raw.get("out") or ".")
    if out.exists() and not out.is_dir():
        raise CliConfigError(f"out: {out} is not a directory")
    parent = out if out.exists() else out.parent
    if not os.access(parent if str(parent) else ".", os.W_OK):
        raise CliConfigError(f"out: {out} is not writable")
    return out


def _threads(raw, args):
    n = args.threads if args.threads is not None else raw.get("threads", 1)
    if int(n) < 1:
        raise CliConfigError("threads must be at least 1")
    return int(n)


def _header(cfg, **extra):
    return sim.metadata_lines(cfg.master_seed, cfg.digest(), **extra)


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_simulate(args):
    raw = load_config(args.config)
    cfg = scenario_from(raw, args)
    out = _out_dir(raw, args)
    threads = _threads(raw, args)
    per_run = bool(raw.get("per_run", False) or args.per_run)
    summary = sim.monte_carlo(
        cfg, threads=threads, keep_runs=per_run, with_nees=bool(raw.get("nees", False))
    )
    header = _header(
        cfg, filter=cfg.filter, measurement=cfg.measurement, case=cfg.case.label, n_runs=cfg.n_runs
    )
    _write(out / "summary.csv", sim.summary_csv([summary], header))
    if per_run:
        for r in summary.runs:
            _write(out / "runs" / f"run_{r.run_index:05d}.csv", sim.per_run_csv(r, header + [f"# run_index={r.run_index}"]))
    print(
        f"{cfg.label} runs={cfg.n_runs} mean_total_error={summary.mean_total_error:.6f} "
        f"std={summary.std_total_error:.6f} diverged={summary.n_diverged}"
    )
    return EXIT_DIVERGED if summary.n_valid == 0 else EXIT_OK


def cmd_matrix(args):
    raw = load_config(args.config)
    base = scenario_from(raw, args)
    out = _out_dir(raw, args)
    threads = _threads(raw, args)
    summaries = sim.run_matrix(base, threads=threads)
    header = _header(base, n_runs=base.n_runs)
    _write(out / "matrix_summary.csv", sim.summary_csv(summaries, header))
    _write(out / "plot_data.csv", sim.plot_data_csv(summaries, header))
    for s in summaries:
        print(f"{s.config.label:18s} {s.mean_total_error:10.5f} +- {s.stderr:.5f}  diverged={s.n_diverged}")
    return EXIT_DIVERGED if all(s.n_valid == 0 for s in summaries) else EXIT_OK


def _scenario_inputs(t):
    u1, u2 = nominal_inputs(t)
    return (u1.omega, u1.accel), (u2.omega, u2.accel)


def cmd_audit(args):
    if args.model != "vehicle":
        print(f"model: unknown value {args.model!r} (expected 'vehicle')", file=sys.stderr)
        return EXIT_CONFIG
    seed = _seed({}, args)
    d1 = sti.vehicle_field(lambda t: _scenario_inputs(t)[0])
    d2 = d1 if args.same_inputs else sti.vehicle_field(lambda t: _scenario_inputs(t)[1])
    samples = sti.sample_points(np.random.default_rng(seed), args.samples)
    reports = [
        sti.check_eti(d1, samples),
        sti.check_l_rti(d1, d2, samples),
        sti.check_r_rti(d1, d2, samples),
    ]
    for r in reports:
        print(r.to_json())
    expected = ("pass", "pass", "pass" if args.same_inputs else "fail")
    return EXIT_OK if tuple(r.verdict for r in reports) == expected else EXIT_AUDIT


def build_parser():
    p = argparse.ArgumentParser(prog="relkal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"relkal {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="master seed (falls back to RELKAL_SEED)")
        sp.add_argument("--runs", type=int, help="Monte Carlo runs")
        sp.add_argument("--case", choices=sorted(CASES))
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads")

    s = sub.add_parser("simulate", help="Monte Carlo for one filter, measurement and case")
    common(s)
    s.add_argument("--filter", choices=sorted(FILTER_FLAGS))
    s.add_argument("--measurement", choices=sorted(MEAS_FLAGS))
    s.add_argument("--per-run", action="store_true", help="also write one CSV per run")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("matrix", help="all 18 filter/measurement/case combinations")
    common(m)
    m.set_defaults(func=cmd_matrix)

    a = sub.add_parser("audit", help="trajectory independence checks for a model")
    a.add_argument("model", nargs="?", default="vehicle")
    a.add_argument("--seed", type=int)
    a.add_argument("--samples", type=int, default=1000)
    a.add_argument("--same-inputs", action="store_true", help="give both vehicles identical inputs")
    a.set_defaults(func=cmd_audit)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
