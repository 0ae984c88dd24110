"""
The 18-cell comparison
======================

Three filters, two measurement types and three IMU pairings.  Every cell
uses the same noise for a given run index, so differences between filters
are paired.  Set RUNS to 100 for the desk-scale study (a few minutes).
"""

# %%
import math
import os

import numpy as np

from relkal import sim

RUNS = int(os.environ.get("RUNS", 20))
summaries = sim.run_matrix(sim.ScenarioConfig(n_runs=RUNS, master_seed=0), threads=4)
by_label = {s.config.label: s for s in summaries}

# %%
for meas in ("z_L", "z_R"):
    print(f"\nmeasurement {meas}  (TotalError, mean +- standard error over {RUNS} runs)")
    print("        " + "".join(f"{c:>18}" for c in ("Case I", "Case II", "Case III")))
    for filt in ("LRKF", "RRKF", "QEKF"):
        cells = [by_label[f"{filt}|{meas}|{c}"] for c in ("I", "II", "III")]
        print(f"{filt:8}" + "".join(f"{s.mean_total_error:11.3f} +- {s.stderr:4.2f}" for s in cells))

# %%
# Paired differences against the quaternion baseline.
for meas, best in (("z_L", "LRKF"), ("z_R", "RRKF")):
    for case in ("I", "II", "III"):
        a, q = by_label[f"{best}|{meas}|{case}"], by_label[f"QEKF|{meas}|{case}"]
        d = q.total_errors - a.total_errors
        print(f"{meas} case {case}: QEKF - {best} = {d.mean():.3f} +- {d.std(ddof=1) / math.sqrt(len(d)):.3f}")

# %%
# Bar-chart ready data, one row per bar.
print(sim.plot_data_csv(summaries))
