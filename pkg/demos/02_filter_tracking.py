"""Ensemble filter tracking: does the analysis follow the truth?

Runs the assimilation cycle without any control: every 0.05 time units
the 20 even-numbered grids are observed with unit error variance and a
stochastic ensemble update pulls 40 members toward them.  Shows the
analysis error settling well below the observation error, and what
localization buys when the ensemble is small.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from enkc import parse_config, run_cse

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

SHORT = [
    "run.spin_up_steps=400",
    "run.eval_steps=2000",
    "run.nature_discard_steps=2000",
    "control.trigger_threshold=inf",  # filter only, no interventions
]

# --- 1. the reference filter: N=40, localization scale 2 ----------------
cfg = parse_config("", SHORT)
res = run_cse(cfg)
rmse = res.log.analysis_rmse
print(f"1. N=40: analysis RMSE settles at "
      f"{rmse[cfg.run.spin_up_steps:].mean():.3f} "
      f"(observation error sd is 1.0)")

# --- 2. small ensembles with and without localization -------------------
runs = {"N=40, localized": rmse}
for n, loc in ((10, True), (10, False)):
    label = f"N={n}, {'localized' if loc else 'no localization'}"
    cfg_i = parse_config("", SHORT + [
        f"ensemble.N={n}",
        f"localization.enabled={'true' if loc else 'false'}",
    ])
    try:
        res_i = run_cse(cfg_i)
        runs[label] = res_i.log.analysis_rmse
        tail = res_i.log.analysis_rmse[cfg.run.spin_up_steps:].mean()
        print(f"2. {label}: evaluation RMSE {tail:.3f}")
    except Exception as exc:
        print(f"2. {label}: diverged ({type(exc).__name__})")

fig, ax = plt.subplots(figsize=(8, 4))
for label, series in runs.items():
    ax.plot(np.arange(series.size) * 0.05, series, lw=0.8, label=label)
ax.axhline(1.0, color="gray", ls=":", lw=1, label="obs error sd")
ax.set_yscale("log")
ax.set_xlabel("model time")
ax.set_ylabel("analysis RMSE")
ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "02_rmse.png"), dpi=120)
plt.close(fig)

# --- 3. the analysis mean against the truth at one grid -----------------
# rerun the reference with per-cycle logging of the applied field off but
# values on; the controlled/uncontrolled arrays coincide here (no control)
vals = res.controlled_values
assert np.array_equal(vals, res.uncontrolled_values)
print("3. with an infinite trigger threshold the 'controlled' record is "
      "bit-identical to the free nature run")
print(f"figures written to {out_dir}")
