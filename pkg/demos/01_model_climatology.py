"""Ring model basics: chaos, the attractor, and what counts as extreme.

Integrates the 40-variable ring model, shows sensitive dependence on the
initial state, and measures the climatological value distribution that
the control experiments try to reshape.  Figures land in demos/out/.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from enkc import ModelConfig, integrate, make_nature

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

model = ModelConfig()  # K=40, F=8, dt=0.05
print(f"model: K={model.K}, F={model.F}, dt={model.dt}")

# --- 1. two trajectories from nearly identical states -------------------
x0 = make_nature(model, seed=1)
x0_twin = x0.copy()
x0_twin[0] += 1e-8

n_steps = 400
traj = integrate(x0, n_steps, model)
twin = integrate(x0_twin, n_steps, model)
sep = np.sqrt(np.mean((traj - twin) ** 2, axis=1))
t = np.arange(n_steps + 1) * model.dt
# error doubling time, read off the early exponential stretch
grow = np.polyfit(t[40:200], np.log(sep[40:200]), 1)[0]
print(f"1. twin separation grows ~exp({grow:.2f} t): "
      f"doubling time {np.log(2) / grow:.2f} time units")

fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
axes[0].plot(t, traj[:, 0], lw=0.8, label="trajectory")
axes[0].plot(t, twin[:, 0], lw=0.8, label="twin, 1e-8 nudge")
axes[0].set_ylabel("X at grid 1")
axes[0].legend(loc="upper right", fontsize=8)
axes[1].semilogy(t, sep, lw=0.8)
axes[1].set_ylabel("RMS separation")
axes[1].set_xlabel("model time")
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "01_chaos.png"), dpi=120)
plt.close(fig)

# --- 2. a space-time view of the flow -----------------------------------
window = integrate(traj[-1], 800, model)
fig, ax = plt.subplots(figsize=(8, 4))
im = ax.imshow(window.T, aspect="auto", origin="lower", cmap="RdBu_r",
               extent=[0, 800 * model.dt, 1, model.K], vmin=-12, vmax=12)
ax.set_xlabel("model time")
ax.set_ylabel("grid")
fig.colorbar(im, ax=ax, label="X")
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "01_hovmoller.png"), dpi=120)
plt.close(fig)
print("2. westward-drifting waves; extremes show up as deep red patches")

# --- 3. climatology: how rare is X > 12? --------------------------------
long_run = integrate(x0, 40_000, model)
values = long_run.ravel()
frac = np.mean(values > 12.0)
p99999 = np.percentile(values, 99.999)
print(f"3. {values.size} samples: mean {values.mean():.2f}, "
      f"std {values.std():.2f}, max {values.max():.2f}")
print(f"   fraction above 12 = {100 * frac:.4f}%  (an extreme event)")
print(f"   99.999 percentile = {p99999:.2f}")

fig, ax = plt.subplots(figsize=(6, 4))
ax.hist(values, bins=120, density=True, log=True, color="steelblue")
ax.axvline(12.0, color="crimson", ls="--", label="threshold 12")
ax.set_xlabel("X")
ax.set_ylabel("density (log)")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(out_dir, "01_climatology.png"), dpi=120)
plt.close(fig)
print(f"figures written to {out_dir}")
