# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
# ---

# %% [markdown]
# # Hysteresis in the elliptic FET burster
#
# Between the subcritical Hopf point and the fold of limit cycles, the fast
# subsystem of the circuit has a stable focus surrounded by an unstable cycle,
# itself inside a stable spiking cycle. Which attractor an orbit reaches
# depends on which side of the unstable cycle it starts.

# %%
import numpy as np

from bursters.bifurcation import build_diagram, classify_burster
from bursters.phase import basin_probe, default_window, find_cycles, find_equilibria
from bursters.systems import get_system

spec = get_system("circuit-b")
d = build_diagram(spec.fast, spec.sweep_range, parameter="VGS2")
for pt in d.points:
    print(f"{pt.kind} at VGS2 = {pt.param_value:.4f} V")
print("class:", classify_burster(d).label)

# %% [markdown]
# ## Probing both basins in the middle of the bistable window

# %%
(lo, hi), = d.bistable_intervals
value = 0.5 * (lo + hi)
fs = spec.fast(value)
w = default_window(fs)
eqs = find_equilibria(fs, w)
cycles = find_cycles(fs, eqs, w)
unstable = next(c for c in cycles if c.stability == "unstable")
focus = eqs[0].location
edge = unstable.samples[np.argmax(unstable.samples[:, 0])]
for scale in (0.5, 0.9, 1.1, 2.0):
    tag = basin_probe(fs, focus + scale * (edge - focus), eqs, cycles, w)
    print(f"start at {scale:.1f} x unstable-cycle radius -> {tag}")
