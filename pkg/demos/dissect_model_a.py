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
# # Fast/slow dissection of the square-wave burster
#
# The three-variable conductance model (persistent sodium, delayed-rectifier
# potassium and a slow M-type potassium gate `nM`) rests at `I = 4` and
# bursts at `I = 5`. Freezing `nM` leaves a planar fast subsystem whose
# bifurcations in `nM` explain where each burst starts and stops.

# %%
from pathlib import Path

from bursters.bifurcation import build_diagram, classify_burster
from bursters.dynsys import IntegratorConfig, integrate
from bursters.metrics import analyse
from bursters.phase import default_window, find_cycles, find_equilibria
from bursters.svg import Marker, Plot, Series, write_svg
from bursters.systems import get_system

out = Path("demo_output")
out.mkdir(exist_ok=True)
spec = get_system("model-a")

# %% [markdown]
# ## Rest and bursting

# %%
for current in (spec.rest_current, spec.burst_current):
    s = spec.with_current(current)
    traj = integrate(s.system(), s.initial_state(), IntegratorConfig(t_end=400.0, rel_tol=1e-8, abs_tol=1e-10))
    train, seg, stats = analyse(traj.after(s.transient), "V", config=s.metrics_config())
    print(f"I = {current:g}: {len(train)} spikes in {len(seg)} bursts, per burst {stats.spikes_per_burst}")
    write_svg(Plot(title=f"I = {current:g}", xlabel="t (ms)", ylabel="V (mV)",
                   series=[Series(traj.times, traj.component("V"))]), out / f"model_a_I{current:g}.svg")

# %% [markdown]
# ## Phase portraits at frozen `nM`

# %%
for value in spec.panels:
    fs = spec.fast(value)
    w = default_window(fs)
    eqs = find_equilibria(fs, w)
    cycles = find_cycles(fs, eqs, w)
    print(f"nM = {value:g}: {[e.klass for e in eqs]}, cycles {[c.stability for c in cycles]}")
    plot = Plot(title=f"nM = {value:g}", xlabel="V (mV)", ylabel="n",
                series=[Series(c.samples[:, 0], c.samples[:, 1], c.stability, dashed=c.stability != "stable")
                        for c in cycles],
                markers=[Marker(*e.location, e.klass, filled=e.is_stable) for e in eqs])
    write_svg(plot, out / f"model_a_phase_{value:g}.svg")

# %% [markdown]
# ## Bifurcation diagram and classification

# %%
d = build_diagram(spec.fast, spec.sweep_range, parameter="nM")
for pt in d.points:
    print(f"{pt.kind} at nM = {pt.param_value:.5f}")
print("bistable:", d.bistable_intervals)
print("class:", classify_burster(d).label)
