"""Calibration of the slow conductance g_M of the neuron model.

The fast subsystem depends on the slow variable only through the product
``G = g_M * nM``, so one reference diagram in ``G`` (computed with
``g_M = 1``) gives the bifurcation locations ``nM = G / g_M`` for every
candidate conductance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .bifurcation import (HOPF, HOPF_UNDETERMINED, BifurcationDiagram, DiagramConfig, build_diagram)
from .dynsys import IntegratorConfig, integrate
from .metrics import MetricsConfig, analyse
from .models import InapIkIkmParams, default_initial_state, fast_subsystem, model_system

__all__ = [
    "CalibrationFailed",
    "CalibrationTargets",
    "CalibrationReport",
    "calibrate_gM",
    "reference_diagram",
    "rest_or_burst",
]


class CalibrationFailed(RuntimeError):
    def __init__(self, message: str, report: "CalibrationReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class CalibrationTargets:
    """What the calibrated model must reproduce.

    ``bifurcations`` pairs a bifurcation kind with its target location in
    ``nM``. The full model must rest at ``rest_current`` and burst at
    ``burst_current`` (at least ``min_bursts`` bursts of at least two spikes
    within ``t_end`` after discarding ``transient``).
    """

    bifurcations: tuple[tuple[str, float], ...]
    rest_current: float
    burst_current: float
    t_end: float = 400.0
    transient: float = 100.0
    min_bursts: int = 3
    min_spike_range: float = 10.0

    def __post_init__(self):
        values = [v for _, v in self.bifurcations]
        if not values:
            raise ValueError("at least one bifurcation target is required")
        if len(set(values)) != len(values):
            raise CalibrationFailed("degenerate targets: two bifurcations requested at the same nM")


@dataclass
class CalibrationReport:
    g_M: float
    targets: CalibrationTargets
    achieved: dict[str, float]
    mismatch: float
    grid: list[tuple[float, bool, float]] = field(default_factory=list)
    reference_points: list[tuple[str, float]] = field(default_factory=list)
    refined: bool = False

    def lines(self) -> list[str]:
        """Human-readable summary, one item per line."""
        out = [f"g_M calibrated by grid search over [{self.grid[0][0]:.3g}, {self.grid[-1][0]:.3g}] "
               f"({len(self.grid)} log-spaced points) and golden-section refinement" if self.grid else
               "g_M calibrated"]
        out.append(f"rest at I = {self.targets.rest_current:g}, burst at I = {self.targets.burst_current:g}: "
                   f"{sum(f for _, f, _ in self.grid)} of {len(self.grid)} grid points satisfy both")
        for kind, target in self.targets.bifurcations:
            got = self.achieved.get(kind, float("nan"))
            out.append(f"{kind}: target nM = {target:g}, achieved nM = {got:.6g}")
        out.append(f"squared mismatch = {self.mismatch:.3e}")
        out.append(f"g_M = {self.g_M:.10g}")
        return out


def _matches(kind: str, target_kind: str) -> bool:
    if target_kind in (HOPF, HOPF_UNDETERMINED):
        return kind in (HOPF, HOPF_UNDETERMINED)
    return kind == target_kind


def reference_diagram(p: InapIkIkmParams, G_range=(-0.05, 1.0), steps: int = 300,
                      config: DiagramConfig | None = None) -> BifurcationDiagram:
    """Fast-subsystem diagram in the total slow conductance ``G``."""
    unit = p.with_(g_M=1.0)
    return build_diagram(lambda G: fast_subsystem(unit, G), G_range,
                         config=config or DiagramConfig(steps=steps), parameter="G")


def _locations(points, targets: CalibrationTargets, g: float) -> dict[str, float]:
    out = {}
    for kind, target in targets.bifurcations:
        cands = [pt.param_value / g for pt in points if _matches(pt.kind, kind)]
        if cands:
            out[kind] = min(cands, key=lambda v: abs(v - target))
    return out


def _mismatch(points, targets, g) -> float:
    loc = _locations(points, targets, g)
    return sum((loc[k] - v) ** 2 for k, v in targets.bifurcations)


def rest_or_burst(p: InapIkIkmParams, current: float, t_end: float, transient: float,
                  min_spike_range: float = 10.0) -> tuple[int, list[int]]:
    """Number of bursts and spikes per burst of the full model after ``transient``."""
    sys_ = model_system(p.with_(I=current))
    try:
        traj = integrate(sys_, np.array(default_initial_state(p)),
                         IntegratorConfig(t_end=t_end, rel_tol=1e-8, abs_tol=1e-10))
    except Exception:
        return 0, []
    _, seg, _ = analyse(traj.after(transient), "V", config=MetricsConfig(min_range=min_spike_range))
    return len(seg), seg.spikes_per_burst


def _target_a(p: InapIkIkmParams, targets: CalibrationTargets) -> bool:
    n_rest, _ = rest_or_burst(p, targets.rest_current, targets.t_end, targets.transient,
                              targets.min_spike_range)
    if n_rest:
        return False
    n, spb = rest_or_burst(p, targets.burst_current, targets.t_end, targets.transient, targets.min_spike_range)
    return n >= targets.min_bursts and sum(s >= 2 for s in spb) >= targets.min_bursts


def calibrate_gM(p: InapIkIkmParams, targets: CalibrationTargets, g_range=(0.1, 100.0), n_grid: int = 60,
                 G_range=(-0.05, 1.0), steps: int = 300, reference: BifurcationDiagram | None = None
                 ) -> CalibrationReport:
    """Choose ``g_M`` so the fast-subsystem bifurcations land on the targets.

    Grid points that fail the rest/burst requirement are excluded; the best
    remaining point is refined by golden-section search between its grid
    neighbours. Raises :class:`CalibrationFailed` if no grid point satisfies
    the rest/burst requirement or a target kind is never detected.
    """
    ref = reference if reference is not None else reference_diagram(p, G_range, steps)
    points = ref.points
    ref_pts = [(pt.kind, pt.param_value) for pt in points]
    missing = [k for k, _ in targets.bifurcations if not any(_matches(pt.kind, k) for pt in points)]
    if missing:
        raise CalibrationFailed(f"target kinds not detected in the reference diagram: {missing}")
    grid = np.geomspace(g_range[0], g_range[1], n_grid)
    table = []
    for g in grid:
        ok = _target_a(p.with_(g_M=float(g)), targets)
        table.append((float(g), ok, _mismatch(points, targets, g)))
    feasible = [i for i, (_, ok, _) in enumerate(table) if ok]
    if not feasible:
        report = CalibrationReport(float("nan"), targets, {}, float("inf"), table, ref_pts)
        raise CalibrationFailed("no g_M in range rests and bursts at the target currents", report)
    best = min(feasible, key=lambda i: table[i][2])
    g_best, refined = table[best][0], False
    lo = table[max(best - 1, 0)][0]
    hi = table[min(best + 1, n_grid - 1)][0]
    def f(lg):
        return _mismatch(points, targets, math.exp(lg))

    try:
        res = minimize_scalar(f, bracket=(math.log(lo), math.log(g_best), math.log(hi)), method="golden")
    except ValueError:
        # best point on the grid edge or tied with a neighbour: no valid bracket
        res = minimize_scalar(f, bounds=(math.log(lo), math.log(hi)), method="bounded")
    g_ref = float(math.exp(res.x))
    if lo <= g_ref <= hi and _mismatch(points, targets, g_ref) <= table[best][2] \
            and _target_a(p.with_(g_M=g_ref), targets):
        g_best, refined = g_ref, True
    return CalibrationReport(g_best, targets, _locations(points, targets, g_best),
                             _mismatch(points, targets, g_best), table, ref_pts, refined)
