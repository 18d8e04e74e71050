"""One-parameter bifurcation analysis of a family of planar fast subsystems.

Equilibrium branches are followed by warm-started Newton with periodic fresh
seeding, cycle branches by warm-started Poincaré searches (unstable cycles on
the time-reversed field). Branch ends are handed to bisection detectors for
folds, Hopf points, saddle homoclinic orbits and folds of limit cycles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dynsys import write_atomic
from .phase import (SADDLE, CycleSearchConfig, Equilibrium, Window2D,
                    _equilibrium_at, compute_nullclines, cycle_summary, default_window, find_equilibria,
                    find_limit_cycle, newton_equilibrium)

__all__ = [
    "SADDLE_NODE",
    "HOPF",
    "HOPF_UNDETERMINED",
    "HOMOCLINIC",
    "FOLD_CYCLE",
    "BifurcationError",
    "EquilibriumBranch",
    "CyclePoint",
    "CycleBranch",
    "BifurcationPoint",
    "BifurcationDiagram",
    "BursterClass",
    "DiagramConfig",
    "sweep_equilibrium_branches",
    "sweep_cycle_branches",
    "locate_fold",
    "locate_hopf",
    "locate_homoclinic",
    "locate_fold_cycle",
    "build_diagram",
    "classify_burster",
    "write_diagram_csv",
]

SADDLE_NODE = "saddle-node"
HOPF = "subcritical Andronov-Hopf"
HOPF_UNDETERMINED = "Andronov-Hopf (criticality undetermined)"
HOMOCLINIC = "saddle homoclinic orbit"
FOLD_CYCLE = "fold limit cycle"
SNIC_OFF = "saddle-node off invariant circle"
SNIC_ON = "saddle-node on invariant circle"

Family = Callable[[float], object]


class BifurcationError(ValueError):
    """A detector precondition does not hold (invalid bracket, wrong detector)."""


@dataclass(frozen=True)
class DiagramConfig:
    steps: int = 300
    cycle_steps: int | None = None
    reseed_every: int = 10
    seed_grid: tuple[int, int] = (200, 200)
    tol_fraction: float = 1e-4
    gate: float = 0.05
    period_growth: float = 3.0
    lookback: float = 0.5
    hopf_probe: float = 0.02
    cycle_cfg: CycleSearchConfig = field(default_factory=lambda: CycleSearchConfig(transient_periods=2))


@dataclass
class EquilibriumBranch:
    points: list[tuple[float, Equilibrium]] = field(default_factory=list)

    @property
    def params(self) -> np.ndarray:
        return np.array([p for p, _ in self.points])

    @property
    def locations(self) -> np.ndarray:
        return np.array([e.location for _, e in self.points]).reshape(-1, 2)

    @property
    def classes(self) -> list[str]:
        return [e.klass for _, e in self.points]

    @property
    def start(self) -> float:
        return self.points[0][0]

    @property
    def end(self) -> float:
        return self.points[-1][0]

    def at(self, param: float) -> Equilibrium | None:
        for p, e in self.points:
            if p == param:
                return e
        return None

    def covers(self, lo: float, hi: float) -> bool:
        return self.start <= lo and self.end >= hi


@dataclass(frozen=True)
class CyclePoint:
    param: float
    v_min: float
    v_max: float
    period: float
    stability: str
    section_point: np.ndarray
    anchor: float

    @property
    def amplitude(self) -> float:
        return self.v_max - self.v_min


@dataclass
class CycleBranch:
    stability: str
    points: list[CyclePoint] = field(default_factory=list)
    end_reason: str = ""

    @property
    def params(self) -> np.ndarray:
        return np.array([c.param for c in self.points])

    @property
    def periods(self) -> np.ndarray:
        return np.array([c.period for c in self.points])

    @property
    def start(self) -> float:
        return self.points[0].param

    @property
    def end(self) -> float:
        return self.points[-1].param


@dataclass
class BifurcationPoint:
    kind: str
    param_value: float
    bracket: tuple[float, float]
    evidence: dict = field(default_factory=dict)

    @property
    def evidence_lo(self) -> float:
        return self.bracket[0]

    @property
    def evidence_hi(self) -> float:
        return self.bracket[1]


@dataclass
class BifurcationDiagram:
    parameter: str
    param_range: tuple[float, float]
    equilibrium_branches: list[EquilibriumBranch]
    cycle_branches: list[CycleBranch]
    points: list[BifurcationPoint]
    bistable_intervals: list[tuple[float, float]]
    tolerance: float
    diagnostics: dict = field(default_factory=dict)

    def points_of(self, kind: str) -> list[BifurcationPoint]:
        return [p for p in self.points if p.kind == kind]

    @property
    def kinds(self) -> list[str]:
        return [p.kind for p in self.points]


# --------------------------------------------------------------------------
# equilibrium branches

def _window(family: Family, prange, window: Window2D | None) -> Window2D:
    return window if window is not None else default_window(family(prange[0]))


def _newton_all(fs, seeds, w: Window2D, scale) -> list[np.ndarray]:
    found = []
    for s in seeds:
        x, _ = newton_equilibrium(fs, s, w.span, scale)
        if x is None or not w.contains(x, 1e-9):
            continue
        if any(np.all(np.abs(x - y) < 1e-6 * w.span) for y in found):
            continue
        found.append(x)
    return found


def sweep_equilibrium_branches(family: Family, prange: tuple[float, float], steps: int = 300,
                               window: Window2D | None = None, reseed_every: int = 10,
                               seed_grid: tuple[int, int] = (200, 200), gate: float = 0.05
                               ) -> list[EquilibriumBranch]:
    """Follow every equilibrium across ``steps`` evenly spaced parameter values.

    Branches are matched step to step by minimum normalised distance with
    gating at ``gate`` of the window span; newly found equilibria start a
    branch that is then continued backwards to its true birth point.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    lo, hi = prange
    params = np.linspace(lo, hi, steps)
    w = _window(family, prange, window)
    seed_w = w.with_grid(*seed_grid)
    scale = None
    branches: list[EquilibriumBranch] = []
    active: list[int] = []
    for i, mu in enumerate(params):
        fs = family(mu)
        seeds = [branches[b].points[-1][1].location for b in active]
        if i % reseed_every == 0 or i == steps - 1 or scale is None:
            nc = compute_nullclines(fs, seed_w)
            if scale is None:
                scale = nc.scale
            fresh = find_equilibria(fs, seed_w, nullclines=nc)
            seeds += [e.location for e in fresh]
        locs = _newton_all(fs, seeds, w, scale)
        matched = _match(branches, active, locs, w, gate)
        new_active = []
        for b, j in matched:
            branches[b].points.append((mu, _equilibrium_at(fs, locs[j], w.span)))
            new_active.append(b)
        taken = {j for _, j in matched}
        for j, x in enumerate(locs):
            if j in taken:
                continue
            br = EquilibriumBranch([(mu, _equilibrium_at(fs, x, w.span))])
            if i > 0:
                _backfill(family, br, params[:i][::-1], w, scale, gate)
            branches.append(br)
            new_active.append(len(branches) - 1)
        active = new_active
    return branches


def _match(branches, active, locs, w, gate):
    if not active or not locs:
        return []
    last = np.array([branches[b].points[-1][1].location for b in active])
    X = np.array(locs)
    D = np.max(np.abs(last[:, None, :] - X[None, :, :]) / w.span, axis=2)
    rows, cols = linear_sum_assignment(D)
    return [(active[r], c) for r, c in zip(rows, cols) if D[r, c] < gate]


def _backfill(family, br: EquilibriumBranch, earlier, w, scale, gate):
    for mu in earlier:
        fs = family(mu)
        x, _ = newton_equilibrium(fs, br.points[0][1].location, w.span, scale)
        if x is None or np.max(np.abs(x - br.points[0][1].location) / w.span) >= gate:
            return
        br.points.insert(0, (mu, _equilibrium_at(fs, x, w.span)))


# --------------------------------------------------------------------------
# cycle branches

def _cycle_at(family, mu, seed, stability, w, cfg) -> CyclePoint | None:
    c = cycle_summary(family(mu), seed, stability, w, cfg)
    if c is None:
        return None
    x0, period, v_min, v_max, anchor = c
    return CyclePoint(float(mu), v_min, v_max, period, stability, x0, anchor)


def _cycle_seeds(eqs: Sequence[Equilibrium], stability: str, w: Window2D) -> list[np.ndarray]:
    """Starting points that spiral onto a cycle around a focus or node.

    Stable searches also get a far corner of the window, for cycles that
    surround only attracting equilibria.
    """
    want = ("unstable focus", "unstable node") if stability == "stable" else ("stable focus",)
    off = 1e-3 * w.span if stability == "stable" else 1e-4 * w.span
    seeds = [e.location + off for e in eqs if e.klass in want]
    if stability == "stable":
        seeds.append(w.lower + 0.9 * w.span)
    return seeds


def sweep_cycle_branches(family: Family, prange: tuple[float, float], steps: int = 300,
                         window: Window2D | None = None,
                         equilibrium_branches: Sequence[EquilibriumBranch] | None = None,
                         cfg: CycleSearchConfig | None = None, reseed_every: int = 10
                         ) -> list[CycleBranch]:
    """Stable and unstable limit-cycle branches over the parameter range.

    Each step warm-starts from the previous cycle's section point; fresh
    searches start next to foci (unstable foci for stable cycles, stable foci
    for unstable ones) every ``reseed_every`` steps while no cycle is
    tracked. Branches born mid-range are continued backwards.
    """
    cfg = cfg or CycleSearchConfig(transient_periods=2)
    w = _window(family, prange, window)
    params = np.linspace(prange[0], prange[1], steps)
    out = []
    for stability in ("stable", "unstable"):
        current: CycleBranch | None = None
        for i, mu in enumerate(params):
            pt = None
            if current is not None:
                last = current.points[-1]
                pt = _cycle_at(family, mu, last.section_point, stability, w, cfg)
                if pt is None:
                    current.end_reason = "lost"
                    out.append(current)
                    current = None
                    continue
            elif i % reseed_every == 0 or i == steps - 1:
                eqs = _equilibria_at(family, mu, equilibrium_branches, w)
                for seed in _cycle_seeds(eqs, stability, w):
                    pt = _cycle_at(family, mu, seed, stability, w, cfg)
                    if pt is not None:
                        break
                if pt is not None:
                    current = CycleBranch(stability)
                    back = params[:i][::-1]
                    prev = pt
                    for mb in back:
                        q = _cycle_at(family, mb, prev.section_point, stability, w, cfg)
                        if q is None:
                            break
                        current.points.insert(0, q)
                        prev = q
            if pt is not None and current is not None:
                current.points.append(pt)
        if current is not None:
            current.end_reason = "range end"
            out.append(current)
    return out


def _equilibria_at(family, mu, branches, w) -> list[Equilibrium]:
    if branches is not None:
        eqs = []
        for b in branches:
            for p, e in b.points:
                if np.isclose(p, mu, rtol=0, atol=1e-12 * max(1.0, abs(mu))):
                    eqs.append(e)
        return eqs
    return list(find_equilibria(family(mu), w.with_grid(200, 200)))


# --------------------------------------------------------------------------
# detectors

def _bisect(lo: float, hi: float, tol: float, exists: Callable[[float], bool]):
    """Bisect between an existing side ``lo`` and a non-existing side ``hi``.

    ``lo`` may be larger than ``hi``. Returns the final pair and the
    iteration count.
    """
    n = 0
    limit = math.ceil(math.log2(max(abs(hi - lo) / tol, 1.0))) + 2
    while abs(hi - lo) > tol and n < limit:
        mid = 0.5 * (lo + hi)
        if exists(mid):
            lo = mid
        else:
            hi = mid
        n += 1
    return lo, hi, n


def _pair_near(family, mu, seeds, w, scale, gate):
    fs = family(mu)
    locs = _newton_all(fs, seeds, w, scale)
    eqs = [_equilibrium_at(fs, x, w.span) for x in locs]
    sad = [e for e in eqs if e.det < 0]
    oth = [e for e in eqs if e.det > 0]
    for s in sad:
        for o in oth:
            if np.max(np.abs(s.location - o.location) / w.span) < gate:
                return s, o
    return None


def locate_fold(family: Family, bracket: tuple[float, float], seeds: Sequence, window: Window2D | None = None,
                tol: float | None = None, gate: float = 0.25) -> BifurcationPoint:
    """Fold of equilibria: bisection on the existence of a saddle/node pair.

    ``seeds`` are locations of the pair on the side of the bracket where it
    exists (or anywhere near the fold). Raises :class:`BifurcationError` if
    the pair exists at both ends or at neither.
    """
    a, b = bracket
    w = _window(family, (a, b), window)
    tol = tol if tol is not None else 1e-4 * abs(b - a)
    scale = compute_nullclines(family(a), w.with_grid(100, 100)).scale
    seeds = [np.asarray(s, float) for s in seeds]
    pa = _pair_near(family, a, seeds, w, scale, gate)
    pb = _pair_near(family, b, seeds, w, scale, gate)
    if (pa is None) == (pb is None):
        raise BifurcationError(f"invalid fold bracket [{a}, {b}]: pair exists at {'both ends' if pa else 'neither end'}")
    lo, hi = (a, b) if pa is not None else (b, a)
    state = {"pair": pa or pb}
    trend = []

    def exists(mu):
        seeds_now = [e.location for e in state["pair"]] + seeds
        pr = _pair_near(family, mu, seeds_now, w, scale, gate)
        if pr is not None:
            state["pair"] = pr
            trend.append((float(mu), pr[0].det, pr[1].det))
        return pr is not None

    lo, hi, n = _bisect(lo, hi, tol, exists)
    s, o = state["pair"]
    ev = {"iterations": n, "det_trend": trend, "saddle": s.location.tolist(), "node": o.location.tolist(),
          "node_class": o.klass, "existing_side": float(lo)}
    return BifurcationPoint(SADDLE_NODE, 0.5 * (lo + hi), (min(lo, hi), max(lo, hi)), ev)


def _focus_near(family, mu, seed, w, scale):
    fs = family(mu)
    x, _ = newton_equilibrium(fs, seed, w.span, scale)
    if x is None:
        return None
    return _equilibrium_at(fs, x, w.span)


def locate_hopf(family: Family, bracket: tuple[float, float], seed, window: Window2D | None = None,
                tol: float | None = None, probe: float = 0.02, cfg: CycleSearchConfig | None = None
                ) -> BifurcationPoint:
    """Hopf point: bisection on the sign of the focus eigenvalues' real part.

    Subcriticality is established by finding an unstable cycle, on the
    time-reversed field, at ``probe`` of the bracket-independent range on the
    stable side. Without one the kind is reported as criticality
    undetermined.
    """
    a, b = bracket
    w = _window(family, (a, b), window)
    tol = tol if tol is not None else 1e-4 * abs(b - a)
    scale = compute_nullclines(family(a), w.with_grid(100, 100)).scale
    ea = _focus_near(family, a, seed, w, scale)
    eb = _focus_near(family, b, seed if ea is None else ea.location, w, scale)
    for e, mu in ((ea, a), (eb, b)):
        if e is None or np.all(e.eigenvalues.imag == 0):
            raise BifurcationError(f"no focus at parameter {mu}")
    if np.sign(ea.max_real) == np.sign(eb.max_real):
        raise BifurcationError("focus eigenvalue real parts do not change sign across the bracket")
    state = {"eq": ea}
    trend = []

    def unstable(mu):
        e = _focus_near(family, mu, state["eq"].location, w, scale)
        if e is None:
            return False
        state["eq"] = e
        trend.append((float(mu), float(e.max_real)))
        return e.max_real > 0

    # orient so that "exists" means unstable
    lo, hi = (a, b) if ea.max_real > 0 else (b, a)
    lo, hi, n = _bisect(lo, hi, tol, unstable)
    mu_h = 0.5 * (lo + hi)
    stable_dir = np.sign(hi - lo)
    width = probe * abs(b - a) if probe * abs(b - a) > 10 * tol else 10 * tol
    ev = {"iterations": n, "real_part_trend": trend, "stable_side": "above" if stable_dir > 0 else "below"}
    kind = HOPF_UNDETERMINED
    cfg = cfg or CycleSearchConfig()
    for frac in (1.0, 0.5, 2.0):
        mu_p = mu_h + stable_dir * width * frac
        e = _focus_near(family, mu_p, state["eq"].location, w, scale)
        if e is None or e.max_real >= 0:
            continue
        d: dict = {}
        c = find_limit_cycle(family(mu_p), e.location + 1e-4 * w.span, "unstable", w, cfg, d)
        if c is not None:
            kind = HOPF
            ev["probe"] = {"param": float(mu_p), "period": c.period, "v_min": c.v_min, "v_max": c.v_max}
            break
        ev["probe_failure"] = d.get("status")
    return BifurcationPoint(kind, mu_h, (min(lo, hi), max(lo, hi)), ev)


def _saddle_distance(cyc_samples, saddle, span) -> float:
    return float(np.min(np.max(np.abs(cyc_samples - saddle) / span, axis=1)))


def locate_homoclinic(family: Family, bracket: tuple[float, float], cycle_branch: CycleBranch,
                      saddle_branch: EquilibriumBranch, window: Window2D | None = None,
                      tol: float | None = None, growth: float = 3.0, lookback: float = 0.5,
                      prange: tuple[float, float] | None = None, cfg: CycleSearchConfig | None = None
                      ) -> BifurcationPoint:
    """Saddle homoclinic orbit: bisection on stable-cycle existence.

    Requires period growth (last period above ``growth`` times the period at
    the reference point ``lookback`` of the range before the bracket) and a
    shrinking cycle-to-saddle distance. Raises :class:`BifurcationError` if
    no saddle spans the bracket or the evidence is missing.
    """
    a, b = bracket
    w = _window(family, (a, b), window)
    prange = prange or (min(a, b), max(a, b))
    width = abs(prange[1] - prange[0])
    tol = tol if tol is not None else 1e-4 * width
    if saddle_branch is None or not saddle_branch.covers(min(a, b), max(a, b)):
        raise BifurcationError("no saddle spans the bracket")
    if any(e.klass != SADDLE for p, e in saddle_branch.points if min(a, b) <= p <= max(a, b)):
        raise BifurcationError("branch is not a saddle across the bracket")
    cfg = cfg or CycleSearchConfig(transient_periods=2)
    exist = [c for c in cycle_branch.points if c.param == a]
    if not exist:
        raise BifurcationError("cycle branch has no point at the existing bracket end")
    state = {"cycle": exist[0]}
    history = [exist[0]]

    def exists(mu):
        c = _cycle_at(family, mu, state["cycle"].section_point, "stable", w, cfg)
        if c is None:
            return False
        state["cycle"] = c
        history.append(c)
        return True

    lo, hi, n = _bisect(a, b, tol, exists)
    last = state["cycle"]
    # reference point on the same branch, lookback of the range before the bracket
    direction = np.sign(b - a)
    target = a - direction * lookback * width
    ref = min(cycle_branch.points, key=lambda c: abs(c.param - target))
    growth_ratio = last.period / ref.period
    # cycle-to-saddle distance along the approach
    trail = [c for c in cycle_branch.points if (c.param - a) * direction <= 0][-5:] + history[1:]
    trail = sorted(trail, key=lambda c: c.param * direction)[-6:]
    dists = []
    for c in trail:
        fs = family(c.param)
        sad = _nearest_saddle(fs, saddle_branch, c.param, w)
        full = find_limit_cycle(fs, c.section_point, "stable", w, CycleSearchConfig(transient_periods=0))
        if full is None or sad is None:
            continue
        dists.append((c.param, _saddle_distance(full.samples, sad, w.span)))
    ev = {"iterations": n, "period_last": last.period, "period_reference": ref.period,
          "reference_param": ref.param, "period_ratio": growth_ratio, "saddle_distance": dists,
          "last_existing": last.param}
    approach = len(dists) >= 2 and dists[-1][1] < dists[0][1]
    if growth_ratio <= growth or not approach:
        raise BifurcationError(f"cycle disappears without homoclinic evidence (period ratio "
                               f"{growth_ratio:.2f}, saddle approach {approach}); fold-cycle candidate")
    return BifurcationPoint(HOMOCLINIC, 0.5 * (lo + hi), (min(lo, hi), max(lo, hi)), ev)


def _nearest_saddle(fs, saddle_branch, mu, w):
    ref = min(saddle_branch.points, key=lambda pe: abs(pe[0] - mu))[1]
    scale = np.abs(fs.evaluate_many(np.array([w.lower, w.lower + w.span]))).max(axis=0) + 1e-300
    x, _ = newton_equilibrium(fs, ref.location, w.span, scale)
    return x


def locate_fold_cycle(family: Family, bracket: tuple[float, float], stable_branch: CycleBranch,
                      unstable_branch: CycleBranch | None, window: Window2D | None = None,
                      tol: float | None = None, equilibrium_branches: Sequence[EquilibriumBranch] = (),
                      cfg: CycleSearchConfig | None = None) -> BifurcationPoint:
    """Fold of limit cycles: bisection on stable-cycle existence.

    Preconditions: stable and unstable cycles at the existing end, no saddle
    and no change of equilibrium count or stability inside the bracket.
    """
    a, b = bracket
    w = _window(family, (a, b), window)
    tol = tol if tol is not None else 1e-4 * abs(b - a)
    lo_p, hi_p = min(a, b), max(a, b)
    for br in equilibrium_branches:
        inside = [(p, e) for p, e in br.points if lo_p <= p <= hi_p]
        if any(e.klass == SADDLE for _, e in inside):
            raise BifurcationError("saddle present in the bracket; not a fold of cycles")
        if inside and (len({e.is_stable for _, e in inside}) > 1 or not br.covers(lo_p, hi_p)):
            raise BifurcationError("equilibrium bifurcation inside the bracket")
    if unstable_branch is None:
        raise BifurcationError("no unstable cycle to collide with")
    s0 = [c for c in stable_branch.points if c.param == a]
    u0 = [c for c in unstable_branch.points if abs(c.param - a) <= abs(b - a) * 1.001]
    if not s0 or not u0:
        raise BifurcationError("stable and unstable cycles must both exist at the bracket start")
    cfg = cfg or CycleSearchConfig(transient_periods=2)
    state = {"s": s0[0], "u": min(u0, key=lambda c: abs(c.param - a))}
    gaps = [(a, state["s"].amplitude - state["u"].amplitude)]

    def exists(mu):
        c = _cycle_at(family, mu, state["s"].section_point, "stable", w, cfg)
        if c is None:
            return False
        state["s"] = c
        u = _cycle_at(family, mu, state["u"].section_point, "unstable", w, cfg)
        if u is not None:
            state["u"] = u
            gaps.append((float(mu), c.amplitude - u.amplitude))
        return True

    lo, hi, n = _bisect(a, b, tol, exists)
    ev = {"iterations": n, "amplitude_gap": gaps, "last_existing": state["s"].param}
    if len(gaps) >= 2 and not gaps[-1][1] < gaps[0][1]:
        ev["warning"] = "amplitude gap did not shrink"
    return BifurcationPoint(FOLD_CYCLE, 0.5 * (lo + hi), (min(lo, hi), max(lo, hi)), ev)


# --------------------------------------------------------------------------
# composition

def build_diagram(family: Family, prange: tuple[float, float], steps: int = 300,
                  window: Window2D | None = None, config: DiagramConfig | None = None,
                  parameter: str = "mu") -> BifurcationDiagram:
    """Sweep, detect and assemble the full one-parameter diagram."""
    cfg = config or DiagramConfig(steps=steps)
    steps = cfg.steps if config is not None else steps
    lo_r, hi_r = prange
    width = hi_r - lo_r
    tol = cfg.tol_fraction * width
    w = _window(family, prange, window)
    eq_br = sweep_equilibrium_branches(family, prange, steps, w, cfg.reseed_every, cfg.seed_grid, cfg.gate)
    params = np.linspace(lo_r, hi_r, steps)
    cyc_steps = cfg.cycle_steps or steps
    cyc_params = np.linspace(lo_r, hi_r, cyc_steps)
    eq_for_cycles = eq_br if cyc_steps == steps else None
    cyc_br = sweep_cycle_branches(family, prange, cyc_steps, w, eq_for_cycles, cfg.cycle_cfg, cfg.reseed_every)
    points: list[BifurcationPoint] = []
    diag: dict = {"failed_detectors": []}
    step = params[1] - params[0]

    # folds: a saddle and a non-saddle ending (or starting) in the same interval
    for end_attr, nxt in (("end", +1), ("start", -1)):
        ends = [b for b in eq_br if (getattr(b, end_attr) < hi_r - 0.5 * step if nxt > 0
                                     else getattr(b, end_attr) > lo_r + 0.5 * step)]
        used = set()
        for i, b1 in enumerate(ends):
            for j, b2 in enumerate(ends):
                if j <= i or i in used or j in used:
                    continue
                if abs(getattr(b1, end_attr) - getattr(b2, end_attr)) > 0.5 * step:
                    continue
                e1 = b1.points[-1 if nxt > 0 else 0][1]
                e2 = b2.points[-1 if nxt > 0 else 0][1]
                if (e1.klass == SADDLE) == (e2.klass == SADDLE):
                    continue
                mu0 = getattr(b1, end_attr)
                try:
                    pt = locate_fold(family, (mu0, mu0 + nxt * step), [e1.location, e2.location], w, tol)
                except BifurcationError as exc:
                    diag["failed_detectors"].append(("fold", mu0, str(exc)))
                    continue
                points.append(pt)
                used |= {i, j}

    # Hopf: change of focus stability along a branch
    for br in eq_br:
        for (p0, e0), (p1, e1) in zip(br.points, br.points[1:]):
            focus = all(np.any(e.eigenvalues.imag != 0) for e in (e0, e1))
            if focus and np.sign(e0.max_real) != np.sign(e1.max_real):
                try:
                    pt = locate_hopf(family, (p0, p1), e0.location, w, tol, cfg.hopf_probe)
                except BifurcationError as exc:
                    diag["failed_detectors"].append(("hopf", p0, str(exc)))
                    continue
                points.append(pt)

    # ends of stable cycle branches inside the range
    cstep = cyc_params[1] - cyc_params[0]
    unstable = [c for c in cyc_br if c.stability == "unstable"]
    for cb in (c for c in cyc_br if c.stability == "stable"):
        for at_end in (True, False):
            mu0 = cb.end if at_end else cb.start
            if (at_end and mu0 >= hi_r - 0.5 * cstep) or (not at_end and mu0 <= lo_r + 0.5 * cstep):
                continue
            mu1 = mu0 + (cstep if at_end else -cstep)
            saddle = next((b for b in eq_br if b.covers(min(mu0, mu1), max(mu0, mu1))
                           and all(e.klass == SADDLE for p, e in b.points
                                   if min(mu0, mu1) <= p <= max(mu0, mu1))), None)
            partner = next((u for u in unstable
                            if abs((u.end if at_end else u.start) - mu0) <= 1.5 * cstep), None)
            pt = None
            if saddle is not None:
                try:
                    pt = locate_homoclinic(family, (mu0, mu1), cb, saddle, w, tol, cfg.period_growth,
                                           cfg.lookback, prange, cfg.cycle_cfg)
                except BifurcationError as exc:
                    diag["failed_detectors"].append(("homoclinic", mu0, str(exc)))
            if pt is None and partner is not None:
                try:
                    pt = locate_fold_cycle(family, (mu0, mu1), cb, partner, w, tol, eq_br, cfg.cycle_cfg)
                except BifurcationError as exc:
                    diag["failed_detectors"].append(("fold cycle", mu0, str(exc)))
            if pt is not None:
                points.append(pt)
    points.sort(key=lambda p: p.param_value)
    bistable = _bistable_intervals(eq_br, cyc_br, points, step, cstep)
    return BifurcationDiagram(parameter, (lo_r, hi_r), eq_br, cyc_br, points, bistable, tol, diag)


def _bistable_intervals(eq_br, cyc_br, points, step, cstep):
    """Overlaps of stable-equilibrium and stable-cycle existence."""
    def runs(pairs):
        out, cur = [], None
        for p, ok in pairs:
            if ok and cur is None:
                cur = [p, p]
            elif ok:
                cur[1] = p
            elif cur is not None:
                out.append(tuple(cur))
                cur = None
        if cur is not None:
            out.append(tuple(cur))
        return out

    stable_eq = []
    for br in eq_br:
        stable_eq += runs([(p, e.is_stable) for p, e in br.points])
    stable_cy = [(c.start, c.end) for c in cyc_br if c.stability == "stable" and c.points]
    snap = max(step, cstep) * 1.5
    result = []
    for a0, a1 in stable_eq:
        for b0, b1 in stable_cy:
            lo, hi = max(a0, b0), min(a1, b1)
            if hi <= lo:
                continue
            for p in points:
                if abs(p.param_value - lo) <= snap:
                    lo = p.param_value
                if abs(p.param_value - hi) <= snap:
                    hi = p.param_value
            result.append((lo, hi))
    return sorted(result)


@dataclass(frozen=True)
class BursterClass:
    onset: str | None
    offset: str | None
    onset_oscillations: bool | None
    offset_oscillations: bool | None
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def label(self) -> str:
        if self.onset is None or self.offset is None:
            return "unclassified"
        return f"{self.onset} / {self.offset}"

    @property
    def classified(self) -> bool:
        return self.onset is not None and self.offset is not None


def classify_burster(diagram: BifurcationDiagram) -> BursterClass:
    """Onset and offset bifurcations of the burster described by ``diagram``.

    The slow variable is taken to decrease during quiescence and increase
    during spiking. The onset is the bifurcation that removes the stable
    rest state as the parameter decreases (a fold at the lower end of a
    stable equilibrium branch, or a Hopf point with the stable side above);
    the offset is the one that removes the stable cycle as the parameter
    increases.
    """
    onset_pts = []
    for p in diagram.points:
        if p.kind in (HOPF, HOPF_UNDETERMINED) and p.evidence.get("stable_side") == "above":
            onset_pts.append(p)
        elif p.kind == SADDLE_NODE and _stable_branch_starts_at(diagram, p):
            onset_pts.append(p)
    offset_pts = [p for p in diagram.points if p.kind in (HOMOCLINIC, FOLD_CYCLE)
                  and _stable_cycle_ends_at(diagram, p)]
    diag = {"onset_candidates": [(p.kind, p.param_value) for p in onset_pts],
            "offset_candidates": [(p.kind, p.param_value) for p in offset_pts]}
    if not onset_pts or not offset_pts:
        return BursterClass(None, None, None, None, diag)
    on, off = onset_pts[0], offset_pts[-1]
    if on.kind == SADDLE_NODE:
        coexist = any(c.stability == "stable" and c.start <= on.param_value <= c.end
                      for c in diagram.cycle_branches if c.points)
        onset = SNIC_OFF if coexist else SNIC_ON
    else:
        onset = on.kind
    return BursterClass(onset, off.kind, on.kind in (HOPF, HOPF_UNDETERMINED), off.kind == FOLD_CYCLE, diag)


def _stable_branch_starts_at(diagram, p) -> bool:
    tol = 2 * (diagram.param_range[1] - diagram.param_range[0]) / max(
        1, max((len(b.points) for b in diagram.equilibrium_branches), default=1))
    for br in diagram.equilibrium_branches:
        if br.points and br.points[0][1].is_stable and abs(br.start - p.param_value) <= tol + p.bracket[1] - p.bracket[0]:
            return True
    return False


def _stable_cycle_ends_at(diagram, p) -> bool:
    width = diagram.param_range[1] - diagram.param_range[0]
    for cb in diagram.cycle_branches:
        if cb.stability == "stable" and cb.points:
            n = max(len(cb.points), 2)
            if abs(cb.end - p.param_value) <= 2 * width / n:
                return True
    return False


def write_diagram_csv(diagram: BifurcationDiagram, out_dir, prefix: str = "diagram",
                      label: str = "V") -> list[str]:
    """Write one CSV per branch plus a points file; returns the paths."""
    from pathlib import Path

    out = Path(out_dir)
    paths = []
    for i, br in enumerate(diagram.equilibrium_branches):
        lines = [f"param,{label},class"]
        lines += [f"{p:.17g},{e.location[0]:.17g},{e.klass}" for p, e in br.points]
        path = out / f"{prefix}_eq{i}.csv"
        write_atomic(path, "\n".join(lines) + "\n")
        paths.append(str(path))
    for i, cb in enumerate(diagram.cycle_branches):
        lines = ["param,vmin,vmax,period,stability"]
        lines += [f"{c.param:.17g},{c.v_min:.17g},{c.v_max:.17g},{c.period:.17g},{c.stability}"
                  for c in cb.points]
        path = out / f"{prefix}_cycle{i}.csv"
        write_atomic(path, "\n".join(lines) + "\n")
        paths.append(str(path))
    lines = ["kind,param,evidence_lo,evidence_hi"]
    lines += [f"{p.kind},{p.param_value:.17g},{p.evidence_lo:.17g},{p.evidence_hi:.17g}" for p in diagram.points]
    path = out / f"{prefix}_points.csv"
    write_atomic(path, "\n".join(lines) + "\n")
    paths.append(str(path))
    return paths
