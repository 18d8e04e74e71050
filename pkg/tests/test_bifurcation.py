import math
from dataclasses import replace

import numpy as np
import pytest

from bursters.bifurcation import (FOLD_CYCLE, HOMOCLINIC, HOPF, SADDLE_NODE, SNIC_OFF, BifurcationError,
                                  DiagramConfig, build_diagram, classify_burster, locate_fold, locate_fold_cycle,
                                  locate_homoclinic, locate_hopf, sweep_cycle_branches,
                                  sweep_equilibrium_branches, write_diagram_csv)
from bursters.dynsys import DynamicalSystem
from bursters.phase import SADDLE, Window2D, find_equilibria

from conftest import ALL_SYSTEMS, diagram, spec

W = Window2D((-5.0, 5.0), (-5.0, 5.0), (50, 50))


def constant_family(mu):
    return DynamicalSystem(("x", "y"), lambda t, x: np.array([-(x[0] - 1.0) + 2 * x[1], -2 * (x[0] - 1.0) - x[1]]))


def node_family(mu):
    return DynamicalSystem(("x", "y"), lambda t, x: np.array([-x[0] + mu, -2.0 * x[1]]))


def step_of(name, steps=300):
    lo, hi = spec(name).sweep_range
    return (hi - lo) / (steps - 1)


class TestTrivialFamilies:
    def test_constant_family_single_branch(self):
        br = sweep_equilibrium_branches(constant_family, (0.0, 1.0), 20, W, seed_grid=(50, 50))
        assert len(br) == 1 and br[0].start == 0.0 and br[0].end == 1.0

    def test_constant_family_no_cycles(self):
        assert sweep_cycle_branches(constant_family, (0.0, 1.0), 20, W) == []

    def test_constant_family_no_points(self):
        d = build_diagram(constant_family, (0.0, 1.0), window=W, config=DiagramConfig(steps=20, seed_grid=(50, 50)))
        assert d.points == [] and d.bistable_intervals == []
        assert not classify_burster(d).classified

    def test_fold_without_fold_is_error(self):
        with pytest.raises(BifurcationError):
            locate_fold(constant_family, (0.0, 1.0), [np.array([1.0, 0.0])], W)

    def test_hopf_on_node_branch_is_error(self):
        with pytest.raises(BifurcationError):
            locate_hopf(node_family, (0.0, 1.0), np.array([0.5, 0.0]), W)


class TestDetectorPreconditions:
    def test_homoclinic_needs_a_saddle(self):
        name = "circuit-b"
        d = diagram(name)
        stable = [c for c in d.cycle_branches if c.stability == "stable"][0]
        mu0 = stable.end
        focus = d.equilibrium_branches[0]
        with pytest.raises(BifurcationError):
            locate_homoclinic(spec(name).fast, (mu0, mu0 + step_of(name)), stable, focus)

    def test_fold_cycle_rejects_saddle_bracket(self):
        name = "model-a"
        d = diagram(name)
        stable = [c for c in d.cycle_branches if c.stability == "stable"][0]
        mu0 = stable.end
        with pytest.raises(BifurcationError):
            locate_fold_cycle(spec(name).fast, (mu0, mu0 + step_of(name)), stable, None,
                              equilibrium_branches=d.equilibrium_branches)


@pytest.mark.parametrize("name, kinds", [
    ("model-a", [SADDLE_NODE, HOMOCLINIC]), ("circuit-a", [SADDLE_NODE, HOMOCLINIC]),
    ("model-b", [HOPF, FOLD_CYCLE]), ("circuit-b", [HOPF, FOLD_CYCLE]),
])
def test_diagram_kinds_in_order(name, kinds):
    assert diagram(name).kinds == kinds


@pytest.mark.parametrize("name, expected", [
    # frozen from independent runs of the sweep at 300 steps
    ("model-a", (0.003377, 0.065349)), ("model-b", (0.060018, 0.14203)),
    ("circuit-a", (1.14066, 1.22769)), ("circuit-b", (0.61492, 0.65834)),
])
def test_point_locations(name, expected):
    d = diagram(name)
    width = np.diff(spec(name).sweep_range)[0]
    for pt, v in zip(d.points, expected):
        assert abs(pt.param_value - v) < max(d.tolerance, 1e-5 * width) + 5e-6


@pytest.mark.parametrize("name", ALL_SYSTEMS)
def test_bisection_budget(name):
    d = diagram(name)
    width = np.diff(spec(name).sweep_range)[0]
    for pt in d.points:
        lo, hi = pt.bracket
        assert hi - lo <= d.tolerance * (1 + 1e-9)
        assert lo <= pt.param_value <= hi
        start = step_of(name)
        assert pt.evidence["iterations"] <= math.ceil(math.log2(start / d.tolerance)) + 2
    assert d.tolerance == pytest.approx(1e-4 * width)


@pytest.mark.parametrize("name", ALL_SYSTEMS)
def test_terminations_explained(name):
    d = diagram(name)
    lo, hi = spec(name).sweep_range
    step = step_of(name)
    ends = []
    for b in d.equilibrium_branches:
        ends += [b.start, b.end]
        # stability changes only at a reported point
        stab = [e.is_stable for _, e in b.points]
        for k in np.nonzero(np.diff(stab))[0]:
            p0, p1 = b.points[k][0], b.points[k + 1][0]
            assert sum(p0 - d.tolerance <= pt.param_value <= p1 + d.tolerance for pt in d.points) == 1
    for c in d.cycle_branches:
        ends += [c.start, c.end]
    for mu in ends:
        if lo + 0.5 * step < mu < hi - 0.5 * step:
            near = [pt for pt in d.points if abs(pt.param_value - mu) <= 1.5 * step + d.tolerance]
            assert len(near) == 1, (mu, near)


@pytest.mark.parametrize("name", ["model-a", "circuit-a"])
def test_homoclinic_period_growth(name):
    d = diagram(name)
    stable = [c for c in d.cycle_branches if c.stability == "stable"][0]
    sho = d.points_of(HOMOCLINIC)[0]
    assert abs(stable.end - sho.param_value) < 1.5 * step_of(name)
    assert np.all(np.diff(stable.periods[-5:]) > 0)
    assert sho.evidence["period_ratio"] > 3.0


@pytest.mark.parametrize("name", ["model-b", "circuit-b"])
def test_hopf_is_subcritical(name):
    hopf = diagram(name).points_of(HOPF)[0]
    assert hopf.evidence.get("probe") is not None


@pytest.mark.parametrize("name", ["model-b", "circuit-b"])
def test_fold_cycle_amplitude_gap_closes(name):
    flc = diagram(name).points_of(FOLD_CYCLE)[0]
    gaps = [g for _, g in flc.evidence["amplitude_gap"]]
    assert gaps[-1] < gaps[0]


def test_model_a_node_saddle_end_together_near_fold():
    d = diagram("model-a")
    sn = d.points_of(SADDLE_NODE)[0].param_value
    starts = [b for b in d.equilibrium_branches if abs(b.start - sn) < 1.5 * step_of("model-a")]
    assert sorted(any(e.klass == SADDLE for _, e in b.points) for b in starts) == [False, True]


def test_circuit_a_bistable_interval():
    (a, b), = diagram("circuit-a").bistable_intervals
    assert abs(a - 1.14) < 0.02 and abs(b - 1.228) < 0.02


class TestClassify:
    @pytest.mark.parametrize("name", ["model-a", "circuit-a"])
    def test_a_type(self, name):
        c = classify_burster(diagram(name))
        assert (c.onset, c.offset) == (SNIC_OFF, HOMOCLINIC)
        assert (c.onset_oscillations, c.offset_oscillations) == (False, False)

    @pytest.mark.parametrize("name", ["model-b", "circuit-b"])
    def test_b_type(self, name):
        c = classify_burster(diagram(name))
        assert (c.onset, c.offset) == (HOPF, FOLD_CYCLE)
        assert (c.onset_oscillations, c.offset_oscillations) == (True, True)

    def test_fold_only_is_unclassified(self):
        d = diagram("model-a")
        trimmed = replace(d, points=d.points_of(SADDLE_NODE),
                          cycle_branches=[c for c in d.cycle_branches if c.stability != "stable"])
        c = classify_burster(trimmed)
        assert not c.classified and c.label == "unclassified"


def test_refinement_moves_points_less_than_tolerance():
    fam = spec("circuit-b").fast
    prange = (0.60, 0.67)
    coarse = build_diagram(fam, prange, config=DiagramConfig(steps=36))
    fine = build_diagram(fam, prange, config=DiagramConfig(steps=71))
    assert coarse.kinds == fine.kinds == [HOPF, FOLD_CYCLE]
    for a, b in zip(coarse.points, fine.points):
        assert abs(a.param_value - b.param_value) <= coarse.tolerance


def test_diagram_csv(tmp_path):
    files = write_diagram_csv(diagram("circuit-b"), tmp_path, "cb")
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "cb_points.csv" in names
    assert (tmp_path / "cb_points.csv").read_text().splitlines()[0] == "kind,param,evidence_lo,evidence_hi"
    eq = (tmp_path / "cb_eq0.csv").read_text().splitlines()[0]
    cyc = (tmp_path / "cb_cycle0.csv").read_text().splitlines()[0]
    assert eq == "param,V,class" and cyc == "param,vmin,vmax,period,stability"
    assert files is None or len(files) == len(names)


def test_equilibria_match_phase_at_panels():
    name = "circuit-a"
    d = diagram(name)
    for v in spec(name).panels:
        direct = find_equilibria(spec(name).fast(v))
        assert sum(b.covers(v, v) for b in d.equilibrium_branches) == len(direct)
