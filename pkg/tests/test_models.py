import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bursters.calibration import CalibrationFailed, CalibrationTargets
from bursters.bifurcation import SADDLE_NODE
from bursters.dynsys import IntegratorConfig, integrate
from bursters.models import (BoltzmannParams, MODEL_KEYS, ModelState, boltzmann, default_initial_state,
                             fast_subsystem, inverse_boltzmann, load_model_config, model_rhs, model_system,
                             save_model_config)
from bursters.phase import STABLE_CLASSES, default_window, find_cycles, find_equilibria

from conftest import spec


@pytest.fixture(scope="module")
def set_a():
    return spec("model-a").params


@pytest.fixture(scope="module")
def set_b():
    return spec("model-b").params


class TestBoltzmann:
    def test_midpoint(self):
        assert boltzmann(-25.0, BoltzmannParams(-25.0, 5.0)) == 0.5

    def test_saturation(self):
        p = BoltzmannParams(-25.0, 5.0)
        assert abs(boltzmann(p.v_half + 100 * p.k, p) - 1.0) < 1e-9

    def test_closed_form(self):
        assert boltzmann(-20.0, BoltzmannParams(-25.0, 5.0)) == pytest.approx(0.7310585786, abs=1e-10)

    def test_no_overflow(self):
        p = BoltzmannParams(0.0, 1e-3)
        with np.errstate(over="raise"):
            assert boltzmann(-1e6, p) < 1e-300 and boltzmann(1e6, p) == 1.0

    def test_zero_slope_rejected(self):
        with pytest.raises(ValueError):
            BoltzmannParams(0.0, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-60, 0), st.floats(0.5, 20), st.floats(-100, 40), st.floats(0.01, 5))
    def test_strictly_increasing(self, vh, k, v, dv):
        p = BoltzmannParams(vh, k)
        a, b = boltzmann(v, p), boltzmann(v + dv, p)
        assert b > a or (a == b and (a == 0.0 or a == 1.0 or abs(v - vh) > 30 * k))

    @pytest.mark.parametrize("k", [5.0, 7.0, 15.0])
    def test_slope_at_midpoint(self, k):
        p = BoltzmannParams(-20.0, k)
        h = 1e-4
        slope = (boltzmann(p.v_half + h, p) - boltzmann(p.v_half - h, p)) / (2 * h)
        assert abs(slope - 1 / (4 * k)) < 1e-9

    def test_inverse(self):
        p = BoltzmannParams(-20.0, 5.0)
        assert boltzmann(inverse_boltzmann(0.3, p), p) == pytest.approx(0.3)


class TestModelRhs:
    def test_potassium_terms_vanish_at_reversal(self, set_a):
        p = set_a.with_(g_K=0.0, g_M=0.0)
        assert model_rhs((set_a.E_K, 0.7, 0.4), set_a).V == model_rhs((set_a.E_K, 0.7, 0.4), p).V

    def test_gate_at_steady_state(self, set_a):
        V = -33.0
        assert model_rhs((V, boltzmann(V, set_a.n_inf), 0.1), set_a).n == 0.0

    def test_set_a_hand_value(self, set_a):
        # I - g_Na m(-80)(V - E_Na) - g_K n(-80)(V - E_K), worked by hand: 55.3593...
        m = 1 / (1 + math.exp(4.0))
        n = 1 / (1 + math.exp(11.0))
        expected = 5 - 20 * m * (-80 - 60) - 9 * n * (-80 + 90)
        got = model_rhs((-80.0, boltzmann(-80.0, set_a.n_inf), 0.0), set_a).V
        assert got > 0 and got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(55.3593, abs=1e-3)

    def test_kernel_matches_python(self, set_a, rng):
        sys_ = model_system(set_a)
        for x in rng.uniform([-90, -0.1, -0.1], [30, 1.1, 1.1], size=(50, 3)):
            assert np.allclose(sys_(0.0, x), np.array(model_rhs(x, set_a)), rtol=1e-13, atol=1e-13)
            assert np.allclose(sys_.evaluate_many(x[None, :])[0], sys_(0.0, x), rtol=1e-13, atol=1e-13)

    def test_gate_relaxation_closed_form(self, set_a):
        # V held fixed by a huge capacitance: n relaxes to n_inf(V) with time constant tau
        p = set_a.with_(C=1e30)
        V, n0 = -30.0, 0.0
        traj = integrate(model_system(p), [V, n0, 0.0], IntegratorConfig(t_end=1.0, rel_tol=1e-10, abs_tol=1e-12))
        ninf = boltzmann(V, p.n_inf)
        expected = ninf + (n0 - ninf) * np.exp(-traj.times / p.tau)
        assert np.max(np.abs(traj.component("n") - expected)) < 1e-8

    def test_slow_variable_direction(self, set_a, get_run):
        traj = get_run("model-a", 5.0)
        for V, n, nM in traj.states[::50]:
            if 0 < nM < 1:
                dnM = model_rhs((V, n, nM), set_a).nM
                assert np.sign(dnM) == np.sign(V - inverse_boltzmann(nM, set_a.n_inf_M))

    def test_default_initial_state(self, set_a):
        s = default_initial_state(set_a)
        assert s.V == set_a.E_L and s.n == boltzmann(set_a.E_L, set_a.n_inf)

    def test_invalid_parameters(self, set_a):
        with pytest.raises(ValueError):
            set_a.with_(tau_M=0.1)
        with pytest.raises(ValueError):
            set_a.with_(g_K=-1.0)


class TestFastSubsystem:
    def test_zero_slow_gate_is_plain_two_current_model(self, set_a, rng):
        fs = fast_subsystem(set_a, 0.0)
        plain = fast_subsystem(set_a.with_(g_M=0.0), 0.3)
        for x in rng.uniform([-90, -0.1], [30, 1.1], size=(20, 2)):
            assert np.array_equal(fs(0.0, x), plain(0.0, x))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-90, 30), st.floats(-0.1, 1.1), st.floats(-0.1, 0.3))
    def test_restriction_exact(self, V, n, c):
        p = spec("model-a").params
        d = model_rhs(ModelState(V, n, c), p)
        fs = fast_subsystem(p, c)
        assert tuple(fs.rhs(0.0, np.array([V, n]))) == (d.V, d.n)

    def test_frozen_term_is_constant_conductance(self, set_a):
        V, n, c = -50.0, 0.2, 0.05
        diff = fast_subsystem(set_a, c)(0.0, [V, n])[0] - fast_subsystem(set_a, 0.0)(0.0, [V, n])[0]
        assert diff == pytest.approx(-set_a.g_M * c * (V - set_a.E_K) / set_a.C)

    def test_three_equilibria_at_005(self, set_a):
        assert len(find_equilibria(fast_subsystem(set_a, 0.05))) == 3

    def test_no_stable_equilibrium_below_fold(self, set_a):
        fs = fast_subsystem(set_a, -0.05)
        eqs = find_equilibria(fs)
        assert not any(e.klass in STABLE_CLASSES for e in eqs)
        assert any(c.stability == "stable" for c in find_cycles(fs, eqs, default_window(fs)))

    def test_mu_reported(self, set_a):
        assert fast_subsystem(set_a, 0.0).mu == pytest.approx(0.152 / 20)


class TestConfig:
    def test_round_trip(self, set_b, tmp_path):
        path = tmp_path / "b.cfg"
        save_model_config(set_b, path, header="test")
        assert load_model_config(path) == set_b

    def test_keys(self, set_a):
        assert tuple(set_a.flat()) == MODEL_KEYS

    def test_unknown_key(self, tmp_path):
        text = (spec("model-a").params.flat() | {"bogus": 1})
        path = tmp_path / "x.cfg"
        path.write_text("".join(f"{k} = {v}\n" for k, v in text.items()))
        with pytest.raises(Exception, match="bogus"):
            load_model_config(path)

    def test_set_b_shipped_values(self, set_b):
        assert (set_b.E_L, set_b.g_L, set_b.g_Na, set_b.g_K, set_b.tau, set_b.tau_M) == (-78, 1, 4, 4, 1, 60)
        assert (set_b.m_inf.v_half, set_b.n_inf.v_half, set_b.m_inf.k) == (-30, -45, 7)


def test_degenerate_calibration_targets():
    with pytest.raises(CalibrationFailed):
        CalibrationTargets(((SADDLE_NODE, 0.05), ("saddle homoclinic orbit", 0.05)), 4.0, 5.0)
