import numpy as np
import pytest

from bursters.bifurcation import classify_burster
from bursters.dynsys import Trajectory
from bursters.metrics import (MetricsConfig, SpikeTrain, analyse, detect_spikes,
                              detect_subthreshold_oscillations, segment_bursts, write_statistics_csv)

from conftest import A_TYPE, ALL_SYSTEMS, B_TYPE, diagram, run, spec


def pulse_train(spike_times, t_end, dt=1e-3, width=0.1, baseline=None):
    """Triangular unit pulses on a fine grid, optionally on top of a baseline signal."""
    t = np.arange(0.0, t_end, dt)
    x = np.zeros_like(t) if baseline is None else baseline(t)
    for s in spike_times:
        x = np.maximum(x, 1.0 - np.abs(t - s) / width)
    return Trajectory(t, x[:, None], ("V",))


def burst_times(starts, n, isi=1.0):
    return np.concatenate([s + isi * np.arange(n) for s in starts])


class TestSpikes:
    def test_pulses_found_at_peaks(self):
        times = np.array([1.0, 2.0, 3.0])
        train = detect_spikes(pulse_train(times, 4.0), "V")
        assert np.allclose(train.spike_times, times, atol=1e-9)
        assert train.threshold == pytest.approx(0.6)
        assert np.all(train.rise_times < train.spike_times) and np.all(train.spike_times < train.fall_times)

    def test_flat_signal_has_no_spikes(self):
        traj = Trajectory(np.arange(10.0), np.ones((10, 1)), ("V",))
        assert len(detect_spikes(traj, "V")) == 0

    def test_unfinished_spike_is_dropped(self):
        t = np.linspace(0, 1, 101)
        traj = Trajectory(t, t[:, None], ("V",))
        assert len(detect_spikes(traj, "V", 0.5)) == 0

    def test_train_must_increase(self):
        with pytest.raises(ValueError):
            SpikeTrain(np.array([1.0, 1.0]), 0.0)

    def test_model_a_spikes_at_burst_current(self, get_bursts):
        _, train, seg, _ = get_bursts("model-a")
        assert len(train) > 0 and len(seg) >= 3

    @pytest.mark.parametrize("name", ALL_SYSTEMS)
    def test_rest_current_has_no_spikes(self, name):
        s = spec(name)
        traj = run(name, s.rest_current).after(s.transient)
        train, seg, stats = analyse(traj, s.membrane, config=s.metrics_config())
        assert len(train) == 0 and len(seg) == 0 and not stats.available


class TestSegmentation:
    def test_regular_train_is_one_burst(self):
        seg = segment_bursts(SpikeTrain(np.arange(10.0), 0.0))
        assert seg.spikes_per_burst == [10] and len(seg.gaps) == 0

    def test_constructed_gap(self):
        t = np.cumsum([0, 1, 1, 1, 20, 1, 1, 1]).astype(float)
        seg = segment_bursts(SpikeTrain(t, 0.0))
        # seven intervals mean eight spikes, split by the long interval
        assert seg.spikes_per_burst == [4, 4]
        assert seg.gap_threshold == pytest.approx(3.0)

    def test_gap_floor(self):
        t = np.cumsum([0, 1, 1, 1, 20, 1, 1, 1]).astype(float)
        seg = segment_bursts(SpikeTrain(t, 0.0), MetricsConfig(gap_floor=50.0))
        assert seg.spikes_per_burst == [8]

    def test_singleton_flagged(self):
        seg = segment_bursts(SpikeTrain(np.array([0.0, 1.0, 2.0, 30.0]), 0.0))
        assert [b.singleton for b in seg.bursts] == [False, True]

    def test_partition(self, rng):
        t = np.cumsum(rng.exponential(1.0, 200) * rng.choice([1, 15], 200, p=[0.9, 0.1]))
        seg = segment_bursts(SpikeTrain(t, 0.0))
        assert np.array_equal(np.concatenate([b.spike_times for b in seg.bursts]), t)
        assert all(a.end < b.start for a, b in zip(seg.bursts, seg.bursts[1:]))

    @pytest.mark.parametrize("name", ALL_SYSTEMS)
    def test_resegmenting_one_burst_is_idempotent(self, name, get_bursts):
        _, _, seg, _ = get_bursts(name)
        for b in seg.bursts:
            assert len(segment_bursts(SpikeTrain(b.spike_times, 0.0), spec(name).metrics_config())) == 1

    def test_time_rescaling_equivariance(self, get_bursts):
        traj, train, seg, stats = get_bursts("model-b")
        scaled = Trajectory(traj.times * 1e-3, traj.states, traj.labels)
        _, seg2, stats2 = analyse(scaled, "V", config=spec("model-b").metrics_config())
        assert seg2.spikes_per_burst == seg.spikes_per_burst
        assert stats2.period == pytest.approx(stats.period * 1e-3, rel=1e-9)
        assert stats2.oscillation_flags == stats.oscillation_flags

    def test_circuit_a_regular_over_horizon(self):
        # five slow time constants R2*C3 after the transient
        s = spec("circuit-a")
        horizon = 5 * s.params.R2 * s.params.C3
        traj = run("circuit-a", s.burst_current).after(s.transient)
        keep = traj.times <= traj.times[0] + horizon
        traj = Trajectory(traj.times[keep], traj.states[keep], traj.labels)
        _, seg, _ = analyse(traj, "Vout", config=s.metrics_config())
        counts = seg.spikes_per_burst[1:]
        assert len(seg) >= 3 and max(counts) - min(counts) <= 1


class TestStatistics:
    def test_identical_bursts_zero_variance(self):
        times = burst_times([0.0, 20.0, 40.0, 60.0], 4)
        traj = pulse_train(times, 75.0, dt=1e-2)
        _, seg, stats = analyse(traj, "V")
        assert stats.available and stats.spikes_per_burst == [4, 4, 4]
        assert stats.period == pytest.approx(20.0, abs=1e-9) and stats.period_std == pytest.approx(0.0, abs=1e-9)
        assert stats.mean_duration == pytest.approx(3.0 + 0.08, abs=1e-6)
        assert 0.0 < stats.duty_cycle < 1.0

    def test_too_few_bursts_unavailable(self):
        traj = pulse_train(burst_times([0.0, 20.0], 4), 30.0, dt=1e-2)
        stats = analyse(traj, "V")[2]
        assert not stats.available and np.isnan(stats.period)

    def test_no_spikes(self):
        traj = Trajectory(np.arange(10.0), np.zeros((10, 1)), ("V",))
        stats = analyse(traj, "V")[2]
        assert stats.n_bursts == 0 and not stats.available and stats.oscillation_flags == (None, None)

    def test_first_burst_excluded(self):
        times = np.concatenate([burst_times([0.0], 7), burst_times([20.0, 40.0, 60.0, 80.0], 4)])
        stats = analyse(pulse_train(times, 95.0, dt=1e-2), "V")[2]
        assert 7 not in stats.spikes_per_burst


class TestSubthresholdOscillations:
    def test_exponential_relaxation_is_silent(self):
        # pulses separated by monotone recovery: no sub-threshold maxima
        times = burst_times([0.0, 20.0, 40.0, 60.0], 3)
        base = lambda t: -0.3 * np.exp(-((t % 20.0) - 2.0).clip(0) / 3.0)
        stats = analyse(pulse_train(times, 75.0, dt=1e-2, baseline=base), "V")[2]
        assert stats.oscillation_flags == (False, False)

    def test_damped_ringing_is_flagged(self):
        # decaying ringing after each burst and growing ringing before the next
        times = burst_times([0.0, 20.0, 40.0, 60.0, 80.0], 3)

        def base(t):
            u = t % 20.0
            after = 0.2 * np.exp(-(u - 2.2).clip(0) / 2.0) * np.sin(6.0 * u)
            before = 0.2 * np.exp(-(20.0 - u) / 2.0) * np.sin(6.0 * u)
            return np.where(u > 2.2, after + before, 0.0)

        stats = analyse(pulse_train(times, 95.0, dt=1e-2, baseline=base), "V")[2]
        assert stats.oscillation_flags == (True, True)
        # the final burst has no following gap, so its offset window is empty
        assert min(stats.onset_counts) >= 2 and min(stats.offset_counts[:-1]) >= 2

    def test_short_window_undetermined(self):
        times = burst_times([0.0, 20.0, 40.0], 3)
        traj = pulse_train(times, 55.0, dt=1e-2)
        cfg = MetricsConfig(min_window_samples=10_000)
        train = detect_spikes(traj, "V", config=cfg)
        seg = segment_bursts(train, cfg)
        flags = detect_subthreshold_oscillations(traj, seg, "V", train.threshold, cfg)
        assert all(f.onset is None and f.offset is None for f in flags)

    def test_empty_segmentation_rejected(self):
        traj = Trajectory(np.arange(10.0), np.zeros((10, 1)), ("V",))
        with pytest.raises(ValueError):
            detect_subthreshold_oscillations(traj, segment_bursts(SpikeTrain(np.empty(0), 0.0)), "V", 0.5)

    @pytest.mark.parametrize("name", A_TYPE)
    def test_a_type_all_or_nothing(self, name, get_bursts):
        assert get_bursts(name)[3].oscillation_flags == (False, False)

    @pytest.mark.parametrize("name", B_TYPE)
    def test_b_type_oscillates(self, name, get_bursts):
        assert get_bursts(name)[3].oscillation_flags == (True, True)

    @pytest.mark.parametrize("name", ALL_SYSTEMS)
    def test_flags_match_classification(self, name, get_bursts):
        c = classify_burster(diagram(name))
        assert get_bursts(name)[3].oscillation_flags == (c.onset_oscillations, c.offset_oscillations)


@pytest.mark.parametrize("name", ALL_SYSTEMS)
@pytest.mark.parametrize("shift", [-0.05, 0.05])
def test_threshold_band_invariance(name, shift, get_bursts):
    traj, train, _, _ = get_bursts(name)
    x = traj.component(spec(name).membrane)
    moved = detect_spikes(traj, spec(name).membrane, train.threshold + shift * np.ptp(x))
    assert len(moved) == len(train)


@pytest.mark.parametrize("name", ALL_SYSTEMS)
def test_regular_bursting(name, get_bursts):
    stats = get_bursts(name)[3]
    assert stats.available and stats.n_bursts >= 3 and min(stats.spikes_per_burst) >= 2
    assert stats.period_std < 0.05 * stats.period


@pytest.mark.parametrize("name, spikes, period", [
    # frozen from independent runs at the burst current
    ("model-a", 8, 82.7), ("model-b", 7, 156.0), ("circuit-a", 4, 0.0542), ("circuit-b", 8, 0.1957),
])
def test_frozen_burst_shape(name, spikes, period, get_bursts):
    stats = get_bursts(name)[3]
    assert set(stats.spikes_per_burst) <= {spikes - 1, spikes, spikes + 1}
    assert stats.period == pytest.approx(period, rel=0.02)


def test_csv_records_settings(tmp_path, get_bursts):
    _, train, _, stats = get_bursts("circuit-a")
    path = tmp_path / "m.csv"
    write_statistics_csv([("circuit-a", stats, train.threshold)], path, time_factor=1e3)
    head, row = path.read_text().splitlines()
    cells = dict(zip(head.split(","), row.split(",")))
    assert float(cells["threshold_fraction"]) == 0.6
    assert float(cells["gap_factor"]) == 3.0 and float(cells["noise_floor"]) == 0.02
    assert float(cells["period"]) == pytest.approx(stats.period * 1e3)
    assert cells["onset_oscillations"] == "false"
    assert path.read_bytes().endswith(b"\n") and b"\r" not in path.read_bytes()
