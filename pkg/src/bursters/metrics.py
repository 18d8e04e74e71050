"""Spike detection, burst segmentation and burst statistics on trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynsys import Trajectory, locate_threshold_crossings, write_atomic

__all__ = [
    "MetricsConfig",
    "SpikeTrain",
    "Burst",
    "BurstSegmentation",
    "BurstStatistics",
    "OscillationFlags",
    "detect_spikes",
    "segment_bursts",
    "burst_statistics",
    "detect_subthreshold_oscillations",
    "analyse",
    "write_statistics_csv",
]


@dataclass(frozen=True)
class MetricsConfig:
    """Declared defaults of the spike and burst criteria.

    ``min_range`` is the smallest peak-to-peak excursion that counts as
    spiking at all; below it the auto threshold would pick up relaxation
    ripple and the train is empty.
    """

    threshold_fraction: float = 0.6
    gap_factor: float = 3.0
    gap_floor: float = 0.0
    noise_floor: float = 0.02
    window_fraction: float = 0.25
    min_count: int = 2
    min_window_samples: int = 5
    min_range: float = 0.0

    def fingerprint(self) -> dict:
        return {"threshold_fraction": self.threshold_fraction, "gap_factor": self.gap_factor,
                "noise_floor": self.noise_floor}


@dataclass(frozen=True)
class SpikeTrain:
    spike_times: np.ndarray
    threshold: float
    rise_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    fall_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    peaks: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        t = np.asarray(self.spike_times, float)
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("spike times must be strictly increasing")
        object.__setattr__(self, "spike_times", t)

    def __len__(self) -> int:
        return len(self.spike_times)


@dataclass(frozen=True)
class Burst:
    spike_times: np.ndarray
    rise: float = float("nan")
    fall: float = float("nan")

    @property
    def start(self) -> float:
        return float(self.spike_times[0])

    @property
    def end(self) -> float:
        return float(self.spike_times[-1])

    @property
    def n_spikes(self) -> int:
        return len(self.spike_times)

    @property
    def singleton(self) -> bool:
        return self.n_spikes == 1


@dataclass(frozen=True)
class BurstSegmentation:
    bursts: tuple[Burst, ...]
    gaps: np.ndarray
    gap_threshold: float

    def __len__(self) -> int:
        return len(self.bursts)

    @property
    def spikes_per_burst(self) -> list[int]:
        return [b.n_spikes for b in self.bursts]


@dataclass(frozen=True)
class OscillationFlags:
    onset: bool | None
    offset: bool | None
    onset_count: int
    offset_count: int


@dataclass(frozen=True)
class BurstStatistics:
    """Statistics over complete bursts after the first one.

    ``available`` is false when fewer than two such bursts exist; the
    numeric fields are then NaN.
    """

    n_bursts: int
    spikes_per_burst: list[int]
    mean_duration: float
    mean_interburst: float
    period: float
    period_std: float
    duty_cycle: float
    onset_oscillations: bool | None
    offset_oscillations: bool | None
    onset_counts: list[int]
    offset_counts: list[int]
    available: bool
    config: MetricsConfig = field(default_factory=MetricsConfig)

    @property
    def oscillation_flags(self) -> tuple[bool | None, bool | None]:
        return self.onset_oscillations, self.offset_oscillations


def detect_spikes(traj: Trajectory, component: str, threshold: float | None = None,
                  config: MetricsConfig | None = None) -> SpikeTrain:
    """Spikes as rising threshold crossings paired with the next falling one.

    The spike time is the time of the component's maximum between the pair.
    With ``threshold=None`` the threshold is ``min + fraction * (max - min)``.
    """
    cfg = config or MetricsConfig()
    x = traj.component(component)
    if len(x) < 2 or np.ptp(x) == 0.0:
        return SpikeTrain(np.empty(0), float(x[0]) if len(x) else float("nan"))
    if threshold is None:
        threshold = float(x.min() + cfg.threshold_fraction * np.ptp(x))
        if np.ptp(x) < cfg.min_range:
            return SpikeTrain(np.empty(0), threshold)
    up = np.nonzero((x[:-1] < threshold) & (x[1:] >= threshold))[0]
    down = np.nonzero((x[:-1] > threshold) & (x[1:] <= threshold))[0]
    rises = locate_threshold_crossings(traj, component, threshold, "rising")
    falls = locate_threshold_crossings(traj, component, threshold, "falling")
    times, r_out, f_out, peaks = [], [], [], []
    j = 0
    for k, i in enumerate(up):
        while j < len(down) and down[j] <= i:
            j += 1
        if j == len(down):
            break
        seg = slice(i + 1, down[j] + 1)
        m = i + 1 + int(np.argmax(x[seg]))
        times.append(traj.times[m])
        peaks.append(x[m])
        r_out.append(rises[k])
        f_out.append(falls[j])
    return SpikeTrain(np.array(times), float(threshold), np.array(r_out), np.array(f_out), np.array(peaks))


def segment_bursts(train: SpikeTrain, config: MetricsConfig | None = None) -> BurstSegmentation:
    """Split the train at inter-spike gaps above ``gap_factor`` times the median ISI."""
    cfg = config or MetricsConfig()
    t = train.spike_times
    if len(t) == 0:
        return BurstSegmentation((), np.empty(0), float("nan"))
    rises = train.rise_times if len(train.rise_times) == len(t) else t
    falls = train.fall_times if len(train.fall_times) == len(t) else t
    if len(t) == 1:
        return BurstSegmentation((Burst(t, float(rises[0]), float(falls[0])),), np.empty(0), float("inf"))
    isi = np.diff(t)
    limit = max(cfg.gap_factor * float(np.median(isi)), cfg.gap_floor)
    cuts = np.nonzero(isi > limit)[0] + 1
    bounds = np.concatenate(([0], cuts, [len(t)]))
    bursts = tuple(Burst(t[a:b], float(rises[a]), float(falls[b - 1])) for a, b in zip(bounds[:-1], bounds[1:]))
    gaps = np.array([bursts[k + 1].rise - bursts[k].fall for k in range(len(bursts) - 1)])
    return BurstSegmentation(bursts, gaps, limit)


def _count_maxima(times, x, lo, hi, threshold, floor, min_samples):
    keep = (times >= lo) & (times <= hi)
    w = x[keep]
    if len(w) < min_samples:
        return None
    base = float(np.median(w))
    inner = w[1:-1]
    is_max = (inner > w[:-2]) & (inner >= w[2:]) & (inner < threshold) & (inner > base + floor)
    return int(np.count_nonzero(is_max))


def detect_subthreshold_oscillations(traj: Trajectory, seg: BurstSegmentation, component: str,
                                     threshold: float, config: MetricsConfig | None = None
                                     ) -> list[OscillationFlags]:
    """Per-burst onset and offset flags from sub-threshold maxima counts.

    The onset window is the last ``window_fraction`` of the quiet interval
    before the burst, the offset window the first ``window_fraction`` after
    it. A flag is ``None`` when there is no adjacent gap or the window holds
    fewer than ``min_window_samples`` samples.
    """
    cfg = config or MetricsConfig()
    if len(seg) == 0:
        raise ValueError("segmentation is empty")
    x = traj.component(component)
    floor = cfg.noise_floor * float(np.ptp(x))
    out = []
    for k, b in enumerate(seg.bursts):
        on_count = off_count = 0
        on = off = None
        if k > 0:
            gap = seg.gaps[k - 1]
            c = _count_maxima(traj.times, x, b.rise - cfg.window_fraction * gap, b.rise, threshold,
                              floor, cfg.min_window_samples)
            if c is not None:
                on_count, on = c, c >= cfg.min_count
        if k < len(seg) - 1:
            gap = seg.gaps[k]
            c = _count_maxima(traj.times, x, b.fall, b.fall + cfg.window_fraction * gap, threshold,
                              floor, cfg.min_window_samples)
            if c is not None:
                off_count, off = c, c >= cfg.min_count
        out.append(OscillationFlags(on, off, on_count, off_count))
    return out


def _majority(flags):
    known = [f for f in flags if f is not None]
    if not known:
        return None
    return sum(known) * 2 > len(known)


def burst_statistics(seg: BurstSegmentation, traj: Trajectory, component: str, threshold: float,
                     config: MetricsConfig | None = None) -> BurstStatistics:
    """Statistics over the complete bursts after the first.

    A burst counts as complete when a full quiet gap follows it; the last
    burst of a trajectory that ends mid-burst is therefore left out.
    """
    cfg = config or MetricsConfig()
    nan = float("nan")
    if len(seg) == 0:
        return BurstStatistics(0, [], nan, nan, nan, nan, nan, None, None, [], [], False, cfg)
    bursts = list(seg.bursts)
    complete = bursts[:-1]
    if bursts and traj.times[-1] - bursts[-1].end > seg.gap_threshold:
        complete = bursts
    used = complete[1:]
    flags = detect_subthreshold_oscillations(traj, seg, component, threshold, cfg)[1:len(complete)]
    onset = _majority([f.onset for f in flags])
    offset = _majority([f.offset for f in flags])
    on_counts = [f.onset_count for f in flags]
    off_counts = [f.offset_count for f in flags]
    if len(used) < 2:
        return BurstStatistics(len(seg), [b.n_spikes for b in used], nan, nan, nan, nan, nan,
                               onset, offset, on_counts, off_counts, False, cfg)
    starts = np.array([b.rise for b in used])
    durations = np.array([b.fall - b.rise for b in used])
    periods = np.diff(starts)
    interburst = starts[1:] - np.array([b.fall for b in used[:-1]])
    period = float(periods.mean())
    return BurstStatistics(
        n_bursts=len(seg),
        spikes_per_burst=[b.n_spikes for b in used],
        mean_duration=float(durations.mean()),
        mean_interburst=float(interburst.mean()),
        period=period,
        period_std=float(periods.std()),
        duty_cycle=float(min(1.0, max(0.0, durations[:-1].mean() / period))),
        onset_oscillations=onset,
        offset_oscillations=offset,
        onset_counts=on_counts,
        offset_counts=off_counts,
        available=True,
        config=cfg,
    )


def analyse(traj: Trajectory, component: str, threshold: float | None = None,
            config: MetricsConfig | None = None):
    """Spikes, segmentation and statistics in one call."""
    cfg = config or MetricsConfig()
    train = detect_spikes(traj, component, threshold, cfg)
    seg = segment_bursts(train, cfg)
    stats = burst_statistics(seg, traj, component, train.threshold, cfg)
    return train, seg, stats


_CSV_FIELDS = ("name", "n_bursts", "spikes_per_burst", "mean_duration", "mean_interburst", "period",
               "period_std", "duty_cycle", "onset_oscillations", "offset_oscillations", "onset_counts",
               "offset_counts", "available", "threshold", "threshold_fraction", "gap_factor", "noise_floor")


def _cell(v) -> str:
    if v is None:
        return "undetermined"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ";".join(str(i) for i in v)
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".17g")
    return str(v)


def write_statistics_csv(rows: list[tuple[str, BurstStatistics, float]], path, time_factor: float = 1.0) -> None:
    """One row per trajectory: ``(name, statistics, threshold)``.

    Durations are multiplied by ``time_factor`` (e.g. 1e3 for s to ms).
    """
    lines = [",".join(_CSV_FIELDS)]
    for name, s, thr in rows:
        fp = s.config.fingerprint()
        vals = [name, s.n_bursts, s.spikes_per_burst, s.mean_duration * time_factor,
                s.mean_interburst * time_factor, s.period * time_factor, s.period_std * time_factor,
                s.duty_cycle, s.onset_oscillations, s.offset_oscillations, s.onset_counts, s.offset_counts,
                s.available, float(thr), fp["threshold_fraction"], fp["gap_factor"], fp["noise_floor"]]
        lines.append(",".join(_cell(v) for v in vals))
    write_atomic(path, "\n".join(lines) + "\n")
