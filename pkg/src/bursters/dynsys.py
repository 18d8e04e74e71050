"""ODE plumbing shared by the models, the circuits and the analysis code.

A :class:`DynamicalSystem` carries a Python-level right-hand side and,
optionally, a numba kernel ``kernel(t, x, p)`` with its parameter vector.
The integrators below are written once as numba functions; systems without a
kernel run through pure-Python twins of the same code.
"""
from __future__ import annotations

import math
import os
import tempfile
import types
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from numba import njit

__all__ = [
    "DynamicalSystem",
    "IntegratorConfig",
    "Trajectory",
    "IntegrationError",
    "IntegrationDiverged",
    "StiffnessError",
    "integrate",
    "integrate_fixed",
    "integrate_adaptive",
    "locate_threshold_crossings",
    "rk4_step",
    "write_atomic",
]


class IntegrationError(RuntimeError):
    """Base class for integration failures."""


class IntegrationDiverged(IntegrationError):
    def __init__(self, last_time: float, message: str = "non-finite state"):
        super().__init__(f"{message} after t={last_time!r}")
        self.last_time = last_time


class StiffnessError(IntegrationError):
    def __init__(self, time: float, step: float):
        super().__init__(f"step size {step:.3e} fell below min_step at t={time!r}")
        self.time = time
        self.step = step


@dataclass(frozen=True)
class DynamicalSystem:
    """An autonomous or time-dependent ODE ``dx/dt = rhs(t, x)``.

    Parameters
    ----------
    labels : tuple of str
        Component names, e.g. ``("V", "n", "nM")``.
    rhs : callable
        ``rhs(t, x) -> ndarray``. Must be deterministic.
    params : mapping
        Named parameters, kept for reporting.
    kernel, kernel_params : optional
        numba-compiled ``kernel(t, x, p)`` equivalent to ``rhs``; used by the
        integrators when present.
    sign : float
        +1 for forward time, -1 for the time-reversed flow.
    time_scale : float
        Characteristic time of the fastest dynamics, used to size analysis
        windows.
    """

    labels: tuple[str, ...]
    rhs: Callable[[float, np.ndarray], np.ndarray]
    params: Mapping[str, float] = field(default_factory=dict)
    kernel: Callable | None = None
    kernel_params: np.ndarray | None = None
    sign: float = 1.0
    time_scale: float = 1.0

    @property
    def dimension(self) -> int:
        return len(self.labels)

    def __call__(self, t: float, x) -> np.ndarray:
        dx = np.asarray(self.rhs(t, np.asarray(x, dtype=float)), dtype=float)
        return dx if self.sign == 1.0 else self.sign * dx

    def reversed(self) -> "DynamicalSystem":
        """The same vector field with time running backwards."""
        return replace(self, sign=-self.sign)

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the field at each row of ``points`` (t = 0)."""
        pts = np.ascontiguousarray(points, dtype=float)
        if self.kernel is not None:
            return _eval_points(self.kernel, self.kernel_params, self.sign, pts)
        return np.array([self(0.0, p) for p in pts]).reshape(pts.shape)

    def _kernel_args(self):
        if self.kernel is not None:
            return self.kernel, self.kernel_params, False
        rhs = self.rhs
        return (lambda t, x, p: np.asarray(rhs(t, x), dtype=float)), None, True


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"
    t_start: float = 0.0
    t_end: float = 1.0
    fixed_step: float | None = None
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    max_step: float | None = None
    min_step: float | None = None
    max_steps: int = 10_000_000
    record_stride: int = 1

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.method == "rk4" and not (self.fixed_step and self.fixed_step > 0):
            raise ValueError("rk4 needs fixed_step > 0")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.record_stride < 1 or self.max_steps < 1:
            raise ValueError("record_stride and max_steps must be >= 1")

    @property
    def span(self) -> float:
        return self.t_end - self.t_start

    @property
    def resolved_max_step(self) -> float:
        return self.max_step if self.max_step is not None else self.span / 1000.0

    @property
    def resolved_min_step(self) -> float:
        if self.min_step is not None:
            return self.min_step
        return 1e-12 * max(self.span, abs(self.t_start), abs(self.t_end))

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "fixed_step": self.fixed_step,
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "max_step": self.resolved_max_step,
            "min_step": self.resolved_min_step,
            "max_steps": self.max_steps,
            "record_stride": self.record_stride,
        }


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered samples of an integration run."""

    times: np.ndarray
    states: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.size != len(times) * len(self.labels):
            raise ValueError("state width does not match labels")
        states = states.reshape(len(times), len(self.labels))
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states))):
            raise ValueError("trajectory contains non-finite values")
        times.flags.writeable = False
        states.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self) -> int:
        return len(self.times)

    def component(self, label: str) -> np.ndarray:
        try:
            return self.states[:, self.labels.index(label)]
        except ValueError:
            raise KeyError(f"no component {label!r} in {self.labels}") from None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def after(self, t: float) -> "Trajectory":
        keep = self.times >= t
        return Trajectory(self.times[keep], self.states[keep], self.labels)

    def rescaled(self, factor: float) -> "Trajectory":
        return Trajectory(self.times * factor, self.states, self.labels)

    def resample(self, times: np.ndarray) -> np.ndarray:
        """Linear interpolation of all components onto ``times``."""
        return np.column_stack(
            [np.interp(times, self.times, self.states[:, i]) for i in range(self.states.shape[1])]
        )

    def to_csv(self, path, time_factor: float = 1.0) -> None:
        header = ",".join(("t",) + self.labels)
        rows = np.column_stack([self.times * time_factor, self.states])
        write_atomic(path, _csv_text(header, rows))

    @classmethod
    def from_csv(cls, path, time_factor: float = 1.0) -> "Trajectory":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if not header or header[0] != "t":
                raise ValueError(f"{path}: first column must be 't'")
            rows = []
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    vals = [float(v) for v in line.split(",")]
                except ValueError:
                    raise ValueError(f"{path}: malformed row {lineno}") from None
                if len(vals) != len(header):
                    raise ValueError(f"{path}: row {lineno} has {len(vals)} fields, expected {len(header)}")
                rows.append(vals)
        data = np.array(rows, dtype=float).reshape(-1, len(header))
        return cls(data[:, 0] * time_factor, data[:, 1:], tuple(header[1:]))


def _csv_text(header: str, rows: np.ndarray) -> str:
    lines = [header]
    lines.extend(",".join(format(v, ".17g") for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_atomic(path, text: str) -> None:
    """Write ``text`` via a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# kernels

_OK, _FULL, _DIVERGED, _UNDERFLOW, _MAXSTEPS = 0, 1, 2, 3, 4


@njit
def _eval_points(rhs, p, sign, pts):
    out = np.empty_like(pts)
    for i in range(pts.shape[0]):
        out[i] = sign * rhs(0.0, pts[i], p)
    return out


@njit(cache=True)
def _all_finite(x):
    for v in x:
        if not np.isfinite(v):
            return False
    return True


@njit
def _rk4(rhs, p, sign, t, x, h):
    k1 = sign * rhs(t, x, p)
    k2 = sign * rhs(t + 0.5 * h, x + 0.5 * h * k1, p)
    k3 = sign * rhs(t + 0.5 * h, x + 0.5 * h * k2, p)
    k4 = sign * rhs(t + h, x + h * k3, p)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit
def _rk4_run(rhs, p, sign, t0, x0, h, n_full, t_end, i0, stride, out_t, out_x):
    """Steps i0+1 .. n_full (+ the final partial step) of a fixed-step run.

    Returns (n_recorded, status, i_last, x_last).
    """
    x = x0.copy()
    n = 0
    cap = out_t.shape[0]
    i = i0
    while i < n_full:
        t = t0 + i * h
        xn = _rk4(rhs, p, sign, t, x, h)
        if not _all_finite(xn):
            return n, _DIVERGED, i, x
        x = xn
        i += 1
        if i % stride == 0 or (i == n_full and t0 + n_full * h >= t_end):
            out_t[n] = t0 + i * h
            out_x[n] = x
            n += 1
            if n == cap:
                return n, _FULL, i, x
    t = t0 + n_full * h
    if t_end - t > 1e-9 * h:
        xn = _rk4(rhs, p, sign, t, x, t_end - t)
        if not _all_finite(xn):
            return n, _DIVERGED, i, x
        x = xn
        out_t[n] = t_end
        out_x[n] = x
        n += 1
    return n, _OK, i, x


# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1 = 71.0 / 57600.0
_E3 = -71.0 / 16695.0
_E4 = 71.0 / 1920.0
_E5 = -17253.0 / 339200.0
_E6 = 22.0 / 525.0
_E7 = -1.0 / 40.0


@njit
def _dp_step(rhs, p, sign, t, x, h, k1):
    k2 = sign * rhs(t + _C2 * h, x + h * (_A21 * k1), p)
    k3 = sign * rhs(t + _C3 * h, x + h * (_A31 * k1 + _A32 * k2), p)
    k4 = sign * rhs(t + _C4 * h, x + h * (_A41 * k1 + _A42 * k2 + _A43 * k3), p)
    k5 = sign * rhs(t + _C5 * h, x + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), p)
    k6 = sign * rhs(t + h, x + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5), p)
    xn = x + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
    k7 = sign * rhs(t + h, xn, p)
    err = h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
    return xn, err, k7


@njit
def _dp_run(rhs, p, sign, t, x0, t_end, h, rtol, atol, hmax, hmin, max_steps,
            steps_done, stride, out_t, out_x):
    """Adaptive Dormand-Prince run, recording every ``stride``-th accepted step.

    Returns (n_recorded, status, t, x, h, steps_done).
    """
    x = x0.copy()
    k1 = sign * rhs(t, x, p)
    n = 0
    cap = out_t.shape[0]
    if not _all_finite(k1):
        return n, _DIVERGED, t, x, h, steps_done
    while t < t_end:
        if steps_done >= max_steps:
            return n, _MAXSTEPS, t, x, h, steps_done
        h = min(h, hmax)
        last = False
        if t + h >= t_end or t_end - (t + h) < 1e-9 * h:
            h = t_end - t
            last = True
        xn, err, k7 = _dp_step(rhs, p, sign, t, x, h, k1)
        finite = _all_finite(xn)
        en = 0.0
        if finite:
            for j in range(x.shape[0]):
                sc = atol + rtol * max(abs(x[j]), abs(xn[j]))
                r = abs(err[j]) / sc
                if r > en:
                    en = r
        if finite and en <= 1.0:
            t = t_end if last else t + h
            x = xn
            k1 = k7
            steps_done += 1
            if not _all_finite(k1):
                return n, _DIVERGED, t, x, h, steps_done
            if steps_done % stride == 0 or t >= t_end:
                out_t[n] = t
                out_x[n] = x
                n += 1
            fac = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
            h = h * fac
            if n == cap and t < t_end:
                return n, _FULL, t, x, h, steps_done
        else:
            if not finite:
                fac = 0.25
            else:
                fac = max(0.1, 0.9 * en ** -0.2)
            h = h * fac
            if h < hmin:
                if not finite:
                    return n, _DIVERGED, t, x, h, steps_done
                return n, _UNDERFLOW, t, x, h, steps_done
    return n, _OK, t, x, h, steps_done


@njit
def rk4_step(rhs, p, sign, t, x, h):
    """One classical RK4 step (exposed for crossing refinement)."""
    return _rk4(rhs, p, sign, t, x, h)


def _initial_step(system, x0, t0, cfg) -> float:
    f0 = system(t0, x0)
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(x0)
    d0 = np.max(np.abs(x0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, cfg.resolved_max_step, cfg.span)
    x1 = x0 + h0 * f0
    f1 = system(t0 + h0, x1)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return max(min(100 * h0, h1, cfg.resolved_max_step, cfg.span), cfg.resolved_min_step)


def _as_state(system: DynamicalSystem, x0) -> np.ndarray:
    x = np.array(x0, dtype=float).reshape(-1)
    if x.shape[0] != system.dimension:
        raise ValueError(f"initial state has {x.shape[0]} components, system has {system.dimension}")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    return x


def python_twin(fn, _memo=None):
    """Pure-Python copy of a jitted function whose jitted callees are also unwrapped.

    Lets the numba run loops drive a plain Python ``rhs``, which jitted code
    cannot call.
    """
    memo = {} if _memo is None else _memo
    if fn in memo:
        return memo[fn]
    env = dict(fn.py_func.__globals__)
    twin = types.FunctionType(fn.py_func.__code__, env, fn.py_func.__name__, fn.py_func.__defaults__)
    memo[fn] = twin
    for name in fn.py_func.__code__.co_names:
        obj = env.get(name)
        if hasattr(obj, "py_func"):
            env[name] = python_twin(obj, memo)
    return twin


def integrate_fixed(system: DynamicalSystem, x0, cfg: IntegratorConfig) -> Trajectory:
    """Classical fourth-order Runge-Kutta with constant step ``cfg.fixed_step``."""
    if cfg.method != "rk4":
        raise ValueError("integrate_fixed needs method='rk4'")
    x = _as_state(system, x0)
    rhs, p, python = system._kernel_args()
    run = python_twin(_rk4_run) if python else _rk4_run
    h = float(cfg.fixed_step)
    n_full = int(math.floor(cfg.span / h * (1 + 1e-12)))
    if n_full > cfg.max_steps:
        raise IntegrationError(f"{n_full} steps exceed max_steps={cfg.max_steps}")
    cap = min(n_full // cfg.record_stride + 2, 1 << 20)
    times, states = [np.array([cfg.t_start])], [x[None, :]]
    i = 0
    while True:
        out_t = np.empty(cap)
        out_x = np.empty((cap, x.shape[0]))
        n, status, i, x = run(rhs, p, system.sign, cfg.t_start, x, h, n_full, cfg.t_end,
                              i, cfg.record_stride, out_t, out_x)
        times.append(out_t[:n])
        states.append(out_x[:n])
        if status == _DIVERGED:
            raise IntegrationDiverged(cfg.t_start + i * h)
        if status == _OK:
            break
    return Trajectory(np.concatenate(times), np.concatenate(states), system.labels)


def integrate_adaptive(system: DynamicalSystem, x0, cfg: IntegratorConfig) -> Trajectory:
    """Embedded Dormand-Prince 5(4) with per-component error control."""
    if cfg.method != "rk45":
        raise ValueError("integrate_adaptive needs method='rk45'")
    x = _as_state(system, x0)
    rhs, p, python = system._kernel_args()
    run = python_twin(_dp_run) if python else _dp_run
    t = cfg.t_start
    h = _initial_step(system, x, t, cfg)
    hmax, hmin = cfg.resolved_max_step, cfg.resolved_min_step
    cap = int(min(max(cfg.span / hmax, 64) / cfg.record_stride * 4 + 16, 1 << 18))
    times, states = [np.array([t])], [x[None, :]]
    steps = 0
    while True:
        out_t = np.empty(cap)
        out_x = np.empty((cap, x.shape[0]))
        n, status, t, x, h, steps = run(rhs, p, system.sign, t, x, cfg.t_end, h, cfg.rel_tol,
                                        cfg.abs_tol, hmax, hmin, cfg.max_steps, steps,
                                        cfg.record_stride, out_t, out_x)
        times.append(out_t[:n])
        states.append(out_x[:n])
        if status == _OK:
            break
        if status == _DIVERGED:
            raise IntegrationDiverged(t)
        if status == _UNDERFLOW:
            raise StiffnessError(t, h)
        if status == _MAXSTEPS:
            raise IntegrationError(f"max_steps={cfg.max_steps} reached at t={t!r}")
    return Trajectory(np.concatenate(times), np.concatenate(states), system.labels)


def integrate(system: DynamicalSystem, x0, cfg: IntegratorConfig) -> Trajectory:
    if cfg.method == "rk4":
        return integrate_fixed(system, x0, cfg)
    return integrate_adaptive(system, x0, cfg)


def locate_threshold_crossings(traj: Trajectory, component: str, level: float,
                               direction: str = "rising") -> np.ndarray:
    """Times at which ``component`` crosses ``level``, linearly interpolated.

    A rising crossing is a pair of adjacent samples with ``x[i] < level <= x[i+1]``;
    falling is the mirror image.
    """
    if direction not in ("rising", "falling"):
        raise ValueError("direction must be 'rising' or 'falling'")
    if len(traj) < 2:
        return np.empty(0)
    x = traj.component(component)
    a, b = x[:-1], x[1:]
    if direction == "rising":
        idx = np.nonzero((a < level) & (b >= level))[0]
    else:
        idx = np.nonzero((a > level) & (b <= level))[0]
    t0, t1 = traj.times[idx], traj.times[idx + 1]
    frac = (level - a[idx]) / (b[idx] - a[idx])
    return t0 + frac * (t1 - t0)


def labeled(values: Sequence[float], labels: Sequence[str]) -> dict[str, float]:
    """Pair a state vector with its component names."""
    if len(values) != len(labels):
        raise ValueError("values and labels differ in length")
    return dict(zip(labels, (float(v) for v in values)))
