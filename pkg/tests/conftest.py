"""Shared, session-cached analysis results.

Bifurcation diagrams and burst-current trajectories are expensive; they are
computed at most once per test session and reused by every module.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest

from bursters.bifurcation import DiagramConfig, build_diagram
from bursters.dynsys import IntegratorConfig, integrate
from bursters.metrics import analyse
from bursters.systems import SYSTEM_NAMES, get_system

ALL_SYSTEMS = SYSTEM_NAMES
A_TYPE = ("model-a", "circuit-a")
B_TYPE = ("model-b", "circuit-b")
SIM_RTOL, SIM_ATOL = 1e-8, 1e-10


@lru_cache(maxsize=None)
def spec(name: str):
    return get_system(name)


@lru_cache(maxsize=None)
def diagram(name: str, steps: int = 300):
    s = spec(name)
    return build_diagram(s.fast, s.sweep_range, config=DiagramConfig(steps=steps), parameter=s.slow_label)


@lru_cache(maxsize=None)
def run(name: str, current: float, t_end: float | None = None):
    """Full-system trajectory from the default initial state."""
    s = spec(name).with_current(current)
    cfg = IntegratorConfig(t_end=t_end or s.t_end, rel_tol=SIM_RTOL, abs_tol=SIM_ATOL)
    return integrate(s.system(), s.initial_state(), cfg)


@lru_cache(maxsize=None)
def burst_analysis(name: str, current: float | None = None):
    """``(trajectory after transient, train, segmentation, statistics)``."""
    s = spec(name)
    traj = run(name, s.burst_current if current is None else current).after(s.transient)
    train, seg, stats = analyse(traj, s.membrane, config=s.metrics_config())
    return traj, train, seg, stats


@pytest.fixture(scope="session")
def get_diagram():
    return diagram


@pytest.fixture(scope="session")
def get_run():
    return run


@pytest.fixture(scope="session")
def get_bursts():
    return burst_analysis


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance verdicts, keyed by criterion number: (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
