"""Registry of the shipped systems and their analysis presets."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .circuits import CircuitParams, circuit_fast_subsystem, circuit_system, load_circuit_config
from .config import ConfigError
from .dynsys import DynamicalSystem
from .metrics import MetricsConfig
from .models import (InapIkIkmParams, default_initial_state, fast_subsystem, load_model_config,
                     model_system)

__all__ = ["SystemSpec", "get_system", "SYSTEM_NAMES", "config_path"]

SYSTEM_NAMES = ("model-a", "model-b", "circuit-a", "circuit-b")


@dataclass(frozen=True)
class SystemSpec:
    """A parameter set together with the presets used to analyse it.

    Times are in the system's native unit (ms for models, s for circuits);
    ``export_time_factor`` converts them to ms for CSV output.
    """

    name: str
    kind: str
    params: InapIkIkmParams | CircuitParams
    rest_current: float
    burst_current: float
    panels: tuple[float, ...]
    sweep_range: tuple[float, float]
    t_end: float
    transient: float
    min_spike_range: float = 0.0
    source: str = ""
    slow_label: str = field(init=False)
    membrane: str = field(init=False)

    def __post_init__(self):
        if self.kind not in ("model", "circuit"):
            raise ValueError(f"unknown system kind {self.kind!r}")
        object.__setattr__(self, "slow_label", "nM" if self.kind == "model" else "VGS2")
        object.__setattr__(self, "membrane", "V" if self.kind == "model" else "Vout")

    @property
    def export_time_factor(self) -> float:
        return 1.0 if self.kind == "model" else 1e3

    @property
    def time_unit(self) -> str:
        return "ms" if self.kind == "model" else "s"

    def with_current(self, I: float) -> "SystemSpec":
        return replace(self, params=self.params.with_(I=float(I)))

    def with_params(self, params) -> "SystemSpec":
        return replace(self, params=params)

    def system(self) -> DynamicalSystem:
        if self.kind == "model":
            return model_system(self.params)
        return circuit_system(self.params)

    def fast(self, value: float):
        if self.kind == "model":
            return fast_subsystem(self.params, value)
        return circuit_fast_subsystem(self.params, value)

    def initial_state(self) -> np.ndarray:
        if self.kind == "model":
            return np.array(default_initial_state(self.params))
        return np.zeros(3)

    def metrics_config(self, **changes) -> MetricsConfig:
        """Metric defaults with this system's minimum spike excursion."""
        return MetricsConfig(**{"min_range": self.min_spike_range, **changes})

    def flat_params(self) -> dict:
        return self.params.flat()


_PRESETS = {
    "model-a": dict(kind="model", rest_current=4.0, burst_current=5.0,
                    panels=(-0.05, 0.05, 0.062, 0.07), sweep_range=(-0.05, 0.1),
                    t_end=400.0, transient=100.0, min_spike_range=10.0),
    "model-b": dict(kind="model", rest_current=45.0, burst_current=55.0,
                    panels=(0.055, 0.065, 0.14, 0.15), sweep_range=(0.0, 0.2),
                    t_end=1000.0, transient=100.0, min_spike_range=10.0),
    "circuit-a": dict(kind="circuit", rest_current=0.8e-6, burst_current=1.2e-6,
                      panels=(1.12, 1.16, 1.227, 1.23), sweep_range=(1.0, 1.3),
                      t_end=3.5, transient=2.5, min_spike_range=0.5),
    "circuit-b": dict(kind="circuit", rest_current=5e-6, burst_current=5.6e-6,
                      panels=(0.61, 0.62, 0.6583, 0.66), sweep_range=(0.55, 0.75),
                      t_end=1.5, transient=0.5, min_spike_range=0.5),
}


def config_path(name: str) -> Path:
    """Location of a shipped config file."""
    return Path(str(resources.files("bursters") / "configs" / f"{name}.cfg"))


def get_system(name: str, config: str | Path | None = None) -> SystemSpec:
    """Look up a shipped system, optionally overriding its parameters from a file.

    ``name`` may also be a path to a config file; its kind is inferred from
    the keys and the presets of the matching shipped system (``model-a`` or
    ``circuit-a`` style) are used.
    """
    if name in _PRESETS:
        preset = _PRESETS[name]
        path = Path(config) if config is not None else config_path(name)
    else:
        path = Path(name if config is None else config)
        if not path.exists():
            raise ConfigError(f"unknown system {name!r}; expected one of {SYSTEM_NAMES} or a config path")
        text = path.read_text()
        is_model = any(line.split("=")[0].strip() == "g_Na" for line in text.splitlines())
        preset = _PRESETS["model-a" if is_model else ("circuit-a" if "R3" in text else "circuit-b")]
    if preset["kind"] == "model":
        params = load_model_config(path)
    else:
        params = load_circuit_config(path)
    return SystemSpec(name=name if name in _PRESETS else "custom", params=params, source=str(path), **preset)
