"""The persistent-sodium / delayed-rectifier / M-current neuron model.

Units follow the usual conductance-model conventions: V in mV, t in ms,
conductances and currents as plain numbers in a consistent unit system.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit

from .config import parse_kv, format_kv
from .dynsys import DynamicalSystem

__all__ = [
    "BoltzmannParams",
    "InapIkIkmParams",
    "ModelState",
    "FastSubsystem",
    "boltzmann",
    "inverse_boltzmann",
    "model_rhs",
    "model_system",
    "fast_subsystem",
    "default_initial_state",
    "load_model_config",
    "save_model_config",
    "MODEL_KEYS",
]

_EXP_CLAMP = 700.0


@dataclass(frozen=True)
class BoltzmannParams:
    v_half: float
    k: float

    def __post_init__(self):
        if self.k == 0:
            raise ValueError("Boltzmann slope factor k must be nonzero")


def boltzmann(V, p: BoltzmannParams):
    """Steady-state activation ``1 / (1 + exp((v_half - V) / k))``.

    The exponent is clamped so that extreme voltages saturate to 0 or 1
    instead of overflowing. Accepts scalars or arrays.
    """
    z = np.clip((p.v_half - np.asarray(V, dtype=float)) / p.k, -_EXP_CLAMP, _EXP_CLAMP)
    out = 1.0 / (1.0 + np.exp(z))
    return float(out) if out.ndim == 0 else out


def inverse_boltzmann(y: float, p: BoltzmannParams) -> float:
    """Voltage at which the activation equals ``y`` (0 < y < 1)."""
    if not 0.0 < y < 1.0:
        raise ValueError("inverse_boltzmann needs 0 < y < 1")
    return p.v_half - p.k * np.log(1.0 / y - 1.0)


@dataclass(frozen=True)
class InapIkIkmParams:
    """Parameters of the three-variable model.

    Time constants are constants; a voltage-dependent ``tau(V)`` is not
    supported.
    """

    C: float
    E_L: float
    E_Na: float
    E_K: float
    g_L: float
    g_Na: float
    g_K: float
    g_M: float
    m_inf: BoltzmannParams
    n_inf: BoltzmannParams
    n_inf_M: BoltzmannParams
    tau: float
    tau_M: float
    I: float

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if min(self.g_L, self.g_Na, self.g_K, self.g_M) < 0:
            raise ValueError("conductances must be non-negative")
        if self.tau <= 0 or self.tau_M <= 0:
            raise ValueError("time constants must be positive")
        if not self.tau_M > self.tau:
            raise ValueError("tau_M must exceed tau (slow/fast separation)")

    @property
    def mu(self) -> float:
        """Ratio of fast to slow time constants."""
        return self.tau / self.tau_M

    def with_(self, **changes) -> "InapIkIkmParams":
        return replace(self, **changes)

    def flat(self) -> dict[str, float]:
        """Parameters under their config-file keys."""
        return {
            "C": self.C, "E_L": self.E_L, "E_Na": self.E_Na, "E_K": self.E_K,
            "g_L": self.g_L, "g_Na": self.g_Na, "g_K": self.g_K, "g_M": self.g_M,
            "V_half_Na": self.m_inf.v_half, "V_half_K": self.n_inf.v_half,
            "V_half_M": self.n_inf_M.v_half, "k_Na": self.m_inf.k, "k_K": self.n_inf.k,
            "k_M": self.n_inf_M.k, "tau": self.tau, "tau_M": self.tau_M, "I": self.I,
        }

    @classmethod
    def from_flat(cls, d: dict[str, float]) -> "InapIkIkmParams":
        missing = [k for k in MODEL_KEYS if k not in d]
        if missing:
            raise KeyError(f"missing model parameter(s): {', '.join(missing)}")
        return cls(
            C=d["C"], E_L=d["E_L"], E_Na=d["E_Na"], E_K=d["E_K"],
            g_L=d["g_L"], g_Na=d["g_Na"], g_K=d["g_K"], g_M=d["g_M"],
            m_inf=BoltzmannParams(d["V_half_Na"], d["k_Na"]),
            n_inf=BoltzmannParams(d["V_half_K"], d["k_K"]),
            n_inf_M=BoltzmannParams(d["V_half_M"], d["k_M"]),
            tau=d["tau"], tau_M=d["tau_M"], I=d["I"],
        )

    def vector(self) -> np.ndarray:
        """Packed parameter vector for the compiled kernels."""
        return np.array([
            self.C, self.E_L, self.E_Na, self.E_K, self.g_L, self.g_Na, self.g_K, self.g_M,
            self.m_inf.v_half, self.m_inf.k, self.n_inf.v_half, self.n_inf.k,
            self.n_inf_M.v_half, self.n_inf_M.k, self.tau, self.tau_M, self.I,
        ])


MODEL_KEYS = ("C", "E_L", "E_Na", "E_K", "g_L", "g_Na", "g_K", "g_M", "V_half_Na",
              "V_half_K", "V_half_M", "k_Na", "k_K", "k_M", "tau", "tau_M", "I")


class ModelState(NamedTuple):
    V: float
    n: float
    nM: float


def model_rhs(state, p: InapIkIkmParams) -> ModelState:
    """Time derivatives of (V, n, nM). Gating variables are not clamped."""
    V, n, nM = (float(v) for v in state)
    m = boltzmann(V, p.m_inf)
    dV = (p.I - p.g_L * (V - p.E_L) - p.g_Na * m * (V - p.E_Na)
          - p.g_K * n * (V - p.E_K) - p.g_M * nM * (V - p.E_K)) / p.C
    dn = (boltzmann(V, p.n_inf) - n) / p.tau
    dnM = (boltzmann(V, p.n_inf_M) - nM) / p.tau_M
    return ModelState(dV, dn, dnM)


def default_initial_state(p: InapIkIkmParams) -> ModelState:
    """Rest-like start at the leak reversal with gates at steady state."""
    return ModelState(p.E_L, boltzmann(p.E_L, p.n_inf), boltzmann(p.E_L, p.n_inf_M))


# --------------------------------------------------------------------------
# compiled kernels; p is InapIkIkmParams.vector(), fast kernels append nM

@njit(cache=True)
def _bz(V, vh, k):
    z = (vh - V) / k
    if z > _EXP_CLAMP:
        z = _EXP_CLAMP
    elif z < -_EXP_CLAMP:
        z = -_EXP_CLAMP
    return 1.0 / (1.0 + np.exp(z))


@njit(cache=True)
def _dV(V, n, nM, p):
    return (p[16] - p[4] * (V - p[1]) - p[5] * _bz(V, p[8], p[9]) * (V - p[2])
            - p[6] * n * (V - p[3]) - p[7] * nM * (V - p[3])) / p[0]


@njit(cache=True)
def model_kernel(t, x, p):
    out = np.empty(3)
    V = x[0]
    out[0] = _dV(V, x[1], x[2], p)
    out[1] = (_bz(V, p[10], p[11]) - x[1]) / p[14]
    out[2] = (_bz(V, p[12], p[13]) - x[2]) / p[15]
    return out


@njit(cache=True)
def model_fast_kernel(t, x, p):
    out = np.empty(2)
    V = x[0]
    out[0] = _dV(V, x[1], p[17], p)
    out[1] = (_bz(V, p[10], p[11]) - x[1]) / p[14]
    return out


def model_system(p: InapIkIkmParams) -> DynamicalSystem:
    def rhs(t, x):
        return np.array(model_rhs(x, p))

    return DynamicalSystem(
        labels=("V", "n", "nM"), rhs=rhs, params=p.flat(),
        kernel=model_kernel, kernel_params=p.vector(), time_scale=p.tau,
    )


@dataclass(frozen=True)
class FastSubsystem(DynamicalSystem):
    """Planar fast subsystem with the slow variable pinned.

    ``frozen_param`` holds the pinned slow value; ``base`` is the parent
    three-dimensional system. ``x_range``/``y_range`` give the default
    analysis window.
    """

    base: DynamicalSystem | None = None
    frozen_param: float = 0.0
    frozen_label: str = ""
    x_range: tuple[float, float] = (0.0, 1.0)
    y_range: tuple[float, float] = (0.0, 1.0)
    mu: float = float("nan")
    family: object = None

    def at(self, value: float) -> "FastSubsystem":
        """The same family evaluated at another frozen value."""
        if self.family is None:
            raise ValueError("fast subsystem carries no family constructor")
        fs = self.family(value)
        return fs.reversed() if self.sign < 0 else fs


MODEL_X_RANGE = (-90.0, 30.0)
MODEL_Y_RANGE = (-0.1, 1.1)


def fast_subsystem(p: InapIkIkmParams, nM_frozen: float) -> FastSubsystem:
    """Dissected (V, n) subsystem with nM held at ``nM_frozen``.

    The frozen slow current enters as the constant conductance
    ``g_M * nM_frozen`` on the potassium driving force.
    """
    nM_frozen = float(nM_frozen)

    def rhs(t, x):
        d = model_rhs((x[0], x[1], nM_frozen), p)
        return np.array([d.V, d.n])

    kp = np.append(p.vector(), nM_frozen)
    return FastSubsystem(
        labels=("V", "n"), rhs=rhs, params={**p.flat(), "nM": nM_frozen},
        kernel=model_fast_kernel, kernel_params=kp, time_scale=p.tau,
        base=model_system(p), frozen_param=nM_frozen, frozen_label="nM",
        x_range=MODEL_X_RANGE, y_range=MODEL_Y_RANGE, mu=p.mu,
        family=lambda v: fast_subsystem(p, v),
    )


def load_model_config(path) -> InapIkIkmParams:
    values = parse_kv(Path(path).read_text(), allowed=MODEL_KEYS, source=str(path))
    return InapIkIkmParams.from_flat(values)


def save_model_config(p: InapIkIkmParams, path, header: str = "") -> None:
    from .dynsys import write_atomic

    write_atomic(path, format_kv(p.flat(), header=header))
