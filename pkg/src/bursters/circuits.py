"""Square-law MOSFET circuits that burst.

Both circuits share the same three state variables: the output node voltage
``Vout`` across C1, ``VGS1`` across C2 (gate of the fast potassium-like
device Q1) and ``VGS2`` across C3 (gate of the slow device Q4). A two-device
negative-differential-resistance (NNDR) branch between the supply ``V_dc``
and the output node supplies the regenerative inward current.

All quantities are SI (V, A, F, ohm, s).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np
from numba import njit

from .config import ConfigError, format_kv, parse_kv
from .dynsys import DynamicalSystem, write_atomic
from .models import FastSubsystem

__all__ = [
    "NMOS",
    "PMOS",
    "MosfetParams",
    "Terminals",
    "NndrBranch",
    "CircuitParams",
    "CircuitState",
    "TopologyInfeasible",
    "mosfet_current",
    "nndr_current",
    "nndr_sweep",
    "circuit_a_rhs",
    "circuit_b_rhs",
    "circuit_system",
    "circuit_fast_subsystem",
    "load_circuit_config",
    "save_circuit_config",
    "DEFAULT_TOPOLOGY",
]

NMOS, PMOS = "NMOS", "PMOS"
NODES = ("vdc", "out", "x", "gnd")


class TopologyInfeasible(ValueError):
    """The NNDR internal node has no current-balance solution."""


@dataclass(frozen=True)
class MosfetParams:
    """Level-1 device parameters.

    ``Vt0`` is a signed threshold in the device's own polarity: an NMOS with
    ``Vt0 < 0`` and a PMOS with ``Vt0 > 0`` are depletion devices that
    conduct at zero gate-source voltage.
    """

    polarity: str
    K: float
    Vt0: float
    lam: float = 0.0

    def __post_init__(self):
        if self.polarity not in (NMOS, PMOS):
            raise ValueError(f"polarity must be NMOS or PMOS, got {self.polarity!r}")
        if not self.K > 0:
            raise ValueError("K must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


@njit(cache=True)
def _ids_n(K, vt, lam, vgs, vds, f):
    # symmetric device: for vds < 0 the roles of drain and source swap
    if vds < 0.0:
        return -_ids_n(K, vt, lam, vgs - vds, -vds, f)
    vov = vgs - vt
    if vov <= 0.0:
        return 0.0
    if vds < vov:
        return f * K * (2.0 * vov * vds - vds * vds) * (1.0 + lam * vds)
    return f * K * vov * vov * (1.0 + lam * vds)


@njit(cache=True)
def _ids(pol, K, vt, lam, vgs, vds, f):
    # PMOS by reflection: negate terminal voltages and threshold
    if pol > 0.0:
        return _ids_n(K, vt, lam, vgs, vds, f)
    return -_ids_n(K, -vt, lam, -vgs, -vds, f)


def mosfet_current(m: MosfetParams, v_gs: float, v_ds: float, half_factor: bool = True) -> float:
    """Drain-to-source current of a square-law device.

    Parameters
    ----------
    m : MosfetParams
    v_gs, v_ds : float
        Gate-source and drain-source voltages (V).
    half_factor : bool
        If true the saturation current is ``K/2 * v_ov**2``, otherwise
        ``K * v_ov**2``. Channel-length modulation ``(1 + lam*v_ds)``
        multiplies both triode and saturation branches.

    Returns
    -------
    float
        Current in A, positive when flowing from drain to source.
    """
    pol = 1.0 if m.polarity == NMOS else -1.0
    return float(_ids(pol, m.K, m.Vt0, m.lam, float(v_gs), float(v_ds), 0.5 if half_factor else 1.0))


class Terminals(NamedTuple):
    drain: str
    gate: str
    source: str


DEFAULT_TOPOLOGY = {
    "q2": Terminals(drain="out", gate="vdc", source="x"),
    "q3": Terminals(drain="vdc", gate="out", source="x"),
}


@dataclass(frozen=True)
class NndrBranch:
    """Two-device branch between ``V_dc`` and the output node.

    ``topology`` maps each device name to its (drain, gate, source) nodes
    chosen from ``vdc``, ``out``, ``x`` (the internal series node) and
    ``gnd``.
    """

    q2: MosfetParams
    q3: MosfetParams
    v_dc: float
    topology: Mapping[str, Terminals] = field(default_factory=lambda: dict(DEFAULT_TOPOLOGY))
    half_factor: bool = True

    def __post_init__(self):
        topo = {k: Terminals(*v) for k, v in self.topology.items()}
        if set(topo) != {"q2", "q3"}:
            raise ValueError("topology must assign terminals for q2 and q3")
        for name, t in topo.items():
            for node in t:
                if node not in NODES:
                    raise ValueError(f"{name}: unknown node {node!r}; expected one of {NODES}")
            if "x" not in (t.drain, t.source):
                raise ValueError(f"{name}: the internal node must be a drain or source")
        object.__setattr__(self, "topology", topo)

    def device_table(self) -> np.ndarray:
        """Rows ``(polarity, K, Vt0, lambda, drain, gate, source)`` for the kernels."""
        rows = []
        for name in ("q2", "q3"):
            m, t = getattr(self, name), self.topology[name]
            rows.append([1.0 if m.polarity == NMOS else -1.0, m.K, m.Vt0, m.lam,
                         NODES.index(t.drain), NODES.index(t.gate), NODES.index(t.source)])
        return np.array(rows, dtype=float)


@njit(cache=True)
def _node(idx, vdc, vout, x):
    if idx == 0:
        return vdc
    if idx == 1:
        return vout
    if idx == 2:
        return x
    return 0.0


@njit(cache=True)
def _into(dev, node, vdc, vout, x, f):
    """Sum of device currents flowing into ``node``."""
    total = 0.0
    for k in range(dev.shape[0]):
        d = int(dev[k, 4])
        g = int(dev[k, 5])
        s = int(dev[k, 6])
        if d != node and s != node:
            continue
        vd = _node(d, vdc, vout, x)
        vg = _node(g, vdc, vout, x)
        vs = _node(s, vdc, vout, x)
        i = _ids(dev[k, 0], dev[k, 1], dev[k, 2], dev[k, 3], vg - vs, vd - vs, f)
        if s == node:
            total += i
        if d == node:
            total -= i
    return total


@njit(cache=True)
def _nndr(vout, vdc, dev, f):
    """Current into the output node; NaN when the internal node has no solution."""
    lo = min(0.0, vout, vdc)
    hi = max(0.0, vout, vdc)
    rlo = _into(dev, 2, vdc, vout, lo, f)
    rhi = _into(dev, 2, vdc, vout, hi, f)
    if rlo == 0.0:
        return _into(dev, 1, vdc, vout, lo, f)
    if rhi == 0.0:
        return _into(dev, 1, vdc, vout, hi, f)
    if (rlo > 0.0) == (rhi > 0.0):
        return np.nan
    # bisect to floating-point resolution; the residual then sits far below 1e-12 A
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        rmid = _into(dev, 2, vdc, vout, mid, f)
        if rmid == 0.0:
            lo = mid
            hi = mid
            rlo = 0.0
            rhi = 0.0
            break
        if (rmid > 0.0) == (rlo > 0.0):
            lo = mid
            rlo = rmid
        else:
            hi = mid
            rhi = rmid
    if rhi != rlo:
        x = lo - rlo * (hi - lo) / (rhi - rlo)
        if not lo <= x <= hi:
            x = 0.5 * (lo + hi)
    else:
        x = lo
    return _into(dev, 1, vdc, vout, x, f)


@njit(cache=True)
def _nndr_many(vouts, vdc, dev, f):
    out = np.empty(vouts.shape[0])
    for i in range(vouts.shape[0]):
        out[i] = _nndr(vouts[i], vdc, dev, f)
    return out


def nndr_current(b: NndrBranch, v_out: float) -> float:
    """DC current delivered by the branch into the output node (A).

    The internal node voltage is found by bisection of its current balance
    over ``[min(0, v_out, v_dc), max(0, v_out, v_dc)]``.

    Raises
    ------
    TopologyInfeasible
        If the balance residual does not change sign on that interval.
    """
    if not np.isfinite(v_out):
        raise ValueError("v_out must be finite")
    i = _nndr(float(v_out), b.v_dc, b.device_table(), 0.5 if b.half_factor else 1.0)
    if np.isnan(i):
        raise TopologyInfeasible(f"no internal-node solution at v_out={v_out!r}; check the terminal assignment")
    return float(i)


def nndr_sweep(b: NndrBranch, v_out: np.ndarray) -> np.ndarray:
    """Vectorised :func:`nndr_current`; raises on any infeasible point."""
    v = np.ascontiguousarray(v_out, dtype=float)
    out = _nndr_many(v, b.v_dc, b.device_table(), 0.5 if b.half_factor else 1.0)
    bad = np.isnan(out)
    if bad.any():
        raise TopologyInfeasible(f"no internal-node solution at v_out={v[bad][0]!r}")
    return out


@dataclass(frozen=True)
class CircuitParams:
    """Component values of either circuit.

    ``R3`` is the leak resistor; ``None`` removes it (the Hopf-type circuit).
    """

    C1: float
    C2: float
    C3: float
    R1: float
    R2: float
    R3: float | None
    v_dc: float
    I: float
    q1: MosfetParams
    q4: MosfetParams
    nndr: NndrBranch

    def __post_init__(self):
        if min(self.C1, self.C2, self.C3, self.R1, self.R2) <= 0:
            raise ValueError("capacitances and resistances must be positive")
        if self.R3 is not None and self.R3 <= 0:
            raise ValueError("R3 must be positive when present")
        if self.nndr.v_dc != self.v_dc:
            raise ValueError("NNDR supply differs from circuit supply")

    @property
    def half_factor(self) -> bool:
        return self.nndr.half_factor

    @property
    def fast_time(self) -> float:
        return self.R1 * self.C2

    @property
    def slow_time(self) -> float:
        return self.R2 * self.C3

    @property
    def mu(self) -> float:
        return self.fast_time / self.slow_time

    def with_(self, **changes) -> "CircuitParams":
        if "v_dc" in changes:
            changes.setdefault("nndr", replace(self.nndr, v_dc=changes["v_dc"]))
        return replace(self, **changes)

    def vector(self) -> np.ndarray:
        f = 0.5 if self.half_factor else 1.0
        g3 = 0.0 if self.R3 is None else 1.0 / self.R3
        head = [self.C1, self.C2, self.C3, self.R1, self.R2, g3, self.v_dc, self.I, f]
        for m in (self.q1, self.q4):
            head += [1.0 if m.polarity == NMOS else -1.0, m.K, m.Vt0, m.lam]
        return np.concatenate([np.array(head), self.nndr.device_table().ravel()])

    def flat(self) -> dict:
        d: dict = {"C1": self.C1, "C2": self.C2, "C3": self.C3, "R1": self.R1, "R2": self.R2}
        if self.R3 is not None:
            d["R3"] = self.R3
        d.update({"V_dc": self.v_dc, "I": self.I})
        for name in ("q1", "q2", "q3", "q4"):
            m = getattr(self.nndr, name) if name in ("q2", "q3") else getattr(self, name)
            d[f"{name}.polarity"] = m.polarity
            d[f"{name}.K"] = m.K
            d[f"{name}.Vt0"] = m.Vt0
            d[f"{name}.lambda"] = m.lam
        for name in ("q2", "q3"):
            t = self.nndr.topology[name]
            d[f"{name}.drain"] = t.drain
            d[f"{name}.gate"] = t.gate
            d[f"{name}.source"] = t.source
        d["half_factor"] = self.half_factor
        return d


class CircuitState(NamedTuple):
    Vout: float
    VGS1: float
    VGS2: float


# p layout: C1 C2 C3 R1 R2 G3 Vdc I f | q1(pol K Vt0 lam) | q4(...) | nndr table (2x7) | [VGS2]
_NNDR0 = 17


@njit(cache=True)
def _dvout(vout, g1, g2, p):
    dev = p[_NNDR0:_NNDR0 + 14].reshape((2, 7))
    f = p[8]
    i1 = _ids(p[9], p[10], p[11], p[12], g1, vout, f)
    i4 = _ids(p[13], p[14], p[15], p[16], g2, vout, f)
    i3 = _nndr(vout, p[6], dev, f)
    return (p[7] - (vout - g1) / p[3] - i1 + i3 - (vout - g2) / p[4] - i4 - vout * p[5]) / p[0]


@njit(cache=True)
def circuit_kernel(t, x, p):
    out = np.empty(3)
    out[0] = _dvout(x[0], x[1], x[2], p)
    out[1] = (x[0] - x[1]) / (p[1] * p[3])
    out[2] = (x[0] - x[2]) / (p[2] * p[4])
    return out


@njit(cache=True)
def circuit_fast_kernel(t, x, p):
    out = np.empty(2)
    out[0] = _dvout(x[0], x[1], p[_NNDR0 + 14], p)
    out[1] = (x[0] - x[1]) / (p[1] * p[3])
    return out


def _circuit_rhs(state, p: CircuitParams) -> CircuitState:
    vout, g1, g2 = (float(v) for v in state)
    i1 = mosfet_current(p.q1, g1, vout, p.half_factor)
    i4 = mosfet_current(p.q4, g2, vout, p.half_factor)
    i3 = nndr_current(p.nndr, vout)
    leak = 0.0 if p.R3 is None else vout / p.R3
    dvout = (p.I - (vout - g1) / p.R1 - i1 + i3 - (vout - g2) / p.R2 - i4 - leak) / p.C1
    return CircuitState(dvout, (vout - g1) / (p.C2 * p.R1), (vout - g2) / (p.C3 * p.R2))


def circuit_a_rhs(state, p: CircuitParams) -> CircuitState:
    """Vector field of the leaky (saddle-node/homoclinic) circuit."""
    if p.R3 is None:
        raise ValueError("circuit A needs the leak resistor R3")
    return _circuit_rhs(state, p)


def circuit_b_rhs(state, p: CircuitParams) -> CircuitState:
    """Vector field of the leak-free (Hopf/fold-cycle) circuit.

    The injected current ``I`` is kept, since the circuit's behaviour is
    studied as a function of it.
    """
    if p.R3 is not None:
        raise ValueError("circuit B has no leak resistor; set R3=None")
    return _circuit_rhs(state, p)


def circuit_system(p: CircuitParams) -> DynamicalSystem:
    def rhs(t, x):
        return np.array(_circuit_rhs(x, p))

    return DynamicalSystem(
        labels=("Vout", "VGS1", "VGS2"), rhs=rhs, params=p.flat(),
        kernel=circuit_kernel, kernel_params=p.vector(), time_scale=p.fast_time,
    )


def circuit_fast_subsystem(p: CircuitParams, vgs2_frozen: float) -> FastSubsystem:
    """Planar (Vout, VGS1) subsystem with ``VGS2`` pinned."""
    vgs2_frozen = float(vgs2_frozen)

    def rhs(t, x):
        d = _circuit_rhs((x[0], x[1], vgs2_frozen), p)
        return np.array([d.Vout, d.VGS1])

    return FastSubsystem(
        labels=("Vout", "VGS1"), rhs=rhs, params={**p.flat(), "VGS2": vgs2_frozen},
        kernel=circuit_fast_kernel, kernel_params=np.append(p.vector(), vgs2_frozen),
        time_scale=p.fast_time, base=circuit_system(p), frozen_param=vgs2_frozen,
        frozen_label="VGS2", x_range=(0.0, p.v_dc), y_range=(0.0, p.v_dc), mu=p.mu,
        family=lambda v: circuit_fast_subsystem(p, v),
    )


def default_circuit_state() -> CircuitState:
    return CircuitState(0.0, 0.0, 0.0)


# --------------------------------------------------------------------------
# config files

_DEVICE_FIELDS = ("polarity", "K", "Vt0", "lambda")
_TERMINAL_FIELDS = ("drain", "gate", "source")
_DEFAULT_POLARITY = {"q1": NMOS, "q2": PMOS, "q3": NMOS, "q4": NMOS}


def _allowed_circuit_key(key: str) -> bool:
    if key in ("C1", "C2", "C3", "R1", "R2", "R3", "V_dc", "I", "half_factor"):
        return True
    dev, _, fld = key.partition(".")
    if dev in _DEFAULT_POLARITY and fld in _DEVICE_FIELDS:
        return True
    return dev in ("q2", "q3") and fld in _TERMINAL_FIELDS


def _string_circuit_key(key: str) -> bool:
    return key == "half_factor" or key.endswith((".polarity", ".drain", ".gate", ".source"))


def circuit_from_flat(d: Mapping, source: str = "<config>") -> CircuitParams:
    required = ["C1", "C2", "C3", "R1", "R2", "V_dc", "I"]
    required += [f"q{i}.{f}" for i in range(1, 5) for f in ("K", "Vt0", "lambda")]
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError(f"{source}: missing key(s): {', '.join(missing)}")

    def device(name):
        pol = str(d.get(f"{name}.polarity", _DEFAULT_POLARITY[name])).upper()
        try:
            return MosfetParams(pol, d[f"{name}.K"], d[f"{name}.Vt0"], d[f"{name}.lambda"])
        except ValueError as exc:
            raise ConfigError(f"{source}: {name}: {exc}") from None

    half = str(d.get("half_factor", "true")).lower()
    if half not in ("true", "false"):
        raise ConfigError(f"{source}: key 'half_factor' must be true or false, got {half!r}")
    topo = {}
    for name in ("q2", "q3"):
        topo[name] = Terminals(*(str(d.get(f"{name}.{f}", getattr(DEFAULT_TOPOLOGY[name], f)))
                                 for f in _TERMINAL_FIELDS))
    try:
        branch = NndrBranch(device("q2"), device("q3"), d["V_dc"], topo, half == "true")
        return CircuitParams(d["C1"], d["C2"], d["C3"], d["R1"], d["R2"], d.get("R3"),
                             d["V_dc"], d["I"], device("q1"), device("q4"), branch)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_circuit_config(path) -> CircuitParams:
    d = parse_kv(Path(path).read_text(), allowed=_allowed_circuit_key, source=str(path),
                 string_keys=_string_circuit_key)
    return circuit_from_flat(d, str(path))


def save_circuit_config(p: CircuitParams, path, header: str = "") -> None:
    write_atomic(path, format_kv(p.flat(), header=header))
