"""Slow-fast bursting neuron models and circuits with dissection tools.

Three-variable conductance models and their MOSFET circuit analogues are
integrated, dissected into planar fast subsystems, and analysed with
nullclines, equilibria, limit cycles and one-parameter bifurcation diagrams.
"""

__version__ = "0.1.0"

from .bifurcation import BifurcationDiagram, build_diagram, classify_burster
from .dynsys import DynamicalSystem, IntegratorConfig, Trajectory, integrate
from .metrics import analyse, burst_statistics, detect_spikes, segment_bursts
from .phase import compute_nullclines, find_equilibria, find_limit_cycle
from .systems import SYSTEM_NAMES, SystemSpec, get_system

__all__ = [
    "__version__",
    "BifurcationDiagram",
    "DynamicalSystem",
    "IntegratorConfig",
    "SYSTEM_NAMES",
    "SystemSpec",
    "Trajectory",
    "analyse",
    "build_diagram",
    "burst_statistics",
    "classify_burster",
    "compute_nullclines",
    "detect_spikes",
    "find_equilibria",
    "find_limit_cycle",
    "get_system",
    "integrate",
    "segment_bursts",
]
