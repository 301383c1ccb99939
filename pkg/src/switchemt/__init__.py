"""Fixed-step EMT simulation of ideal-switch circuits with accurate switching events."""

from .circuit import (
    Circuit,
    NetlistError,
    builtin_buckboost,
    builtin_rectifier,
    parse_netlist,
    render_netlist,
)
from .events import EventRecord, MethodId, ResolutionConfig, dislocation
from .mna import Snapshot, Tag
from .status import SwitchStatusSet
from .stepper import RunConfig, WaveformTrace, oracle_simulate, simulate

__all__ = [
    "Circuit",
    "NetlistError",
    "builtin_buckboost",
    "builtin_rectifier",
    "parse_netlist",
    "render_netlist",
    "EventRecord",
    "MethodId",
    "ResolutionConfig",
    "dislocation",
    "Snapshot",
    "Tag",
    "SwitchStatusSet",
    "RunConfig",
    "WaveformTrace",
    "oracle_simulate",
    "simulate",
]
