"""Railway grid world: layout, agents, stepping, map files and generation."""

from .core import (
    MOVEMENT_ACTIONS,
    AgentState,
    AgentStateError,
    AgentStatus,
    Direction,
    EnvState,
    Position,
    RailAction,
    RailEnvError,
    RailGrid,
    TerminalStateError,
    TransitionCell,
    UnknownAgentError,
    cell_exits,
    cell_is_switch,
    default_max_steps,
    detect_deadlock,
    exit_for_action,
    maneuver_exits,
    neighbor,
    step,
    transition_bit,
    valid_actions,
)
from .generator import GenerationError, generate_map
from .mapfile import (
    CellCodeError,
    EmptyGridError,
    MalformedHeaderError,
    MapFormatError,
    OffRailError,
    ReciprocityError,
    StationError,
    check_reciprocity,
    dump_map,
    load_map,
)

__all__ = [
    "MOVEMENT_ACTIONS",
    "AgentState",
    "AgentStateError",
    "AgentStatus",
    "CellCodeError",
    "Direction",
    "EmptyGridError",
    "EnvState",
    "GenerationError",
    "MalformedHeaderError",
    "MapFormatError",
    "OffRailError",
    "Position",
    "RailAction",
    "RailEnvError",
    "RailGrid",
    "ReciprocityError",
    "StationError",
    "TerminalStateError",
    "TransitionCell",
    "UnknownAgentError",
    "cell_exits",
    "cell_is_switch",
    "check_reciprocity",
    "default_max_steps",
    "detect_deadlock",
    "dump_map",
    "exit_for_action",
    "generate_map",
    "load_map",
    "maneuver_exits",
    "neighbor",
    "step",
    "transition_bit",
    "valid_actions",
]
