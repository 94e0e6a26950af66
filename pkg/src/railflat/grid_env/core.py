"""Discrete-time multi-agent railway grid world.

Cells carry a 16-bit transition bitmap: for every heading an agent may have
while inside the cell, the set of headings it may leave with. Bit index is
``15 - (in_dir * 4 + out_dir)`` so the most significant bit is (N -> N).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

Position = tuple[int, int]


class RailEnvError(Exception):
    """Base class for simulator errors."""


class UnknownAgentError(RailEnvError, KeyError):
    pass


class AgentStateError(RailEnvError):
    pass


class TerminalStateError(RailEnvError):
    pass


class Direction(enum.IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3

    def left(self) -> "Direction":
        return Direction((self + 3) % 4)

    def right(self) -> "Direction":
        return Direction((self + 1) % 4)

    def opposite(self) -> "Direction":
        return Direction((self + 2) % 4)

    @property
    def delta(self) -> Position:
        return _DELTAS[self]


_DELTAS = {
    Direction.NORTH: (-1, 0),
    Direction.EAST: (0, 1),
    Direction.SOUTH: (1, 0),
    Direction.WEST: (0, -1),
}


_DELTA_LIST = tuple(_DELTAS[d] for d in Direction)


def neighbor(pos: Position, direction: int) -> Position:
    dr, dc = _DELTA_LIST[direction]
    return (pos[0] + dr, pos[1] + dc)


class RailAction(enum.IntEnum):
    """Agent actions. The first four values double as observation indices."""

    MOVE_FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3
    DO_NOTHING = 4


MOVEMENT_ACTIONS = (RailAction.MOVE_FORWARD, RailAction.TURN_LEFT, RailAction.TURN_RIGHT)


class AgentStatus(enum.Enum):
    READY = "ready"
    ACTIVE = "active"
    ARRIVED = "arrived"


def transition_bit(in_dir: int, out_dir: int) -> int:
    return 1 << (15 - (in_dir * 4 + out_dir))


@lru_cache(maxsize=None)
def cell_exits(bits: int, heading: int) -> tuple[Direction, ...]:
    """Outgoing headings allowed for an agent inside a cell with ``heading``."""
    return tuple(Direction(out) for out in range(4) if bits & transition_bit(heading, out))


@lru_cache(maxsize=None)
def cell_is_switch(bits: int) -> bool:
    return any(len(cell_exits(bits, h)) >= 2 for h in range(4))


@lru_cache(maxsize=None)
def maneuver_exits(bits: int, heading: int) -> tuple[tuple[RailAction, Direction], ...]:
    """Map the directional actions onto exits, one action per distinct exit.

    MoveForward takes the straight exit or, when the cell has a single exit,
    that exit. Left/right take the relative exits. When two actions reach
    the same exit only the first of (forward, left, right) is kept.
    """
    exits = cell_exits(bits, heading)
    h = Direction(heading)
    found: list[tuple[RailAction, Direction]] = []
    if h in exits:
        found.append((RailAction.MOVE_FORWARD, h))
    elif len(exits) == 1:
        found.append((RailAction.MOVE_FORWARD, exits[0]))
    for action, out in ((RailAction.TURN_LEFT, h.left()), (RailAction.TURN_RIGHT, h.right())):
        if out in exits and all(out != o for _, o in found):
            found.append((action, out))
    return tuple(found)


def exit_for_action(bits: int, heading: int, action: RailAction) -> Direction | None:
    """Exit taken by ``action``; ``None`` if the action has no exit here."""
    exits = cell_exits(bits, heading)
    h = Direction(heading)
    if action == RailAction.MOVE_FORWARD:
        if h in exits:
            return h
        if len(exits) == 1:
            return exits[0]
        return None
    if action == RailAction.TURN_LEFT:
        return h.left() if h.left() in exits else None
    if action == RailAction.TURN_RIGHT:
        return h.right() if h.right() in exits else None
    return None


@dataclass(frozen=True)
class TransitionCell:
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF:
            raise ValueError(f"transition bitmap out of range: {self.bits}")

    @classmethod
    def from_pieces(cls, pieces: Iterable[tuple[int, int]]) -> "TransitionCell":
        """Build a cell from undirected track pieces, each joining two sides."""
        bits = 0
        for a, b in pieces:
            bits |= transition_bit(Direction(a).opposite(), b)
            bits |= transition_bit(Direction(b).opposite(), a)
        return cls(bits)

    @property
    def is_empty(self) -> bool:
        return self.bits == 0

    @property
    def is_switch(self) -> bool:
        return cell_is_switch(self.bits)

    def exits(self, heading: int) -> tuple[Direction, ...]:
        return cell_exits(self.bits, heading)

    def __str__(self) -> str:
        return f"{self.bits:04x}"


class RailGrid:
    """Immutable rail layout plus per-grid caches used by routing."""

    def __init__(self, cells: np.ndarray, stations: Iterable[Position] = ()):
        cells = np.array(cells, dtype=np.uint16)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2-d array")
        cells.setflags(write=False)
        self.cells = cells
        self.height, self.width = cells.shape
        self.stations: tuple[Position, ...] = tuple((int(r), int(c)) for r, c in stations)
        self._station_set = frozenset(self.stations)
        self._bits = cells.tolist()
        self.route_cache: dict = {}
        self._successors: dict = {}

    def __repr__(self) -> str:
        return f"RailGrid({self.width}x{self.height}, stations={len(self.stations)})"

    def in_bounds(self, pos: Position) -> bool:
        return 0 <= pos[0] < self.height and 0 <= pos[1] < self.width

    def bits(self, pos: Position) -> int:
        return self._bits[pos[0]][pos[1]]

    def cell(self, pos: Position) -> TransitionCell:
        return TransitionCell(self.bits(pos))

    def is_switch(self, pos: Position) -> bool:
        return cell_is_switch(self.bits(pos))

    def is_station(self, pos: Position) -> bool:
        return pos in self._station_set

    def exits(self, pos: Position, heading: int) -> tuple[Direction, ...]:
        return cell_exits(self.bits(pos), heading)

    def successors(self, pos: Position, heading: int) -> tuple[tuple[Direction, Position], ...]:
        """(exit heading, next cell) pairs reachable in one move."""
        key = (pos, heading)
        succ = self._successors.get(key)
        if succ is None:
            succ = tuple((out, neighbor(pos, out)) for out in self.exits(pos, heading))
            self._successors[key] = succ
        return succ

    def switches(self) -> list[Position]:
        return [
            (r, c)
            for r in range(self.height)
            for c in range(self.width)
            if cell_is_switch(self._bits[r][c])
        ]

    def same_layout(self, other: "RailGrid") -> bool:
        return np.array_equal(self.cells, other.cells) and self.stations == other.stations


@dataclass
class AgentState:
    id: int
    position: Position
    direction: Direction
    speed: Fraction
    target: Position
    progress: Fraction = Fraction(0)
    status: AgentStatus = AgentStatus.READY
    moving: bool = False
    initial_position: Position | None = None
    initial_direction: Direction | None = None

    def __post_init__(self):
        self.speed = Fraction(self.speed)
        self.progress = Fraction(self.progress)
        self.direction = Direction(self.direction)
        if not 0 < self.speed <= 1:
            raise ValueError(f"agent {self.id}: speed {self.speed} outside (0, 1]")
        if self.initial_position is None:
            self.initial_position = self.position
        if self.initial_direction is None:
            self.initial_direction = self.direction


@dataclass
class EnvState:
    grid: RailGrid
    agents: list[AgentState]
    timestep: int = 0
    max_steps: int = 0
    rng_seed: int = 0
    _index: dict[int, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.max_steps <= 0:
            self.max_steps = default_max_steps(self.grid.width, self.grid.height, len(self.agents))
        self._index = {a.id: i for i, a in enumerate(self.agents)}

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def agent(self, agent_id: int) -> AgentState:
        try:
            return self.agents[self._index[agent_id]]
        except KeyError:
            raise UnknownAgentError(agent_id) from None

    @property
    def done(self) -> bool:
        return self.timestep >= self.max_steps or all(
            a.status is AgentStatus.ARRIVED for a in self.agents
        )

    def occupancy(self) -> dict[Position, int]:
        return {a.position: a.id for a in self.agents if a.status is AgentStatus.ACTIVE}

    def copy(self) -> "EnvState":
        return EnvState(
            grid=self.grid,
            agents=[replace(a) for a in self.agents],
            timestep=self.timestep,
            max_steps=self.max_steps,
            rng_seed=self.rng_seed,
        )

    def trace_key(self) -> tuple:
        """Hashable snapshot used by determinism checks."""
        return (
            self.timestep,
            tuple(
                (a.id, a.position, int(a.direction), a.progress, a.status.value, a.moving)
                for a in self.agents
            ),
        )


def default_max_steps(width: int, height: int, n_agents: int) -> int:
    return 8 * (width + height + n_agents)


def valid_actions(state: EnvState, agent_id: int) -> frozenset[RailAction]:
    agent = state.agent(agent_id)
    if agent.status is AgentStatus.ARRIVED:
        raise AgentStateError(f"agent {agent_id} has already arrived")
    if agent.status is AgentStatus.READY:
        return frozenset({RailAction.MOVE_FORWARD, RailAction.STOP, RailAction.DO_NOTHING})
    bits = state.grid.bits(agent.position)
    actions = {RailAction.STOP, RailAction.DO_NOTHING}
    for action in MOVEMENT_ACTIONS:
        if exit_for_action(bits, agent.direction, action) is not None:
            actions.add(action)
    return frozenset(actions)


def step(
    state: EnvState, actions: Mapping[int, RailAction]
) -> tuple[EnvState, dict[int, int], bool]:
    """Advance one timestep. Returns the new state, per-agent rewards and done."""
    if state.done:
        raise TerminalStateError("episode already finished")
    for agent_id in actions:
        state.agent(agent_id)

    new = state.copy()
    grid = new.grid
    rewards = {a.id: (0 if a.status is AgentStatus.ARRIVED else -1) for a in new.agents}
    occupied = new.occupancy()
    # agent id -> (cell, heading after the move, is_entry)
    intents: dict[int, tuple[Position, Direction, bool]] = {}

    for agent in sorted(new.agents, key=lambda a: a.id):
        if agent.status is AgentStatus.ARRIVED:
            continue
        action = RailAction(actions.get(agent.id, RailAction.DO_NOTHING))
        if agent.status is AgentStatus.READY:
            if action in MOVEMENT_ACTIONS:
                intents[agent.id] = (agent.initial_position, agent.initial_direction, True)
            continue

        if action == RailAction.DO_NOTHING:
            action = RailAction.MOVE_FORWARD if agent.moving else RailAction.STOP
        out = None
        if action in MOVEMENT_ACTIONS:
            out = exit_for_action(grid.bits(agent.position), agent.direction, action)
            if out is None:
                logger.debug("agent %d: %s invalid at %s, coerced to STOP", agent.id, action.name, agent.position)
                action = RailAction.STOP
        if action == RailAction.STOP:
            agent.moving = False
            continue

        agent.moving = True
        if agent.progress + agent.speed >= 1:
            intents[agent.id] = (neighbor(agent.position, out), out, False)
        else:
            agent.progress += agent.speed

    pending = sorted(intents)
    for _ in range(2):  # first pass plus one re-scan for vacated cells
        blocked = []
        for agent_id in pending:
            cell, heading, entering = intents[agent_id]
            if cell in occupied:
                blocked.append(agent_id)
                continue
            agent = new.agent(agent_id)
            if entering:
                agent.status = AgentStatus.ACTIVE
                agent.progress = Fraction(0)
                agent.moving = True
            else:
                del occupied[agent.position]
                agent.progress = agent.progress + agent.speed - 1
            agent.position = cell
            agent.direction = heading
            if cell == agent.target:
                agent.status = AgentStatus.ARRIVED
                agent.moving = False
            else:
                occupied[cell] = agent_id
        pending = blocked

    new.timestep += 1
    return new, rewards, new.done


def detect_deadlock(state: EnvState) -> set[int]:
    """Largest set of active agents whose every exit cell is held by the set."""
    occupied = state.occupancy()
    active = {a.id: a for a in state.agents if a.status is AgentStatus.ACTIVE}
    members = set(active)
    changed = True
    while changed:
        changed = False
        for agent_id in sorted(members):
            agent = active[agent_id]
            for _, cell in state.grid.successors(agent.position, agent.direction):
                holder = occupied.get(cell)
                if holder is None or holder not in members or holder == agent_id:
                    members.discard(agent_id)
                    changed = True
                    break
    return members
