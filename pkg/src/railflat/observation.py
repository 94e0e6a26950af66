"""Four-value switch observation: (forward, left, right, stop).

Each component is a normalized estimated time, lower meaning better. For a
maneuver k the value averages the agent's own arrival estimates over the
conflicts that the pairwise model resolves by proceeding along branch k;
the stop value is the smallest, over branches, of the worst yield time among
conflicts resolved by stopping. Missing branches and empty stop sets are
capped at 1.0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .conflict import (
    ConflictGeometry,
    PathPair,
    SectionError,
    conflict_geometry,
    critical_section,
    detect_conflict,
)
from .grid_env.core import AgentStatus, EnvState, RailAction
from .hmodel import INF, Resolution, Time, estimated_times, resolve
from .routing import Route, agent_node, branch_routes, forward_successor

logger = logging.getLogger(__name__)

MANEUVERS = (RailAction.MOVE_FORWARD, RailAction.TURN_LEFT, RailAction.TURN_RIGHT)
STOP_INDEX = 3
OBS_DIM = 4


@dataclass(frozen=True)
class ConflictEntry:
    other_id: int
    pair: PathPair
    geometry: ConflictGeometry
    time: Time  # raw estimate in timesteps (may be infinite)


@dataclass
class ConflictSet:
    """Conflicts per maneuver index, split by the pairwise resolution."""

    proceed: dict[int, list[ConflictEntry]] = field(default_factory=lambda: {k: [] for k in range(3)})
    stop: dict[int, list[ConflictEntry]] = field(default_factory=lambda: {k: [] for k in range(3)})

    def __len__(self) -> int:
        return sum(map(len, self.proceed.values())) + sum(map(len, self.stop.values()))


@dataclass(frozen=True)
class ObservationVector:
    values: np.ndarray
    mask: tuple[bool, bool, bool, bool]
    conflicts: ConflictSet
    routes: dict[RailAction, Route]

    def __len__(self) -> int:
        return len(self.values)


def decision_pending(state: EnvState, agent_id: int) -> bool:
    """True when the agent's next cell along MoveForward is a switch."""
    agent = state.agent(agent_id)
    if agent.status is not AgentStatus.ACTIVE:
        return False
    nxt = forward_successor(state.grid, agent_node(agent))
    return nxt is not None and state.grid.is_switch(nxt.position)


def _own_time(g: ConflictGeometry, route: Route) -> Time:
    """Train 1's time to clear the section plus its route cost after it."""
    cells = route.cells
    exit_idx = cells.index(g.s2) + 1 if g.s2 in cells else len(cells)
    rest = max(route.hops - exit_idx, 0)
    return (max(g.d1 + g.l, 0) + rest) / g.v1


def _classify(g: ConflictGeometry, route: Route) -> tuple[bool, Time]:
    """(is a stop conflict, time estimate) for train 1 on ``route``."""
    res = resolve(g)
    if res.action_1 is Resolution.STOP:
        return True, estimated_times(g)[1]
    if res.action_1 is Resolution.DEADLOCK:
        return False, INF
    return False, _own_time(g, route)


def _normalize(t: Time, horizon: int) -> float:
    if t == INF:
        return 1.0
    return float(min(max(t / horizon, 0), 1))


def build_observation(state: EnvState, agent_id: int) -> ObservationVector | None:
    if not decision_pending(state, agent_id):
        return None
    grid = state.grid
    agent = state.agent(agent_id)
    routes = branch_routes(grid, agent)
    others = [
        (a, list(branch_routes(grid, a).values()))
        for a in state.agents
        if a.id != agent_id and a.status is AgentStatus.ACTIVE
    ]

    conflicts = ConflictSet()
    for k, maneuver in enumerate(MANEUVERS):
        route = routes.get(maneuver)
        if route is None:
            continue
        for other, their_routes in others:
            for route_2 in their_routes:
                pair = detect_conflict(route, route_2)
                if pair is None:
                    continue
                try:
                    section, s1, s2 = critical_section(grid, pair)
                except SectionError as exc:
                    logger.debug("agent %d vs %d: %s", agent_id, other.id, exc)
                    continue
                g = conflict_geometry(pair, section, s1, s2, agent, other)
                is_stop, t = _classify(g, route)
                entry = ConflictEntry(other.id, pair, g, t)
                (conflicts.stop if is_stop else conflicts.proceed)[k].append(entry)

    horizon = state.max_steps
    values = np.ones(OBS_DIM)
    for k, maneuver in enumerate(MANEUVERS):
        route = routes.get(maneuver)
        if route is None:
            continue
        entries = conflicts.proceed[k]
        if entries:
            values[k] = np.mean([_normalize(e.time, horizon) for e in entries])
        else:
            values[k] = _normalize(route.cost, horizon)
    worst = [
        max(_normalize(e.time, horizon) for e in conflicts.stop[k])
        for k in range(3)
        if conflicts.stop[k]
    ]
    if worst:
        values[STOP_INDEX] = min(worst)

    mask = tuple(m in routes for m in MANEUVERS) + (True,)
    return ObservationVector(values, mask, conflicts, routes)
