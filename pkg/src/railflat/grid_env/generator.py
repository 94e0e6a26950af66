"""Seeded random railway generator.

Stations are passing loops (two parallel tracks between two switches) so
trains can cross or overtake there. The loops are linked into a ring by
carved single-track lines, and a few chords are added between ring cells,
which creates extra junction switches. Every train starts eastbound, so all
trains run the ring in the same rotational sense and every station is
reachable from every start. Head-on meetings still happen on chords.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (
    AgentState,
    Direction,
    EnvState,
    Position,
    RailEnvError,
    RailGrid,
    TransitionCell,
    default_max_steps,
    neighbor,
)

LOOP_LENGTH = 6
MAX_RETRIES = 64

N, E, S, W = Direction.NORTH, Direction.EAST, Direction.SOUTH, Direction.WEST


class GenerationError(RailEnvError):
    pass


class _Retry(Exception):
    pass


@dataclass
class _Station:
    row: int  # main track row
    siding_row: int
    c0: int  # left switch column
    c1: int  # right switch column

    @property
    def position(self) -> Position:
        return (self.row, self.c0 + LOOP_LENGTH // 2)

    def footprint(self) -> set[Position]:
        rows = range(min(self.row, self.siding_row) - 1, max(self.row, self.siding_row) + 2)
        return {(r, c) for r in rows for c in range(self.c0 - 1, self.c1 + 2)}

    def start_cells(self) -> list[Position]:
        cells = [(self.row, c) for c in range(self.c0 + 1, self.c1) if c != self.position[1]]
        cells += [(self.siding_row, c) for c in range(self.c0 + 1, self.c1)]
        return cells


class _Layout:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.pieces: dict[Position, set[frozenset]] = {}
        self.reserved: set[Position] = set()
        self.switches: set[Position] = set()

    def inside(self, pos: Position) -> bool:
        return 0 <= pos[0] < self.height and 0 <= pos[1] < self.width

    def add(self, pos: Position, a: Direction, b: Direction) -> None:
        self.pieces.setdefault(pos, set()).add(frozenset((a, b)))

    def is_straight(self, pos: Position, axis: tuple[Direction, Direction]) -> bool:
        return self.pieces.get(pos) == {frozenset(axis)}

    def cells(self) -> np.ndarray:
        out = np.zeros((self.height, self.width), dtype=np.uint16)
        for (r, c), pieces in self.pieces.items():
            out[r, c] = TransitionCell.from_pieces(tuple(p) for p in pieces).bits
        return out


def _place_station(layout: _Layout, rng: np.random.Generator, taken: set[Position]) -> _Station:
    for _ in range(200):
        row = int(rng.integers(2, layout.height - 2))
        siding = row + (1 if rng.random() < 0.5 else -1)
        if not 1 <= siding <= layout.height - 2:
            continue
        c0 = int(rng.integers(2, layout.width - LOOP_LENGTH - 2))
        st = _Station(row, siding, c0, c0 + LOOP_LENGTH - 1)
        fp = st.footprint()
        halo = {(r + dr, c + dc) for r, c in fp for dr in (-1, 0, 1) for dc in (-1, 0, 1)}
        if halo & taken:
            continue
        if not all(layout.inside(p) for p in fp):
            continue
        taken |= fp
        return st
    raise _Retry("no room for station")


def _lay_station(layout: _Layout, st: _Station) -> None:
    side = S if st.siding_row > st.row else N
    back = side.opposite()
    layout.add((st.row, st.c0), W, E)
    layout.add((st.row, st.c0), W, side)
    layout.add((st.row, st.c1), E, W)
    layout.add((st.row, st.c1), E, side)
    for c in range(st.c0 + 1, st.c1):
        layout.add((st.row, c), W, E)
        layout.add((st.siding_row, c), W, E)
    layout.add((st.siding_row, st.c0), back, E)
    layout.add((st.siding_row, st.c1), back, W)
    layout.switches |= {(st.row, st.c0), (st.row, st.c1)}
    layout.reserved |= st.footprint()


def _carve(
    layout: _Layout,
    rng: np.random.Generator,
    start: Position,
    heading: Direction,
    goal: Position,
    goal_heading: Direction,
) -> list[tuple[Position, Direction, Direction]]:
    """Lay a track through free cells from ``start`` (entered with ``heading``)
    to ``goal`` (left with ``goal_heading``). Perpendicular straight tracks may
    be crossed. Returns (cell, heading in, heading out) triples."""
    jitter = rng.random((layout.height, layout.width)) * 0.3
    allowed = {goal, start}

    def free(pos: Position) -> bool:
        return layout.inside(pos) and (
            pos in allowed or (pos not in layout.pieces and pos not in layout.reserved)
        )

    def crossable(pos: Position, d: Direction) -> bool:
        if not layout.inside(pos) or pos in layout.reserved or pos in layout.switches:
            return False
        axis = (N, S) if d in (E, W) else (E, W)
        return layout.is_straight(pos, axis)

    if not free(start) or not free(goal):
        raise _Retry("port blocked")
    origin = (start, heading)
    heap = [(0.0, 0, origin)]
    came: dict = {origin: None}
    best = {origin: 0.0}
    counter = 0
    end = None
    while heap:
        g, _, state = heapq.heappop(heap)
        if g > best[state]:
            continue
        pos, d = state
        if pos == goal:
            for out in (d, d.left(), d.right()):
                if out == goal_heading:
                    end = state
            if end is not None:
                break
            continue
        crossing = pos in layout.pieces and pos not in allowed
        outs = (d,) if crossing else (d, d.left(), d.right())
        for out in outs:
            nxt = neighbor(pos, out)
            if free(nxt):
                cost = 1.0 + jitter[nxt] + (0.4 if out != d else 0.0)
            elif crossable(nxt, out):
                cost = 3.0
            else:
                continue
            ns = (nxt, out)
            ng = g + cost
            if ng < best.get(ns, math.inf):
                best[ns] = ng
                came[ns] = state
                counter += 1
                heapq.heappush(heap, (ng, counter, ns))
    if end is None:
        raise _Retry("no path")

    states = []
    s = end
    while s is not None:
        states.append(s)
        s = came[s]
    states.reverse()
    path = []
    for i, (pos, d_in) in enumerate(states):
        d_out = states[i + 1][1] if i + 1 < len(states) else goal_heading
        path.append((pos, d_in, d_out))
    if len({p for p, _, _ in path}) != len(path):
        raise _Retry("self-crossing path")
    return path


def _commit(layout: _Layout, path) -> None:
    for pos, d_in, d_out in path:
        layout.add(pos, d_in.opposite(), d_out)


def _ring_cells(layout: _Layout, ring: list[Position]) -> list[Position]:
    """Plain straight ring cells usable as chord junctions."""
    usable = []
    for pos in ring:
        if pos in layout.reserved or pos in layout.switches:
            continue
        pieces = layout.pieces.get(pos)
        if pieces is None or len(pieces) != 1:
            continue
        (piece,) = pieces
        a, b = tuple(piece)
        if a.opposite() != b:
            continue
        near = [neighbor(pos, d) for d in Direction]
        if any(n in layout.switches for n in near):
            continue
        usable.append(pos)
    return usable


def _add_chord(layout: _Layout, rng: np.random.Generator, ring: list[Position]) -> bool:
    usable = _ring_cells(layout, ring)
    if len(usable) < 2:
        return False
    for _ in range(12):
        i, j = rng.choice(len(usable), size=2, replace=False)
        x, y = usable[int(i)], usable[int(j)]
        if abs(x[0] - y[0]) + abs(x[1] - y[1]) < 6:
            continue
        (px,) = layout.pieces[x]
        (py,) = layout.pieces[y]
        ax, ay = sorted(px), sorted(py)
        sides_x = [d for d in Direction if d not in ax]
        sides_y = [d for d in Direction if d not in ay]
        out_x = sides_x[int(rng.integers(2))]
        in_y = sides_y[int(rng.integers(2))]
        start = neighbor(x, out_x)
        goal = neighbor(y, in_y)
        try:
            path = _carve(layout, rng, start, out_x, goal, in_y.opposite())
        except _Retry:
            continue
        if len(path) < 2:
            continue
        _commit(layout, path)
        layout.add(x, out_x, ax[int(rng.integers(2))])
        layout.add(y, in_y, ay[int(rng.integers(2))])
        layout.switches |= {x, y}
        return True
    return False


def _feasible(width: int, height: int, n_agents: int, n_stations: int) -> bool:
    if n_stations < 2 or n_agents < 1:
        return False
    if width < LOOP_LENGTH + 6 or height < 6:
        return False
    station_area = (LOOP_LENGTH + 4) * 5
    if n_stations * station_area * 2 > width * height:
        return False
    return n_agents <= n_stations * 2 * (LOOP_LENGTH - 2)


def _attempt(width, height, n_agents, n_stations, rng: np.random.Generator) -> EnvState:
    from ..routing import RouteNode, shortest_path

    layout = _Layout(width, height)
    taken: set[Position] = set()
    stations = [_place_station(layout, rng, taken) for _ in range(n_stations)]
    for st in stations:
        _lay_station(layout, st)

    cy, cx = height / 2, width / 2
    order = sorted(stations, key=lambda s: math.atan2(s.row - cy, s.c0 - cx))
    ring: list[Position] = []
    for a, b in zip(order, order[1:] + order[:1]):
        path = _carve(layout, rng, (a.row, a.c1 + 1), E, (b.row, b.c0 - 1), E)
        _commit(layout, path)
        ring.extend(p for p, _, _ in path)

    for _ in range(int(rng.integers(1, 3))):
        _add_chord(layout, rng, ring)

    grid = RailGrid(layout.cells(), [st.position for st in stations])
    for pos in layout.switches:
        if not grid.is_switch(pos):
            raise _Retry("switch lost")
    for pos in grid.switches():
        for d in Direction:
            nb = neighbor(pos, d)
            if grid.in_bounds(nb) and grid.is_switch(nb):
                raise _Retry("adjacent switches")

    agents = []
    used: set[Position] = set()
    for agent_id in range(n_agents):
        s_idx = int(rng.integers(n_stations))
        t_idx = int(rng.choice([i for i in range(n_stations) if i != s_idx]))
        free_cells = [c for c in stations[s_idx].start_cells() if c not in used]
        if not free_cells:
            raise _Retry("station full")
        start = free_cells[int(rng.integers(len(free_cells)))]
        target = stations[t_idx].position
        # trains run the ring in one rotational sense: eastbound through stations
        if shortest_path(grid, RouteNode(start, E), target) is None:
            raise _Retry("unreachable target")
        used.add(start)
        agents.append(AgentState(agent_id, start, E, Fraction(1), target))

    return EnvState(
        grid=grid,
        agents=agents,
        max_steps=default_max_steps(width, height, n_agents),
    )


def generate_map(width: int, height: int, n_agents: int, n_stations: int, seed: int) -> EnvState:
    """Deterministic random railway with ``n_stations`` passing-loop stations."""
    if not _feasible(width, height, n_agents, n_stations):
        raise GenerationError(
            f"infeasible parameters: {width}x{height}, {n_agents} agents, {n_stations} stations"
        )
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RETRIES):
        try:
            state = _attempt(width, height, n_agents, n_stations, rng)
        except _Retry:
            continue
        state.rng_seed = seed
        return state
    raise GenerationError(f"generation failed after {MAX_RETRIES} attempts (seed {seed})")
