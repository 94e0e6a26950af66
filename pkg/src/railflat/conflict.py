"""Pairwise conflict extraction.

Given two planned routes, find their common cells, isolate the first
connected common segment along route 1, grow it to the enclosing track
section between switches or stations, and measure the H-shaped geometry
(signed distances, section length, speeds, direction class, meeting cell).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

from .grid_env.core import AgentState, Direction, Position, RailEnvError, RailGrid, neighbor
from .routing import Route


class SectionError(RailEnvError):
    """Section expansion left the grid or looped back on itself."""


class DirectionClass(enum.Enum):
    OPPOSITE = "opposite"
    SAME = "same"


@dataclass(frozen=True)
class ConflictGeometry:
    d1: int
    d2: int
    l: int
    v1: Fraction
    v2: Fraction
    direction_class: DirectionClass
    conflict_cell: Position | None = None
    s1: Position | None = None
    s2: Position | None = None
    section: tuple[Position, ...] = ()

    def __post_init__(self):
        if self.l < 1:
            raise ValueError(f"section length must be >= 1, got {self.l}")
        for v in (self.v1, self.v2):
            if not 0 < v <= 1:
                raise ValueError(f"speed {v} outside (0, 1]")
        object.__setattr__(self, "v1", Fraction(self.v1))
        object.__setattr__(self, "v2", Fraction(self.v2))

    @property
    def conflict_in_section(self) -> bool:
        return self.conflict_cell is not None


@dataclass(frozen=True)
class PathPair:
    route_1: Route
    route_2: Route
    intersection: tuple[Position, ...]


def detect_conflict(route_1: Route, route_2: Route) -> PathPair | None:
    """Common cells of two routes, ordered along route 1; None if disjoint."""
    other = set(route_2.cells)
    common: list[Position] = []
    seen: set[Position] = set()
    for cell in route_1.cells:
        if cell in other and cell not in seen:
            common.append(cell)
            seen.add(cell)
    if not common:
        return None
    return PathPair(route_1, route_2, tuple(common))


def first_segment(pair: PathPair) -> list[int]:
    """Indices into route 1 of the first run of consecutive common cells."""
    common = set(pair.intersection)
    cells = pair.route_1.cells
    start = next(i for i, c in enumerate(cells) if c in common)
    end = start
    while end + 1 < len(cells) and cells[end + 1] in common:
        end += 1
    return list(range(start, end + 1))


def _is_delimiter(grid: RailGrid, pos: Position) -> bool:
    return grid.is_switch(pos) or grid.is_station(pos)


def _walk_forward(grid: RailGrid, pos: Position, heading: Direction, limit: int) -> list[Position]:
    """Cells after ``pos`` along the track until a delimiter (inclusive) or a dead end."""
    out: list[Position] = []
    for _ in range(limit):
        if _is_delimiter(grid, pos):
            return out
        exits = grid.exits(pos, heading)
        if len(exits) != 1 or exits[0] == heading.opposite():
            return out  # dead end or no exit: the track ends here
        nxt = neighbor(pos, exits[0])
        if not grid.in_bounds(nxt) or not grid.bits(nxt):
            raise SectionError(f"track leaves the grid at {pos} heading {exits[0].name}")
        out.append(nxt)
        pos, heading = nxt, exits[0]
    raise SectionError(f"section expansion did not terminate near {pos}")


def _walk_backward(grid: RailGrid, pos: Position, heading: Direction, limit: int) -> list[Position]:
    """Cells before ``pos`` (entered with ``heading``), nearest first."""
    out: list[Position] = []
    if _is_delimiter(grid, pos):
        return out
    for _ in range(limit):
        prev = neighbor(pos, heading.opposite())
        if not grid.in_bounds(prev):
            return out  # track terminus at the border
        feeders = [Direction(h) for h in range(4) if heading in grid.exits(prev, h)]
        if not feeders:
            return out  # track terminus
        out.append(prev)
        if _is_delimiter(grid, prev):
            return out
        pos, heading = prev, feeders[0]
    raise SectionError(f"section expansion did not terminate near {pos}")


def critical_section(
    grid: RailGrid, pair: PathPair
) -> tuple[tuple[Position, ...], Position, Position]:
    """Expand the first common segment to the enclosing switch/station-delimited section.

    Returns (section cells ordered along route 1, s1, s2).
    """
    idx = first_segment(pair)
    nodes = pair.route_1.nodes
    first, last = nodes[idx[0]], nodes[idx[-1]]
    limit = grid.width * grid.height + 1
    before = _walk_backward(grid, first.position, first.direction, limit)
    after = _walk_forward(grid, last.position, last.direction, limit)
    section = tuple(reversed(before)) + tuple(nodes[i].position for i in idx) + tuple(after)
    if len(set(section)) != len(section):
        raise SectionError(f"section around {first.position} loops back on itself")
    return section, section[0], section[-1]


def _sides(route: Route, i: int) -> tuple[Direction | None, Direction | None]:
    """(side the route enters cell i from, side it leaves through)."""
    entry = route.nodes[i].direction.opposite()
    exit_ = route.nodes[i + 1].direction if i + 1 < len(route.nodes) else None
    return entry, exit_


def _classify(pair: PathPair, section: tuple[Position, ...]) -> DirectionClass:
    order = {c: k for k, c in enumerate(section)}
    ks = [order[c] for c in pair.route_2.cells if c in order]
    if len(ks) >= 2:
        return DirectionClass.OPPOSITE if ks[1] < ks[0] else DirectionClass.SAME
    # single shared cell: compare the sides the routes use
    cell = next(c for c in pair.route_2.cells if c in order)
    in1, out1 = _sides(pair.route_1, pair.route_1.cells.index(cell))
    in2, out2 = _sides(pair.route_2, pair.route_2.cells.index(cell))
    if (out2 is not None and out2 == in1) or (out1 is not None and in2 == out1):
        return DirectionClass.OPPOSITE
    return DirectionClass.SAME


def meeting_index(d1: int, d2: int, l: int, v1: Fraction, v2: Fraction) -> int | None:
    """Section index where two same-direction trains first share a cell.

    Train 1 starts at coordinate -d1, train 2 at (l - 1) - d2 (d2 counts to
    the exit end), both move at floor(t * v) cells after t steps. Negative
    coordinates lie on separate approach tracks. Returns None when they do
    not meet inside the section.
    """
    x1, x2 = -d1, (l - 1) - d2
    v1, v2 = Fraction(v1), Fraction(v2)
    n1, q1, n2, q2 = v1.numerator, v1.denominator, v2.numerator, v2.denominator
    t = 0
    while True:
        a = x1 + t * n1 // q1
        b = x2 + t * n2 // q2
        if a >= l or b >= l:
            return None
        if a == b and a >= 0:
            return a
        t += 1


def _signed_distance(
    route: Route, position: Position, section, switch_index: int, toward_end: bool
) -> int:
    """Hops from the train to section cell ``switch_index`` along its route.

    For a train inside the section the index difference is used instead;
    ``toward_end`` says whether the train runs toward higher indices.
    """
    if position in section:
        k = section.index(position)
        return switch_index - k if toward_end else k - switch_index
    cells = route.cells
    target = section[switch_index]
    if target in cells:
        return cells.index(target)
    return -len(section)  # already beyond the section


def conflict_geometry(
    pair: PathPair,
    section: tuple[Position, ...],
    s1: Position,
    s2: Position,
    agent_1: AgentState,
    agent_2: AgentState,
) -> ConflictGeometry:
    """Measure the H-shaped geometry of a conflict.

    d1 counts hops from train 1 to s1 (0 on it, negative once inside). d2
    counts hops from train 2 to s2, the section end that route 1 leaves
    through: in the opposite class that is train 2's entry switch, in the
    same class its exit switch.
    """
    l = len(section)
    pos1 = pair.route_1.nodes[0].position
    pos2 = pair.route_2.nodes[0].position
    cls = _classify(pair, section)
    if pos1 in section:
        d1 = -section.index(pos1)
    else:
        d1 = pair.route_1.cells.index(s1) if s1 in pair.route_1.cells else -l
    if cls is DirectionClass.OPPOSITE:
        d2 = _signed_distance(pair.route_2, pos2, section, l - 1, toward_end=False)
    else:
        d2 = _signed_distance(pair.route_2, pos2, section, l - 1, toward_end=True)

    cell = None
    if cls is DirectionClass.SAME:
        k = meeting_index(d1, d2, l, agent_1.speed, agent_2.speed)
        cell = section[k] if k is not None else None
    return ConflictGeometry(
        d1=d1,
        d2=d2,
        l=l,
        v1=agent_1.speed,
        v2=agent_2.speed,
        direction_class=cls,
        conflict_cell=cell,
        s1=s1,
        s2=s2,
        section=section,
    )
