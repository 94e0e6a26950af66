"""Text map format.

::

    W H [MAX_STEPS]
    <H lines of W 4-hex-digit transition codes>
    STATIONS m
    row col            (m lines)
    AGENTS n
    id row col dir speed_num speed_den target_row target_col   (n lines)

Lines starting with ``#`` are ignored. When MAX_STEPS is omitted the default
``8 * (W + H + n_agents)`` applies.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .core import (
    AgentState,
    Direction,
    EnvState,
    RailEnvError,
    RailGrid,
    cell_exits,
    default_max_steps,
    neighbor,
    transition_bit,
)


class MapFormatError(RailEnvError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class MalformedHeaderError(MapFormatError):
    pass


class EmptyGridError(MapFormatError):
    pass


class CellCodeError(MapFormatError):
    pass


class ReciprocityError(MapFormatError):
    pass


class StationError(MapFormatError):
    pass


class OffRailError(MapFormatError):
    pass


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def check_reciprocity(grid: RailGrid, lines: dict[int, int] | None = None) -> None:
    """Raise ReciprocityError if any exit leads off-grid or into a cell that cannot be entered."""
    lines = lines or {}
    for r in range(grid.height):
        for c in range(grid.width):
            bits = grid.bits((r, c))
            if not bits:
                continue
            for in_dir in range(4):
                for out in range(4):
                    if not bits & transition_bit(in_dir, out):
                        continue
                    nb = neighbor((r, c), out)
                    if not grid.in_bounds(nb):
                        raise ReciprocityError(
                            f"cell ({r}, {c}) exits {Direction(out).name} off the grid", lines.get(r)
                        )
                    if not cell_exits(grid.bits(nb), out):
                        raise ReciprocityError(
                            f"cell ({r}, {c}) exits {Direction(out).name} into {nb}, "
                            f"which cannot be entered heading {Direction(out).name}",
                            lines.get(r),
                        )


def load_map(text: str | bytes) -> EnvState:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    it = _content_lines(text)

    try:
        lineno, header = next(it)
    except StopIteration:
        raise MalformedHeaderError("missing header", 1) from None
    fields = header.split()
    if len(fields) not in (2, 3):
        raise MalformedHeaderError(f"expected 'W H [MAX_STEPS]', got {header!r}", lineno)
    try:
        width, height, *rest = (int(f) for f in fields)
    except ValueError:
        raise MalformedHeaderError(f"non-integer header {header!r}", lineno) from None
    if width <= 0 or height <= 0:
        raise EmptyGridError(f"grid is empty ({width}x{height})", lineno)
    max_steps = rest[0] if rest else None
    if max_steps is not None and max_steps <= 0:
        raise MalformedHeaderError("MAX_STEPS must be positive", lineno)

    cells = np.zeros((height, width), dtype=np.uint16)
    row_lines: dict[int, int] = {}
    for r in range(height):
        try:
            lineno, line = next(it)
        except StopIteration:
            raise MapFormatError(f"expected {height} grid rows, got {r}", lineno) from None
        codes = line.split()
        if len(codes) != width:
            raise CellCodeError(f"expected {width} cells, got {len(codes)}", lineno)
        for c, code in enumerate(codes):
            if len(code) != 4:
                raise CellCodeError(f"cell code {code!r} is not 4 hex digits", lineno)
            try:
                cells[r, c] = int(code, 16)
            except ValueError:
                raise CellCodeError(f"non-hex cell code {code!r}", lineno) from None
        row_lines[r] = lineno

    def section(name: str) -> tuple[int, int]:
        try:
            lineno, line = next(it)
        except StopIteration:
            raise MapFormatError(f"missing {name} section") from None
        parts = line.split()
        if len(parts) != 2 or parts[0] != name:
            raise MapFormatError(f"expected '{name} <count>', got {line!r}", lineno)
        try:
            return lineno, int(parts[1])
        except ValueError:
            raise MapFormatError(f"bad {name} count {parts[1]!r}", lineno) from None

    def int_row(n_fields: int, what: str) -> tuple[int, list[int]]:
        try:
            lineno, line = next(it)
        except StopIteration:
            raise MapFormatError(f"missing {what} line") from None
        parts = line.split()
        if len(parts) != n_fields:
            raise MapFormatError(f"{what} line needs {n_fields} fields", lineno)
        try:
            return lineno, [int(p) for p in parts]
        except ValueError:
            raise MapFormatError(f"non-integer {what} line {line!r}", lineno) from None

    _, n_stations = section("STATIONS")
    stations = []
    station_lines = []
    for _ in range(n_stations):
        lineno, (r, c) = int_row(2, "station")
        stations.append((r, c))
        station_lines.append(lineno)

    grid = RailGrid(cells, stations)
    check_reciprocity(grid, row_lines)
    for lineno, pos in zip(station_lines, stations):
        if not grid.in_bounds(pos) or not grid.bits(pos):
            raise StationError(f"station {pos} is not on a rail cell", lineno)

    _, n_agents = section("AGENTS")
    agents = []
    seen_ids = set()
    for _ in range(n_agents):
        lineno, (aid, r, c, d, num, den, tr, tc) = int_row(8, "agent")
        if aid in seen_ids:
            raise MapFormatError(f"duplicate agent id {aid}", lineno)
        seen_ids.add(aid)
        if d not in range(4):
            raise MapFormatError(f"direction {d} not in 0..3", lineno)
        if den <= 0 or num <= 0 or num > den:
            raise MapFormatError(f"speed {num}/{den} outside (0, 1]", lineno)
        pos, target = (r, c), (tr, tc)
        if not grid.in_bounds(pos) or not grid.bits(pos):
            raise OffRailError(f"agent {aid} placed off-rail at {pos}", lineno)
        if not grid.exits(pos, d):
            raise OffRailError(f"agent {aid} at {pos} cannot head {Direction(d).name}", lineno)
        if not grid.in_bounds(target) or not grid.bits(target):
            raise OffRailError(f"agent {aid} target {target} is off-rail", lineno)
        agents.append(AgentState(aid, pos, Direction(d), Fraction(num, den), target))

    extra = next(it, None)
    if extra is not None:
        raise MapFormatError(f"unexpected trailing content {extra[1]!r}", extra[0])

    if max_steps is None:
        max_steps = default_max_steps(width, height, len(agents))
    return EnvState(grid=grid, agents=agents, max_steps=max_steps)


def dump_map(state: EnvState) -> str:
    """Serialize the initial configuration of ``state`` (agents at their starts)."""
    grid = state.grid
    out = [f"{grid.width} {grid.height} {state.max_steps}"]
    for r in range(grid.height):
        out.append(" ".join(f"{grid.bits((r, c)):04x}" for c in range(grid.width)))
    out.append(f"STATIONS {len(grid.stations)}")
    out.extend(f"{r} {c}" for r, c in grid.stations)
    out.append(f"AGENTS {len(state.agents)}")
    for a in state.agents:
        r, c = a.initial_position
        tr, tc = a.target
        out.append(
            f"{a.id} {r} {c} {int(a.initial_direction)} "
            f"{a.speed.numerator} {a.speed.denominator} {tr} {tc}"
        )
    return "\n".join(out) + "\n"
