"""Shortest paths over the directed (cell, heading) railway graph."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from fractions import Fraction

from .grid_env.core import (
    AgentState,
    AgentStatus,
    Direction,
    Position,
    RailAction,
    RailGrid,
    maneuver_exits,
    neighbor,
)

# relative move codes used for tie-breaking: forward < left < right < reverse
_FORWARD, _LEFT, _RIGHT, _REVERSE = 0, 1, 2, 3
_CODE_TO_ACTION = {
    _FORWARD: RailAction.MOVE_FORWARD,
    _LEFT: RailAction.TURN_LEFT,
    _RIGHT: RailAction.TURN_RIGHT,
    _REVERSE: RailAction.MOVE_FORWARD,
}


def relative_code(heading: int, out: int) -> int:
    return (_FORWARD, _RIGHT, _REVERSE, _LEFT)[(out - heading) % 4]


@dataclass(frozen=True)
class RouteNode:
    position: Position
    direction: Direction


@dataclass(frozen=True)
class Route:
    nodes: tuple[RouteNode, ...]
    cost: Fraction
    first_action: RailAction

    @property
    def cells(self) -> list[Position]:
        return [n.position for n in self.nodes]

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1

    def action_at(self, index: int) -> RailAction:
        """Action that moves from node ``index`` to node ``index + 1``."""
        here, nxt = self.nodes[index], self.nodes[index + 1]
        return _CODE_TO_ACTION[relative_code(here.direction, nxt.direction)]


def _make_route(nodes: list[RouteNode], speed: Fraction) -> Route:
    if len(nodes) > 1:
        first = _CODE_TO_ACTION[relative_code(nodes[0].direction, nodes[1].direction)]
    else:
        first = RailAction.DO_NOTHING
    return Route(tuple(nodes), Fraction(len(nodes) - 1) / speed, first)


def distance_field(grid: RailGrid, target: Position) -> dict[tuple[int, int, int], int]:
    """Hops from every (row, col, heading) node to ``target``; unreachable nodes are absent."""
    key = ("field", target)
    cache = grid.route_cache
    field = cache.get(key)
    if field is not None:
        return field
    reverse: dict[tuple, list[tuple]] = grid.route_cache.get("reverse")
    if reverse is None:
        reverse = {}
        for r in range(grid.height):
            for c in range(grid.width):
                if not grid.bits((r, c)):
                    continue
                for h in range(4):
                    for out, (nr, nc) in grid.successors((r, c), h):
                        if grid.in_bounds((nr, nc)):
                            reverse.setdefault((nr, nc, int(out)), []).append((r, c, h))
        cache["reverse"] = reverse
    field = {(target[0], target[1], h): 0 for h in range(4)}
    frontier = list(field)
    while frontier:
        nxt = []
        for node in frontier:
            dist = field[node] + 1
            for prev in reverse.get(node, ()):
                if prev not in field:
                    field[prev] = dist
                    nxt.append(prev)
        frontier = nxt
    cache[key] = field
    return field


_DIRECTIONS = tuple(Direction)


def _next_hops(grid: RailGrid, target: Position) -> dict[tuple[int, int, int], tuple[int, int, int]]:
    """Best successor of every node that can still reach ``target``."""
    key = ("next", target)
    hops = grid.route_cache.get(key)
    if hops is not None:
        return hops
    field = distance_field(grid, target)
    hops = {}
    for (r, c, d), left in field.items():
        if left == 0:
            continue
        best = None
        for out, (nr, nc) in grid.successors((r, c), d):
            child = (nr, nc, int(out))
            if field.get(child) == left - 1:
                code = relative_code(d, out)
                if best is None or code < best[0]:
                    best = (code, child)
        hops[(r, c, d)] = best[1]
    grid.route_cache[key] = hops
    return hops


def _descend(grid: RailGrid, start: RouteNode, target: Position) -> list[RouteNode] | None:
    """Lexicographically smallest shortest node sequence, read off the distance field."""
    node = (start.position[0], start.position[1], int(start.direction))
    if node not in distance_field(grid, target):
        return None
    hops = _next_hops(grid, target)
    nodes = [start]
    node = hops.get(node)
    while node is not None:
        nodes.append(RouteNode((node[0], node[1]), _DIRECTIONS[node[2]]))
        node = hops.get(node)
    return nodes


def shortest_path(
    grid: RailGrid,
    start: RouteNode,
    target: Position,
    speed: Fraction | int = 1,
    avoid: frozenset[RouteNode] = frozenset(),
) -> Route | None:
    """Shortest route from ``start`` to any heading at ``target``; ``None`` if unreachable.

    Every move costs ``1/speed``. Among equal-cost routes the lexicographically
    smallest relative-move sequence (forward < left < right) wins. Nodes in
    ``avoid`` are never entered; that case falls back to A*.
    """
    if avoid:
        return astar_path(grid, start, target, speed, avoid)
    key = ("route", start, target, speed)
    cache = grid.route_cache
    if key not in cache:
        nodes = _descend(grid, start, target)
        cache[key] = None if nodes is None else _make_route(nodes, Fraction(speed))
    return cache[key]


def astar_path(
    grid: RailGrid,
    start: RouteNode,
    target: Position,
    speed: Fraction | int = 1,
    avoid: frozenset[RouteNode] = frozenset(),
) -> Route | None:
    """A* with a Manhattan heuristic and the same tie-break as ``shortest_path``."""
    speed = Fraction(speed)
    key = (start, target, speed, avoid)
    cache = grid.route_cache
    if key in cache:
        return cache[key]

    tr, tc = target
    sr, sc = start.position
    # search in hop units; every edge costs the same so scaling is exact
    root = (sr, sc, int(start.direction))
    heap = [(abs(sr - tr) + abs(sc - tc), (), 0, root)]
    parents: dict[tuple, tuple | None] = {}
    best_g = {root: 0}
    found = None
    while heap:
        f, seq, g, node = heapq.heappop(heap)
        if node in parents:
            continue
        parents[node] = seq
        r, c, d = node
        if (r, c) == target:
            found = (node, seq)
            break
        for out, (nr, nc) in grid.successors((r, c), d):
            child = (nr, nc, int(out))
            if child in parents:
                continue
            if avoid and RouteNode((nr, nc), Direction(out)) in avoid:
                continue
            ng = g + 1
            if ng > best_g.get(child, ng):
                continue
            best_g[child] = ng
            heapq.heappush(
                heap, (ng + abs(nr - tr) + abs(nc - tc), seq + (relative_code(d, out),), ng, child)
            )

    route = None
    if found is not None:
        _, seq = found
        nodes = [start]
        pos, heading = start.position, int(start.direction)
        for code in seq:
            out = (heading, (heading + 3) % 4, (heading + 1) % 4, (heading + 2) % 4)[code]
            pos = neighbor(pos, out)
            heading = out
            nodes.append(RouteNode(pos, Direction(heading)))
        route = _make_route(nodes, speed)
    cache[key] = route
    return route


def agent_node(agent: AgentState) -> RouteNode:
    if agent.status is AgentStatus.READY:
        return RouteNode(agent.initial_position, agent.initial_direction)
    return RouteNode(agent.position, agent.direction)


def forward_successor(grid: RailGrid, node: RouteNode) -> RouteNode | None:
    """Node reached by MoveForward, or None when MoveForward has no exit."""
    for action, out in maneuver_exits(grid.bits(node.position), node.direction):
        if action == RailAction.MOVE_FORWARD:
            return RouteNode(neighbor(node.position, out), out)
    return None


def next_switch_prefix(grid: RailGrid, start: RouteNode, target: Position) -> list[RouteNode] | None:
    """Nodes from ``start`` up to the first switch strictly ahead via MoveForward.

    Returns None when the target comes first or no switch is reachable.
    """
    prefix = [start]
    seen = {start}
    node = start
    while node.position != target:
        nxt = forward_successor(grid, node)
        if nxt is None or nxt in seen:
            return None
        prefix.append(nxt)
        seen.add(nxt)
        if grid.is_switch(nxt.position) and nxt.position != target:
            return prefix
        node = nxt
    return None


def branch_routes(grid: RailGrid, agent: AgentState) -> dict[RailAction, Route]:
    """Shortest route per maneuver at the agent's next switch.

    Keys are the maneuvers (forward/left/right) executable at the switch that
    still reach the target. Without a switch ahead the single unconstrained
    route is returned under MOVE_FORWARD (empty dict if unreachable).
    """
    start = agent_node(agent)
    speed = agent.speed
    key = ("branches", start, agent.target, speed)
    cached = grid.route_cache.get(key)
    if cached is None:
        cached = grid.route_cache[key] = _branch_routes(grid, start, agent.target, speed)
    return dict(cached)


def _branch_routes(grid: RailGrid, start: RouteNode, target: Position, speed) -> dict[RailAction, Route]:
    prefix = next_switch_prefix(grid, start, target)
    if prefix is None:
        route = shortest_path(grid, start, target, speed)
        return {RailAction.MOVE_FORWARD: route} if route is not None else {}

    switch = prefix[-1]
    visited = frozenset(prefix)
    routes: dict[RailAction, Route] = {}
    for action, out in maneuver_exits(grid.bits(switch.position), switch.direction):
        succ = RouteNode(neighbor(switch.position, out), out)
        if succ in visited:
            continue
        rest = shortest_path(grid, succ, target, speed)
        if rest is not None and not visited.isdisjoint(rest.nodes):
            rest = shortest_path(grid, succ, target, speed, avoid=visited)
        if rest is None:
            continue
        routes[action] = _make_route(prefix + list(rest.nodes), speed)
    return routes
