import itertools
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import active, track_text
from railflat.grid_env import AgentStatus, Direction, RailAction, generate_map, load_map
from railflat.routing import (
    RouteNode,
    agent_node,
    astar_path,
    branch_routes,
    forward_successor,
    next_switch_prefix,
    relative_code,
    shortest_path,
)

E, W = Direction.EAST, Direction.WEST
SINK = "sink"


def rail_graph(grid, target):
    """Directed (row, col, heading) graph with a zero-cost sink behind the target."""
    g = nx.DiGraph()
    for r in range(grid.height):
        for c in range(grid.width):
            for h in range(4):
                for out, nxt in grid.successors((r, c), h):
                    g.add_edge((r, c, h), (*nxt, int(out)), weight=1)
    for h in range(4):
        g.add_edge((*target, h), SINK, weight=0)
    return g


def dijkstra_cost(grid, start: RouteNode, target, speed=1):
    g = rail_graph(grid, target)
    node = (*start.position, int(start.direction))
    if start.position == target:
        return Fraction(0)
    try:
        return Fraction(nx.dijkstra_path_length(g, node, SINK)) / Fraction(speed)
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        return None


def nodes_of(grid):
    return [
        RouteNode((r, c), Direction(h))
        for r in range(grid.height)
        for c in range(grid.width)
        for h in range(4)
        if grid.exits((r, c), h)
    ]


def test_straight_track_costs():
    state = load_map(track_text(5))
    start = RouteNode((0, 0), E)
    assert shortest_path(state.grid, start, (0, 4)).cost == 4
    assert shortest_path(state.grid, start, (0, 4), Fraction(1, 2)).cost == 8
    assert shortest_path(state.grid, start, (0, 4)).first_action is RailAction.MOVE_FORWARD


def test_route_to_own_cell_is_empty():
    state = load_map(track_text(5))
    route = shortest_path(state.grid, RouteNode((0, 2), E), (0, 2))
    assert route.hops == 0 and route.cost == 0


def test_unreachable_target_is_none():
    text = "5 2\n0404 0401 0101 0000 0000\n0000 0000 0404 0401 0101\nSTATIONS 0\nAGENTS 0\n"
    grid = load_map(text).grid
    assert shortest_path(grid, RouteNode((0, 0), E), (1, 4)) is None
    assert astar_path(grid, RouteNode((0, 0), E), (1, 4)) is None


@pytest.mark.parametrize("seed", range(6))
def test_matches_dijkstra_and_astar_on_generated_maps(seed):
    state = generate_map(28, 16, 6, 4, seed)
    grid = state.grid
    rng = np.random.default_rng(seed)
    nodes = nodes_of(grid)
    for _ in range(40):
        start = nodes[rng.integers(len(nodes))]
        target = grid.stations[rng.integers(len(grid.stations))]
        route = shortest_path(grid, start, target)
        expected = dijkstra_cost(grid, start, target)
        assert (route is None) == (expected is None)
        if route is not None:
            assert route.cost == expected
            assert route.nodes == astar_path(grid, start, target).nodes


def _codes(nodes):
    return [relative_code(a.direction, b.direction) for a, b in zip(nodes, nodes[1:])]


@pytest.mark.parametrize("seed", range(3))
def test_tie_break_is_lexicographically_smallest(seed):
    state = generate_map(16, 16, 2, 2, seed)
    grid = state.grid
    rng = np.random.default_rng(seed)
    nodes = nodes_of(grid)
    checked = 0
    for _ in range(30):
        start = nodes[rng.integers(len(nodes))]
        target = grid.stations[rng.integers(len(grid.stations))]
        route = shortest_path(grid, start, target)
        if route is None or route.hops == 0:
            continue
        g = rail_graph(grid, target)
        src = (*start.position, int(start.direction))
        paths = itertools.islice(nx.all_shortest_paths(g, src, SINK, weight="weight"), 200)
        best = min(
            _codes([RouteNode((p[0], p[1]), Direction(p[2])) for p in path[:-1]]) for path in paths
        )
        assert _codes(route.nodes) == best
        checked += 1
    assert checked > 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 50), pick=st.integers(0, 10**6))
def test_route_legality(seed, pick):
    state = generate_map(28, 16, 6, 4, seed)
    grid = state.grid
    nodes = nodes_of(grid)
    start = nodes[pick % len(nodes)]
    target = grid.stations[pick % len(grid.stations)]
    route = shortest_path(grid, start, target)
    if route is None:
        return
    assert route.nodes[0] == start
    assert route.nodes[-1].position == target
    assert len(set(route.nodes)) == len(route.nodes)
    for a, b in zip(route.nodes, route.nodes[1:]):
        assert (b.direction, b.position) in grid.successors(a.position, a.direction)
    assert route.cost == route.hops


def test_relative_codes():
    assert relative_code(E, E) == 0
    assert relative_code(E, Direction.NORTH) == 1  # left
    assert relative_code(E, Direction.SOUTH) == 2  # right
    assert relative_code(E, W) == 3


def _decision_states(seeds):
    """(state, agent) pairs where the agent stands one cell before a switch."""
    for seed in seeds:
        state = generate_map(28, 16, 6, 4, seed)
        grid = state.grid
        for node in nodes_of(grid):
            nxt = forward_successor(grid, node)
            if nxt is None or not grid.is_switch(nxt.position) or grid.is_switch(node.position):
                continue
            s = state.copy()
            agent = s.agents[0]
            agent.position, agent.direction, agent.status = node.position, node.direction, AgentStatus.ACTIVE
            if agent.target in (node.position, nxt.position):
                continue
            yield s, agent


def test_two_branches_before_two_way_switch():
    found = 0
    for state, agent in _decision_states(range(4)):
        switch = forward_successor(state.grid, agent_node(agent))
        if len(state.grid.exits(switch.position, switch.direction)) == 2:
            routes = branch_routes(state.grid, agent)
            if len(routes) == 2:
                found += 1
                costs = sorted(r.cost for r in routes.values())
                shortest = shortest_path(state.grid, agent_node(agent), agent.target)
                assert costs[0] == shortest.cost
                assert {r.nodes[2] for r in routes.values()}.__len__() == 2
    assert found > 0


def test_branch_routes_share_prefix_and_dominate():
    for state, agent in itertools.islice(_decision_states(range(2)), 200):
        grid = state.grid
        start = agent_node(agent)
        routes = branch_routes(grid, agent)
        shortest = shortest_path(grid, start, agent.target)
        prefix = next_switch_prefix(grid, start, agent.target)
        for action, route in routes.items():
            assert action in (RailAction.MOVE_FORWARD, RailAction.TURN_LEFT, RailAction.TURN_RIGHT)
            assert list(route.nodes[: len(prefix)]) == prefix
            assert route.cost >= shortest.cost
            assert route.nodes[-1].position == agent.target
        on_optimal = prefix[-1] in shortest.nodes
        if routes and on_optimal:
            assert min(r.cost for r in routes.values()) == shortest.cost


def test_branch_prefix_on_fixture(h_fixture):
    # agent 0 on the upper-left leg: the first decision switch is (1, 7)
    agent = h_fixture.agent(0)
    active(h_fixture, a0=((0, 1), E))
    routes = branch_routes(h_fixture.grid, agent)
    assert routes
    for route in routes.values():
        cells = route.cells
        assert cells[:7] == [(0, 1), (0, 2), (0, 3), (0, 4), (1, 4), (1, 5), (1, 6)]
        assert cells[7] == (1, 7)


def test_no_switch_ahead_gives_single_route():
    state = load_map(track_text(6, ["0 0 1 1 1 1 0 5"], ["0 5"]))
    active(state, a0=((0, 1), E))
    routes = branch_routes(state.grid, state.agent(0))
    assert list(routes) == [RailAction.MOVE_FORWARD]
    assert routes[RailAction.MOVE_FORWARD].cost == 4


def test_unreachable_agent_has_no_routes():
    text = "5 2\n0404 0401 0101 0000 0000\n0000 0000 0404 0401 0101\nSTATIONS 0\nAGENTS 1\n0 0 1 1 1 1 1 4\n"
    state = load_map(text)
    active(state, a0=((0, 1), E))
    assert branch_routes(state.grid, state.agent(0)) == {}
