import itertools
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import active
from railflat.conflict import (
    DirectionClass,
    SectionError,
    conflict_geometry,
    critical_section,
    detect_conflict,
    first_segment,
    meeting_index,
)
from railflat.grid_env import Direction, TransitionCell, generate_map, load_map
from railflat.routing import Route, RouteNode, agent_node, shortest_path

N, E, S, W = Direction

# Row 2 runs between switches at columns 2 and 6 and crosses a north-south
# line at column 4; the crossing itself is plain track.
CROSSING = """9 5
0000 0000 0000 0000 2020 0000 0000 0000 0000
0000 0000 0000 0000 8020 0000 0000 0000 0000
0404 0401 4403 0401 8421 0401 1601 0401 0101
0000 0000 8080 0000 8020 0000 8080 0000 0000
0000 0000 0000 0000 8080 0000 0000 0000 0000
STATIONS 2
2 8
4 4
AGENTS 2
0 2 1 1 1 1 2 8
{agent1}
"""

# A crossing cell that is also a switch (eastbound trains may turn north).
SWITCH_CROSSING = f"""5 3
0000 0000 2020 0000 0000
0404 0401 {TransitionCell.from_pieces([(W, E), (N, S), (W, N)])} 0401 0101
0000 0000 8080 0000 0000
STATIONS 2
1 4
2 2
AGENTS 2
0 1 0 1 1 1 1 4
1 0 2 2 1 1 2 2
"""


def route_of(state, agent_id):
    agent = state.agent(agent_id)
    return shortest_path(state.grid, agent_node(agent), agent.target, agent.speed)


def geometry_of(state, id_1=0, id_2=1):
    r1, r2 = route_of(state, id_1), route_of(state, id_2)
    pair = detect_conflict(r1, r2)
    section, s1, s2 = critical_section(state.grid, pair)
    return pair, conflict_geometry(pair, section, s1, s2, state.agent(id_1), state.agent(id_2))


def crossing(agent1="1 0 4 2 1 1 4 4"):
    state = load_map(CROSSING.format(agent1=agent1))
    a1 = state.agent(1)
    return active(state, a0=((2, 1), E), a1=(a1.position, a1.direction))


# -- detection


def test_disjoint_parallel_tracks():
    text = "4 2\n0404 0401 0401 0101\n0404 0401 0401 0101\nSTATIONS 2\n0 3\n1 3\nAGENTS 0\n"
    grid = load_map(text).grid
    r1 = shortest_path(grid, RouteNode((0, 0), E), (0, 3))
    r2 = shortest_path(grid, RouteNode((1, 0), E), (1, 3))
    assert detect_conflict(r1, r2) is None


def test_identical_routes_share_everything(h_fixture):
    active(h_fixture, a0=((0, 2), E))
    r = route_of(h_fixture, 0)
    pair = detect_conflict(r, r)
    assert list(pair.intersection) == r.cells
    assert first_segment(pair) == list(range(len(r.cells)))


def test_fixture_intersection_is_middle_track(h_fixture):
    active(h_fixture, a0=((0, 2), E), a1=((0, 9), W))
    pair = detect_conflict(route_of(h_fixture, 0), route_of(h_fixture, 1))
    assert pair.intersection == ((1, 4), (1, 5), (1, 6), (1, 7))


# -- sections


def test_delimited_segment_is_not_expanded(h_fixture):
    active(h_fixture, a0=((0, 2), E), a1=((0, 9), W))
    pair = detect_conflict(route_of(h_fixture, 0), route_of(h_fixture, 1))
    section, s1, s2 = critical_section(h_fixture.grid, pair)
    assert section == pair.intersection
    assert (s1, s2) == ((1, 4), (1, 7))


def test_single_mid_track_cell_expands_to_switches():
    state = crossing()
    pair, g = geometry_of(state)
    assert pair.intersection == ((2, 4),)
    assert g.l == 5
    assert g.section == ((2, 2), (2, 3), (2, 4), (2, 5), (2, 6))
    assert (g.s1, g.s2) == ((2, 2), (2, 6))


def test_single_switch_cell_section():
    state = load_map(SWITCH_CROSSING)
    active(state, a0=((1, 0), E), a1=((0, 2), S))
    pair, g = geometry_of(state)
    assert state.grid.is_switch((1, 2))
    assert pair.intersection == ((1, 2),)
    assert g.l == 1 and g.s1 == g.s2 == (1, 2)
    assert g.d1 == 2


def test_switchless_loop_raises():
    corner = lambda a, b: TransitionCell.from_pieces([(a, b)])
    text = f"2 2\n{corner(E, S)} {corner(W, S)}\n{corner(N, E)} {corner(N, W)}\nSTATIONS 0\nAGENTS 0\n"
    grid = load_map(text).grid
    r1 = Route((RouteNode((0, 0), N), RouteNode((0, 1), E)), Fraction(1), None)
    r2 = Route((RouteNode((0, 1), E), RouteNode((1, 1), S)), Fraction(1), None)
    with pytest.raises(SectionError):
        critical_section(grid, detect_conflict(r1, r2))


# -- geometry


def test_fixture_head_on_geometry(h_fixture):
    active(h_fixture, a0=((0, 2), E), a1=((0, 9), W))
    _, g = geometry_of(h_fixture)
    assert (g.d1, g.d2, g.l) == (3, 3, 4)
    assert g.direction_class is DirectionClass.OPPOSITE
    assert g.conflict_cell is None


def test_train_on_entry_switch_has_zero_distance(h_fixture):
    active(h_fixture, a0=((1, 4), S), a1=((0, 9), W))
    _, g = geometry_of(h_fixture)
    assert g.d1 == 0 and g.s1 == (1, 4)
    assert g.direction_class is DirectionClass.OPPOSITE


def test_train_inside_section_has_negative_distance(h_fixture):
    active(h_fixture, a0=((1, 5), E), a1=((0, 9), W))
    r1 = route_of(h_fixture, 0)
    _, g = geometry_of(h_fixture)
    assert g.d1 == -1
    assert g.s1 not in r1.cells


def test_same_direction_equal_speed_never_meet():
    state = crossing("1 2 4 1 1 1 2 8")
    _, g = geometry_of(state)
    assert g.direction_class is DirectionClass.SAME
    assert (g.d1, g.d2, g.l) == (1, 4, 7)
    assert g.conflict_cell is None


def _trajectory_meeting(d1, d2, l, v1, v2):
    """Step both trains with fractional progress counters; first shared section index."""
    x, p = [-d1, (l - 1) - d2], [Fraction(0), Fraction(0)]
    for _ in range(10 * (l + abs(d1) + abs(d2)) * 4 + 10):
        if x[0] >= l or x[1] >= l:
            return None
        if x[0] == x[1] and x[0] >= 0:
            return x[0]
        for i, v in enumerate((v1, v2)):
            p[i] += v
            if p[i] >= 1:
                p[i] -= 1
                x[i] += 1
    return None


def test_faster_train_behind_meets_inside():
    state = crossing("1 2 4 1 1 4 2 8")  # agent 1 ahead at quarter speed
    pair, g = geometry_of(state)
    assert g.direction_class is DirectionClass.SAME
    assert g.conflict_cell == (2, 4)
    assert g.conflict_cell in pair.route_1.cells and g.conflict_cell in pair.route_2.cells
    assert g.section[_trajectory_meeting(g.d1, g.d2, g.l, g.v1, g.v2)] == g.conflict_cell


speeds = st.sampled_from([Fraction(1), Fraction(1, 2), Fraction(1, 3), Fraction(1, 4)])


@given(d1=st.integers(-3, 8), d2=st.integers(-3, 12), l=st.integers(1, 10), v1=speeds, v2=speeds)
def test_meeting_index_matches_stepwise_trajectories(d1, d2, l, v1, v2):
    if -d1 == (l - 1) - d2:
        return  # same starting cell
    assert meeting_index(d1, d2, l, v1, v2) == _trajectory_meeting(d1, d2, l, v1, v2)


# -- properties over generated maps


def _route_pairs(seed, count=40):
    state = generate_map(16, 16, 4, 2, seed)
    grid = state.grid
    rng = np.random.default_rng(seed)
    nodes = [
        RouteNode((r, c), Direction(h))
        for r in range(grid.height)
        for c in range(grid.width)
        for h in range(4)
        if grid.exits((r, c), h)
    ]
    out = []
    while len(out) < count:
        a, b = (nodes[i] for i in rng.integers(len(nodes), size=2))
        ta, tb = (grid.stations[i] for i in rng.integers(len(grid.stations), size=2))
        ra, rb = shortest_path(grid, a, ta), shortest_path(grid, b, tb)
        if ra is not None and rb is not None and ra.hops and rb.hops and a.position != b.position:
            out.append((state, ra, rb))
    return out


def _is_track_end(grid, pos):
    return any(d.opposite() in grid.exits(pos, d) for d in Direction)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 30))
def test_detection_symmetry(seed):
    for _, ra, rb in _route_pairs(seed, 20):
        ab, ba = detect_conflict(ra, rb), detect_conflict(rb, ra)
        assert (ab is None) == (ba is None)
        if ab is not None:
            assert set(ab.intersection) == set(ba.intersection) == set(ra.cells) & set(rb.cells)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 30))
def test_section_containment_and_signs(seed):
    for state, ra, rb in _route_pairs(seed, 40):
        grid = state.grid
        pair = detect_conflict(ra, rb)
        if pair is None:
            continue
        try:
            section, s1, s2 = critical_section(grid, pair)
        except SectionError:
            continue
        segment = [ra.cells[i] for i in first_segment(pair)]
        assert set(segment) <= set(section)
        start = section.index(segment[0])
        assert section[start : start + len(segment)] == tuple(segment)
        for cell in section[1:start] + section[start + len(segment) : -1]:
            assert not grid.is_switch(cell) and not grid.is_station(cell)
        for end in (s1, s2):
            assert grid.is_switch(end) or grid.is_station(end) or _is_track_end(grid, end)

        a1, a2 = (
            replace(agent, position=route.nodes[0].position, direction=route.nodes[0].direction)
            for agent, route in ((state.agents[0], ra), (state.agents[1], rb))
        )
        g = conflict_geometry(pair, section, s1, s2, a1, a2)
        if g.d1 < 0:
            # a route may loop back to s1 much later; only the pass through this section counts
            inside = list(itertools.takewhile(lambda c: c in section, ra.cells))
            assert inside and s1 not in inside
        if g.d1 == 0:
            assert ra.cells[0] == s1
        if g.conflict_cell is not None:
            assert g.conflict_cell in ra.cells and g.conflict_cell in rb.cells
