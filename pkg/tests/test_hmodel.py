import time
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from railflat.conflict import ConflictGeometry, DirectionClass
from railflat.hmodel import (
    INF,
    ContractError,
    InfeasibleGeometryError,
    OracleDomainError,
    Ordering,
    Resolution,
    agreement_sweep,
    deadlock_sweep,
    estimated_times,
    h_geometry,
    opposite_times,
    oracle_simulate,
    resolve,
    resolve_opposite,
    resolve_same,
    same_times,
)

OPP, SAME = DirectionClass.OPPOSITE, DirectionClass.SAME
half = Fraction(1, 2)
speeds = st.sampled_from([Fraction(1), half, Fraction(1, 3), Fraction(1, 4)])


# -- closed forms, hand-evaluated


def test_opposite_times_worked_example():
    # clear time 5; 5 + max(5, 3 / (1/2)) + 4 / (1/2) = 19; 2 * 7 / (1/2) + 5 = 33
    assert opposite_times(2, 4, 3, Fraction(1), half) == (19, 33)


def test_opposite_times_unit_tie():
    assert opposite_times(1, 1, 1, Fraction(1), Fraction(1)) == (6, 6)
    res = resolve(h_geometry(1, 1, 1))
    assert res.action_1 is Resolution.PROCEED
    assert (res.t_proceed, res.t_yield) == (6, 6)


def test_same_times_worked_examples():
    assert same_times(1, 3, 4, half, Fraction(1)) == (20, 12)
    assert same_times(1, 3, 4, Fraction(1), Fraction(1)) == (10, 7)


def test_same_resolution_stops_when_meeting_inside():
    g = ConflictGeometry(1, 3, 4, half, Fraction(1), SAME, conflict_cell=(0, 2))
    res = resolve_same(g)
    assert res.action_1 is Resolution.STOP
    assert (res.t_proceed, res.t_yield) == (20, 12)


def test_estimated_times_examples():
    assert estimated_times(h_geometry(1, 5, 3)) == (12, 20)
    assert estimated_times(h_geometry(1, 3, 4, direction_class=SAME)) == (10, 7)
    t_p, t_y = estimated_times(h_geometry(1, 0, 3))
    assert t_p == INF and t_y == 2 * 3 + 4


def test_negative_terms_are_clamped():
    # (d2 - 1) / v2 at d2 = 0 and (2 d2 - l) / v2 at d2 < l / 2 would go negative
    assert same_times(1, 1, 6, Fraction(1), Fraction(1)) == (14, 7)
    t1, _ = opposite_times(1, 0, 2, Fraction(1), Fraction(1))
    assert t1 == 3 + 3 + 3


# -- resolution branches


@pytest.mark.parametrize("l", [1, 2, 5])
@pytest.mark.parametrize("v1,v2", [(1, 1), (half, 1), (1, Fraction(1, 4))])
def test_forced_stop_when_opponent_inside(l, v1, v2):
    res = resolve(h_geometry(1, 0, l, v1, v2))
    assert res.action_1 is Resolution.STOP and res.t_proceed == INF


def test_deadlock_when_both_inside():
    assert resolve(h_geometry(0, -1, 3)).action_1 is Resolution.DEADLOCK
    assert resolve(h_geometry(0, 0, 3)).action_1 is Resolution.DEADLOCK


def test_inside_train_proceeds_against_approaching_opponent():
    assert resolve(h_geometry(0, 2, 3)).action_1 is Resolution.PROCEED
    assert resolve(h_geometry(-1, 1, 3)).action_1 is Resolution.PROCEED


@pytest.mark.parametrize("cls", [OPP, SAME])
def test_far_from_switch_is_no_decision(cls):
    assert resolve(h_geometry(2, 4, 3, 1, half, cls)).action_1 is Resolution.NO_DECISION


def test_same_class_without_meeting_proceeds():
    g = h_geometry(1, 1, 4, Fraction(1, 4), 1, SAME)  # train 2 is ahead and faster
    assert not g.conflict_in_section
    assert resolve(g).action_1 is Resolution.PROCEED


def test_contract_errors():
    with pytest.raises(ContractError):
        resolve_opposite(h_geometry(1, 2, 3, direction_class=SAME))
    with pytest.raises(ContractError):
        resolve_same(h_geometry(1, 2, 3))
    with pytest.raises(ContractError):
        estimated_times(h_geometry(0, 2, 3))
    with pytest.raises(ValueError):
        h_geometry(1, 1, 0)
    with pytest.raises(ValueError):
        h_geometry(1, 1, 2, Fraction(3, 2))


@given(d1=st.integers(-5, 5), d2=st.integers(-5, 15), l=st.integers(1, 10), v1=speeds, v2=speeds,
       cls=st.sampled_from([OPP, SAME]))
def test_resolution_invariants(d1, d2, l, v1, v2, cls):
    res = resolve(h_geometry(d1, d2, l, v1, v2, cls))
    if res.action_1 is Resolution.DEADLOCK:
        assert cls is OPP and d1 <= 0 and d2 <= 0
    for t in (res.t_proceed, res.t_yield):
        assert t is None or t > 0


@given(d2=st.integers(0, 30), l=st.integers(1, 20), v1=speeds, v2=speeds)
def test_yield_time_strictly_increasing_in_d2_and_l(d2, l, v1, v2):
    _, t2 = opposite_times(1, d2, l, v1, v2)
    assert opposite_times(1, d2 + 1, l, v1, v2)[1] > t2
    assert opposite_times(1, d2, l + 1, v1, v2)[1] > t2


@given(l=st.integers(1, 10))
def test_symmetric_unit_speed_proceeds(l):
    res = resolve(h_geometry(1, 1, l))
    assert res.action_1 is Resolution.PROCEED
    assert res.t_proceed == res.t_yield


def test_resolver_cost_does_not_depend_on_size():
    big = ConflictGeometry(1, 10**9, 10**9, Fraction(1), Fraction(1, 3), OPP)
    start = time.perf_counter()
    for _ in range(1000):
        resolve(big)
    assert time.perf_counter() - start < 1.0


# -- oracle


def test_oracle_worked_example():
    o = oracle_simulate(h_geometry(2, 4, 3, 1, half))
    assert o.best_order is Ordering.FIRST_GOES_1
    assert o.time_order1 < o.time_order2


@pytest.mark.parametrize("d,l,v", [(1, 1, 1), (3, 4, 1), (2, 3, half)])
def test_oracle_symmetric_tie(d, l, v):
    o = oracle_simulate(h_geometry(d, d, l, v, v))
    assert o.best_order is Ordering.TIE


def test_oracle_deadlock_both_inside():
    o = oracle_simulate(h_geometry(0, 0, 3))
    assert o.best_order is Ordering.DEADLOCK
    assert o.time_order1 == o.time_order2 == INF


def test_oracle_counts_unit_speed_steps():
    # head-on, l = 1, both adjacent: leader needs 2 steps, follower enters after and
    # needs 2 more: 2 + 4
    o = oracle_simulate(h_geometry(1, 1, 1))
    assert (o.time_order1, o.time_order2) == (6, 6)


def test_oracle_domain_and_feasibility():
    with pytest.raises(OracleDomainError):
        oracle_simulate(h_geometry(1, 65, 3))
    with pytest.raises(OracleDomainError):
        oracle_simulate(h_geometry(1, 1, 65))
    with pytest.raises(OracleDomainError):
        oracle_simulate(h_geometry(1, 1, 3, Fraction(1, 9)))
    with pytest.raises(InfeasibleGeometryError):
        oracle_simulate(h_geometry(-2, -1, 4))  # head-on trains already overlapping
    with pytest.raises(InfeasibleGeometryError):
        oracle_simulate(h_geometry(-1, 2, 4, direction_class=SAME))


def test_analytic_matches_oracle_on_decision_grid():
    cases = agreement_sweep()
    assert len(cases) == 2 * 15 * 8 * 16
    bad = [c for c in cases if not c.ok]
    assert not bad, bad[:3]


def test_deadlock_classification_matches_oracle():
    cases = deadlock_sweep()
    assert cases
    assert all(c.ok for c in cases)
    assert any(c.oracle.best_order is Ordering.DEADLOCK for c in cases)
