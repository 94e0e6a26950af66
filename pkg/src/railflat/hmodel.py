"""Closed-form resolution of an H-shaped two-train conflict, plus a brute-force
micro-simulation used to check it.

Times are exact fractions of timesteps. "Proceed" means train 1 enters the
critical section first, "Stop" means it waits for train 2. Terms that go
negative for small d2 are clamped at zero.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

from .conflict import ConflictGeometry, DirectionClass, meeting_index

INF = math.inf
Time = Fraction | float  # float only for the infinite sentinel

ORACLE_MAX_DISTANCE = 64
ORACLE_MAX_LENGTH = 64
ORACLE_MAX_DENOMINATOR = 8


class HModelError(ValueError):
    pass


class ContractError(HModelError):
    """Geometry of the wrong class or outside the operation's domain."""


class OracleDomainError(HModelError):
    pass


class InfeasibleGeometryError(HModelError):
    """The two trains would overlap or have already passed each other."""


class Resolution(enum.Enum):
    PROCEED = "proceed"
    STOP = "stop"
    DEADLOCK = "deadlock"
    NO_DECISION = "no_decision"


@dataclass(frozen=True)
class HResolution:
    action_1: Resolution
    t_proceed: Time | None
    t_yield: Time | None
    direction_class: DirectionClass


def _clear_time(d1: int, l: int, v1: Fraction) -> Fraction:
    return Fraction(d1 + l) / v1


def opposite_times(d1: int, d2: int, l: int, v1: Fraction, v2: Fraction) -> tuple[Fraction, Fraction]:
    """(train 1 first, train 2 first) cumulative times for head-on traffic."""
    a = _clear_time(d1, l, v1)
    t1 = a + max(a, Fraction(max(d2 - 1, 0)) / v2) + Fraction(l + 1) / v2
    t2 = 2 * Fraction(d2 + l) / v2 + a
    return t1, t2


def same_times(d1: int, d2: int, l: int, v1: Fraction, v2: Fraction) -> tuple[Fraction, Fraction]:
    """(train 1 first, train 2 first) cumulative times for same-direction traffic."""
    a = _clear_time(d1, l, v1)
    return 2 * a, Fraction(max(2 * d2 - l, 0)) / v2 + a


def _pick(t_proceed: Time, t_yield: Time) -> Resolution:
    return Resolution.PROCEED if t_proceed <= t_yield else Resolution.STOP


def resolve_opposite(g: ConflictGeometry) -> HResolution:
    if g.direction_class is not DirectionClass.OPPOSITE:
        raise ContractError("resolve_opposite needs an opposite-direction geometry")
    cls = g.direction_class
    if g.d1 > 1:
        return HResolution(Resolution.NO_DECISION, None, None, cls)
    if g.d1 == 1:
        if g.d2 >= 1:
            t1, t2 = opposite_times(g.d1, g.d2, g.l, g.v1, g.v2)
            return HResolution(_pick(t1, t2), t1, t2, cls)
        _, t2 = opposite_times(g.d1, 0, g.l, g.v1, g.v2)
        return HResolution(Resolution.STOP, INF, t2, cls)
    if g.d2 > 0:
        return HResolution(Resolution.PROCEED, None, None, cls)
    return HResolution(Resolution.DEADLOCK, None, None, cls)


def resolve_same(g: ConflictGeometry) -> HResolution:
    if g.direction_class is not DirectionClass.SAME:
        raise ContractError("resolve_same needs a same-direction geometry")
    cls = g.direction_class
    if g.d1 != 1:
        return HResolution(Resolution.NO_DECISION, None, None, cls)
    t1, t2 = same_times(g.d1, g.d2, g.l, g.v1, g.v2)
    if not g.conflict_in_section:
        return HResolution(Resolution.PROCEED, t1, t2, cls)
    return HResolution(_pick(t1, t2), t1, t2, cls)


def resolve(g: ConflictGeometry) -> HResolution:
    if g.direction_class is DirectionClass.OPPOSITE:
        return resolve_opposite(g)
    return resolve_same(g)


def estimated_times(g: ConflictGeometry) -> tuple[Time, Time]:
    """(t_proceed, t_yield) for a train still ahead of its entry switch."""
    if g.d1 < 1:
        raise ContractError(f"estimated_times needs d1 >= 1, got {g.d1}")
    if g.direction_class is DirectionClass.OPPOSITE:
        if g.d2 < 1:
            return INF, opposite_times(g.d1, 0, g.l, g.v1, g.v2)[1]
        return opposite_times(g.d1, g.d2, g.l, g.v1, g.v2)
    return same_times(g.d1, g.d2, g.l, g.v1, g.v2)


def h_geometry(
    d1: int,
    d2: int,
    l: int,
    v1: Fraction | int = 1,
    v2: Fraction | int = 1,
    direction_class: DirectionClass = DirectionClass.OPPOSITE,
) -> ConflictGeometry:
    """Synthetic geometry on a straight virtual section ``(0, 0) .. (0, l-1)``."""
    if l < 1:
        raise ValueError(f"section length must be >= 1, got {l}")
    v1, v2 = Fraction(v1), Fraction(v2)
    section = tuple((0, k) for k in range(l))
    cell = None
    if direction_class is DirectionClass.SAME:
        k = meeting_index(d1, d2, l, v1, v2)
        cell = section[k] if k is not None else None
    return ConflictGeometry(
        d1=d1,
        d2=d2,
        l=l,
        v1=v1,
        v2=v2,
        direction_class=direction_class,
        conflict_cell=cell,
        s1=section[0],
        s2=section[-1],
        section=section,
    )


# --------------------------------------------------------------------------
# oracle


class Ordering(enum.Enum):
    FIRST_GOES_1 = "first_goes_1"
    FIRST_GOES_2 = "first_goes_2"
    TIE = "tie"
    DEADLOCK = "deadlock"


@dataclass(frozen=True)
class OracleResult:
    best_order: Ordering
    time_order1: int | float
    time_order2: int | float


def _check_domain(g: ConflictGeometry) -> None:
    if abs(g.d1) > ORACLE_MAX_DISTANCE or abs(g.d2) > ORACLE_MAX_DISTANCE:
        raise OracleDomainError(f"|d1|, |d2| must be <= {ORACLE_MAX_DISTANCE}")
    if g.l > ORACLE_MAX_LENGTH:
        raise OracleDomainError(f"l must be <= {ORACLE_MAX_LENGTH}")
    for v in (g.v1, g.v2):
        if v.denominator > ORACLE_MAX_DENOMINATOR:
            raise OracleDomainError(f"speed denominators must be <= {ORACLE_MAX_DENOMINATOR}")


def _coordinates(g: ConflictGeometry) -> tuple[int, int]:
    """Starting coordinates along each train's own direction of travel.

    Section cells have coordinates 0..l-1 measured from the train's entry
    end; anything else is on that train's private approach or exit track.
    """
    x1 = -g.d1
    if g.direction_class is DirectionClass.OPPOSITE:
        return x1, -g.d2
    return x1, (g.l - 1) - g.d2


def _micro_sim(g: ConflictGeometry, x1: int, x2: int, leader: int) -> int | float:
    """Cumulative completion steps with ``leader`` given the section first."""
    l = g.l
    opposite = g.direction_class is DirectionClass.OPPOSITE
    x = [x1, x2]
    speed = (g.v1, g.v2)
    progress = [Fraction(0), Fraction(0)]
    done: list[int | None] = [0 if xi >= l else None for xi in x]
    follower = 1 - leader

    def cell(i: int, xi: int):
        if xi < 0 or xi >= l:
            return ("track", i, xi)
        return ("section", l - 1 - xi if opposite and i == 1 else xi)

    t = 0
    while done[0] is None or done[1] is None:
        t += 1
        snap = list(x)
        changed = False
        for i in (leader, follower):
            if done[i] is not None:
                continue
            nxt = x[i] + 1
            if i == follower and nxt == 0:
                if opposite:
                    allowed = snap[leader] >= l  # whole section clear
                elif leader == 0:
                    allowed = True  # train 2 simply follows behind
                else:
                    allowed = snap[leader] >= 1  # train 2 has passed the entry switch
                if not allowed:
                    continue
            j = 1 - i
            if done[j] is None and cell(i, nxt) == cell(j, x[j]):
                continue
            progress[i] += speed[i]
            changed = True
            if progress[i] >= 1:
                progress[i] -= 1
                x[i] = nxt
                if x[i] >= l:
                    done[i] = t
        if not changed:
            return INF
    return done[0] + done[1]


def oracle_simulate(g: ConflictGeometry) -> OracleResult:
    """Step both trains cell by cell under each entry ordering.

    The yielding train waits one cell before its entry switch: in head-on
    traffic until the leader has left the section, in same-direction
    traffic (train 1 yielding) until the leader has passed the entry switch.
    A run where neither train can ever move again counts as infinite.
    """
    _check_domain(g)
    x1, x2 = _coordinates(g)
    l = g.l
    in1, in2 = 0 <= x1 < l, 0 <= x2 < l
    if g.direction_class is DirectionClass.OPPOSITE:
        if in1 and in2 and x1 >= l - 1 - x2:
            raise InfeasibleGeometryError("head-on trains overlap or have passed each other")
    elif in1 and in2 and x1 == x2:
        raise InfeasibleGeometryError("trains start on the same cell")

    c1 = _micro_sim(g, x1, x2, leader=0)
    c2 = _micro_sim(g, x1, x2, leader=1)
    if c1 == INF and c2 == INF:
        best = Ordering.DEADLOCK
    elif c1 == c2:
        best = Ordering.TIE
    else:
        best = Ordering.FIRST_GOES_1 if c1 < c2 else Ordering.FIRST_GOES_2
    return OracleResult(best, c1, c2)


def agrees(resolution: HResolution, oracle: OracleResult) -> bool:
    """Whether an analytic action picks the oracle's better ordering."""
    if oracle.best_order is Ordering.DEADLOCK:
        return resolution.action_1 is Resolution.DEADLOCK
    if oracle.best_order is Ordering.TIE:
        return resolution.action_1 in (Resolution.PROCEED, Resolution.STOP)
    want = Resolution.PROCEED if oracle.best_order is Ordering.FIRST_GOES_1 else Resolution.STOP
    return resolution.action_1 is want


# --------------------------------------------------------------------------
# exhaustive checks against the oracle

SWEEP_SPEEDS = (Fraction(1), Fraction(1, 2), Fraction(1, 3), Fraction(1, 4))


@dataclass(frozen=True)
class SweepCase:
    geometry: ConflictGeometry
    resolution: HResolution
    oracle: OracleResult
    exempt: bool  # orderings too close to call

    @property
    def ok(self) -> bool:
        return self.exempt or agrees(self.resolution, self.oracle)


def _near_tie(o: OracleResult, v1: Fraction, v2: Fraction) -> bool:
    if o.time_order1 == o.time_order2:
        return True
    return abs(o.time_order1 - o.time_order2) <= 2 / min(v1, v2)


def agreement_sweep(
    d2_values=range(-2, 13), lengths=range(1, 9), speeds=SWEEP_SPEEDS, classes=tuple(DirectionClass)
) -> list[SweepCase]:
    """Resolve every decision geometry (d1 = 1) in the grid and compare with the oracle."""
    cases = []
    for cls in classes:
        for d2 in d2_values:
            for l in lengths:
                for v1 in speeds:
                    for v2 in speeds:
                        g = h_geometry(1, d2, l, v1, v2, cls)
                        o = oracle_simulate(g)
                        cases.append(SweepCase(g, resolve(g), o, _near_tie(o, g.v1, g.v2)))
    return cases


def deadlock_sweep(distances=range(-3, 1), lengths=range(1, 9), speeds=SWEEP_SPEEDS) -> list[SweepCase]:
    """Head-on geometries with both trains at or past their entry switches.

    Only placements where both trains lie inside the section without
    overlapping are physical; the rest are skipped.
    """
    cases = []
    for d1 in distances:
        for d2 in distances:
            for l in lengths:
                if l <= max(-d1, -d2):
                    continue
                for v1 in speeds:
                    for v2 in speeds:
                        g = h_geometry(d1, d2, l, v1, v2)
                        try:
                            o = oracle_simulate(g)
                        except InfeasibleGeometryError:
                            continue
                        cases.append(SweepCase(g, resolve(g), o, False))
    return cases
