from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from edge_rtm import bundled_path
from edge_rtm.opspace import Budgets, ResourceSlot, load_table_file
from edge_rtm.workload import (
    DEFAULT_LADDER,
    GOVERNOR_CHOSEN,
    DnnWorkload,
    LadderError,
    LifecycleError,
    OpaqueWorkload,
    ReconfigCost,
    active_demand,
    scale,
    switch_cost,
)

CASESTUDY = load_table_file(bundled_path("data/casestudy.csv"))


def dnn(**kw):
    return DnnWorkload.from_table("casestudy-dnn", CASESTUDY, **kw)


def test_from_table_derives_ladder():
    w = dnn()
    assert w.config_ladder == DEFAULT_LADDER
    assert w.accuracy_by_level[Fraction(1)] == pytest.approx(90.3)


def test_from_table_ladder_mismatch():
    with pytest.raises(LadderError, match="does not match"):
        dnn(config_ladder=[Fraction(1, 2), Fraction(1)])


def test_accuracy_must_be_monotone():
    with pytest.raises(LadderError, match="non-decreasing"):
        DnnWorkload("x", (Fraction(1, 2), Fraction(1)), {Fraction(1, 2): 80, Fraction(1): 70})


def test_priority_follows_t_max():
    strict = DnnWorkload("z", (Fraction(1),), {Fraction(1): 1}, budgets=Budgets(t_max=40))
    loose = DnnWorkload("a", (Fraction(1),), {Fraction(1): 1}, budgets=Budgets(t_max=100))
    assert sorted([loose, strict], key=lambda w: w.priority_key) == [strict, loose]


# scale ---------------------------------------------------------------------

def test_scale_identity():
    w = scale(dnn(), 1)
    assert scale(w, Fraction(1)) is w


def test_scale_down_and_back_restores_accuracy():
    w = scale(dnn(), 1)
    acc = w.accuracy
    back = scale(scale(w, Fraction(1, 4)), Fraction(1))
    assert back.accuracy == acc
    assert back == w


def test_scale_does_not_touch_accuracy_table():
    w = dnn()
    before = dict(w.accuracy_by_level)
    scale(w, Fraction(1, 2))
    assert w.accuracy_by_level == before


def test_scale_off_ladder():
    with pytest.raises(LadderError):
        scale(dnn(), Fraction(3, 5))


# switch_cost ---------------------------------------------------------------

def test_switch_cost_same_level():
    assert switch_cost(Fraction(1, 2), Fraction(1, 2), ReconfigCost(5, 5)) == (0, 0)


def test_switch_cost_rank_distance():
    assert switch_cost(Fraction(1, 4), Fraction(1), ReconfigCost(1.0, 2.5)) == (3.0, 7.5)


def test_switch_cost_default_is_free():
    for a in DEFAULT_LADDER:
        for b in DEFAULT_LADDER:
            assert switch_cost(a, b) == (0, 0)


def test_switch_cost_off_ladder():
    with pytest.raises(LadderError):
        switch_cost(Fraction(1, 3), Fraction(1))


def test_reconfig_cost_non_negative():
    with pytest.raises(ValueError):
        ReconfigCost(-1, 0)


levels = st.sampled_from(DEFAULT_LADDER)


@given(levels, levels, levels, st.floats(0.001, 100), st.floats(0, 100))
def test_switch_cost_is_metric(a, b, c, t, e):
    cost = ReconfigCost(t, e)
    d = lambda x, y: switch_cost(x, y, cost)[0]
    assert d(a, b) == d(b, a)
    assert (d(a, b) == 0) == (a == b)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9


# active_demand -------------------------------------------------------------

def test_active_demand_opaque():
    slot = ResourceSlot("gpu", 1, 800)
    vr = OpaqueWorkload("vr-ar", slot, 2500, arrival_ms=15000)
    assert active_demand(vr, 15000) == slot


def test_active_demand_dnn():
    assert active_demand(dnn(), 0) is GOVERNOR_CHOSEN


def test_active_demand_outside_lifetime():
    w = dnn(arrival_ms=100, exit_ms=200)
    with pytest.raises(LifecycleError):
        active_demand(w, 200)
    with pytest.raises(LifecycleError):
        active_demand(w, 99)
    assert active_demand(w, 199) is GOVERNOR_CHOSEN


def test_exit_must_follow_arrival():
    with pytest.raises(ValueError):
        OpaqueWorkload("o", ResourceSlot("gpu", 1, 800), 1, arrival_ms=10, exit_ms=10)
