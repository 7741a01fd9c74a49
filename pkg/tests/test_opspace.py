import io
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edge_rtm import bundled_path
from edge_rtm.opspace import (
    Budgets,
    DomainError,
    DuplicateKeyError,
    InvariantViolation,
    OperatingPoint,
    OperatingPointTable,
    ResourceSlot,
    TableParseError,
    UsageError,
    dominates,
    dump_table,
    energy_of,
    feasible_points,
    load_table,
    load_table_file,
    pareto_frontier,
)

from helpers import pareto_oracle, random_table

TABLE1 = bundled_path("data/table1.csv")
CASESTUDY = bundled_path("data/casestudy.csv")


def pt(t=10.0, p=100.0, e=1.0, acc=70.0, wid="w", level=Fraction(1), slot=("a", 1, 100)):
    return OperatingPoint(wid, level, ResourceSlot(*slot), t, p, e, acc)


# energy_of ------------------------------------------------------------------

def test_energy_of_jetson_gpu_row():
    e = energy_of(1340, 7.4)
    assert e == pytest.approx(9.916)
    assert abs(e - 9.92) / 9.92 < 0.001


def test_energy_of_a15_top_row():
    assert energy_of(2120, 117) == pytest.approx(248.04)


def test_energy_of_unit_identity():
    assert energy_of(1000, 0.001) == pytest.approx(0.001, abs=1e-15)


@pytest.mark.parametrize("power,time", [(0, 1), (1, 0), (-5, 2), (3, -1)])
def test_energy_of_rejects_non_positive(power, time):
    with pytest.raises(DomainError):
        energy_of(power, time)


# dominates -----------------------------------------------------------------

def test_dominates_self_is_false():
    a = pt()
    assert not dominates(a, a)


def test_dominates_strictly_faster():
    assert dominates(pt(t=5), pt(t=10))


def test_dominates_incomparable():
    fast_inaccurate = pt(t=5, acc=60)
    slow_accurate = pt(t=10, acc=70)
    assert not dominates(fast_inaccurate, slow_accurate)
    assert not dominates(slow_accurate, fast_inaccurate)


def test_dominates_counts_power():
    assert dominates(pt(p=50), pt(p=100))


def test_dominates_mismatched_workloads():
    with pytest.raises(UsageError):
        dominates(pt(wid="x"), pt(wid="y"))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(*(st.integers(0, 3),) * 4), min_size=3, max_size=3))
def test_dominates_irreflexive_and_transitive(vals):
    a, b, c = (pt(t=v[0], e=v[1], p=v[2], acc=v[3], slot=("a", 1, 100 + i)) for i, v in enumerate(vals))
    for x in (a, b, c):
        assert not dominates(x, x)
    if dominates(a, b) and dominates(b, c):
        assert dominates(a, c)


# pareto_frontier -----------------------------------------------------------

def test_frontier_single_point():
    t = OperatingPointTable([pt()])
    assert list(pareto_frontier(t)) == [pt()]


def test_frontier_keeps_incomparable_pair():
    a, b = pt(t=5, acc=60, slot=("a", 1, 1)), pt(t=10, acc=70, slot=("a", 1, 2))
    assert set(pareto_frontier(OperatingPointTable([a, b]))) == {a, b}


def test_frontier_empty_table():
    assert len(pareto_frontier(OperatingPointTable())) == 0


def test_frontier_mixed_workloads():
    with pytest.raises(UsageError):
        pareto_frontier(OperatingPointTable([pt(wid="x"), pt(wid="y")]))


def test_frontier_order_is_time_energy_resource():
    rng = random.Random(3)
    front = pareto_frontier(random_table(rng, 200))
    keys = [(p.exec_time, p.energy, p.resource.key(), p.config_level) for p in front]
    assert keys == sorted(keys)


@pytest.mark.parametrize("seed", range(20))
def test_frontier_matches_pairwise_oracle(seed):
    rng = random.Random(seed)
    table = random_table(rng, rng.randint(1, 512), coarse=seed % 2 == 0)
    assert set(pareto_frontier(table)) == set(pareto_oracle(list(table)))


@pytest.mark.parametrize("seed", range(5))
def test_frontier_sound_and_complete(seed):
    table = random_table(random.Random(100 + seed), 150)
    front = list(pareto_frontier(table))
    for p in front:
        assert not any(dominates(q, p) for q in table)
    for p in set(table) - set(front):
        assert any(dominates(q, p) for q in front)


# feasible_points -----------------------------------------------------------

def test_feasible_unbounded_is_everything():
    t = load_table_file(CASESTUDY)
    assert feasible_points(t, Budgets()) == t


def test_feasible_zero_time_is_empty():
    t = load_table_file(CASESTUDY)
    assert len(feasible_points(t, Budgets(t_max=0))) == 0


def test_feasible_casestudy_contains_a7_900():
    t = load_table_file(CASESTUDY)
    f = feasible_points(t, Budgets(t_max=400, e_max=100))
    assert f.get("casestudy-dnn", Fraction(1), ResourceSlot("a7", 4, 900)) is not None


@pytest.mark.parametrize("seed", range(5))
def test_feasible_idempotent(seed):
    rng = random.Random(seed)
    table = random_table(rng, 100)
    b = Budgets(t_max=rng.randint(1, 12), e_max=rng.randint(1, 12), p_max=rng.randint(1, 12), acc_min=65)
    once = feasible_points(table, b)
    assert feasible_points(once, b) == once
    assert all(b.admits(p) for p in once)


def test_budgets_reject_negative():
    with pytest.raises(DomainError):
        Budgets(t_max=-1)


# load_table ----------------------------------------------------------------

def test_load_table1():
    t = load_table_file(TABLE1)
    assert len(t) == 10
    assert {p.accuracy for p in t} == {71.2}
    assert {p.platform for p in t} == {"jetson-nano", "odroid-xu3"}


def test_load_empty_file():
    with pytest.raises(TableParseError):
        load_table(b"")


def test_load_header_only():
    with pytest.raises(TableParseError):
        load_table(TABLE1.read_bytes().splitlines()[0] + b"\n")


def test_load_bad_header():
    with pytest.raises(TableParseError, match="missing"):
        load_table(b"workload_id,cluster\nx,a\n")


def test_load_non_numeric():
    text = TABLE1.read_text().replace("7.4,1340", "fast,1340")
    with pytest.raises(TableParseError, match="row 1"):
        load_table(text)


def test_load_perturbed_energy_names_row():
    lines = TABLE1.read_text().splitlines()
    # A57 @ 921 MHz: 878 mW * 69.4 ms = 60.93 mJ; 64.5 is 5.9% off
    lines[3] = lines[3].replace(",60.9,", ",64.5,")
    with pytest.raises(InvariantViolation) as exc:
        load_table("\n".join(lines) + "\n")
    assert exc.value.diagnostics[0].startswith("row 3:")
    assert "deviates" in exc.value.diagnostics[0]


def test_load_duplicate_key():
    lines = TABLE1.read_text().splitlines()
    lines.append(lines[1])
    with pytest.raises(DuplicateKeyError, match="row 11"):
        load_table("\n".join(lines))


def test_load_accuracy_must_not_depend_on_resource():
    text = TABLE1.read_text().replace("1780,72.4,129,71.2", "1780,72.4,129,70.0")
    with pytest.raises(InvariantViolation, match="differs"):
        load_table(text)


def test_load_rejects_non_monotone_time():
    header = TABLE1.read_text().splitlines()[0]
    rows = [
        "w,p,a,1,100,50,20,10,0.2,60",
        "w,p,a,1,100,100,10,10,0.1,70",
    ]
    with pytest.raises(InvariantViolation, match="time_ms decreases"):
        load_table("\n".join([header] + rows))


def test_load_accuracy_range():
    text = TABLE1.read_text().replace("71.2", "171.2")
    with pytest.raises(InvariantViolation, match=r"\[0, 100\]"):
        load_table(text)


def test_error_kinds_are_distinct():
    kinds = {TableParseError.kind, DuplicateKeyError.kind, InvariantViolation.kind}
    assert len(kinds) == 3


def test_load_json_mirror_matches_csv():
    t = load_table_file(CASESTUDY)
    j = load_table(dump_table(t, "json"), "json")
    assert j == t


def test_load_json_wrong_fields():
    with pytest.raises(TableParseError):
        load_table('[{"workload_id": "x"}]', "json")


def test_load_from_stream():
    with open(TABLE1, "rb") as fh:
        assert len(load_table(fh)) == 10
    assert len(load_table(io.StringIO(TABLE1.read_text()))) == 10


finite = st.floats(min_value=0.01, max_value=1e5, allow_nan=False, allow_infinity=False)


@st.composite
def tables(draw):
    n = draw(st.integers(1, 12))
    keys = draw(st.lists(st.tuples(st.sampled_from([Fraction(1, 3), Fraction(1, 2), Fraction(1)]),
                                   st.sampled_from(["a", "b"]), st.integers(1, 4), st.integers(1, 3000)),
                         min_size=n, max_size=n, unique=True))
    pts = []
    for level, c, k, f in keys:
        t, p = draw(finite), draw(finite)
        pts.append(OperatingPoint(draw(st.sampled_from(["w1", "w2"])), level, ResourceSlot(c, k, f), t, p,
                                  p * t / 1000 if p * t > 0 else 1.0,
                                  draw(st.floats(0, 100, allow_nan=False)), draw(st.sampled_from(["", "soc"]))))
    return OperatingPointTable(pts)


@settings(max_examples=100, deadline=None)
@given(tables(), st.sampled_from(["csv", "json"]))
def test_serialize_roundtrip(table, fmt):
    text = dump_table(table, fmt)
    from edge_rtm.opspace import _parse_records, _point_of
    records = _parse_records(text, fmt)
    back = OperatingPointTable(_point_of(i, r) for i, r in enumerate(records, start=1))
    assert set(back) == set(table)
    assert list(back) == list(table)


def test_roundtrip_through_load_table():
    t = load_table_file(CASESTUDY)
    assert load_table(dump_table(t, "csv")) == t
