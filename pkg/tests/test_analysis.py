import math
from types import SimpleNamespace

import pytest
from hypothesis import given, settings, strategies as st

from gas_spiketime.analysis import (
    CURVE_COLUMNS,
    aggregate,
    curves_csv,
    export,
    inverse_csv,
    monotonicity,
    render_svg,
    spearman,
)
from gas_spiketime.errors import DomainError


def tr(dt):
    return SimpleNamespace(delta_t=dt)


def grid(delays_by_level, gas="EB"):
    out = {}
    for level, delays in delays_by_level.items():
        for i, d in enumerate(delays):
            out[(gas, level, i)] = tr(d)
    return out


def test_cell_statistics_example():
    curves = aggregate(grid({1: [2.0, 4.0], 2: [1.0, None]}))
    (c,) = curves
    s1, s2 = c.level(1), c.level(2)
    assert (s1.n_valid, s1.n_discarded) == (2, 0)
    assert s1.mean_delta_t == 3.0 and s1.std_delta_t == 1.0
    assert s1.mean_inverse_dt == pytest.approx(1 / 3)
    assert s1.mean_of_inverse == pytest.approx(0.375)
    assert s1.std_of_inverse == pytest.approx(0.125)
    assert (s2.n_valid, s2.n_discarded, s2.mean_delta_t) == (1, 1, 1.0)
    assert c.level(3).empty and c.level(3).mean_delta_t is None


def test_decreasing_delay_is_perfectly_monotone():
    c = aggregate(grid({lv: [1.0 / lv] for lv in range(1, 6)}))[0]
    assert monotonicity(c) == 1.0


def test_increasing_delay_is_anti_monotone():
    c = aggregate(grid({lv: [float(lv)] for lv in range(1, 6)}))[0]
    assert monotonicity(c) == -1.0


def test_monotonicity_needs_two_levels():
    with pytest.raises(DomainError):
        monotonicity(aggregate(grid({3: [1.0, 2.0]}))[0])
    with pytest.raises(DomainError):
        monotonicity(aggregate(grid({1: [None], 2: [1.0]}))[0])


def test_spearman_basics():
    assert spearman([1, 2, 3], [10, 20, 30]) == 1.0
    assert spearman([1, 2, 3], [3, 2, 1]) == -1.0
    assert math.isnan(spearman([1, 2, 3], [5, 5, 5]))
    assert spearman([1, 2, 3, 4], [1, 2, 2, 3]) == pytest.approx(0.9486832980505138)
    with pytest.raises(DomainError):
        spearman([1], [1])


@given(st.lists(st.floats(0.01, 100, allow_nan=False), min_size=2, max_size=12, unique=True))
def test_spearman_invariant_under_reciprocal(xs):
    ys = list(range(len(xs)))
    assert spearman(ys, xs) == pytest.approx(-spearman(ys, [1 / x for x in xs]))


cells = st.dictionaries(
    st.tuples(st.sampled_from(["EB", "Eu", "IA", "2H"]), st.integers(1, 5), st.integers(0, 19)),
    st.one_of(st.none(), st.floats(0.01, 5.0)),
    max_size=40,
)


@settings(max_examples=60)
@given(cells, st.randoms(use_true_random=False))
def test_aggregate_invariant_to_order(traces, rnd):
    items = list(traces.items())
    rnd.shuffle(items)
    a = aggregate({k: tr(v) for k, v in traces.items()})
    b = aggregate({k: tr(v) for k, v in items})
    assert a == b


@settings(max_examples=60)
@given(cells)
def test_trial_counts_conserved(traces):
    curves = aggregate({k: tr(v) for k, v in traces.items()})
    total = sum(s.n_valid + s.n_discarded for c in curves for s in c.levels)
    assert total == len(traces)
    discarded = sum(s.n_discarded for c in curves for s in c.levels)
    assert discarded == sum(1 for v in traces.values() if v is None)


def four_gas():
    out = {}
    for gas in ("2H", "IA", "Eu", "EB"):
        out.update(grid({lv: [1.0 / lv, 1.1 / lv] for lv in range(1, 6)}, gas))
    return out


def test_csv_shape_and_order():
    curves = aggregate(four_gas())
    assert [c.gas for c in curves] == ["EB", "Eu", "IA", "2H"]
    lines = curves_csv(curves).splitlines()
    assert lines[0] == ",".join(CURVE_COLUMNS)
    assert len(lines) == 21
    assert len(inverse_csv(curves).splitlines()) == 21


def test_empty_cell_has_blank_statistics():
    lines = curves_csv(aggregate(grid({1: [1.0], 2: [None]}))).splitlines()
    assert lines[2] == "EB,2,0,1,,,"
    assert lines[3] == "EB,3,0,0,,,"


def test_export_byte_identical(tmp_path):
    curves = aggregate(four_gas())
    a = export(curves, tmp_path / "a")
    b = export(aggregate(dict(reversed(list(four_gas().items())))), tmp_path / "b")
    assert [p.name for p in a] == ["curves.csv", "curves_inverse.csv", "curves.svg"]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    assert render_svg(curves).lstrip().startswith("<?xml")


def test_export_rejects_bad_input(tmp_path):
    with pytest.raises(DomainError):
        export([], tmp_path)
    with pytest.raises(DomainError):
        export(aggregate(four_gas()), tmp_path, ["png"])
