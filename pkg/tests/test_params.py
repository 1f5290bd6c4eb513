import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avdbn.data import PHONE, meas_name
from avdbn.graph import HIDDEN_AU, MEASUREMENT_AU, NetworkSpec, Variable, validate
from avdbn.params import SmoothingPolicy, fit_all, fit_cpt
from avdbn.structure import SufficientStats


def stats(counts):
    return SufficientStats("X", (), np.atleast_2d(np.asarray(counts, dtype=np.int64)))


def test_fit_cpt_examples():
    assert fit_cpt(stats([3, 1]), SmoothingPolicy(1.0)).table[0].tolist() == pytest.approx([4 / 6, 2 / 6])
    assert fit_cpt(stats([3, 1]), SmoothingPolicy(0.0)).table[0].tolist() == [0.75, 0.25]
    assert fit_cpt(stats([0, 0]), SmoothingPolicy(0.0)).table[0].tolist() == [0.5, 0.5]


def test_negative_alpha_rejected():
    with pytest.raises(ValueError):
        SmoothingPolicy(-0.1)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.lists(st.integers(0, 50), min_size=2, max_size=5), min_size=1, max_size=4).filter(
        lambda rows: len({len(r) for r in rows}) == 1
    ),
    st.floats(0, 10),
    st.floats(0, 10),
)
def test_rows_normalised_and_alpha_monotone(rows, a1, a2):
    lo, hi = sorted((a1, a2))
    s = stats(rows)
    t_lo = fit_cpt(s, SmoothingPolicy(lo)).table
    t_hi = fit_cpt(s, SmoothingPolicy(hi)).table
    assert np.all(np.abs(t_lo.sum(axis=1) - 1) <= 1e-12)
    assert np.all(np.abs(t_hi.sum(axis=1) - 1) <= 1e-12)
    k = s.cardinality
    # larger alpha never moves an entry away from uniform
    assert np.all(np.abs(t_hi - 1 / k) <= np.abs(t_lo - 1 / k) + 1e-12)


def coin_spec():
    return NetworkSpec((Variable("A", 2, HIDDEN_AU),), (), ())


def test_fair_coin():
    rng = np.random.default_rng(0)
    fitted = fit_all(coin_spec(), {"A": rng.integers(0, 2, 1000)})
    assert abs(fitted.cpts["A"].table[0, 1] - 0.5) < 0.05
    assert validate(fitted) == []


def test_copy_channel_identity():
    v = (Variable("A", 2, HIDDEN_AU), Variable("O_A", 2, MEASUREMENT_AU))
    spec = NetworkSpec(v, (("A", "O_A"),), ())
    x = np.random.default_rng(1).integers(0, 2, 500)
    fitted = fit_all(spec, {"A": x, "O_A": x}, smoothing=SmoothingPolicy(0.0))
    assert np.array_equal(fitted.cpts["O_A"].table, np.eye(2))


def test_fit_all_errors():
    spec = NetworkSpec((Variable("A", 2, HIDDEN_AU),), (), (("A", "A"),))
    with pytest.raises(ValueError):
        fit_all(spec, {"A": [0, 1]})
    with pytest.raises(ValueError):
        fit_all(coin_spec(), {"B": [0, 1]})


def test_missing_measurements_skipped():
    v = (Variable("A", 2, HIDDEN_AU), Variable("O_A", 2, MEASUREMENT_AU))
    spec = NetworkSpec(v, (("A", "O_A"),), ())
    fitted = fit_all(spec, {"A": [1, 1, 1], "O_A": [1, -1, 0]}, smoothing=SmoothingPolicy(0.0))
    assert fitted.cpts["O_A"].table[1].tolist() == [0.5, 0.5]
    assert fitted.cpts["A"].table[0].tolist() == [0.0, 1.0]
