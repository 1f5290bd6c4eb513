import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avdbn.graph import (
    HIDDEN_AU,
    Cpt,
    NetworkSpec,
    Variable,
    dumps_model,
    joint_log_prob,
    load_model,
    loads_model,
    save_model,
    topological_order,
    validate,
)
from avdbn.simulate import paper_instance

from oracles import random_dbn


def binary(name):
    return Variable(name, 2, HIDDEN_AU)


def chain_spec(p_a=0.3, p_b_given_a=(0.2, 0.9)):
    a, b = binary("A"), binary("B")
    cpts = {
        "A": Cpt("A", [], [1 - p_a, p_a]),
        "B": Cpt("B", ["A"], [[1 - p_b_given_a[0], p_b_given_a[0]], [1 - p_b_given_a[1], p_b_given_a[1]]]),
    }
    return NetworkSpec((a, b), (("A", "B"),), (), cpts)


def test_paper_instance_is_valid():
    assert validate(paper_instance()) == []


def test_bad_row_sum_names_cpt_and_row():
    spec = chain_spec()
    bad = dict(spec.cpts)
    bad["B"] = Cpt("B", ["A"], [[0.8, 0.2], [0.08, 0.9]])
    problems = validate(NetworkSpec(spec.variables, spec.intra_edges, (), bad))
    assert len(problems) == 1
    assert "'B'" in problems[0] and "row 1" in problems[0]


def test_cycle_reported_once():
    v = (binary("AU25"), binary("AU26"))
    spec = NetworkSpec(v, (("AU25", "AU26"), ("AU26", "AU25")), ())
    problems = validate(spec, require_cpts=False)
    assert len(problems) == 1 and "cycle" in problems[0]


def test_measurement_rules():
    from avdbn.graph import MEASUREMENT_AU

    v = (binary("A"), binary("B"), Variable("O_A", 2, MEASUREMENT_AU))
    ok = NetworkSpec(v, (("A", "O_A"),), ())
    assert validate(ok, require_cpts=False) == []
    two_parents = NetworkSpec(v, (("A", "O_A"), ("B", "O_A")), ())
    assert validate(two_parents, require_cpts=False)
    child = NetworkSpec(v, (("A", "O_A"), ("O_A", "B")), ())
    assert validate(child, require_cpts=False)
    inter = NetworkSpec(v, (("A", "O_A"),), (("O_A", "A"),))
    assert validate(inter, require_cpts=False)


def test_au_must_be_binary():
    spec = NetworkSpec((Variable("A", 3, HIDDEN_AU),), (), ())
    assert validate(spec, require_cpts=False)


def test_joint_log_prob_examples():
    a, b = binary("A"), binary("B")
    fair = NetworkSpec((a, b), (), (), {"A": Cpt("A", [], [0.5, 0.5]), "B": Cpt("B", [], [0.5, 0.5])})
    assert joint_log_prob(fair, {"A": 0, "B": 0}) == pytest.approx(math.log(0.25), abs=1e-15)
    assert joint_log_prob(chain_spec(), {"A": 1, "B": 1}) == pytest.approx(math.log(0.27), abs=1e-15)
    det = chain_spec(p_a=1.0)
    assert joint_log_prob(det, {"A": 0, "B": 0}) == -math.inf


def test_joint_log_prob_rejects_partial_assignment():
    with pytest.raises(ValueError):
        joint_log_prob(chain_spec(), {"A": 1})


def test_topological_order():
    v = (binary("AU26"), binary("AU25"), Variable("Phone", 3, "hidden-phone"))
    spec = NetworkSpec(v, (("Phone", "AU25"), ("AU25", "AU26")), ())
    assert topological_order(spec) == ["Phone", "AU25", "AU26"]
    free = NetworkSpec((binary("C"), binary("A"), binary("B")), (), ())
    assert topological_order(free) == ["C", "A", "B"]
    cyc = NetworkSpec((binary("A"), binary("B")), (("A", "B"), ("B", "A")), ())
    with pytest.raises(ValueError):
        topological_order(cyc)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_joint_sums_to_one_and_order_respects_edges(seed):
    rng = np.random.default_rng(seed)
    spec = random_dbn(rng, dynamic=False)
    names = spec.names
    cards = [spec.card(n) for n in names]
    if math.prod(cards) > 4096:
        return
    total = math.fsum(
        math.exp(joint_log_prob(spec, dict(zip(names, states))))
        for states in itertools.product(*[range(k) for k in cards])
    )
    assert total == pytest.approx(1.0, abs=1e-9)
    order = topological_order(spec)
    assert sorted(order) == sorted(names)
    pos = {n: i for i, n in enumerate(order)}
    assert all(pos[a] < pos[b] for a, b in spec.intra_edges)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_model_round_trip_is_bit_exact(seed):
    spec = random_dbn(np.random.default_rng(seed))
    text = dumps_model(spec)
    back = loads_model(text)
    assert back == spec
    assert dumps_model(back) == text


def test_model_file_round_trip(tmp_path):
    spec = paper_instance()
    path = tmp_path / "m.json"
    save_model(spec, path)
    assert load_model(path) == spec
    assert validate(load_model(path)) == []


def test_load_model_reports_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format_version": "1",\n "variables": [}\n')
    with pytest.raises(ValueError, match="bad.json:2"):
        load_model(path)


def test_cpt_is_read_only():
    c = Cpt("A", [], [0.5, 0.5])
    with pytest.raises(AttributeError):
        c.child = "B"
    with pytest.raises(ValueError):
        c.table[0, 0] = 1.0
