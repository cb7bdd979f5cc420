import json

import pytest
from hypothesis import given, strategies as st

from seq2cause.core import (And, Atom, EventSequence, InstanceTimeGraph, InvalidRuleError, LabeledSequence,
                            MarkovBoundaryGraph, MbEdge, Not, Or, ShapeError, SummaryGraph, TimeEdge, TypeEdge,
                            Vocabulary, deserialize_graph, is_not_free, parse_rule, project_summary, read_jsonl,
                            rule_eval, serialize_graph, to_dot, variables, write_jsonl)

A, B, C = 0, 1, 2
CLS = 5


def seq(*events):
    return EventSequence.from_events(events, CLS)


class TestSequences:
    def test_needs_an_event(self):
        with pytest.raises(ValueError):
            EventSequence((CLS,))

    def test_timestamps_nondecreasing_from_zero(self):
        EventSequence((CLS, 1, 2), (0.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            EventSequence((CLS, 1, 2), (0.0, 2.0, 1.0))
        with pytest.raises(ValueError):
            EventSequence((CLS, 1, 2), (0.5, 1.0, 2.0))

    def test_vocabulary_rejects_marker_after_start(self):
        v = Vocabulary(5)
        v.check(seq(0, 1, 4))
        with pytest.raises(ValueError):
            v.check(EventSequence((CLS, 1, CLS)))

    def test_labels_are_bits(self):
        with pytest.raises(ValueError):
            LabeledSequence(seq(0), (0, 2))
        assert LabeledSequence(seq(0), (1, 0, 1)).positive_labels() == (0, 2)

    def test_jsonl_round_trip(self, tmp_path):
        items = [seq(0, 1), LabeledSequence(seq(2, 3, 4), (0, 1))]
        p = tmp_path / "d.jsonl"
        write_jsonl(p, items)
        assert read_jsonl(p) == items


class TestRules:
    @pytest.mark.parametrize("text,present,expected", [
        ("A & !B", {A}, True),
        ("A | B", set(), False),
        ("(A & B) | !C", {C}, False),
        ("(A & B) | !C", set(), True),
        ("A && B || C", {C}, True),
        ("not A or B", {B}, True),
    ])
    def test_presence_semantics(self, text, present, expected):
        rule = parse_rule(text, {"A": A, "B": B, "C": C})
        assert rule.evaluate(present) is expected

    def test_rule_eval_on_sequences(self):
        r = parse_rule("x0 & !x1")
        assert rule_eval(r, seq(0, 2, 0), n_events=5)
        assert not rule_eval(r, seq(0, 1), n_events=5)

    def test_out_of_vocabulary_atom(self):
        with pytest.raises(InvalidRuleError):
            rule_eval(Atom(9), seq(0), n_events=5)

    def test_variables_sorted_dedup(self):
        r = parse_rule("dtc1 & dtc2 & !dtc5 | dtc3 | dtc1")
        assert variables(r) == (1, 2, 3, 5)
        assert not is_not_free(r)

    def test_text_round_trip(self):
        r = Or((And((Atom(1), Not(Atom(2)))), Atom(3)))
        assert parse_rule(r.to_text()) == r

    def test_parse_errors(self):
        for bad in ("A &", "(A | B", "A B", ""):
            with pytest.raises(InvalidRuleError):
                parse_rule(bad, {"A": 0, "B": 1})


rule_trees = st.recursive(
    st.integers(0, 5).map(Atom),
    lambda kids: st.one_of(st.lists(kids, min_size=2, max_size=3).map(lambda c: And(tuple(c))),
                           st.lists(kids, min_size=2, max_size=3).map(lambda c: Or(tuple(c)))),
    max_leaves=8,
)


@given(rule_trees, st.sets(st.integers(0, 5)), st.sets(st.integers(0, 5)))
def test_not_free_rules_are_monotone(rule, present, extra):
    if rule.evaluate(present):
        assert rule.evaluate(present | extra)


@given(rule_trees)
def test_rule_text_round_trip(rule):
    assert parse_rule(rule.to_text()).evaluate({0, 2, 4}) == rule.evaluate({0, 2, 4})


class TestGraphs:
    def test_time_edges_forward(self):
        with pytest.raises(ValueError):
            InstanceTimeGraph((CLS, 0, 1), (TimeEdge(2, 1, 0.1),))
        with pytest.raises(ValueError):
            InstanceTimeGraph((CLS, 0, 1), (TimeEdge(1, 1, 0.1),))

    def test_mb_edge_invariants(self):
        with pytest.raises(ValueError):
            MbEdge(0, 1, -0.1)
        with pytest.raises(ValueError):
            MbEdge(0, 1, 0.1, ace_mean=1.5)

    def test_projection_single_edge(self):
        g = InstanceTimeGraph((CLS, A, B), (TimeEdge(1, 2, 0.2),))
        s = project_summary(g, seq(A, B))
        assert s.edge_set() == {(A, B)}

    def test_projection_empty(self):
        assert project_summary(InstanceTimeGraph((CLS, A, B))).edges == ()

    @pytest.mark.parametrize("agg,expected", [("max", 0.3), ("mean", 0.2)])
    def test_projection_aggregates(self, agg, expected):
        g = InstanceTimeGraph((CLS, A, B, A, B), (TimeEdge(1, 2, 0.1), TimeEdge(3, 4, 0.3)))
        (e,) = project_summary(g, aggregate=agg).edges
        assert (e.src, e.dst) == (A, B) and e.strength == pytest.approx(expected)

    def test_projection_length_mismatch(self):
        with pytest.raises(ShapeError):
            project_summary(InstanceTimeGraph((CLS, A, B)), seq(A))

    def test_self_loops_allowed(self):
        g = InstanceTimeGraph((CLS, A, A), (TimeEdge(1, 2, 0.5),))
        assert project_summary(g).edge_set() == {(A, A)}


graphs = st.one_of(
    st.lists(st.tuples(st.integers(0, 3), st.integers(0, 6), st.floats(0, 5), st.floats(-1, 1), st.floats(0, 1)),
             max_size=6, unique_by=lambda t: t[:2]).map(
        lambda es: MarkovBoundaryGraph(tuple(MbEdge(j, e, c, a, s) for j, e, c, a, s in es), (0, 1))),
    st.lists(st.tuples(st.integers(0, 6), st.integers(1, 6), st.floats(0, 5)), max_size=6).map(
        lambda es: InstanceTimeGraph((CLS, 0, 1, 2, 3, 4, 0, 1),
                                     tuple({(a, a + b): TimeEdge(a, min(a + b, 7), c) for a, b, c in es
                                            if a + b <= 7}.values()))),
    st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.floats(0, 5)), max_size=6,
             unique_by=lambda t: t[:2]).map(
        lambda es: SummaryGraph(tuple(range(5)), tuple(TypeEdge(u, v, s) for u, v, s in es))),
)


@given(graphs)
def test_serialization_round_trip(g):
    text = serialize_graph(g)
    assert serialize_graph(g) == text
    assert deserialize_graph(text) == g


@pytest.mark.parametrize("g", [MarkovBoundaryGraph(), InstanceTimeGraph((CLS, 0)), SummaryGraph((0, 1))])
def test_empty_graph_serialization(g):
    assert json.loads(serialize_graph(g))["edges"] == []
    dot = to_dot(g)
    assert dot.startswith("digraph") and "->" not in dot
