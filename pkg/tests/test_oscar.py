import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from seq2cause.core import EventSequence, LabeledSequence, parse_rule, serialize_graph
from seq2cause.density import ExactLabelPosterior, ExactOracle, RolloutLabelPosterior
from seq2cause.infokernel import dynamic_threshold
from seq2cause.oscar import OscarConfig, batch_discover, discover, discover_detailed
from seq2cause.rng import TaskError
from seq2cause.scmgen import LabelPlan, ScmSpec, generate_scm, plant_labels, random_label_plan, sample_dataset


def trigger_spec(w=25.0):
    """|X| = 4; event 0 is always followed by event 1, everything else is uniform."""
    W = np.zeros((1, 4, 4))
    W[0, 0, 1] = w
    return ScmSpec(4, 1, W, np.zeros(4))


def plan_of(*rules):
    return LabelPlan(tuple((j, parse_rule(r)) for j, r in enumerate(rules)))


@pytest.fixture(scope="module")
def corpus():
    spec = generate_scm(15, 2, 0.08, 3.0, seed=1)
    plan = random_label_plan(15, 5, 1, 2, seed=1)
    data = plant_labels(plan, sample_dataset(spec, 16, 6, 1))
    est = ExactOracle(spec)
    return data, est, RolloutLabelPosterior(est, plan, 16, 32, seed=1), plan


CFG = OscarConfig(context=5, n_particles=24, seed=2)


class TestToyChain:
    def test_flags_the_spontaneous_trigger(self):
        spec = trigger_spec()
        plan = plan_of("x1")
        tokens = (4, 2, 3, 2, 1, 3, 2)  # B appears unprompted at position 4
        est = ExactOracle(spec)
        lab = ExactLabelPosterior(est, plan, 6)
        # four positions cannot put any value 2.75 std above their mean
        cfg = OscarConfig(context=2, n_particles=2048, k=1.0, seed=0)
        res = discover_detailed(EventSequence(tokens), est, lab, cfg)
        ref = oracles.oscar_cmi(spec, [r.evaluate for _, r in plan.rules], list(tokens), 2, 6)
        assert np.abs(res.series.values - ref).max() < 1e-2
        _, ref_mask = dynamic_threshold(ref, cfg.k)
        assert np.array_equal(res.mask, ref_mask)
        # the jump sits at the step that adds x_4 = B
        assert int(res.series.positions[np.argmax(res.series.values[:, 0])]) == 3
        assert 1 in res.graph.boundary(0)

    def test_trigger_event_carries_the_label(self):
        spec = trigger_spec()
        tokens = (4, 2, 3, 2, 0, 1, 2)  # A at 4 makes B certain at 5
        est = ExactOracle(spec)
        g = discover(EventSequence(tokens), est, ExactLabelPosterior(est, plan_of("x1"), 6),
                     OscarConfig(context=2, n_particles=512, k=1.0))
        assert 0 in g.boundary(0)

    def test_constant_posterior_is_suppressed(self):
        spec = trigger_spec()
        est = ExactOracle(spec)
        g = discover(EventSequence((4, 2, 3, 2, 1, 3, 2)), est,
                     ExactLabelPosterior(est, plan_of("x1 | !x1", "x1"), 6), OscarConfig(context=2, n_particles=64))
        assert g.boundary(0) == frozenset() and 0 in g.suppressed


class TestContract:
    def test_deterministic(self, corpus):
        data, est, lab, _ = corpus
        assert discover(data[0], est, lab, CFG) == discover(data[0], est, lab, CFG)

    def test_edges_respect_threshold_and_context(self, corpus):
        data, est, lab, _ = corpus
        for s in data:
            res = discover_detailed(s, est, lab, CFG)
            late = set(s.tokens[CFG.context + 1:])
            for e in res.graph.edges:
                assert e.event in late
                assert e.cmi >= res.tau[e.label]
                assert -1 <= e.ace_mean <= 1
            assert set(res.graph.labels()) <= set(s.positive_labels())

    def test_unlabeled_input_reports_every_label(self, corpus):
        data, est, lab, plan = corpus
        g = discover(data[0].sequence, est, lab, CFG)
        assert set(g.present_labels) == set(range(plan.n_labels)) - set(g.suppressed)

    def test_short_sequence(self, corpus):
        _, est, lab, _ = corpus
        with pytest.raises(ValueError):
            discover(EventSequence((15, 1, 2, 3, 4, 5, 6)), est, lab, CFG)

    def test_vocabulary_mismatch(self, corpus):
        data, _, lab, _ = corpus
        other = ExactOracle(generate_scm(9, 2, 0.1, seed=0))
        with pytest.raises(ValueError):
            discover(data[0], other, lab, CFG)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OscarConfig(context=0)
        with pytest.raises(ValueError):
            OscarConfig(top_p=0.0)


class TestBatch:
    def test_batch_of_one(self, corpus):
        data, est, lab, _ = corpus
        assert batch_discover(data[:1], est, lab, CFG) == [discover(data[0], est, lab, CFG)]

    def test_permutation(self, corpus):
        data, est, lab, _ = corpus
        fwd = batch_discover(data, est, lab, CFG)
        rev = batch_discover(data[::-1], est, lab, CFG)
        assert rev == fwd[::-1]

    def test_workers_byte_identical(self, corpus):
        data, est, lab, _ = corpus
        one = [serialize_graph(g) for g in batch_discover(data, est, lab, CFG, workers=1)]
        four = [serialize_graph(g) for g in batch_discover(data, est, lab, CFG, workers=4)]
        assert one == four

    def test_error_attribution(self, corpus):
        data, est, lab, _ = corpus
        bad = LabeledSequence(EventSequence((15, 1, 2, 3)), data[0].labels)
        with pytest.raises(TaskError) as info:
            batch_discover([data[0], data[1], bad], est, lab, CFG)
        assert info.value.index == 2

    def test_empty(self, corpus):
        _, est, lab, _ = corpus
        with pytest.raises(ValueError):
            batch_discover([], est, lab, CFG)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=8))
def test_short_series_never_clear_default_k(xs):
    # a value can sit at most sqrt(n - 1) population stds above the mean
    _, mask = dynamic_threshold(np.array(xs), 2.75)
    assert not mask.any() or np.ptp(xs) == 0


def test_single_event_rule_flags_near_first_occurrence():
    spec = generate_scm(6, 1, 0.2, 1.5, seed=7)
    est = ExactOracle(spec)
    plan = plan_of("x5")
    lab = ExactLabelPosterior(est, plan, 8, max_paths=1 << 22)
    cfg = OscarConfig(context=3, n_particles=256, k=1.0)
    checked = 0
    for s in sample_dataset(spec, 8, 40, 3):
        first = next((i for i, t in enumerate(s.tokens) if t == 5), None)
        if first is None or first <= cfg.context + 1:
            continue
        res = discover_detailed(s, est, lab, cfg)
        flagged = {int(res.series.positions[r]) + 1 for r in np.nonzero(res.mask[:, 0])[0]}
        assert flagged and any(abs(i - first) <= 1 for i in flagged)
        checked += 1
    assert checked >= 3
