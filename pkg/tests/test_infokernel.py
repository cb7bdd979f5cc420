import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import cycle_spec
from seq2cause.core import ShapeError
from seq2cause.density import ExactLabelPosterior, ExactOracle
from seq2cause.infokernel import (EPS_C, ConfigError, SamplingConfig, ace, binary_kl, categorical_kl, clamp,
                                  cmi_estimate, dynamic_threshold, entropy, pmi, pmi_table, sample_context_particles,
                                  topk_p_filter, topk_p_sample)
from seq2cause.oscar import OscarConfig, cmi_series
from seq2cause.scmgen import generate_scm, random_label_plan, sample_sequence

probs = st.floats(0.0, 1.0)


class TestDivergences:
    def test_binary_kl_zero(self):
        assert binary_kl(0.3, 0.3) == 0

    def test_binary_kl_value(self):
        want = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
        assert binary_kl(0.75, 0.5) == pytest.approx(want) and want == pytest.approx(0.1308, abs=1e-4)

    def test_binary_kl_nonnegative(self):
        rng = np.random.default_rng(0)
        p, q = clamp(rng.random(10_000)), clamp(rng.random(10_000))
        assert (binary_kl(p, q) >= 0).all()

    def test_categorical_identical(self):
        p = np.array([0.2, 0.3, 0.5])
        assert categorical_kl(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_categorical_floored(self):
        v = categorical_kl(np.full(4, 0.25), np.array([1.0, 0, 0, 0]))
        assert np.isfinite(v) and v > 5

    def test_categorical_shape_mismatch(self):
        with pytest.raises(ShapeError):
            categorical_kl(np.ones(3) / 3, np.ones(4) / 4)

    def test_kl_to_uniform_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = rng.dirichlet(np.ones(6))
            assert categorical_kl(p, np.full(6, 1 / 6)) == pytest.approx(math.log(6) - entropy(p), abs=1e-5)

    @pytest.mark.parametrize("p,h", [([0, 1, 0], 0.0), ([0.25] * 4, math.log(4))])
    def test_entropy(self, p, h):
        assert entropy(np.array(p)) == pytest.approx(h)

    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=10))
    def test_entropy_bounded(self, w):
        p = np.array(w) / sum(w)
        assert 0 <= entropy(p) <= math.log(len(p)) + 1e-12


class TestSampling:
    def test_config_validation(self):
        for kw in ({"n_particles": 0}, {"top_k": 0}, {"top_p": 0.0}, {"top_p": 1.5}, {"temperature": 0.0}):
            with pytest.raises(ConfigError):
                SamplingConfig(**kw)

    def test_point_mass(self):
        rng = np.random.default_rng(0)
        assert {topk_p_sample([0, 0, 1.0, 0], 35, 0.8, rng=rng) for _ in range(200)} == {2}

    def test_tie_break_by_index(self):
        rng = np.random.default_rng(0)
        draws = {topk_p_sample(np.full(4, 0.25), 2, 1.0, rng=rng) for _ in range(10_000)}
        assert draws == {0, 1}

    def test_tiny_top_p_is_argmax(self):
        p = np.array([0.1, 0.5, 0.4])
        assert np.array_equal(topk_p_filter(p, 3, 1e-9), [0, 1, 0])

    def test_filter_matches_independent_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            p = rng.dirichlet(np.ones(7) * 0.5)
            k, tp = int(rng.integers(1, 8)), float(rng.uniform(0.05, 1.0))
            assert np.allclose(topk_p_filter(p, k, tp), oracles.truncate(p, k, tp))

    def test_temperature_sharpens(self):
        p = np.array([0.5, 0.3, 0.2])
        cold = topk_p_filter(p, 3, 1.0, temperature=0.5)
        assert cold[0] > p[0] and cold.sum() == pytest.approx(1.0)


class TestParticles:
    def test_greedy_single_particle(self):
        spec = cycle_spec(4)
        tokens = np.array([4, 3, 3, 3, 2, 1])
        parts = sample_context_particles(tokens, ExactOracle(spec), 4, SamplingConfig(1, 35, 0.8))
        assert parts.tolist() == [[4, 0, 1, 2, 2, 1]]

    def test_marker_and_suffix(self, small_spec):
        tokens = np.array(sample_sequence(small_spec, 12, 0).tokens)
        parts = sample_context_particles(tokens, ExactOracle(small_spec), 5, SamplingConfig(64, 35, 0.8, seed=3))
        assert (parts[:, 0] == 12).all()
        assert (parts[:, 5:] == tokens[5:]).all()

    def test_context_too_long(self, small_spec):
        with pytest.raises(ConfigError):
            sample_context_particles([12, 1, 2], ExactOracle(small_spec), 3, SamplingConfig(4))

    def test_particles_independent_of_batch_size(self, small_spec):
        tokens = np.array(sample_sequence(small_spec, 12, 0).tokens)
        est = ExactOracle(small_spec)
        a = sample_context_particles(tokens, est, 6, SamplingConfig(16, seed=1))
        b = sample_context_particles(tokens, est, 6, SamplingConfig(64, seed=1))
        assert np.array_equal(a, b[:16])


class TestCmi:
    def test_equal_posteriors(self):
        p = np.random.default_rng(0).random((50, 3))
        assert np.all(cmi_estimate(p, p) == 0)

    def test_clamp_ceiling(self):
        p_with = np.array([[1.0], [0.0]])
        p_without = 1 - p_with
        v = cmi_estimate(p_with, p_without)
        assert v[0] == pytest.approx(binary_kl(1 - EPS_C, EPS_C))

    @given(st.lists(st.tuples(probs, probs), min_size=1, max_size=30))
    def test_nonnegative_and_bounded(self, pairs):
        a = np.array(pairs)
        v = cmi_estimate(a[:, :1], a[:, 1:])
        assert 0 <= v[0] <= binary_kl(1 - EPS_C, EPS_C) + 1e-12

    def test_toy_chain_matches_enumeration(self):
        spec = generate_scm(3, 2, 0.6, 3.0, seed=5)
        plan = random_label_plan(3, 2, 1, 2, seed=1)
        seq = sample_sequence(spec, 6, 2)
        est = ExactOracle(spec)
        ser, _, _ = cmi_series(seq, est, ExactLabelPosterior(est, plan, 6), OscarConfig(context=3, n_particles=4096))
        ref = oracles.oscar_cmi(spec, [r.evaluate for _, r in plan.rules], list(seq.tokens), 3, 6)
        assert np.abs(ser.values - ref).max() < 1e-2

    def test_variance_scales_inverse_n(self):
        spec = generate_scm(5, 2, 0.4, 3.0, seed=2)
        plan = random_label_plan(5, 2, 1, 2, seed=3)
        seq = sample_sequence(spec, 7, 1)
        est = ExactOracle(spec)
        lab = ExactLabelPosterior(est, plan, 7)

        def var(n):
            vals = [cmi_series(seq, est, lab, OscarConfig(context=4, n_particles=n, seed=s))[0].values
                    for s in range(60)]
            return np.var(np.array(vals), axis=0)

        v64, v256 = var(64), var(256)
        live = v256 > 1e-8
        ratio = np.median(v64[live] / v256[live])
        assert 2.0 <= ratio <= 6.0


class TestThreshold:
    def test_constant_series(self):
        tau, mask = dynamic_threshold(np.array([0.1, 0.1, 0.1]))
        assert tau == 0.1 and mask.all()

    def test_hand_example(self):
        tau, mask = dynamic_threshold(np.array([0.0, 0.0, 0.0, 1.0]), k=1.0)
        assert tau == pytest.approx(0.25 + math.sqrt(3) / 4) and tau == pytest.approx(0.683, abs=1e-3)
        assert mask.tolist() == [False, False, False, True]

    def test_infinite_k(self):
        _, mask = dynamic_threshold(np.array([[0.0, 1.0], [1.0, 1.0]]), k=math.inf)
        assert not mask[:, 0].any() and mask[:, 1].all()

    def test_single_position(self):
        with pytest.raises(ValueError):
            dynamic_threshold(np.array([0.3]))

    @given(st.lists(st.floats(0, 10), min_size=2, max_size=20), st.floats(0, 5))
    def test_flagged_values_clear_tau(self, xs, k):
        tau, mask = dynamic_threshold(np.array(xs), k)
        assert all(x >= tau for x, m in zip(xs, mask) if m)
        assert all(x < tau for x, m in zip(xs, mask) if not m)


class TestAce:
    def test_identical(self):
        p = np.random.default_rng(0).random(10)
        assert ace(p, p) == (0.0, 0.0)

    def test_constant_difference(self):
        m, s = ace(np.full(5, 0.9), np.full(5, 0.2))
        assert m == pytest.approx(0.7) and s == pytest.approx(0.0, abs=1e-12)

    def test_mixed_signs(self):
        m, s = ace(np.array([0.75, 0.25]), np.array([0.25, 0.75]))
        assert (m, s) == (0.0, 0.5)


class TestPmi:
    def test_independence(self):
        assert pmi(0.06, 0.2, 0.3, 1e-12) == pytest.approx(0.0, abs=1e-9)

    def test_ln2(self):
        assert pmi(0.5, 0.5, 0.5, 1e-12) == pytest.approx(math.log(2))

    def test_exclusive(self):
        v = pmi(0.0, 0.3, 0.4, 1e-3)
        assert np.isfinite(v) and v < -3

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            pmi(0.1, 0.2, 0.3, 0.0)

    def test_table_shape(self):
        rng = np.random.default_rng(0)
        pres, lab = rng.random((40, 5)) < 0.3, rng.random((40, 2)) < 0.5
        t = pmi_table(pres, lab)
        assert t.shape == (2, 5) and np.isfinite(t).all()
        d = 1 / (2 * lab[:, 1].sum())
        joint = (pres[:, 3] & lab[:, 1]).mean()
        assert t[1, 3] == pytest.approx(math.log((joint + d) / ((lab[:, 1].mean() + d) * (pres[:, 3].mean() + d))))
