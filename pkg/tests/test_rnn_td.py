import math

import numpy as np
import pytest
from scipy.special import exp1

from conftest import make_params, nu_params, seq
from src.core.exceptions import DimensionError, InfiniteExpectedTimeError, ValidationError
from src.core.numerics import quadrature
from src.models.rnn_td import (
    ShapingFunction,
    corpus_nll,
    expected_time,
    given_time_likelihoods,
    gradients,
    history_state,
    integrated_intensity,
    intensity,
    loss_and_gradients,
    mark_distribution,
    nll,
    predict_next,
    run_recurrence,
    step,
    time_density,
    total_rate,
)
from src.training.gradcheck import random_configuration, run_gradcheck


class TestRecurrence:
    def test_zero_weights_give_zero_state(self, zero_model):
        h = step(zero_model, np.zeros(2), np.zeros(8), 1)
        np.testing.assert_array_equal(h, np.zeros(2))

    def test_single_unit(self):
        params = make_params(K=1, H=1, D_e=1)
        params = params.with_blocks({"W_he": np.array([[1.0]]), "embed": np.array([[1.0]])})
        assert step(params, np.zeros(1), np.zeros(8), 0)[0] == pytest.approx(0.76159416, abs=1e-8)

    def test_state_bounded(self):
        params, sequence = random_configuration(3, "constant")
        _, Hs = run_recurrence(params, np.zeros((len(sequence), 8)) + 50.0, sequence.marks)
        assert np.all(np.abs(Hs) <= 1.0)

    def test_mark_out_of_range(self, zero_model):
        with pytest.raises(ValidationError):
            step(zero_model, np.zeros(2), np.zeros(8), 2)

    def test_shape_mismatch(self, zero_model):
        with pytest.raises(DimensionError):
            step(zero_model, np.zeros(3), np.zeros(8), 0)

    def test_empty_history(self, zero_model):
        np.testing.assert_array_equal(history_state(zero_model, seq([], [])), np.zeros(2))


class TestMarkHead:
    def test_uniform(self, zero_model):
        np.testing.assert_allclose(mark_distribution(zero_model, np.ones(2)), [0.5, 0.5])

    def test_softmax_of_logits(self, h_one):
        params = make_params(K=2, W_alpha=[[1.0], [2.0]])
        np.testing.assert_allclose(mark_distribution(params, h_one), [0.26894142, 0.73105858], atol=1e-8)

    def test_shared_logit_shift(self):
        rng = np.random.default_rng(5)
        for seed in range(10):
            params, _ = random_configuration(seed, "exponential")
            h = np.tanh(rng.normal(size=params.H))
            shifted = params.with_blocks({"W_alpha": params.W_alpha + rng.normal(size=params.H)})
            before, after = mark_distribution(params, h), mark_distribution(shifted, h)
            np.testing.assert_allclose(after, before, rtol=1e-10)
            np.testing.assert_array_equal(np.argsort(-after, kind="stable"), np.argsort(-before, kind="stable"))


class TestIntensity:
    def test_constant_rate(self, h_one):
        params = nu_params([1.0, 1.0])
        for t in [0.0, 0.3, 12.0]:
            assert intensity(params, h_one, 0, t, 0.0) == pytest.approx(1.0)

    def test_exponential(self, h_one):
        params = nu_params([2.0], shaping="exponential", w=0.5)
        assert intensity(params, h_one, 0, 1.0, 0.0) == pytest.approx(3.29744, abs=1e-5)

    def test_zero_w_matches_constant(self):
        deltas = np.array([0.0, 0.5, 3.0])
        np.testing.assert_allclose(
            ShapingFunction("exponential", 0.0).integral(deltas), ShapingFunction("constant").integral(deltas)
        )

    @pytest.mark.parametrize("w", [0.9e-8, 1.1e-8, -0.9e-8])
    def test_small_w_branch(self, w):
        exact = math.expm1(2.0 * w) / w
        assert float(ShapingFunction("exponential", w).integral(2.0)) == pytest.approx(exact, rel=1e-12)

    def test_compensator_constant(self, h_one):
        params = nu_params([0.5, 1.5])
        total = sum(integrated_intensity(params, h_one, e, 0.0, 2.0) for e in range(2))
        assert total == pytest.approx(4.0)

    def test_compensator_exponential(self, h_one):
        params = nu_params([1.0], shaping="exponential", w=1.0)
        assert integrated_intensity(params, h_one, 0, 0.0, 1.0) == pytest.approx(math.e - 1.0)

    def test_compensator_empty_interval(self, h_one):
        params = nu_params([1.0, 2.0])
        assert integrated_intensity(params, h_one, 1, 4.0, 4.0) == 0.0

    def test_time_before_last_event(self, h_one):
        with pytest.raises(ValidationError):
            intensity(nu_params([1.0]), h_one, 0, 1.0, 2.0)

    def test_total_rate(self, h_one):
        assert total_rate(nu_params([0.5, 1.5]), h_one) == pytest.approx(2.0)

    def test_mark_only_model_has_no_intensity(self, h_one):
        params = make_params(K=2, head="none")
        with pytest.raises(ValidationError):
            intensity(params, h_one, 0, 1.0, 0.0)


class TestTimeDensity:
    def test_closed_form(self, h_one):
        params = nu_params([1.0, 1.0])
        assert time_density(params, h_one, 0, 0.0, 1.0) == pytest.approx(math.exp(-2.0))

    def test_at_last_event(self, h_one):
        params = nu_params([1.0, 3.0])
        assert time_density(params, h_one, 1, 0.0, 0.0) == pytest.approx(3.0)

    def test_mark_masses(self, h_one):
        params = nu_params([0.5, 1.5])
        masses = [quadrature(lambda t, e=e: time_density(params, h_one, e, 0.0, t), 0.0) for e in range(2)]
        np.testing.assert_allclose(masses, [0.25, 0.75], rtol=1e-7)

    @pytest.mark.parametrize("shaping,w", [("constant", 0.0), ("exponential", 0.3), ("exponential", 1.5)])
    def test_total_mass_one(self, shaping, w, h_one):
        params = nu_params([0.4, 1.1, 0.2], shaping=shaping, w=w)
        total = sum(quadrature(lambda t, e=e: time_density(params, h_one, e, 0.0, t), 0.0) for e in range(3))
        assert total == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("shaping", ["constant", "exponential"])
    def test_next_event_cdf(self, shaping):
        rng = np.random.default_rng(3)
        for seed in range(10):
            params, _ = random_configuration(seed, shaping)
            h = np.tanh(rng.normal(size=params.H))
            t_last = 4.0
            grid = np.linspace(t_last, t_last + 6.0, 61)
            cdf = np.array([
                1.0 - math.exp(-sum(integrated_intensity(params, h, k, t_last, t) for k in range(params.K)))
                for t in grid
            ])
            assert cdf[0] == 0.0
            assert np.all(np.diff(cdf) >= 0.0)
            assert np.all(cdf <= 1.0)

    def test_hazard_identity(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            shaping = "constant" if trial % 2 else "exponential"
            params, _ = random_configuration(trial, shaping)
            h = np.tanh(rng.normal(size=params.H))
            e = int(rng.integers(params.K))
            t = float(rng.uniform(0.0, 3.0))
            survival = math.exp(-sum(integrated_intensity(params, h, k, 0.0, t) for k in range(params.K)))
            expected = intensity(params, h, e, t, 0.0) * survival
            assert time_density(params, h, e, 0.0, t) == pytest.approx(expected, rel=1e-10)


class TestNll:
    def test_zero_model_two_events(self, zero_model):
        value, caches = nll(zero_model, seq([0.0, 1.0], [0, 1]))
        assert value == pytest.approx(math.log(2.0) + 2.0, abs=1e-12)
        assert len(caches) == 1

    def test_duplicate_corpus_doubles(self):
        params, sequence = random_configuration(5, "exponential")
        single = corpus_nll(params, [sequence])
        assert corpus_nll(params, [sequence, sequence]) == pytest.approx(2.0 * single, rel=1e-12)

    def test_factorizes_over_transitions(self):
        params, sequence = random_configuration(8, "exponential")
        times, marks = sequence.times, sequence.marks
        expected = 0.0
        for i in range(len(sequence) - 1):
            h = history_state(params, sequence.prefix(i + 1))
            density = time_density(params, h, int(marks[i + 1]), float(times[i]), float(times[i + 1]))
            expected -= math.log(mark_distribution(params, h)[marks[i + 1]] * density)
        assert nll(params, sequence)[0] == pytest.approx(expected, rel=1e-10)

    def test_mark_only_nll_is_cross_entropy(self):
        params = make_params(K=4, head="none")
        assert nll(params, seq([0.0, 1.0, 5.0], [0, 3, 2]))[0] == pytest.approx(2.0 * math.log(4.0))

    @pytest.mark.parametrize("shaping", ["constant", "exponential"])
    def test_hidden_unit_relabelling(self, shaping):
        params, sequence = random_configuration(11, shaping)
        perm = np.random.default_rng(0).permutation(params.H)
        relabelled = params.with_blocks({
            "W_ht": params.W_ht[perm],
            "W_he": params.W_he[perm],
            "W_hh": params.W_hh[np.ix_(perm, perm)],
            "W_alpha": params.W_alpha[:, perm],
            "W_nu": params.W_nu[:, perm],
        })
        assert nll(relabelled, sequence)[0] == pytest.approx(nll(params, sequence)[0], rel=1e-10)

    def test_too_short(self, zero_model):
        with pytest.raises(ValidationError):
            nll(zero_model, seq([0.0], [0]))

    def test_mark_outside_model(self, zero_model):
        with pytest.raises(ValidationError):
            nll(zero_model, seq([0.0, 1.0], [0, 5]))


class TestGradients:
    def test_recurrent_weights_unused_for_one_transition(self, zero_model):
        grads = gradients(zero_model, seq([0.0, 1.0], [0, 1]))
        np.testing.assert_array_equal(grads["W_hh"], np.zeros((2, 2)))

    def test_block_shapes(self):
        params, sequence = random_configuration(1, "exponential")
        grads = gradients(params, sequence)
        blocks = params.blocks()
        assert list(grads) == list(blocks)
        for name, g in grads.items():
            assert g.shape == blocks[name].shape

    def test_lasso_only_touches_intensity_path(self):
        params, sequence = random_configuration(2, "constant")
        plain = gradients(params, sequence, gamma=0.0)
        penalized = gradients(params, sequence, gamma=0.1)
        np.testing.assert_allclose(plain["W_alpha"], penalized["W_alpha"], rtol=0, atol=1e-14)
        assert not np.allclose(plain["W_nu"], penalized["W_nu"])

    def test_penalty_value(self):
        params, sequence = random_configuration(4, "constant")
        result = loss_and_gradients(params, sequence, gamma=0.1)
        rates = [float(np.sum(c.nu)) for c in nll(params, sequence)[1]]
        assert result.penalty == pytest.approx(0.1 * sum(rates), rel=1e-12)

    @pytest.mark.parametrize("shaping", ["constant", "exponential"])
    def test_finite_differences(self, shaping):
        report = run_gradcheck(shaping, trials=20, seed=7)
        assert report.passed(), report.errors

    @pytest.mark.parametrize("head", ["shared", "none"])
    def test_finite_differences_other_heads(self, head):
        assert run_gradcheck("exponential", trials=4, seed=3, head=head).passed()


class TestExpectedTime:
    def test_constant_rate(self, h_one):
        params = nu_params([1.0, 1.0])
        assert expected_time(params, h_one, 0, 0.0) == pytest.approx(0.5)
        assert expected_time(params, h_one, 1, 0.0) == pytest.approx(0.5)

    def test_offset_by_last_time(self, h_one):
        params = nu_params([1.0, 1.0])
        assert expected_time(params, h_one, 0, 10.0) == pytest.approx(10.5)

    def test_gompertz(self, h_one):
        params = nu_params([1.0], shaping="exponential", w=1.0)
        oracle = math.e * exp1(1.0)
        assert expected_time(params, h_one, 0, 0.0) == pytest.approx(oracle, abs=1e-7)
        assert oracle == pytest.approx(0.59634, abs=1e-5)

    def test_matches_quadrature_of_density(self, h_one):
        params = nu_params([0.7, 0.4], shaping="exponential", w=0.4)
        e = 1
        mass = quadrature(lambda t: time_density(params, h_one, e, 0.0, t), 0.0)
        mean = quadrature(lambda t: t * time_density(params, h_one, e, 0.0, t), 0.0) / mass
        assert expected_time(params, h_one, e, 0.0) == pytest.approx(mean, rel=1e-6)

    def test_constant_rate_matches_quadrature(self, h_one):
        params = nu_params([0.7, 0.4])
        for e in range(2):
            mass = quadrature(lambda t: time_density(params, h_one, e, 0.0, t), 0.0)
            mean = quadrature(lambda t: t * time_density(params, h_one, e, 0.0, t), 0.0) / mass
            assert expected_time(params, h_one, e, 0.0) == pytest.approx(mean, rel=1e-6, abs=1e-6)
            assert mean == pytest.approx(1.0 / 1.1, rel=1e-6)

    @pytest.mark.parametrize("shaping,w", [("constant", 0.0), ("exponential", 0.5)])
    def test_normalized_time_shared_by_marks(self, shaping, w, h_one):
        params = nu_params([0.2, 1.0, 3.0], shaping=shaping, w=w)
        normalized = [expected_time(params, h_one, e, 2.0) for e in range(3)]
        raw = [expected_time(params, h_one, e, 2.0, mode="raw") for e in range(3)]
        assert normalized == pytest.approx([normalized[0]] * 3, rel=1e-12)
        assert raw[0] - 2.0 < raw[1] - 2.0 < raw[2] - 2.0

    def test_raw_mode_weights_by_share(self, h_one):
        params = nu_params([1.0, 3.0])
        assert expected_time(params, h_one, 0, 0.0, mode="raw") == pytest.approx(0.25 * 0.25)

    def test_decaying_intensity_that_never_fires(self, h_one):
        params = nu_params([1e-14], shaping="exponential", w=-1.0)
        with pytest.raises(InfiniteExpectedTimeError):
            expected_time(params, h_one, 0, 0.0)

    def test_decaying_intensity_conditional_mean(self, h_one):
        params = nu_params([2.0], shaping="exponential", w=-0.5)
        t_hat = expected_time(params, h_one, 0, 0.0)
        assert math.isfinite(t_hat) and t_hat > 0.0

    def test_unknown_mode(self, h_one):
        with pytest.raises(ValidationError):
            expected_time(nu_params([1.0]), h_one, 0, 0.0, mode="median")


class TestPrediction:
    def test_ties_break_by_mark_id(self, zero_model):
        out = predict_next(zero_model, np.zeros(2), 0.0, 2)
        assert [c.mark_id for c in out] == [0, 1]
        assert out[0].likelihood == out[1].likelihood

    def test_zero_model_values(self, zero_model):
        first = predict_next(zero_model, np.zeros(2), 0.0, 1)[0]
        assert first.expected_time == pytest.approx(0.5)
        assert first.likelihood == pytest.approx(0.5 * math.exp(-1.0))

    def test_likely_mark_first(self, h_one):
        params = make_params(K=2, W_alpha=[[math.log(0.9)], [math.log(0.1)]])
        out = predict_next(params, h_one, 0.0, 2)
        assert [c.mark_id for c in out] == [0, 1]
        assert out[0].expected_time == pytest.approx(out[1].expected_time)

    def test_top_n_bounds(self, zero_model):
        with pytest.raises(ValidationError):
            predict_next(zero_model, np.zeros(2), 0.0, 3)
        with pytest.raises(ValidationError):
            predict_next(zero_model, np.zeros(2), 0.0, 0)

    def test_given_time_likelihoods(self, h_one):
        params = nu_params([1.0, 1.0])
        np.testing.assert_allclose(given_time_likelihoods(params, h_one, 0.0, 1.0), [0.5 * math.exp(-2.0)] * 2)

    def test_shared_head_times_identical(self):
        params, _ = random_configuration(6, "exponential", head="shared")
        h = np.tanh(np.linspace(-1.0, 1.0, params.H))
        times = {round(c.expected_time, 12) for c in predict_next(params, h, 3.0, params.K)}
        assert len(times) == 1
