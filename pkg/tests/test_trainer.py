import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from src.core.config import CalendarConfig, EvalConfig, TrainConfig
from src.core.exceptions import NumericalError, ValidationError
from src.data.events import CorpusSplit, MarkVocabulary, total_transitions
from src.data.ingest import featurize_sequence, split
from src.evaluation.metrics import evaluate
from src.models.baselines import mc_fit, pp_fit, rmtpp_like, rnn_mark_only
from src.models.predictors import MarkovPredictor, NeuralPredictor, PointProcessPredictor
from src.models.rnn_td import gradients
from src.simulation.simulator import GeneratorSpec, generate_corpus, markov_bayes_accuracy
from src.training.gradcheck import random_configuration
from src.training.trainer import (
    AdamState,
    ModelDims,
    adam_step,
    batch_gradients,
    clip_by_global_norm,
    init_params,
    mean_nll,
    mean_total_rate,
    train,
)


def tiny_corpus(rate=5.0, n=60, seed=0):
    spec = GeneratorSpec(
        "mspp-poisson", K=2, horizon=1e6, params={"rates": [rate, rate]}, max_events=8, seed=seed
    )
    sequences, _ = generate_corpus(spec, n)
    return CorpusSplit(sequences[:40], sequences[40:50], sequences[50:])


def tiny_config(**overrides):
    settings = dict(hidden=4, embed=2, batch_size=10, max_epochs=3, learning_rate=1e-2, seed=3)
    settings.update(overrides)
    return TrainConfig(**settings)


class TestInit:
    def test_recurrent_matrix_orthogonal(self):
        params = init_params(ModelDims(H=6, K=3, D_e=2), seed=1)
        np.testing.assert_allclose(params.W_hh.T @ params.W_hh, np.eye(6), atol=1e-10)

    def test_single_unit(self):
        params = init_params(ModelDims(H=1, K=2, D_e=1), seed=1)
        assert abs(params.W_hh[0, 0]) == pytest.approx(1.0)

    def test_deterministic(self):
        a = init_params(ModelDims(4, 3, 2), seed=5, shaping="exponential")
        b = init_params(ModelDims(4, 3, 2), seed=5, shaping="exponential")
        for name, block in a.blocks().items():
            np.testing.assert_array_equal(block, b.blocks()[name])

    def test_seeds_differ(self):
        a = init_params(ModelDims(4, 3, 2), seed=1)
        b = init_params(ModelDims(4, 3, 2), seed=2)
        assert not np.array_equal(a.W_alpha, b.W_alpha)

    def test_initial_w(self):
        assert init_params(ModelDims(2, 2, 1), seed=0, shaping="exponential").shaping.w == pytest.approx(0.1)

    def test_heads(self):
        shared = init_params(ModelDims(3, 4, 2), seed=0, head="shared")
        assert shared.W_nu.shape == (1, 3) and shared.b_nu.shape == (1,)
        assert init_params(ModelDims(3, 4, 2), seed=0, head="none").W_nu is None

    def test_pretrained_embedding(self):
        table = np.arange(6, dtype=float).reshape(3, 2)
        params = init_params(ModelDims(2, 3, 2), seed=0, embedding=table)
        np.testing.assert_array_equal(params.embed, table)
        with pytest.raises(ValidationError):
            init_params(ModelDims(2, 3, 2), seed=0, embedding=np.zeros((2, 2)))

    def test_invalid_dims(self):
        with pytest.raises(ValidationError):
            init_params(ModelDims(0, 3, 2), seed=0)


class TestAdam:
    def _params(self):
        return init_params(ModelDims(2, 2, 1), seed=0)

    def test_first_step_moves_by_learning_rate(self):
        params = self._params()
        grads = {k: np.full_like(v, 3.0) for k, v in params.blocks().items()}
        new, state = adam_step(params, grads, AdamState.zeros(params), TrainConfig(learning_rate=1e-3))
        for name, block in params.blocks().items():
            np.testing.assert_allclose(block - new.blocks()[name], 1e-3, atol=1e-10)
        assert state.t == 1

    def test_zero_gradient_leaves_params(self):
        params = self._params()
        grads = {k: np.zeros_like(v) for k, v in params.blocks().items()}
        new, state = adam_step(params, grads, AdamState.zeros(params), TrainConfig())
        for name, block in params.blocks().items():
            np.testing.assert_array_equal(new.blocks()[name], block)
        assert state.t == 1

    def test_deterministic(self):
        params, sequence = random_configuration(0, "exponential", H=3, K=2, D_e=2)
        grads = gradients(params, sequence)
        state = AdamState.zeros(params)
        a, _ = adam_step(params, grads, state, TrainConfig())
        b, _ = adam_step(params, grads, state, TrainConfig())
        for name, block in a.blocks().items():
            np.testing.assert_array_equal(block, b.blocks()[name])

    def test_inputs_untouched(self):
        params = self._params()
        before = params.copy()
        grads = {k: np.ones_like(v) for k, v in params.blocks().items()}
        adam_step(params, grads, AdamState.zeros(params), TrainConfig())
        np.testing.assert_array_equal(params.W_alpha, before.W_alpha)

    def test_non_finite_gradient_names_block(self):
        params = self._params()
        grads = {k: np.zeros_like(v) for k, v in params.blocks().items()}
        grads["W_he"][0, 0] = math.nan
        with pytest.raises(NumericalError, match="W_he"):
            adam_step(params, grads, AdamState.zeros(params), TrainConfig())

    def test_missing_block(self):
        params = self._params()
        grads = {k: np.zeros_like(v) for k, v in params.blocks().items() if k != "W_hh"}
        with pytest.raises(ValidationError):
            adam_step(params, grads, AdamState.zeros(params), TrainConfig())


class TestClipping:
    def test_rescales_to_max_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped, norm = clip_by_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])

    def test_small_gradient_unchanged(self):
        grads = {"a": np.array([0.3])}
        clipped, _ = clip_by_global_norm(grads, 1.0)
        assert clipped is grads


class TestBatches:
    def test_sum_of_sequence_gradients(self):
        corpus = tiny_corpus()
        params = init_params(ModelDims(4, 2, 2), seed=1)
        batch = corpus.train[:5]
        features = [featurize_sequence(s) for s in batch]
        result = batch_gradients(params, batch, features, clamp=False)
        for name in params.blocks():
            expected = sum(gradients(params, s)[name] for s in batch)
            np.testing.assert_allclose(result.gradients[name], expected, rtol=1e-9, atol=1e-12)

    def test_threads_do_not_change_result(self):
        corpus = tiny_corpus()
        params = init_params(ModelDims(4, 2, 2), seed=1)
        batch = corpus.train[:8]
        features = [featurize_sequence(s) for s in batch]
        serial = batch_gradients(params, batch, features, gamma=0.5)
        with ThreadPoolExecutor(max_workers=4) as pool:
            threaded = batch_gradients(params, batch, features, gamma=0.5, executor=pool)
        for name, g in serial.gradients.items():
            np.testing.assert_array_equal(g, threaded.gradients[name])
        assert serial.nll == threaded.nll

    def test_penalty_scaled_by_training_set_steps(self):
        corpus = tiny_corpus()
        params = init_params(ModelDims(4, 2, 2), seed=1)
        batch = corpus.train[:5]
        features = [featurize_sequence(s) for s in batch]
        steps = total_transitions(batch)
        own = batch_gradients(params, batch, features, gamma=0.5)
        wider = batch_gradients(params, batch, features, gamma=0.5, total_steps=2 * steps)
        assert own.penalty > 0.0
        assert wider.penalty == pytest.approx(0.5 * own.penalty, rel=1e-12)
        assert wider.nll == own.nll


class TestTrain:
    def test_reproducible(self):
        corpus = tiny_corpus()
        params_a, report_a = train(corpus, tiny_config(), K=2)
        params_b, report_b = train(corpus, tiny_config(), K=2)
        assert report_a.epochs == report_b.epochs
        assert report_a == report_b
        np.testing.assert_array_equal(params_a.W_nu, params_b.W_nu)

    def test_training_nll_falls_over_first_epochs(self):
        corpus = tiny_corpus()
        falling = 0
        for seed in range(20):
            _, report = train(corpus, tiny_config(seed=seed, batch_size=5, patience=3), K=2)
            curve = [e.train_nll for e in report.epochs]
            falling += all(b <= a for a, b in zip(curve, curve[1:]))
        assert falling >= 19

    def test_returns_best_validation_params(self):
        corpus = tiny_corpus()
        params, report = train(corpus, tiny_config(max_epochs=4), K=2)
        assert report.best_valid_nll == min(e.valid_nll for e in report.epochs)
        assert mean_nll(params, corpus.validation) == pytest.approx(report.best_valid_nll, rel=1e-12)

    def test_early_stopping_bookkeeping(self):
        corpus = tiny_corpus()
        _, report = train(corpus, tiny_config(max_epochs=6, patience=1, learning_rate=0.1), K=2)
        assert report.stopping_epoch == len(report.epochs)
        if report.stopped_early:
            assert report.epochs[-1].valid_nll >= report.best_valid_nll
            assert report.stopping_epoch == report.best_epoch + 1
        else:
            assert report.stopping_epoch == 6

    def test_records_end_with_summary(self):
        _, report = train(tiny_corpus(), tiny_config(max_epochs=1), K=2)
        records = report.records()
        assert records[-1]["kind"] == "summary"
        assert records[0]["kind"] == "epoch"

    def test_lasso_lowers_total_rate(self):
        corpus = tiny_corpus(rate=5.0)
        plain, _ = train(corpus, tiny_config(), K=2)
        penalized, _ = train(corpus, tiny_config(gamma=1000.0), K=2)
        assert mean_total_rate(penalized, corpus.train) < mean_total_rate(plain, corpus.train)

    def test_without_calendar(self):
        calendar = CalendarConfig(enabled=False)
        params, _ = train(tiny_corpus(), tiny_config(max_epochs=1), K=2, calendar=calendar)
        assert params.D_t == 1

    def test_needs_validation_split(self):
        corpus = tiny_corpus()
        with pytest.raises(ValidationError):
            train(CorpusSplit(corpus.train, [], corpus.test), tiny_config(), K=2)


class TestNeuralBaselines:
    def test_shared_intensity_variant(self):
        params, report = rmtpp_like(tiny_corpus(), tiny_config(max_epochs=1), K=2)
        assert params.head == "shared"
        assert params.shaping.kind == "exponential"
        assert math.isfinite(report.best_valid_nll)

    def test_mark_only_variant(self):
        params, _ = rnn_mark_only(tiny_corpus(), tiny_config(max_epochs=1), K=2)
        assert params.head == "none"
        assert not params.has_time_head


def sticky_transition(K, stay):
    return np.full((K, K), (1.0 - stay) / (K - 1)) + np.eye(K) * (stay - (1.0 - stay) / (K - 1))


def mark_accuracies(corpus, transition, config):
    """Acc@1 of RNN-TD(c) and MC1 on the test split, and the analytic optimum."""
    K = transition.shape[0]
    vocab = MarkVocabulary.identity(K)
    params, _ = train(corpus, config, K=K)
    eval_config = EvalConfig(k_values=(1,))
    neural = evaluate(NeuralPredictor("rnn-td", params, vocab), corpus.test, config=eval_config)
    markov = evaluate(MarkovPredictor("mc1", mc_fit(corpus.train, 1, K=K), vocab), corpus.test, config=eval_config)
    contexts = [int(m) for s in corpus.test for m in s.marks[:-1]]
    return neural["free"].acc_at_k[1], markov["free"].acc_at_k[1], markov_bayes_accuracy(transition, contexts)


def test_mark_accuracy_small_chain():
    transition = sticky_transition(4, 0.8)
    spec = GeneratorSpec(
        "markov-duration", K=4, horizon=12.0,
        params={"transition": transition, "mu": 0.0, "s": 0.5}, seed=17,
    )
    sequences, _ = generate_corpus(spec, 200)
    corpus = split(sequences, seed=17)
    config = tiny_config(hidden=8, embed=4, batch_size=20, max_epochs=8, learning_rate=0.03, patience=8)
    neural, markov, bayes = mark_accuracies(corpus, transition, config)
    assert neural >= bayes - 0.08
    assert neural >= markov - 0.05


@pytest.mark.slow
def test_mark_accuracy_near_bayes_optimum():
    K = 8
    target = [3, 0, 6, 1, 7, 2, 5, 4]
    transition = np.full((K, K), 0.4 / K)
    transition[np.arange(K), target] += 0.6
    runs = []
    for seed in (1, 2, 3):
        spec = GeneratorSpec(
            "markov-duration", K=K, horizon=16.0,
            params={"transition": transition, "mu": 0.0, "s": 0.5}, seed=seed,
        )
        sequences, _ = generate_corpus(spec, 5000)
        config = tiny_config(hidden=16, embed=8, batch_size=50, max_epochs=6, patience=2, seed=seed)
        runs.append(mark_accuracies(split(sequences, seed=seed), transition, config))
    neural, markov, bayes = (float(np.median(column)) for column in zip(*runs))
    assert neural >= bayes - 0.02
    assert neural >= markov - 0.01


def held_out_gap(K, rates, n, seed, config):
    """Trained RNN-TD(c) test NLL minus the generator's, in nats per transition."""
    spec = GeneratorSpec("mspp-poisson", K=K, horizon=1e6, params={"rates": rates}, max_events=20, seed=seed)
    sequences, truth = generate_corpus(spec, n)
    n_train, n_valid = int(0.8 * n), int(0.1 * n)
    corpus = CorpusSplit(sequences[:n_train], sequences[n_train:n_train + n_valid], sequences[n_train + n_valid:])
    params, _ = train(corpus, config, K=K)
    truth_nll = sum(truth.sequence_nll[n_train + n_valid:]) / total_transitions(corpus.test)
    return mean_nll(params, corpus.test) - truth_nll


@pytest.mark.slow
def test_nll_reaches_single_mark_poisson_truth():
    config = tiny_config(hidden=16, embed=2, batch_size=20, max_epochs=15, learning_rate=0.03, patience=15)
    assert abs(held_out_gap(1, [1.5], 400, 4, config)) <= 0.05


@pytest.mark.slow
def test_nll_gap_is_mark_share_entropy():
    # rates set by the previous mark, next mark uniform: the best the model can
    # do is Λ(h) = rate of the previous mark and ν_e / Λ = 1/2 for either mark
    rates = [[0.5, 0.5], [2.0, 2.0]]
    config = tiny_config(hidden=16, embed=4, batch_size=20, max_epochs=30, learning_rate=0.03, patience=30)
    assert held_out_gap(2, rates, 750, 6, config) == pytest.approx(math.log(2.0), abs=0.05)


@pytest.mark.slow
def test_history_timing_beats_next_mark_rates():
    # gap scale set by the previous mark's group (0.5 h vs 5 h), next mark uniform
    rates = [[2.0] * 4, [2.0] * 4, [0.2] * 4, [0.2] * 4]
    vocab = MarkVocabulary.identity(4)
    eval_config = EvalConfig(k_values=(1,), theta_grid=(1.0,))
    scores = {"rnn-td": [], "rmtpp": [], "pp-poisson": []}
    for seed in (1, 2, 3):
        spec = GeneratorSpec("mspp-poisson", K=4, horizon=1e6, params={"rates": rates}, max_events=30, seed=seed)
        sequences, _ = generate_corpus(spec, 400)
        corpus = split(sequences, seed=seed)
        config = tiny_config(hidden=8, embed=4, batch_size=20, max_epochs=10, learning_rate=0.03, patience=10, seed=seed)
        predictors = {
            "rnn-td": NeuralPredictor("rnn-td", train(corpus, config, K=4)[0], vocab),
            "rmtpp": NeuralPredictor("rmtpp", rmtpp_like(corpus, config, K=4)[0], vocab),
            "pp-poisson": PointProcessPredictor("pp-poisson", pp_fit(corpus.train, "pp-poisson", K=4), vocab),
        }
        for name, predictor in predictors.items():
            report = evaluate(predictor, corpus.test, config=eval_config)["free"]
            scores[name].append(report.acc_at_theta[0][1])
    median = {name: float(np.median(values)) for name, values in scores.items()}
    assert median["rnn-td"] > median["pp-poisson"] + 0.1
    assert median["rmtpp"] > median["pp-poisson"] + 0.1
