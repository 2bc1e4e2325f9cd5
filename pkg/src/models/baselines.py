"""
Baseline models: Markov chains over marks, Poisson and Hawkes point
processes (per mark and per mark pair), and the neural shared-intensity and
mark-only variants trained with the RNN-TD trainer.
"""
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize

from src.core.config import CalendarConfig, TrainConfig
from src.core.constants import ModelConstants, NumericConstants
from src.core.exceptions import CheckpointError, DataError, ValidationError
from src.core.numerics import quadrature
from src.data.events import CorpusSplit, EventSequence, MarkVocabulary
from src.models.checkpoint import Checkpoint
from src.training.trainer import train
from src.utils.logger import get_logger

logger = get_logger(__name__)

POISSON_VARIANTS = ("pp-poisson", "mspp-poisson")
HAWKES_VARIANTS = ("pp-hawkes", "mspp-hawkes")
PP_VARIANTS = POISSON_VARIANTS + HAWKES_VARIANTS


def _infer_K(corpus: Sequence[EventSequence]) -> int:
    return int(max(int(s.marks.max()) for s in corpus)) + 1


# --------------------------------------------------
# Markov chains
# --------------------------------------------------
@dataclass
class MarkovModel:
    order: int
    K: int
    smoothing: float
    counts: Dict[Tuple[int, ...], np.ndarray] = field(default_factory=dict)

    def distribution(self, history: Sequence[int]) -> np.ndarray:
        """P(next | last ``order`` marks), backing off at sequence starts."""
        length = min(self.order, len(history))
        while length > 0:
            context = tuple(int(m) for m in history[len(history) - length:])
            row = self.counts.get(context)
            total = 0.0 if row is None else float(row.sum())
            if self.smoothing > 0:
                row = np.zeros(self.K) if row is None else row
                return (row + self.smoothing) / (total + self.smoothing * self.K)
            if total > 0:
                return row / total
            length -= 1
        return np.full(self.K, 1.0 / self.K)

    def to_checkpoint(self, variant: str, vocabulary: MarkVocabulary) -> Checkpoint:
        contexts = sorted(self.counts)
        ctx = np.full((len(contexts), self.order), -1.0)
        for i, c in enumerate(contexts):
            ctx[i, :len(c)] = c
        arrays = {
            "contexts": ctx,
            "counts": np.vstack([self.counts[c] for c in contexts]) if contexts else np.zeros((0, self.K)),
        }
        meta = {"order": self.order, "K": self.K, "smoothing": self.smoothing}
        return Checkpoint(variant, arrays, meta, vocabulary)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "MarkovModel":
        meta = checkpoint.meta
        counts = {}
        for ctx, row in zip(checkpoint.arrays["contexts"], checkpoint.arrays["counts"]):
            counts[tuple(int(c) for c in ctx if c >= 0)] = row
        return cls(int(meta["order"]), int(meta["K"]), float(meta["smoothing"]), counts)


def mc_fit(
    corpus: Sequence[EventSequence],
    order: int,
    smoothing: float = 0.01,
    K: Optional[int] = None,
) -> MarkovModel:
    """Count transitions for every context length 1..order."""
    if order not in (1, 2, 3):
        raise ValidationError(f"Markov order must be 1, 2 or 3, got {order}")
    if smoothing < 0:
        raise ValidationError("smoothing must be nonnegative")
    if not corpus:
        raise DataError("cannot fit a Markov chain on an empty corpus")
    K = K or _infer_K(corpus)
    counts: Dict[Tuple[int, ...], np.ndarray] = defaultdict(lambda: np.zeros(K))
    for seq in corpus:
        marks = [int(m) for m in seq.marks]
        for j in range(1, len(marks)):
            for length in range(1, min(order, j) + 1):
                counts[tuple(marks[j - length:j])][marks[j]] += 1.0
    logger.info(f"MC{order}: {len(counts)} contexts over K={K}")
    return MarkovModel(order, K, smoothing, dict(counts))


# --------------------------------------------------
# Point processes
# --------------------------------------------------
@dataclass
class PoissonRates:
    variant: str
    rates: np.ndarray  # (K,) per mark or (K, K) per mark pair

    @property
    def K(self) -> int:
        return self.rates.shape[0]

    def rate(self, prev_mark: int, mark: int) -> float:
        if self.variant == "pp-poisson":
            return float(self.rates[mark])
        return float(self.rates[prev_mark, mark])

    def row(self, prev_mark: int) -> np.ndarray:
        return self.rates if self.variant == "pp-poisson" else self.rates[prev_mark]


@dataclass
class HawkesParams:
    variant: str
    base: np.ndarray  # λ(0; e), (K,) or (K, K)
    alpha: float
    sigma: float = 1.0

    def __post_init__(self):
        if np.any(self.base <= 0) or self.alpha < 0:
            raise ValidationError("Hawkes base rates must be positive and alpha nonnegative")

    @property
    def K(self) -> int:
        return self.base.shape[0]

    def base_rate(self, prev_mark: int, mark: int) -> float:
        if self.variant == "pp-hawkes":
            return float(self.base[mark])
        return float(self.base[prev_mark, mark])

    def row(self, prev_mark: int) -> np.ndarray:
        return self.base if self.variant == "pp-hawkes" else self.base[prev_mark]


PointProcess = Union[PoissonRates, HawkesParams]


def hawkes_intensity(
    params: HawkesParams,
    mark: int,
    history_times: Sequence[float],
    t: float,
    prev_mark: Optional[int] = None,
) -> float:
    """λ(t; e) = λ(0; e) + α Σ_{t_i < t} exp(-(t - t_i)/σ)."""
    history = np.asarray(history_times, dtype=np.float64)
    if history.size and t < history.max():
        raise ValidationError("intensity evaluated before the last history event")
    if params.variant == "mspp-hawkes" and prev_mark is None:
        raise ValidationError("mspp-hawkes needs the previous mark")
    base = params.base_rate(prev_mark, mark)
    past = history[history < t]
    return base + params.alpha * float(np.sum(np.exp(-(t - past) / params.sigma)))


@dataclass
class _Transitions:
    """Per-transition quantities that do not depend on the parameters."""
    prev: np.ndarray
    target: np.ndarray
    delta: np.ndarray
    excitation: np.ndarray   # Σ_{j<=i} exp(-(t_{i+1} - t_j))
    kernel_mass: np.ndarray  # ∫_{t_i}^{t_{i+1}} Σ_{j<=i} exp(-(t - t_j)) dt


def _transitions(corpus: Sequence[EventSequence]) -> _Transitions:
    prev, target, delta, excitation, mass = [], [], [], [], []
    for seq in corpus:
        times, marks = seq.times, seq.marks
        a = 1.0
        for i in range(len(times) - 1):
            d = times[i + 1] - times[i]
            decay = math.exp(-d)
            prev.append(marks[i])
            target.append(marks[i + 1])
            delta.append(d)
            excitation.append(decay * a)
            mass.append(a * (1.0 - decay))
            a = 1.0 + decay * a
    return _Transitions(
        np.asarray(prev, dtype=np.int64),
        np.asarray(target, dtype=np.int64),
        np.asarray(delta),
        np.asarray(excitation),
        np.asarray(mass),
    )


def _index(variant: str, tr: _Transitions, K: int) -> np.ndarray:
    """Flat index of the rate used by each transition."""
    if variant.startswith("mspp"):
        return tr.prev * K + tr.target
    return tr.target


def _poisson_fit(variant: str, tr: _Transitions, K: int) -> PoissonRates:
    size = K * K if variant == "mspp-poisson" else K
    idx = _index(variant, tr, K)
    counts = np.bincount(idx, minlength=size).astype(np.float64)
    exposure = np.bincount(idx, weights=tr.delta, minlength=size)
    rates = np.full(size, NumericConstants.RATE_FLOOR)
    seen = exposure > 0
    rates[seen] = counts[seen] / exposure[seen]
    if not np.all(seen):
        logger.warning(
            f"{variant}: {int(np.sum(~seen))} rate(s) without exposure floored at "
            f"{NumericConstants.RATE_FLOOR}"
        )
    return PoissonRates(variant, rates.reshape((K, K)) if variant == "mspp-poisson" else rates)


def _hawkes_objective(theta: np.ndarray, idx: np.ndarray, tr: _Transitions, size: int):
    mu = np.exp(theta[:size])
    alpha = math.exp(theta[size])
    lam = mu[idx] + alpha * tr.excitation
    ll = np.sum(np.log(lam)) - np.sum(mu[idx] * tr.delta) - alpha * np.sum(tr.kernel_mass)
    d_mu = np.bincount(idx, weights=1.0 / lam - tr.delta, minlength=size)
    d_alpha = np.sum(tr.excitation / lam) - np.sum(tr.kernel_mass)
    grad = np.concatenate([d_mu * mu, [d_alpha * alpha]])
    return -ll, -grad


def _hawkes_fit(variant: str, tr: _Transitions, K: int, max_iter: int = 500) -> HawkesParams:
    poisson_variant = "mspp-poisson" if variant == "mspp-hawkes" else "pp-poisson"
    start = _poisson_fit(poisson_variant, tr, K).rates.ravel()
    size = start.size
    idx = _index(variant, tr, K)
    theta0 = np.concatenate([np.log(start), [math.log(0.1)]])
    result = minimize(
        _hawkes_objective, theta0, args=(idx, tr, size),
        jac=True, method="L-BFGS-B", options={"maxiter": max_iter},
    )
    if not result.success:
        logger.warning(f"{variant}: optimizer stopped early: {result.message}")
    mu = np.exp(result.x[:size])
    alpha = float(math.exp(result.x[size]))
    logger.info(f"{variant}: fitted alpha={alpha:.4f}, log-likelihood={-result.fun:.4f}")
    return HawkesParams(variant, mu.reshape((K, K)) if variant == "mspp-hawkes" else mu, alpha)


def pp_fit(corpus: Sequence[EventSequence], variant: str, K: Optional[int] = None) -> PointProcess:
    """Fit a point-process baseline by maximum likelihood.

    Each transition contributes the density of the gap before its target
    mark under that mark's (or mark pair's) intensity.
    """
    if variant not in PP_VARIANTS:
        raise ValidationError(f"unknown point-process variant: {variant}")
    if not corpus:
        raise DataError("cannot fit a point process on an empty corpus")
    K = K or _infer_K(corpus)
    tr = _transitions(corpus)
    if variant in POISSON_VARIANTS:
        return _poisson_fit(variant, tr, K)
    return _hawkes_fit(variant, tr, K)


def pp_log_likelihood(params: PointProcess, corpus: Sequence[EventSequence]) -> float:
    tr = _transitions(corpus)
    K = params.K
    if isinstance(params, PoissonRates):
        rates = params.rates.ravel()[_index(params.variant, tr, K)]
        return float(np.sum(np.log(rates)) - np.sum(rates * tr.delta))
    mu = params.base.ravel()[_index(params.variant, tr, K)]
    lam = mu + params.alpha * tr.excitation
    return float(np.sum(np.log(lam)) - np.sum(mu * tr.delta) - params.alpha * np.sum(tr.kernel_mass))


def _excitation_at(history: EventSequence, sigma: float = 1.0) -> float:
    times = history.times
    return float(np.sum(np.exp(-(times[-1] - times) / sigma)))


def pp_predict_time(params: PointProcess, history: EventSequence, mark: int) -> float:
    """Expected arrival time of ``mark`` after the last history event."""
    if len(history) == 0:
        raise ValidationError("prediction needs a nonempty history")
    t_last = float(history.times[-1])
    prev = int(history.marks[-1])
    if isinstance(params, PoissonRates):
        return t_last + 1.0 / params.rate(prev, mark)
    mu = params.base_rate(prev, mark)
    excitation = params.alpha * _excitation_at(history, params.sigma)
    if excitation == 0.0:
        return t_last + 1.0 / mu

    def survival(x: float) -> float:
        return math.exp(-(mu * x + excitation * -math.expm1(-x / params.sigma) * params.sigma))

    return t_last + quadrature(survival, 0.0, math.inf)


def pp_mark_scores(params: PointProcess, history: EventSequence, t: Optional[float] = None) -> np.ndarray:
    """Per-mark scores: intensities after the last event, or densities at ``t``."""
    prev = int(history.marks[-1])
    row = params.row(prev).astype(np.float64)
    if isinstance(params, HawkesParams):
        excitation = params.alpha * _excitation_at(history, params.sigma)
    else:
        excitation = 0.0
    if t is None:
        return row + excitation
    x = t - float(history.times[-1])
    decayed = excitation * math.exp(-x / params.sigma)
    compensator = row * x + excitation * params.sigma * -math.expm1(-x / params.sigma)
    return (row + decayed) * np.exp(-compensator)


def pp_to_checkpoint(params: PointProcess, vocabulary: MarkVocabulary) -> Checkpoint:
    if isinstance(params, PoissonRates):
        return Checkpoint(params.variant, {"rates": params.rates}, {"K": params.K}, vocabulary)
    arrays = {"base": params.base, "alpha": np.array([params.alpha])}
    return Checkpoint(params.variant, arrays, {"K": params.K, "sigma": params.sigma}, vocabulary)


def pp_from_checkpoint(checkpoint: Checkpoint) -> PointProcess:
    if checkpoint.variant in POISSON_VARIANTS:
        return PoissonRates(checkpoint.variant, checkpoint.arrays["rates"])
    if checkpoint.variant in HAWKES_VARIANTS:
        return HawkesParams(
            checkpoint.variant,
            checkpoint.arrays["base"],
            float(checkpoint.arrays["alpha"][0]),
            float(checkpoint.meta.get("sigma", 1.0)),
        )
    raise CheckpointError(f"not a point-process checkpoint: {checkpoint.variant}")


# --------------------------------------------------
# Neural baselines
# --------------------------------------------------
def rmtpp_like(corpus: CorpusSplit, config: TrainConfig, K: int, calendar: Optional[CalendarConfig] = None):
    """Shared-intensity baseline: λ(t) = exp(v·h + w(t - t_i) + b) for all marks."""
    config = replace(config, head=ModelConstants.HEAD_FOR_MODEL["rmtpp"], shaping="exponential")
    return train(corpus, config, K, calendar)


def rnn_mark_only(corpus: CorpusSplit, config: TrainConfig, K: int, calendar: Optional[CalendarConfig] = None):
    """Mark-only RNN with the RNN-TD inputs and recurrence."""
    config = replace(config, head=ModelConstants.HEAD_FOR_MODEL["rnn"])
    return train(corpus, config, K, calendar)
