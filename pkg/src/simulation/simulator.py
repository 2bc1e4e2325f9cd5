"""
Synthetic marked event sequences from known generators, by Ogata thinning.

Generator kinds:
  mspp-poisson    next mark from a transition matrix, then a gap
                  ~ Exponential(rates[prev, next])
  hawkes          marks e with λ_e(t) = μ_e + α Σ_{t_j < t} exp(-(t - t_j))
  markov-duration next mark from a transition matrix, then a log-normal gap
                  with the target mark's (μ, s)
  rnn-td-model    sampled from RNN-TD parameters: time from the total
                  intensity Λ·τ, mark ∝ r(e|h)·ν_e
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from scipy import stats

from src.core.constants import IngestConstants
from src.core.exceptions import BoundViolationError, ValidationError
from src.core.numerics import make_rng
from src.data.events import EventSequence, MarkVocabulary
from src.data.ingest import featurize, save_corpus_dir
from src.models.checkpoint import load_model
from src.models.rnn_td import ModelParams, mark_distribution, step
from src.utils.helpers import atomic_write_text, to_jsonable
from src.utils.logger import get_logger

logger = get_logger(__name__)

KINDS = ("mspp-poisson", "hawkes", "markov-duration", "rnn-td-model")
MAX_ATTEMPTS = 1000

Intensity = Callable[[float, List[float]], float]
Bound = Callable[[float, List[float]], Tuple[float, float]]


# --------------------------------------------------
# Thinning
# --------------------------------------------------
def thinning_sample(
    intensity: Intensity,
    bound: Bound,
    t_start: float,
    horizon: float,
    rng: np.random.Generator,
    max_events: Optional[int] = None,
) -> List[float]:
    """Event times on (t_start, horizon] of the process with ``intensity``.

    ``bound(t, events)`` returns (M, L): M must dominate the intensity on
    (t, t + L]. Both oracles see the events accepted so far.
    """
    events: List[float] = []
    t = t_start
    while t < horizon and (max_events is None or len(events) < max_events):
        upper, window = bound(t, events)
        if upper <= 0.0:
            if math.isinf(window):
                break
            t += window
            continue
        wait = rng.exponential(1.0 / upper)
        if wait > window:
            t += window
            continue
        t += wait
        if t > horizon:
            break
        lam = intensity(t, events)
        if lam > upper * (1.0 + 1e-12):
            raise BoundViolationError(f"intensity {lam} exceeds bound {upper} at t={t}")
        if rng.uniform() * upper <= lam:
            events.append(t)
    return events


def homogeneous(rate: float) -> Tuple[Intensity, Bound]:
    return (lambda t, ev: rate), (lambda t, ev: (rate, math.inf))


# --------------------------------------------------
# Specs
# --------------------------------------------------
@dataclass
class MarkDurationSpec:
    transition: np.ndarray
    mu: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        _check_stochastic(self.transition, "transition")
        if np.any(self.s <= 0):
            raise ValidationError("log-normal scale s must be positive")

    def mean_gap(self, mark: int) -> float:
        return float(math.exp(self.mu[mark] + 0.5 * self.s[mark] ** 2))


def _check_stochastic(matrix: np.ndarray, name: str) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"{name} must be a square matrix")
    if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
        raise ValidationError(f"{name} rows must be probability vectors")


@dataclass
class GeneratorSpec:
    kind: str
    K: int
    horizon: float
    params: Dict[str, Any] = field(default_factory=dict)
    max_events: int = IngestConstants.MAX_LENGTH
    seed: int = 0
    model: Optional[ModelParams] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown generator kind: {self.kind}")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        if self.max_events < 3:
            raise ValidationError("max_events must allow at least 3 events")
        p = self.params
        K = self.K
        if self.kind in ("mspp-poisson", "markov-duration"):
            p["transition"] = np.asarray(p.get("transition", np.full((K, K), 1.0 / K)), dtype=np.float64)
            _check_stochastic(p["transition"], "transition")
        p["initial"] = np.asarray(p.get("initial", np.full(K, 1.0 / K)), dtype=np.float64)
        if p["initial"].shape != (K,) or not math.isclose(p["initial"].sum(), 1.0, abs_tol=1e-9):
            raise ValidationError("initial must be a probability vector over K marks")
        if self.kind == "mspp-poisson":
            rates = np.asarray(p["rates"], dtype=np.float64)
            p["rates"] = np.broadcast_to(rates, (K, K)).copy() if rates.ndim < 2 else rates
            if p["rates"].shape != (K, K) or np.any(p["rates"] <= 0):
                raise ValidationError("rates must be positive, K or K x K")
        elif self.kind == "hawkes":
            p["base"] = np.broadcast_to(np.asarray(p["base"], dtype=np.float64), (K,)).copy()
            p["alpha"] = float(p.get("alpha", 0.0))
            if np.any(p["base"] <= 0) or p["alpha"] < 0:
                raise ValidationError("hawkes base rates must be positive and alpha >= 0")
        elif self.kind == "markov-duration":
            p["durations"] = MarkDurationSpec(
                p["transition"],
                np.broadcast_to(np.asarray(p["mu"], dtype=np.float64), (K,)).copy(),
                np.broadcast_to(np.asarray(p["s"], dtype=np.float64), (K,)).copy(),
            )
        elif self.kind == "rnn-td-model":
            if self.model is None:
                raise ValidationError("rnn-td-model generator needs model parameters")
            if self.model.K != K or not self.model.has_time_head:
                raise ValidationError("generator model must have K marks and an intensity head")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GeneratorSpec":
        data = dict(data)
        model = None
        if data.get("kind") == "rnn-td-model" and "checkpoint" in data.get("params", {}):
            _, model, _ = load_model(data["params"]["checkpoint"])
        return cls(
            kind=data["kind"],
            K=int(data["K"]),
            horizon=float(data["horizon"]),
            params=dict(data.get("params", {})),
            max_events=int(data.get("max_events", IngestConstants.MAX_LENGTH)),
            seed=int(data.get("seed", 0)),
            model=model,
        )

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "GeneratorSpec":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(yaml.safe_load(f))

    def expected_length(self) -> float:
        """Rough expected event count on [0, horizon]; inf when unbounded."""
        p, K = self.params, self.K
        if self.kind == "mspp-poisson":
            mean_gap = float(np.mean(np.sum(p["transition"] / p["rates"], axis=1)))
        elif self.kind == "markov-duration":
            d = p["durations"]
            mean_gap = float(np.mean([d.mean_gap(b) for b in range(K)]))
        elif self.kind == "hawkes":
            branching = K * p["alpha"]
            if branching >= 1:
                return math.inf
            return float(p["base"].sum()) * self.horizon / (1.0 - branching)
        else:
            return math.inf
        return 1.0 + self.horizon / mean_gap


@dataclass
class GroundTruth:
    kind: str
    params: Dict[str, Any]
    sequence_nll: List[float] = field(default_factory=list)
    resamples: int = 0

    @property
    def total_nll(self) -> float:
        return float(sum(self.sequence_nll))

    def to_dict(self) -> Dict[str, Any]:
        params = {k: v for k, v in self.params.items() if not isinstance(v, MarkDurationSpec)}
        return to_jsonable({
            "kind": self.kind,
            "params": {k: np.asarray(v).tolist() if isinstance(v, np.ndarray) else v for k, v in params.items()},
            "sequence_nll": self.sequence_nll,
            "total_nll": self.total_nll,
            "resamples": self.resamples,
        })


# --------------------------------------------------
# Per-kind samplers: each returns (times, marks, nll)
# --------------------------------------------------
Sample = Tuple[List[float], List[int], float]


def _draw(rng: np.random.Generator, probs: np.ndarray) -> int:
    return int(rng.choice(len(probs), p=probs / probs.sum()))


def _sample_mspp_poisson(spec: GeneratorSpec, rng: np.random.Generator) -> Sample:
    p = spec.params
    times, marks = [0.0], [_draw(rng, p["initial"])]
    total = 0.0
    while len(times) < spec.max_events:
        a = marks[-1]
        b = _draw(rng, p["transition"][a])
        rate = float(p["rates"][a, b])
        intensity, bound = homogeneous(rate)
        nxt = thinning_sample(intensity, bound, times[-1], spec.horizon, rng, max_events=1)
        if not nxt:
            break
        delta = nxt[0] - times[-1]
        total -= math.log(p["transition"][a, b]) + math.log(rate) - rate * delta
        times.append(nxt[0])
        marks.append(b)
    return times, marks, total


def _sample_markov_duration(spec: GeneratorSpec, rng: np.random.Generator) -> Sample:
    d: MarkDurationSpec = spec.params["durations"]
    times, marks = [0.0], [_draw(rng, spec.params["initial"])]
    total = 0.0
    while len(times) < spec.max_events:
        a = marks[-1]
        b = _draw(rng, d.transition[a])
        delta = float(rng.lognormal(d.mu[b], d.s[b]))
        if times[-1] + delta > spec.horizon:
            break
        total -= math.log(d.transition[a, b]) + float(
            stats.lognorm.logpdf(delta, d.s[b], scale=math.exp(d.mu[b]))
        )
        times.append(times[-1] + delta)
        marks.append(b)
    return times, marks, total


def _sample_hawkes(spec: GeneratorSpec, rng: np.random.Generator) -> Sample:
    base, alpha = spec.params["base"], spec.params["alpha"]
    K = spec.K

    def excitation(t: float, events: List[float]) -> float:
        if not events:
            return 0.0
        past = np.asarray(events)
        return float(np.sum(np.exp(-(t - past[past < t]))))

    def total_intensity(t: float, events: List[float]) -> float:
        return float(base.sum()) + K * alpha * excitation(t, events)

    def bound(t: float, events: List[float]) -> Tuple[float, float]:
        # decays between events, so the value just after t dominates
        past = np.asarray(events)
        kick = float(np.sum(np.exp(-(t - past[past <= t])))) if events else 0.0
        return float(base.sum()) + K * alpha * kick, math.inf

    times = thinning_sample(total_intensity, bound, 0.0, spec.horizon, rng, max_events=spec.max_events)
    marks = [_draw(rng, base + alpha * excitation(t, times)) for t in times]

    total = 0.0
    if len(times) >= 2:
        t0, tn = times[0], times[-1]
        for t, m in zip(times[1:], marks[1:]):
            total -= math.log(base[m] + alpha * excitation(t, times))
        # Σ_e ∫_{t0}^{tn} λ_e
        past = np.asarray(times[:-1])
        kernel = np.sum(1.0 - np.exp(-(tn - past)))
        total += float(base.sum()) * (tn - t0) + K * alpha * float(kernel)
    return times, marks, total


def _sample_rnn_td(spec: GeneratorSpec, rng: np.random.Generator) -> Sample:
    params = spec.model
    shaping = params.shaping
    times, marks = [0.0], [_draw(rng, spec.params["initial"])]
    h = step(params, np.zeros(params.H), featurize(None, 0.0, params.calendar), marks[0])
    total = 0.0
    while len(times) < spec.max_events:
        t_last = times[-1]
        u = params.W_nu @ h + (params.b_nu if params.b_nu is not None else 0.0)
        nu = np.exp(u)
        lam = float(nu.sum())

        def intensity(t: float, events: List[float]) -> float:
            return lam * float(shaping.tau(t - t_last))

        def bound(t: float, events: List[float]) -> Tuple[float, float]:
            window = 1.0 / lam
            if shaping.is_exponential and shaping.w > 0:
                return lam * float(shaping.tau(t + window - t_last)), window
            return lam * float(shaping.tau(t - t_last)), window

        nxt = thinning_sample(intensity, bound, t_last, spec.horizon, rng, max_events=1)
        if not nxt:
            break
        r = mark_distribution(params, h)
        weights = r * (nu if params.head == "mark" else 1.0)
        b = _draw(rng, weights)
        delta = nxt[0] - t_last
        sel = b if params.head == "mark" else 0
        total -= (
            math.log(r[b]) + float(u[sel]) + float(shaping.log_tau(delta))
            - lam * float(shaping.integral(delta))
        )
        times.append(nxt[0])
        marks.append(b)
        h = step(params, h, featurize(t_last, nxt[0], params.calendar), b)
    return times, marks, total


SAMPLERS = {
    "mspp-poisson": _sample_mspp_poisson,
    "hawkes": _sample_hawkes,
    "markov-duration": _sample_markov_duration,
    "rnn-td-model": _sample_rnn_td,
}


def generate_corpus(spec: GeneratorSpec, n_sequences: int) -> Tuple[List[EventSequence], GroundTruth]:
    """``n_sequences`` independent sequences of length >= 3 and their ground truth."""
    if n_sequences < 1:
        raise ValidationError("need at least one sequence")
    if spec.expected_length() < IngestConstants.MIN_LENGTH:
        raise ValidationError(
            f"infeasible spec: expected length {spec.expected_length():.2f} < "
            f"{IngestConstants.MIN_LENGTH} at horizon {spec.horizon}"
        )
    sampler = SAMPLERS[spec.kind]
    truth = GroundTruth(spec.kind, dict(spec.params))
    sequences = []
    for index in range(n_sequences):
        rng = make_rng(spec.seed, 0x51, index)
        for attempt in range(MAX_ATTEMPTS):
            times, marks, seq_nll = sampler(spec, rng)
            if len(times) >= IngestConstants.MIN_LENGTH:
                break
            truth.resamples += 1
        else:
            raise ValidationError(f"infeasible spec: no sequence of length >= 3 after {MAX_ATTEMPTS} attempts")
        sequences.append(EventSequence.from_arrays(f"sim-{index}", times, marks))
        truth.sequence_nll.append(seq_nll)
    if truth.resamples:
        logger.info(f"Resampled {truth.resamples} sequence(s) shorter than {IngestConstants.MIN_LENGTH}")
    return sequences, truth


def markov_bayes_accuracy(transition: np.ndarray, context_marks: Sequence[int]) -> float:
    """Acc@1 of always predicting argmax_b P[a, b], averaged over the contexts."""
    best = np.asarray(transition).max(axis=1)
    return float(np.mean(best[np.asarray(context_marks, dtype=np.int64)]))


def write_simulation(out_dir: Union[str, Path], sequences: List[EventSequence], truth: GroundTruth, K: int) -> Dict[str, Path]:
    paths = save_corpus_dir(out_dir, sequences, MarkVocabulary.identity(K))
    paths["ground_truth"] = Path(out_dir) / "ground_truth.json"
    atomic_write_text(paths["ground_truth"], json.dumps(truth.to_dict(), indent=2, sort_keys=True))
    return paths
