"""
One prediction interface over every model family.

A predictor walks a sequence with teacher forcing and, at each transition,
reports per-mark ranking scores and the predicted time of the true next
mark. ``load_predictor`` restores the right adapter from any checkpoint.
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from src.core.constants import ModelConstants
from src.core.exceptions import CheckpointError, NumericalError, ValidationError
from src.data.events import EventSequence, MarkVocabulary
from src.data.ingest import featurize_sequence
from src.models import rnn_td
from src.models.baselines import (
    PP_VARIANTS,
    MarkovModel,
    PointProcess,
    pp_from_checkpoint,
    pp_mark_scores,
    pp_predict_time,
)
from src.models.checkpoint import load_checkpoint, params_from_checkpoint
from src.models.rnn_td import ModelParams, PredictionCandidate


@dataclass(frozen=True)
class TransitionOutput:
    scores: np.ndarray
    target: int
    last_time: float
    true_time: float
    predicted_time: Optional[float]  # None when the model predicts no times


class Predictor(ABC):
    variant: str
    vocabulary: MarkVocabulary

    @property
    @abstractmethod
    def K(self) -> int:
        ...

    @property
    def has_time(self) -> bool:
        return True

    @abstractmethod
    def transitions(self, sequence: EventSequence, given_time: bool = False) -> List[TransitionOutput]:
        ...

    @abstractmethod
    def candidates(self, history: EventSequence, top_n: int) -> List[PredictionCandidate]:
        ...

    def _check_sequence(self, sequence: EventSequence) -> None:
        if len(sequence) and int(sequence.marks.max()) >= self.K:
            raise ValidationError(f"sequence {sequence.seq_id} has marks outside the model's K={self.K}")


def _ranked(scores: np.ndarray, times, top_n: int) -> List[PredictionCandidate]:
    out = [PredictionCandidate(e, float(times[e]), float(scores[e])) for e in range(len(scores))]
    out.sort(key=lambda c: (-c.likelihood, c.mark_id))
    return out[:top_n]


# --------------------------------------------------
# Neural models
# --------------------------------------------------
class NeuralPredictor(Predictor):
    def __init__(self, variant: str, params: ModelParams, vocabulary: MarkVocabulary, time_mode: str = "normalized"):
        self.variant = variant
        self.params = params
        self.vocabulary = vocabulary
        self.time_mode = time_mode

    @property
    def K(self) -> int:
        return self.params.K

    @property
    def has_time(self) -> bool:
        return self.params.has_time_head

    def _free_scores(self, h: np.ndarray, t_last: float) -> np.ndarray:
        if not self.params.has_time_head:
            return rnn_td.mark_distribution(self.params, h)
        scores = np.zeros(self.K)
        for c in rnn_td.predict_next(self.params, h, t_last, self.K, self.time_mode):
            scores[c.mark_id] = c.likelihood
        return scores

    def _expected(self, h: np.ndarray, mark: int, t_last: float) -> Optional[float]:
        if not self.params.has_time_head:
            return None
        try:
            return rnn_td.expected_time(self.params, h, mark, t_last, self.time_mode)
        except NumericalError:
            return math.inf

    def transitions(self, sequence: EventSequence, given_time: bool = False) -> List[TransitionOutput]:
        self._check_sequence(sequence)
        features = featurize_sequence(sequence, self.params.calendar)
        _, Hs = rnn_td.run_recurrence(self.params, features, sequence.marks)
        times, marks = sequence.times, sequence.marks
        out = []
        for i in range(len(sequence) - 1):
            h, t_last, t_next = Hs[i], float(times[i]), float(times[i + 1])
            if given_time and self.params.has_time_head:
                scores = rnn_td.given_time_likelihoods(self.params, h, t_last, t_next)
            elif given_time:
                scores = rnn_td.mark_distribution(self.params, h)
            else:
                scores = self._free_scores(h, t_last)
            target = int(marks[i + 1])
            out.append(TransitionOutput(scores, target, t_last, t_next, self._expected(h, target, t_last)))
        return out

    def candidates(self, history: EventSequence, top_n: int) -> List[PredictionCandidate]:
        self._check_sequence(history)
        h = rnn_td.history_state(self.params, history)
        t_last = float(history.times[-1])
        if self.params.has_time_head:
            return rnn_td.predict_next(self.params, h, t_last, top_n, self.time_mode)
        probs = rnn_td.mark_distribution(self.params, h)
        return _ranked(probs, np.full(self.K, math.nan), top_n)


# --------------------------------------------------
# Markov chains
# --------------------------------------------------
class MarkovPredictor(Predictor):
    def __init__(self, variant: str, model: MarkovModel, vocabulary: MarkVocabulary):
        self.variant = variant
        self.model = model
        self.vocabulary = vocabulary

    @property
    def K(self) -> int:
        return self.model.K

    @property
    def has_time(self) -> bool:
        return False

    def transitions(self, sequence: EventSequence, given_time: bool = False) -> List[TransitionOutput]:
        self._check_sequence(sequence)
        marks, times = [int(m) for m in sequence.marks], sequence.times
        return [
            TransitionOutput(
                self.model.distribution(marks[:i + 1]), marks[i + 1],
                float(times[i]), float(times[i + 1]), None,
            )
            for i in range(len(marks) - 1)
        ]

    def candidates(self, history: EventSequence, top_n: int) -> List[PredictionCandidate]:
        probs = self.model.distribution([int(m) for m in history.marks])
        return _ranked(probs, np.full(self.K, math.nan), top_n)


# --------------------------------------------------
# Point processes
# --------------------------------------------------
class PointProcessPredictor(Predictor):
    def __init__(self, variant: str, params: PointProcess, vocabulary: MarkVocabulary):
        self.variant = variant
        self.params = params
        self.vocabulary = vocabulary

    @property
    def K(self) -> int:
        return self.params.K

    def _expected(self, history: EventSequence, mark: int) -> float:
        try:
            return pp_predict_time(self.params, history, mark)
        except NumericalError:
            return math.inf

    def transitions(self, sequence: EventSequence, given_time: bool = False) -> List[TransitionOutput]:
        self._check_sequence(sequence)
        times, marks = sequence.times, sequence.marks
        out = []
        for i in range(len(sequence) - 1):
            history = sequence.prefix(i + 1)
            t_next = float(times[i + 1])
            scores = pp_mark_scores(self.params, history, t_next if given_time else None)
            target = int(marks[i + 1])
            out.append(TransitionOutput(scores, target, float(times[i]), t_next, self._expected(history, target)))
        return out

    def candidates(self, history: EventSequence, top_n: int) -> List[PredictionCandidate]:
        t_hat = [self._expected(history, e) for e in range(self.K)]
        likelihood = np.array([
            pp_mark_scores(self.params, history, t)[e] if math.isfinite(t) else 0.0
            for e, t in enumerate(t_hat)
        ])
        return _ranked(likelihood, t_hat, top_n)


def load_predictor(path: Union[str, Path], time_mode: str = "normalized") -> Predictor:
    checkpoint = load_checkpoint(path)
    variant = checkpoint.variant
    family = ModelConstants.AVAILABLE_MODELS.get(variant, {}).get("family")
    if family == "neural":
        return NeuralPredictor(variant, params_from_checkpoint(checkpoint), checkpoint.vocabulary, time_mode)
    if family == "markov":
        return MarkovPredictor(variant, MarkovModel.from_checkpoint(checkpoint), checkpoint.vocabulary)
    if variant in PP_VARIANTS:
        return PointProcessPredictor(variant, pp_from_checkpoint(checkpoint), checkpoint.vocabulary)
    raise CheckpointError(f"unknown model variant in checkpoint: {variant}")
