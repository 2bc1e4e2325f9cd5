"""
Event stream types: events, sequences, vocabularies and corpus splits
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from src.core.exceptions import DataError, ValidationError


@dataclass(frozen=True)
class Event:
    time: float      # hours since the corpus epoch
    mark_id: int

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time >= 0):
            raise ValidationError(f"event time must be finite and >= 0, got {self.time}")
        if self.mark_id < 0:
            raise ValidationError(f"mark id must be >= 0, got {self.mark_id}")


@dataclass(frozen=True)
class EventSequence:
    seq_id: str
    events: Tuple[Event, ...]

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        for prev, cur in zip(self.events, self.events[1:]):
            if not cur.time > prev.time:
                raise ValidationError(
                    f"sequence {self.seq_id}: times must be strictly increasing "
                    f"({prev.time} then {cur.time})"
                )

    @classmethod
    def from_arrays(cls, seq_id: str, times: Iterable[float], marks: Iterable[int]) -> "EventSequence":
        return cls(seq_id, tuple(Event(float(t), int(m)) for t, m in zip(times, marks)))

    def __len__(self) -> int:
        return len(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.fromiter((e.time for e in self.events), dtype=np.float64, count=len(self.events))

    @property
    def marks(self) -> np.ndarray:
        return np.fromiter((e.mark_id for e in self.events), dtype=np.int64, count=len(self.events))

    @property
    def n_transitions(self) -> int:
        return max(len(self.events) - 1, 0)

    def prefix(self, length: int) -> "EventSequence":
        return EventSequence(self.seq_id, self.events[:length])


@dataclass
class MarkVocabulary:
    """Bijection between mark strings and ids 0..K-1"""

    tokens: List[str] = field(default_factory=list)

    def __post_init__(self):
        self._index: Dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self._index:
                raise DataError(f"duplicate mark in vocabulary: {tok!r}")
            self._index[tok] = i

    @property
    def K(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def encode(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise DataError(f"unknown mark: {token!r}")

    def decode(self, mark_id: int) -> str:
        if not 0 <= mark_id < len(self.tokens):
            raise DataError(f"mark id out of range: {mark_id}")
        return self.tokens[mark_id]

    @classmethod
    def identity(cls, K: int) -> "MarkVocabulary":
        """Vocabulary whose mark strings are the ids themselves"""
        return cls([str(i) for i in range(K)])


@dataclass
class CorpusSplit:
    train: List[EventSequence]
    validation: List[EventSequence]
    test: List[EventSequence]

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def parts(self) -> Dict[str, List[EventSequence]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def total_transitions(sequences: Sequence[EventSequence]) -> int:
    return sum(s.n_transitions for s in sequences)
