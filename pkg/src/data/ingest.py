"""
Corpus ingestion, temporal features and train/validation/test splits.

Canonical corpus format: one sequence per line,
``seq_id<TAB>t1:mark1<TAB>t2:mark2...`` with times in decimal hours since
the corpus epoch. Vocabulary files hold one mark string per line; the
(0-based) line number is the mark id.
"""
import math
from collections import Counter
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.config import CalendarConfig, IngestConfig
from src.core.constants import IngestConstants, NumericConstants
from src.core.exceptions import DataError, ValidationError
from src.core.numerics import make_rng
from src.data.events import CorpusSplit, Event, EventSequence, MarkVocabulary
from src.utils.helpers import atomic_write_text
from src.utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]


@dataclass
class RawStream:
    line_number: int
    seq_id: str
    events: List[Tuple[float, str]]


# --------------------------------------------------
# Parsing
# --------------------------------------------------
def parse_line(line: str, line_number: int) -> Optional[RawStream]:
    """Parse one canonical record; blank lines give None."""
    line = line.rstrip("\r\n")
    if not line.strip():
        return None
    fields = line.split("\t")
    seq_id = fields[0].strip()
    if not seq_id:
        raise DataError("missing sequence id", line_number)
    events = []
    for field in fields[1:]:
        if not field:
            continue
        time_s, sep, mark = field.partition(":")
        if not sep or not mark:
            raise DataError(f"malformed event {field!r} (expected time:mark)", line_number)
        try:
            t = float(time_s)
        except ValueError:
            raise DataError(f"bad time {time_s!r}", line_number)
        if not math.isfinite(t) or t < 0:
            raise DataError(f"time must be finite and >= 0, got {time_s!r}", line_number)
        events.append((t, mark))
    return RawStream(line_number, seq_id, events)


def read_raw_streams(path: PathLike) -> List[RawStream]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    streams = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            stream = parse_line(line, number)
            if stream is not None:
                streams.append(stream)
    return streams


def build_vocabulary(streams: Sequence[RawStream], top_k: int) -> MarkVocabulary:
    """Most frequent ``top_k`` marks, ordered by descending count then string."""
    counts = Counter(mark for s in streams for _, mark in s.events)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return MarkVocabulary([mark for mark, _ in ranked[:top_k]])


# --------------------------------------------------
# Ingestion
# --------------------------------------------------
def _split_stream(
    times: List[float], marks: List[int], config: IngestConfig
) -> List[Tuple[List[float], List[int]]]:
    pieces = []
    start = 0
    for i in range(1, len(times) + 1):
        if i == len(times) or times[i] - times[i - 1] > config.gap_hours:
            pieces.append((times[start:i], marks[start:i]))
            start = i
    capped = []
    for ts, ms in pieces:
        for j in range(0, len(ts), config.max_length):
            capped.append((ts[j:j + config.max_length], ms[j:j + config.max_length]))
    return capped


def streams_to_sequences(
    streams: Sequence[RawStream],
    vocabulary: MarkVocabulary,
    config: IngestConfig,
) -> List[EventSequence]:
    sequences = []
    dropped = Counter()
    perturbed = 0
    for stream in streams:
        kept = [(t, vocabulary.encode(m)) for t, m in stream.events if m in vocabulary]
        dropped["rare-mark"] += len(stream.events) - len(kept)
        kept.sort(key=lambda e: e[0])

        times, marks = [], []
        for t, m in kept:
            if times and t <= times[-1]:
                t = max(times[-1] + NumericConstants.SIMULTANEOUS_SHIFT, float(np.nextafter(times[-1], np.inf)))
                perturbed += 1
            times.append(t)
            marks.append(m)

        pieces = _split_stream(times, marks, config)
        for k, (ts, ms) in enumerate(pieces):
            if len(ts) < config.min_length:
                dropped["short-piece"] += len(ts)
                continue
            seq_id = stream.seq_id if len(pieces) == 1 else f"{stream.seq_id}#{k}"
            sequences.append(EventSequence.from_arrays(seq_id, ts, ms))

    if perturbed:
        logger.warning(
            f"Shifted {perturbed} simultaneous event(s) by "
            f"{NumericConstants.SIMULTANEOUS_SHIFT} h to keep times strictly increasing"
        )
    if dropped:
        logger.info(f"Dropped events by rule: {dict(dropped)}")
    return sequences


def ingest(
    path: PathLike,
    config: Optional[IngestConfig] = None,
    vocabulary: Optional[MarkVocabulary] = None,
) -> Tuple[List[EventSequence], MarkVocabulary]:
    """Read a canonical corpus file and apply the preparation rules.

    Marks outside the ``top_k`` most frequent are removed with their
    events, streams are cut wherever the gap exceeds ``gap_hours`` and
    again every ``max_length`` events, and pieces shorter than
    ``min_length`` are dropped. Passing ``vocabulary`` fixes the mark ids
    (used when re-reading an already prepared corpus).
    """
    config = config or IngestConfig()
    streams = read_raw_streams(path)
    if vocabulary is None:
        vocabulary = build_vocabulary(streams, config.top_k)
    sequences = streams_to_sequences(streams, vocabulary, config)
    if not sequences:
        raise DataError("no usable sequences")
    logger.info(
        f"Ingested {len(sequences)} sequences, "
        f"{sum(len(s) for s in sequences)} events, K={vocabulary.K} from {path}"
    )
    return sequences, vocabulary


# --------------------------------------------------
# Temporal features
# --------------------------------------------------
def featurize(
    prev_time: Optional[float],
    cur_time: float,
    calendar: Optional[CalendarConfig] = None,
) -> np.ndarray:
    """Feature vector of one event: log gap, then calendar coordinates in [0, 1)."""
    calendar = calendar or CalendarConfig()
    if prev_time is None:
        gap = 0.0
    else:
        if cur_time < prev_time:
            raise ValidationError("featurize needs cur_time >= prev_time")
        gap = cur_time - prev_time
    values = [math.log(max(gap, NumericConstants.TIME_EPS))]
    if calendar.enabled:
        epoch = calendar.epoch_datetime
        try:
            dt = epoch + timedelta(hours=cur_time)
        except OverflowError:
            raise DataError(f"time {cur_time!r} h lies beyond the calendar range from epoch {calendar.epoch}")
        values.extend([
            (dt.year - epoch.year) / calendar.year_span,
            (dt.month - 1) / 12.0,
            (dt.day - 1) / 31.0,
            dt.weekday() / 7.0,
            dt.hour / 24.0,
            dt.minute / 60.0,
            (dt.second + dt.microsecond / 1e6) / 60.0,
        ])
    return np.asarray(values, dtype=np.float64)


def featurize_sequence(
    sequence: EventSequence, calendar: Optional[CalendarConfig] = None
) -> np.ndarray:
    calendar = calendar or CalendarConfig()
    rows = []
    prev = None
    for event in sequence.events:
        rows.append(featurize(prev, event.time, calendar))
        prev = event.time
    if not rows:
        return np.zeros((0, calendar.dimension))
    return np.vstack(rows)


# --------------------------------------------------
# Splitting
# --------------------------------------------------
def split(corpus: Sequence[EventSequence], seed: int) -> CorpusSplit:
    """Seeded 80/10/10 partition by sequence."""
    n = len(corpus)
    if n < 3:
        raise ValidationError(f"need at least 3 sequences to split, got {n}")
    order = make_rng(seed, 0x5E).permutation(n)
    n_train = min(int(round(IngestConstants.SPLIT_FRACTIONS[0] * n)), n - 2)
    n_valid = (n - n_train + 1) // 2
    parts = (
        order[:n_train],
        order[n_train:n_train + n_valid],
        order[n_train + n_valid:],
    )
    train, valid, test = ([corpus[i] for i in sorted(p)] for p in parts)
    return CorpusSplit(train, valid, test)


# --------------------------------------------------
# Files
# --------------------------------------------------
def format_sequence(sequence: EventSequence, vocabulary: MarkVocabulary) -> str:
    cells = [f"{e.time!r}:{vocabulary.decode(e.mark_id)}" for e in sequence.events]
    return "\t".join([sequence.seq_id] + cells)


def write_corpus(path: PathLike, sequences: Sequence[EventSequence], vocabulary: MarkVocabulary) -> None:
    atomic_write_text(path, "".join(format_sequence(s, vocabulary) + "\n" for s in sequences))


def read_corpus(path: PathLike, vocabulary: MarkVocabulary) -> List[EventSequence]:
    """Read a prepared corpus file verbatim (no filtering)."""
    sequences = []
    for stream in read_raw_streams(path):
        times, marks = [], []
        for t, m in stream.events:
            if m not in vocabulary:
                raise DataError(f"unknown mark {m!r}", stream.line_number)
            times.append(t)
            marks.append(vocabulary.encode(m))
        try:
            sequences.append(EventSequence.from_arrays(stream.seq_id, times, marks))
        except ValidationError as e:
            raise DataError(str(e), stream.line_number)
    return sequences


def write_vocabulary(path: PathLike, vocabulary: MarkVocabulary) -> None:
    atomic_write_text(path, "".join(tok + "\n" for tok in vocabulary.tokens))


def read_vocabulary(path: PathLike) -> MarkVocabulary:
    path = Path(path)
    if not path.exists():
        raise DataError(f"vocabulary file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return MarkVocabulary([line.rstrip("\r\n") for line in f if line.rstrip("\r\n")])


def save_corpus_dir(out_dir: PathLike, sequences: Sequence[EventSequence], vocabulary: MarkVocabulary) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {
        "corpus": out_dir / IngestConstants.CORPUS_FILE,
        "vocabulary": out_dir / IngestConstants.VOCAB_FILE,
    }
    write_corpus(paths["corpus"], sequences, vocabulary)
    write_vocabulary(paths["vocabulary"], vocabulary)
    return paths


def save_split_dir(out_dir: PathLike, corpus_split: CorpusSplit, vocabulary: MarkVocabulary) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {"vocabulary": out_dir / IngestConstants.VOCAB_FILE}
    write_vocabulary(paths["vocabulary"], vocabulary)
    for name, part in corpus_split.parts().items():
        paths[name] = out_dir / IngestConstants.SPLIT_FILES[name]
        write_corpus(paths[name], part, vocabulary)
    return paths


def load_corpus_dir(data_dir: PathLike) -> Tuple[List[EventSequence], MarkVocabulary]:
    data_dir = Path(data_dir)
    vocabulary = read_vocabulary(data_dir / IngestConstants.VOCAB_FILE)
    return read_corpus(data_dir / IngestConstants.CORPUS_FILE, vocabulary), vocabulary


def load_split_dir(data_dir: PathLike) -> Tuple[CorpusSplit, MarkVocabulary]:
    data_dir = Path(data_dir)
    vocabulary = read_vocabulary(data_dir / IngestConstants.VOCAB_FILE)
    parts = {}
    for name, filename in IngestConstants.SPLIT_FILES.items():
        path = data_dir / filename
        if not path.exists():
            raise DataError(f"split file missing: {path} (run `rnn-td split` first)")
        parts[name] = read_corpus(path, vocabulary)
    return CorpusSplit(parts["train"], parts["validation"], parts["test"]), vocabulary
