"""
Ranking and time-prediction metrics: MRR, Acc@k and Acc@θ.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.core.config import EvalConfig
from src.core.constants import EvalConstants
from src.core.exceptions import ValidationError
from src.data.events import EventSequence, MarkVocabulary, total_transitions
from src.models.predictors import Predictor, TransitionOutput
from src.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class RankedPrediction:
    true_mark: int
    rank: int
    predicted_time: Optional[float] = None
    true_time: Optional[float] = None

    def __post_init__(self):
        if self.rank < 1:
            raise ValidationError(f"rank must be at least 1, got {self.rank}")


def rank_of(scores: np.ndarray, true_mark: int) -> int:
    """1-based rank under descending score, ties broken by ascending mark id."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= true_mark < scores.size:
        raise ValidationError(f"mark {true_mark} outside [0, {scores.size})")
    mine = scores[true_mark]
    ahead = np.count_nonzero(scores > mine) + np.count_nonzero(scores[:true_mark] == mine)
    return int(ahead) + 1


def _require(predictions: Sequence[RankedPrediction]) -> None:
    if not predictions:
        raise ValidationError("no predictions to score")


def mrr(predictions: Sequence[RankedPrediction]) -> float:
    _require(predictions)
    return float(np.mean([1.0 / p.rank for p in predictions]))


def acc_at_k(predictions: Sequence[RankedPrediction], k: int) -> float:
    _require(predictions)
    if k < 1:
        raise ValidationError("k must be at least 1")
    return sum(p.rank <= k for p in predictions) / len(predictions)


def acc_at_theta(predictions: Sequence[RankedPrediction], theta: float) -> float:
    """Fraction with |predicted - true| < θ (strict)."""
    _require(predictions)
    if not theta > 0:
        raise ValidationError("theta must be positive")
    if any(p.predicted_time is None or p.true_time is None for p in predictions):
        raise ValidationError("Acc@theta needs predicted and true times")
    hits = sum(abs(p.predicted_time - p.true_time) < theta for p in predictions)
    return hits / len(predictions)


# --------------------------------------------------
# Reports
# --------------------------------------------------
@dataclass
class MetricsReport:
    model: str
    mode: str
    mrr: float
    acc_at_k: Dict[int, float]
    acc_at_theta: Optional[List[Tuple[float, float]]]
    n_transitions: int
    n_fallback: int = 0
    label: str = ""

    def validate(self) -> None:
        values = [self.mrr, *self.acc_at_k.values()]
        if self.acc_at_theta:
            values.extend(acc for _, acc in self.acc_at_theta)
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValidationError(f"{self.model}: metric outside [0, 1]")
        ks = sorted(self.acc_at_k)
        if any(self.acc_at_k[a] > self.acc_at_k[b] for a, b in zip(ks, ks[1:])):
            raise ValidationError(f"{self.model}: Acc@k decreases in k")
        if self.acc_at_theta and any(
            a[1] > b[1] for a, b in zip(self.acc_at_theta, self.acc_at_theta[1:])
        ):
            raise ValidationError(f"{self.model}: Acc@theta decreases in theta")
        if 1 in self.acc_at_k and self.mrr < self.acc_at_k[1] - 1e-12:
            raise ValidationError(f"{self.model}: MRR below Acc@1")

    def to_record(self) -> dict:
        return {
            "model": self.model,
            "label": self.label,
            "mode": self.mode,
            "mrr": self.mrr,
            "acc_at_k": {str(k): v for k, v in self.acc_at_k.items()},
            "acc_at_theta": None if self.acc_at_theta is None else [list(p) for p in self.acc_at_theta],
            "n_transitions": self.n_transitions,
            "n_fallback": self.n_fallback,
        }

    @classmethod
    def from_record(cls, record: dict) -> "MetricsReport":
        curve = record.get("acc_at_theta")
        return cls(
            model=record["model"],
            mode=record["mode"],
            mrr=float(record["mrr"]),
            acc_at_k={int(k): float(v) for k, v in record["acc_at_k"].items()},
            acc_at_theta=None if curve is None else [(float(t), float(a)) for t, a in curve],
            n_transitions=int(record["n_transitions"]),
            n_fallback=int(record.get("n_fallback", 0)),
            label=record.get("label", ""),
        )

    def acc_at(self, theta: float) -> Optional[float]:
        """Acc@θ at the grid point closest to ``theta`` (log scale)."""
        if not self.acc_at_theta:
            return None
        return min(self.acc_at_theta, key=lambda p: abs(math.log(p[0] / theta)))[1]


def build_report(
    model: str,
    mode: str,
    predictions: Sequence[RankedPrediction],
    config: EvalConfig,
    with_time: bool,
    n_fallback: int = 0,
) -> MetricsReport:
    curve = None
    if with_time:
        curve = [(theta, acc_at_theta(predictions, theta)) for theta in sorted(config.theta_grid)]
    report = MetricsReport(
        model=model,
        mode=mode,
        mrr=mrr(predictions),
        acc_at_k={k: acc_at_k(predictions, k) for k in sorted(config.k_values)},
        acc_at_theta=curve,
        n_transitions=len(predictions),
        n_fallback=n_fallback,
    )
    report.validate()
    return report


def _rank_outputs(outputs: Iterable[TransitionOutput], fallback_horizon: float) -> Tuple[List[RankedPrediction], int]:
    ranked, fallbacks = [], 0
    for o in outputs:
        predicted = o.predicted_time
        if predicted is not None and not math.isfinite(predicted):
            predicted = o.last_time + fallback_horizon
            fallbacks += 1
        ranked.append(RankedPrediction(o.target, rank_of(o.scores, o.target), predicted, o.true_time))
    return ranked, fallbacks


def evaluate(
    predictor: Predictor,
    sequences: Sequence[EventSequence],
    modes: Sequence[str] = ("free",),
    config: Optional[EvalConfig] = None,
    vocabulary: Optional[MarkVocabulary] = None,
) -> Dict[str, MetricsReport]:
    """Teacher-forced metrics over every transition of ``sequences``."""
    config = config or EvalConfig()
    trained_on = list(predictor.vocabulary.tokens)
    if vocabulary is not None and trained_on and list(vocabulary.tokens) != trained_on:
        raise ValidationError(
            f"vocabulary mismatch: data has {vocabulary.K} marks, model was trained on {predictor.vocabulary.K}"
        )
    if not total_transitions(sequences):
        raise ValidationError("evaluation split has no transitions")
    for mode in modes:
        if mode not in EvalConstants.MODES:
            raise ValidationError(f"unknown evaluation mode: {mode}")

    reports = {}
    for mode in modes:
        given_time = mode == "given-time"

        def one(seq: EventSequence) -> List[TransitionOutput]:
            return predictor.transitions(seq, given_time)

        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                per_sequence = list(pool.map(one, sequences))
        else:
            per_sequence = [one(s) for s in sequences]
        outputs = [o for seq_outputs in per_sequence for o in seq_outputs]
        ranked, fallbacks = _rank_outputs(outputs, config.fallback_horizon)
        if fallbacks:
            logger.warning(
                f"{predictor.variant}: {fallbacks} transition(s) had no finite expected time; "
                f"used last time + {config.fallback_horizon} h"
            )
        reports[mode] = build_report(predictor.variant, mode, ranked, config, predictor.has_time, fallbacks)
        logger.info(f"{predictor.variant} [{mode}]: MRR {reports[mode].mrr:.4f} over {len(ranked)} transitions")
    return reports


def median_report(reports: Sequence[MetricsReport], label: str = "median") -> MetricsReport:
    """Entry-wise median over per-seed reports of one model and mode."""
    if not reports:
        raise ValidationError("no reports to aggregate")
    first = reports[0]
    curve = None
    if all(r.acc_at_theta for r in reports):
        thetas = [t for t, _ in first.acc_at_theta]
        curve = [
            (t, float(np.median([r.acc_at_theta[i][1] for r in reports])))
            for i, t in enumerate(thetas)
        ]
    return MetricsReport(
        model=first.model,
        mode=first.mode,
        mrr=float(np.median([r.mrr for r in reports])),
        acc_at_k={k: float(np.median([r.acc_at_k[k] for r in reports])) for k in first.acc_at_k},
        acc_at_theta=curve,
        n_transitions=first.n_transitions,
        n_fallback=int(np.median([r.n_fallback for r in reports])),
        label=label,
    )


def format_table(reports: Sequence[MetricsReport], theta_points: Sequence[float] = (1.0,)) -> str:
    """Plain-text comparison table, one row per report."""
    ks = sorted({k for r in reports for k in r.acc_at_k})
    header = ["model", "mode", "MRR"] + [f"Acc@{k}" for k in ks] + [f"Acc@{t:g}h" for t in theta_points]
    rows = [header]
    for r in reports:
        name = f"{r.model}[{r.label}]" if r.label else r.model
        row = [name, r.mode, f"{r.mrr:.4f}"] + [f"{r.acc_at_k.get(k, float('nan')):.4f}" for k in ks]
        for t in theta_points:
            value = r.acc_at(t)
            row.append("-" if value is None else f"{value:.4f}")
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)
