"""
Configuration management for rnn-td
"""
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pytz
import yaml
from dateutil import parser as date_parser

import src.load_env  # noqa: F401  (populates os.environ before Config reads it)
from src.core.constants import EvalConstants, IngestConstants, ModelConstants
from src.core.exceptions import ValidationError


class Config:
    """Process-level settings taken from the environment"""

    BASE_DIR = Path(__file__).resolve().parents[2]

    # Paths
    CONFIG_DIR = BASE_DIR / "config"
    LOGS_DIR = Path(os.getenv("RNN_TD_LOG_DIR", str(BASE_DIR / "logs")))

    LOG_LEVEL = os.getenv("RNN_TD_LOG_LEVEL", "INFO")

    # Parallelism hint; results never depend on it
    THREADS = int(os.getenv("RNN_TD_THREADS", "1"))

    DEFAULT_SEED = int(os.getenv("RNN_TD_DEFAULT_SEED", "0"))

    @classmethod
    def ensure_directories(cls):
        cls.LOGS_DIR.mkdir(parents=True, exist_ok=True)


# -----------------------------------------------------------
# Typed run settings
# -----------------------------------------------------------
@dataclass(frozen=True)
class CalendarConfig:
    """How event timestamps map to calendar features.

    Times are decimal hours since ``epoch``; the calendar coordinates are
    computed on the UTC wall clock at that instant.
    """

    epoch: str = IngestConstants.DEFAULT_EPOCH
    year_span: float = IngestConstants.YEAR_SPAN
    enabled: bool = True

    @property
    def dimension(self) -> int:
        return 8 if self.enabled else 1

    @property
    def epoch_datetime(self) -> datetime:
        dt = date_parser.isoparse(self.epoch)
        if dt.tzinfo is None:
            return pytz.utc.localize(dt)
        return dt.astimezone(pytz.utc)


@dataclass(frozen=True)
class IngestConfig:
    gap_hours: float = IngestConstants.MEMETRACKER_GAP_HOURS
    min_length: int = IngestConstants.MIN_LENGTH
    top_k: int = IngestConstants.TOP_K
    max_length: int = IngestConstants.MAX_LENGTH

    def __post_init__(self):
        if not self.gap_hours > 0:
            raise ValidationError("gap threshold must be positive")
        if self.min_length < 2:
            raise ValidationError("minimum sequence length must be at least 2")
        if self.top_k < 1:
            raise ValidationError("top-k cutoff must be at least 1")
        if self.max_length < self.min_length:
            raise ValidationError("maximum length must not be below the minimum length")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    gamma: float = 0.0
    seed: int = 0
    clip_norm: float = 5.0
    threads: int = 1

    # architecture
    head: str = "mark"
    shaping: str = "constant"
    hidden: int = 16
    embed: int = 8

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.eps > 0 and self.clip_norm > 0):
            raise ValidationError("learning rate, eps and clip norm must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("Adam betas must lie in (0, 1)")
        if self.patience < 1:
            raise ValidationError("patience must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch size and max epochs must be at least 1")
        if self.gamma < 0:
            raise ValidationError("gamma must be nonnegative")
        if self.shaping not in ModelConstants.SHAPINGS:
            raise ValidationError(f"unknown shaping: {self.shaping}")
        if self.head not in ("mark", "shared", "none"):
            raise ValidationError(f"unknown intensity head: {self.head}")


@dataclass(frozen=True)
class EvalConfig:
    k_values: Tuple[int, ...] = EvalConstants.K_VALUES
    theta_grid: Tuple[float, ...] = field(
        default_factory=lambda: theta_grid("memetracker")
    )
    time_mode: str = "normalized"
    fallback_horizon: float = EvalConstants.FALLBACK_HORIZON
    threads: int = 1

    def __post_init__(self):
        if self.time_mode not in ("normalized", "raw"):
            raise ValidationError(f"unknown expected-time mode: {self.time_mode}")
        if any(k < 1 for k in self.k_values):
            raise ValidationError("k values must be at least 1")
        if any(not theta > 0 for theta in self.theta_grid):
            raise ValidationError("theta values must be positive")


def theta_grid(spec: str) -> Tuple[float, ...]:
    """Parse a θ grid: a preset name or ``lo:hi:n`` (log-spaced)."""
    if spec in EvalConstants.THETA_GRIDS:
        lo, hi = EvalConstants.THETA_GRIDS[spec]
        n = EvalConstants.THETA_POINTS
    else:
        try:
            lo_s, hi_s, n_s = spec.split(":")
            lo, hi, n = float(lo_s), float(hi_s), int(n_s)
        except ValueError:
            raise ValidationError(f"bad theta grid spec: {spec!r}")
        if not (0 < lo < hi) or n < 1:
            raise ValidationError(f"bad theta grid spec: {spec!r}")
    return tuple(float(x) for x in np.logspace(np.log10(lo), np.log10(hi), n))


def load_settings(path: Optional[Path]) -> Dict[str, Any]:
    """Read a YAML key-value settings file; keys use underscores."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"settings file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValidationError(f"settings file must hold a mapping: {path}")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def config_snapshot(*configs) -> Dict[str, Any]:
    return {type(c).__name__: asdict(c) for c in configs}
