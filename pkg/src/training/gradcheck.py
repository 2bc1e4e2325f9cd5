"""
Central finite-difference check of the hand-derived BPTT gradients.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.core.config import CalendarConfig
from src.core.constants import NumericConstants
from src.core.numerics import make_rng
from src.data.events import EventSequence
from src.models.rnn_td import Gradients, ModelParams, loss_and_gradients
from src.training.trainer import ModelDims, init_params
from src.utils.logger import get_logger

logger = get_logger(__name__)


def objective(params: ModelParams, sequence: EventSequence, gamma: float) -> float:
    return loss_and_gradients(params, sequence, gamma).objective


def finite_difference_gradients(
    params: ModelParams,
    sequence: EventSequence,
    gamma: float = 0.0,
    step: float = NumericConstants.GRADCHECK_STEP,
) -> Gradients:
    blocks = {k: v.copy() for k, v in params.blocks().items()}
    numeric = {}
    for name, block in blocks.items():
        grad = np.zeros_like(block)
        flat = block.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + step
            plus = objective(params.with_blocks(blocks), sequence, gamma)
            flat[j] = original - step
            minus = objective(params.with_blocks(blocks), sequence, gamma)
            flat[j] = original
            grad.reshape(-1)[j] = (plus - minus) / (2.0 * step)
        numeric[name] = grad
    return numeric


def max_relative_error(analytic: Gradients, numeric: Gradients) -> float:
    """max |a - n| / max(1, |a|) over every entry."""
    worst = 0.0
    for name, a in analytic.items():
        err = np.abs(a - numeric[name]) / np.maximum(1.0, np.abs(a))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst


def random_configuration(
    seed: int,
    shaping: str,
    H: int = 8,
    K: int = 5,
    D_e: int = 4,
    length: int = 10,
    head: str = "mark",
) -> Tuple[ModelParams, EventSequence]:
    """Random parameters (std 0.5) and a random sequence with 0.05-3 h gaps."""
    params = init_params(
        ModelDims(H, K, D_e), seed, shaping=shaping, head=head,
        calendar=CalendarConfig(), std=0.5,
    )
    rng = make_rng(seed, 0x6C)
    if params.learns_w:
        params = params.with_blocks({"w": np.array([rng.uniform(-0.5, 0.5)])})
    gaps = rng.uniform(0.05, 3.0, size=length - 1)
    times = np.concatenate([[rng.uniform(0.0, 5000.0)], gaps]).cumsum()
    marks = rng.integers(0, K, size=length)
    return params, EventSequence.from_arrays(f"gradcheck-{seed}", times, marks)


@dataclass
class GradcheckReport:
    shaping: str
    errors: List[float] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors, default=0.0)

    def passed(self, tol: float = NumericConstants.GRADCHECK_TOL) -> bool:
        return self.max_error < tol


def run_gradcheck(
    shaping: str,
    trials: int,
    seed: int,
    gammas: Sequence[float] = (0.0, 0.1),
    head: str = "mark",
) -> GradcheckReport:
    report = GradcheckReport(shaping)
    for trial in range(trials):
        params, sequence = random_configuration(seed * 1000 + trial, shaping, head=head)
        gamma = gammas[trial % len(gammas)]
        analytic = loss_and_gradients(params, sequence, gamma).gradients
        numeric = finite_difference_gradients(params, sequence, gamma)
        report.errors.append(max_relative_error(analytic, numeric))
        logger.debug(f"gradcheck {shaping} trial {trial} gamma={gamma}: {report.errors[-1]:.2e}")
    logger.info(f"gradcheck {shaping}: max relative error {report.max_error:.3e} over {trials} trials")
    return report
