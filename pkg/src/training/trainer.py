"""
Mini-batch Adam training of RNN-TD with early stopping on validation NLL.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.config import CalendarConfig, TrainConfig
from src.core.constants import ModelConstants
from src.core.exceptions import DivergenceError, NumericalError, ValidationError
from src.core.numerics import global_norm, make_rng, orthogonal_init
from src.data.events import CorpusSplit, EventSequence, total_transitions
from src.data.ingest import featurize_sequence
from src.models.rnn_td import (
    Gradients,
    LossAndGradients,
    ModelParams,
    ShapingFunction,
    loss_and_gradients,
    nll,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ModelDims:
    H: int
    K: int
    D_e: int


def init_params(
    dims: ModelDims,
    seed: int,
    shaping: str = "constant",
    head: str = "mark",
    calendar: Optional[CalendarConfig] = None,
    embedding: Optional[np.ndarray] = None,
    std: float = ModelConstants.INIT_STD,
) -> ModelParams:
    """Orthogonal W_hh, Gaussian everything else; w starts at 0.1."""
    if min(dims.H, dims.K, dims.D_e) < 1:
        raise ValidationError(f"invalid model dimensions: {dims}")
    calendar = calendar or CalendarConfig()
    rng = make_rng(seed, 0x1D)
    H, K, D_e, D_t = dims.H, dims.K, dims.D_e, calendar.dimension

    def gaussian(*shape):
        return rng.normal(0.0, std, size=shape)

    W_ht = gaussian(H, D_t)
    W_he = gaussian(H, D_e)
    W_alpha = gaussian(K, H)
    W_nu = None if head == "none" else gaussian(K if head == "mark" else 1, H)
    b_nu = gaussian(1) if head == "shared" else None
    embed = gaussian(K, D_e)
    if embedding is not None:
        if embedding.shape != (K, D_e):
            raise ValidationError(f"embedding table must have shape {(K, D_e)}, got {embedding.shape}")
        embed = np.array(embedding, dtype=np.float64)
    w = ModelConstants.INIT_W if shaping == "exponential" else 0.0
    return ModelParams(
        W_ht=W_ht,
        W_he=W_he,
        W_hh=orthogonal_init(H, seed),
        W_alpha=W_alpha,
        embed=embed,
        W_nu=W_nu,
        b_nu=b_nu,
        shaping=ShapingFunction(shaping, w),
        head=head,
        calendar=calendar,
    )


# --------------------------------------------------
# Adam
# --------------------------------------------------
@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        blocks = params.blocks()
        return cls(
            {k: np.zeros_like(b) for k, b in blocks.items()},
            {k: np.zeros_like(b) for k, b in blocks.items()},
            0,
        )


def adam_step(
    params: ModelParams,
    grads: Gradients,
    state: AdamState,
    config: TrainConfig,
) -> Tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update; inputs are left untouched."""
    blocks = params.blocks()
    if set(grads) != set(blocks):
        raise ValidationError(f"gradient blocks {sorted(grads)} do not match parameters {sorted(blocks)}")
    for name, g in grads.items():
        if g.shape != blocks[name].shape:
            raise ValidationError(f"gradient {name} has shape {g.shape}, expected {blocks[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block {name}")

    t = state.t + 1
    # bias corrections once per step
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    step_size = config.learning_rate / bc1

    new_blocks, m, v = {}, {}, {}
    for name, p in blocks.items():
        g = grads[name]
        m[name] = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        v[name] = config.beta2 * state.v[name] + (1.0 - config.beta2) * (g * g)
        denom = np.sqrt(v[name] / bc2) + config.eps
        new_blocks[name] = p - step_size * m[name] / denom
    return params.with_blocks(new_blocks), AdamState(m, v, t)


def clip_by_global_norm(grads: Gradients, max_norm: float) -> Tuple[Gradients, float]:
    norm = global_norm(list(grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


# --------------------------------------------------
# Batches
# --------------------------------------------------
@dataclass
class BatchResult:
    nll: float
    penalty: float
    gradients: Gradients
    n_transitions: int
    n_clamped: int


def batch_gradients(
    params: ModelParams,
    batch: Sequence[EventSequence],
    features: Sequence[Optional[np.ndarray]],
    gamma: float = 0.0,
    executor: Optional[ThreadPoolExecutor] = None,
    clamp: bool = True,
    total_steps: Optional[int] = None,
) -> BatchResult:
    """Sum of per-sequence gradients.

    The penalty weight per step is γ / ``total_steps`` (the training set's
    step count), falling back to the batch's own step count.
    """
    steps = total_transitions(batch)
    denominator = total_steps or steps
    gamma_per_step = gamma / denominator if denominator else 0.0

    def one(i: int) -> LossAndGradients:
        return loss_and_gradients(params, batch[i], gamma_per_step, features[i], clamp=clamp)

    indices = range(len(batch))
    results = list(executor.map(one, indices)) if executor else [one(i) for i in indices]

    total = {k: np.zeros_like(b) for k, b in params.blocks().items()}
    for r in results:
        for k, g in r.gradients.items():
            total[k] += g
    return BatchResult(
        nll=sum(r.nll for r in results),
        penalty=sum(r.penalty for r in results),
        gradients=total,
        n_transitions=steps,
        n_clamped=sum(r.n_clamped for r in results),
    )


def mean_nll(params: ModelParams, sequences: Sequence[EventSequence], features=None) -> float:
    """NLL per transition (nats/event)."""
    features = features or [None] * len(sequences)
    total = sum(nll(params, s, f)[0] for s, f in zip(sequences, features))
    return total / max(total_transitions(sequences), 1)


def mean_total_rate(params: ModelParams, sequences: Sequence[EventSequence]) -> float:
    """Average Σ_e ν_e over all transitions."""
    rates = [float(np.sum(c.nu)) for s in sequences for c in nll(params, s)[1]]
    return float(np.mean(rates)) if rates else 0.0


# --------------------------------------------------
# Training loop
# --------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    valid_nll: float
    seconds: float = field(default=0.0, compare=False)
    clamped: int = 0


@dataclass
class TrainReport:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_nll: float = math.inf
    stopping_epoch: int = 0
    stopped_early: bool = False

    def records(self) -> List[dict]:
        rows = [dict(asdict(e), kind="epoch") for e in self.epochs]
        rows.append({
            "kind": "summary",
            "best_epoch": self.best_epoch,
            "best_valid_nll": self.best_valid_nll,
            "stopping_epoch": self.stopping_epoch,
            "stopped_early": self.stopped_early,
        })
        return rows


def train(
    corpus: CorpusSplit,
    config: TrainConfig,
    K: int,
    calendar: Optional[CalendarConfig] = None,
    embedding: Optional[np.ndarray] = None,
) -> Tuple[ModelParams, TrainReport]:
    """Fit by mini-batch Adam; return the best-validation parameters."""
    if not corpus.train or not corpus.validation:
        raise ValidationError("training needs nonempty train and validation splits")
    calendar = calendar or CalendarConfig()
    params = init_params(
        ModelDims(config.hidden, K, config.embed),
        config.seed,
        shaping=config.shaping,
        head=config.head,
        calendar=calendar,
        embedding=embedding,
    )
    train_seqs, valid_seqs = corpus.train, corpus.validation
    train_feats = [featurize_sequence(s, calendar) for s in train_seqs]
    valid_feats = [featurize_sequence(s, calendar) for s in valid_seqs]
    n_train_steps = max(total_transitions(train_seqs), 1)

    state = AdamState.zeros(params)
    report = TrainReport()
    best_params = params
    stale = 0
    logger.info(
        f"Training head={config.head} shaping={config.shaping} H={config.hidden} "
        f"D_e={config.embed} K={K} on {len(train_seqs)} sequences"
    )

    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else nullcontext()
    with pool as executor:
        for epoch in range(1, config.max_epochs + 1):
            started = time.perf_counter()
            order = make_rng(config.seed, 0xE0, epoch).permutation(len(train_seqs))
            epoch_nll, clamped = 0.0, 0
            for b, start in enumerate(range(0, len(order), config.batch_size)):
                idx = order[start:start + config.batch_size]
                result = batch_gradients(
                    params,
                    [train_seqs[i] for i in idx],
                    [train_feats[i] for i in idx],
                    config.gamma,
                    executor,
                    total_steps=n_train_steps,
                )
                if not math.isfinite(result.nll + result.penalty):
                    raise DivergenceError(epoch, b)
                grads, norm = clip_by_global_norm(result.gradients, config.clip_norm)
                params, state = adam_step(params, grads, state, config)
                epoch_nll += result.nll
                clamped += result.n_clamped
                logger.debug(f"epoch {epoch} batch {b}: nll={result.nll:.4f} grad-norm={norm:.3f}")

            valid_nll = mean_nll(params, valid_seqs, valid_feats)
            if not math.isfinite(valid_nll):
                raise DivergenceError(epoch, -1)
            record = EpochRecord(
                epoch=epoch,
                train_nll=epoch_nll / n_train_steps,
                valid_nll=valid_nll,
                seconds=time.perf_counter() - started,
                clamped=clamped,
            )
            report.epochs.append(record)
            if clamped:
                logger.warning(f"Epoch {epoch}: clamped {clamped} logit(s) to ±{ModelConstants.LOGIT_CLAMP}")
            logger.info(
                f"Epoch {epoch}: train NLL {record.train_nll:.4f}, "
                f"valid NLL {valid_nll:.4f} ({record.seconds:.1f}s)"
            )

            if valid_nll < report.best_valid_nll:
                report.best_valid_nll = valid_nll
                report.best_epoch = epoch
                best_params = params
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    report.stopped_early = True
                    logger.info(f"Early stopping at epoch {epoch}; best epoch {report.best_epoch}")
                    break

    report.stopping_epoch = report.epochs[-1].epoch
    return best_params, report
