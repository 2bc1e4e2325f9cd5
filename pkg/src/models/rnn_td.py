"""
RNN-TD: a recurrent model of marked temporal dynamics.

The hidden state h_i summarizes the history up to event i. Two heads read
it: a softmax over the next mark and, per mark, a conditional intensity
λ_e(t) = ν_e · τ(t; t_i) with ν = exp(W_nu · h_i) and a time-shaping
factor τ that is either constant or exp(w · (t - t_i)).

The same code serves two baseline variants through ``ModelParams.head``:
``shared`` (one intensity for all marks, RMTPP style, with a scalar bias)
and ``none`` (mark head only).
"""
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from src.core.config import CalendarConfig
from src.core.constants import ModelConstants, NumericConstants
from src.core.exceptions import (
    DimensionError,
    InfiniteExpectedTimeError,
    NumericalError,
    ValidationError,
)
from src.core.numerics import matvec, quadrature, softmax
from src.data.events import EventSequence
from src.data.ingest import featurize_sequence

HEADS = ("mark", "shared", "none")
Gradients = Dict[str, np.ndarray]


# --------------------------------------------------
# Time shaping
# --------------------------------------------------
@dataclass(frozen=True)
class ShapingFunction:
    kind: str = "constant"
    w: float = 0.0

    def __post_init__(self):
        if self.kind not in ModelConstants.SHAPINGS:
            raise ValidationError(f"unknown shaping kind: {self.kind}")
        if not math.isfinite(self.w):
            raise ValidationError("shaping parameter w must be finite")

    @property
    def is_exponential(self) -> bool:
        return self.kind == "exponential"

    @property
    def is_flat(self) -> bool:
        return not self.is_exponential or abs(self.w) < ModelConstants.SMALL_W

    def tau(self, delta):
        return np.exp(self.log_tau(delta))

    def log_tau(self, delta):
        delta = np.asarray(delta, dtype=np.float64)
        if not self.is_exponential:
            return np.zeros_like(delta)
        return self.w * delta

    def integral(self, delta):
        """∫_0^Δ τ, with the small-|w| branch Δ(1 + wΔ/2)."""
        delta = np.asarray(delta, dtype=np.float64)
        if not self.is_exponential:
            return delta.copy()
        w = self.w
        if abs(w) < ModelConstants.SMALL_W:
            return delta * (1.0 + 0.5 * w * delta)
        with np.errstate(over="ignore"):
            return np.expm1(w * delta) / w

    def integral_dw(self, delta):
        """d/dw of ``integral``."""
        delta = np.asarray(delta, dtype=np.float64)
        if not self.is_exponential:
            return np.zeros_like(delta)
        w = self.w
        if abs(w) < ModelConstants.SMALL_W:
            return 0.5 * delta * delta
        with np.errstate(over="ignore", invalid="ignore"):
            return (delta * np.exp(w * delta) - self.integral(delta)) / w

    def integral_limit(self) -> float:
        """∫_0^∞ τ; finite only for a decaying exponential."""
        if self.is_exponential and self.w <= -ModelConstants.SMALL_W:
            return -1.0 / self.w
        return math.inf


# --------------------------------------------------
# Parameters
# --------------------------------------------------
@dataclass(eq=False)
class ModelParams:
    W_ht: np.ndarray
    W_he: np.ndarray
    W_hh: np.ndarray
    W_alpha: np.ndarray
    embed: np.ndarray
    W_nu: Optional[np.ndarray] = None
    b_nu: Optional[np.ndarray] = None
    shaping: ShapingFunction = field(default_factory=ShapingFunction)
    head: str = "mark"
    calendar: CalendarConfig = field(default_factory=CalendarConfig)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValidationError(f"unknown intensity head: {self.head}")
        H, D_t = self.W_ht.shape
        K, D_e = self.embed.shape
        expected = {
            "W_he": (H, D_e),
            "W_hh": (H, H),
            "W_alpha": (K, H),
        }
        if self.head == "mark":
            expected["W_nu"] = (K, H)
        elif self.head == "shared":
            expected["W_nu"] = (1, H)
            expected["b_nu"] = (1,)
        for name, shape in expected.items():
            value = getattr(self, name)
            if value is None or value.shape != shape:
                got = None if value is None else value.shape
                raise DimensionError(f"{name} must have shape {shape}, got {got}")
        if self.head == "none" and self.W_nu is not None:
            raise DimensionError("mark-only model carries no intensity head")
        if self.head != "shared" and self.b_nu is not None:
            raise DimensionError("only the shared head has a bias")
        if D_t != self.calendar.dimension:
            raise DimensionError(
                f"W_ht expects {D_t} temporal features, calendar gives {self.calendar.dimension}"
            )
        for name, value in self.blocks().items():
            if not np.all(np.isfinite(value)):
                raise ValidationError(f"parameter block {name} has non-finite entries")

    @property
    def H(self) -> int:
        return self.W_hh.shape[0]

    @property
    def K(self) -> int:
        return self.embed.shape[0]

    @property
    def D_t(self) -> int:
        return self.W_ht.shape[1]

    @property
    def D_e(self) -> int:
        return self.embed.shape[1]

    @property
    def has_time_head(self) -> bool:
        return self.head != "none"

    @property
    def learns_w(self) -> bool:
        return self.has_time_head and self.shaping.is_exponential

    def blocks(self) -> Dict[str, np.ndarray]:
        """Every learned array by name; ``w`` appears as a length-1 array."""
        out = {
            "W_ht": self.W_ht,
            "W_he": self.W_he,
            "W_hh": self.W_hh,
            "W_alpha": self.W_alpha,
            "embed": self.embed,
        }
        if self.W_nu is not None:
            out["W_nu"] = self.W_nu
        if self.b_nu is not None:
            out["b_nu"] = self.b_nu
        if self.learns_w:
            out["w"] = np.array([self.shaping.w])
        return out

    def with_blocks(self, blocks: Dict[str, np.ndarray]) -> "ModelParams":
        changes = {k: np.array(v, dtype=np.float64) for k, v in blocks.items() if k != "w"}
        if "w" in blocks:
            changes["shaping"] = replace(self.shaping, w=float(np.asarray(blocks["w"]).ravel()[0]))
        return replace(self, **changes)

    def copy(self) -> "ModelParams":
        return self.with_blocks({k: v.copy() for k, v in self.blocks().items()})


@dataclass
class StepCache:
    features: np.ndarray
    embedding: np.ndarray
    h_prev: np.ndarray
    pre_activation: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    nu: Optional[np.ndarray]


@dataclass(frozen=True)
class PredictionCandidate:
    mark_id: int
    expected_time: float
    likelihood: float


# --------------------------------------------------
# Recurrence and heads
# --------------------------------------------------
def _check_mark(params: ModelParams, mark_id: int) -> int:
    mark_id = int(mark_id)
    if not 0 <= mark_id < params.K:
        raise ValidationError(f"mark id {mark_id} outside [0, {params.K})")
    return mark_id


def _pre_activation(params: ModelParams, h_prev: np.ndarray, features: np.ndarray, mark_id: int) -> np.ndarray:
    return (
        matvec(params.W_ht, features)
        + matvec(params.W_he, params.embed[mark_id])
        + matvec(params.W_hh, h_prev)
    )


def step(params: ModelParams, h_prev: np.ndarray, features: np.ndarray, mark_id: int) -> np.ndarray:
    """One recurrence step: h = tanh(W_ht φ(t) + W_he φ(e) + W_hh h_prev)."""
    mark_id = _check_mark(params, mark_id)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    return np.tanh(_pre_activation(params, h_prev, features, mark_id))


def run_recurrence(params: ModelParams, features: np.ndarray, marks: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pre-activations and hidden states h_1..h_m from h_0 = 0."""
    m = len(marks)
    if features.shape != (m, params.D_t):
        raise DimensionError(f"features must have shape {(m, params.D_t)}, got {features.shape}")
    A = np.empty((m, params.H))
    Hs = np.empty((m, params.H))
    h = np.zeros(params.H)
    for i in range(m):
        a = _pre_activation(params, h, features[i], _check_mark(params, marks[i]))
        h = np.tanh(a)
        A[i] = a
        Hs[i] = h
    return A, Hs


def history_state(params: ModelParams, history: EventSequence, features: Optional[np.ndarray] = None) -> np.ndarray:
    """h after the last event of ``history`` (zero vector for an empty history)."""
    if len(history) == 0:
        return np.zeros(params.H)
    if features is None:
        features = featurize_sequence(history, params.calendar)
    _, Hs = run_recurrence(params, features, history.marks)
    return Hs[-1]


def mark_distribution(params: ModelParams, h: np.ndarray) -> np.ndarray:
    return softmax(matvec(params.W_alpha, np.asarray(h, dtype=np.float64)))


def _require_time_head(params: ModelParams) -> None:
    if not params.has_time_head:
        raise ValidationError("this model has no intensity head")


def _log_nu(params: ModelParams, h: np.ndarray) -> np.ndarray:
    _require_time_head(params)
    u = matvec(params.W_nu, np.asarray(h, dtype=np.float64))
    if params.b_nu is not None:
        u = u + params.b_nu
    return u


def _row(params: ModelParams, mark_id: int) -> int:
    mark_id = _check_mark(params, mark_id)
    return mark_id if params.head == "mark" else 0


def _elapsed(t_last: float, t: float) -> float:
    if t < t_last:
        raise ValidationError(f"time {t} precedes the last event at {t_last}")
    return t - t_last


def intensity(params: ModelParams, h: np.ndarray, mark_id: int, t: float, t_last: float) -> float:
    """λ_mark(t) = ν_mark · τ(t; t_last)."""
    delta = _elapsed(t_last, t)
    u = _log_nu(params, h)[_row(params, mark_id)]
    return float(np.exp(u + params.shaping.log_tau(delta)))


def integrated_intensity(params: ModelParams, h: np.ndarray, mark_id: int, t_last: float, t: float) -> float:
    """Compensator of one mark over [t_last, t]."""
    delta = _elapsed(t_last, t)
    nu = np.exp(_log_nu(params, h)[_row(params, mark_id)])
    return float(nu * params.shaping.integral(delta))


def total_rate(params: ModelParams, h: np.ndarray) -> float:
    """Λ = Σ_e ν_e (the single ν for a shared head)."""
    return float(np.sum(np.exp(_log_nu(params, h))))


def time_density(params: ModelParams, h: np.ndarray, mark_id: int, t_last: float, t: float) -> float:
    """s(t | mark, h) = λ_mark(t) · exp(-Σ_e ∫ λ_e)."""
    delta = _elapsed(t_last, t)
    log_nu = _log_nu(params, h)
    lam = float(np.sum(np.exp(log_nu)))
    comp = lam * float(params.shaping.integral(delta))
    if not math.isfinite(comp):
        return 0.0
    log_s = log_nu[_row(params, mark_id)] + float(params.shaping.log_tau(delta)) - comp
    return float(np.exp(log_s))


# --------------------------------------------------
# Likelihood and gradients
# --------------------------------------------------
@dataclass
class _Trace:
    X: np.ndarray
    E: np.ndarray
    marks_in: np.ndarray
    targets: np.ndarray
    A: np.ndarray
    Hs: np.ndarray
    H_prev: np.ndarray
    logits: np.ndarray
    log_probs: np.ndarray
    logit_free: np.ndarray
    U: Optional[np.ndarray] = None
    nu: Optional[np.ndarray] = None
    u_free: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    deltas: Optional[np.ndarray] = None
    T: Optional[np.ndarray] = None
    step_ll: Optional[np.ndarray] = None
    n_clamped: int = 0

    def caches(self) -> List[StepCache]:
        return [
            StepCache(
                features=self.X[i],
                embedding=self.E[i],
                h_prev=self.H_prev[i],
                pre_activation=self.A[i],
                h=self.Hs[i],
                logits=self.logits[i],
                nu=None if self.nu is None else self.nu[i],
            )
            for i in range(len(self.targets))
        ]


def _clamp(values: np.ndarray, enabled: bool) -> Tuple[np.ndarray, np.ndarray, int]:
    if not enabled:
        return values, np.ones_like(values, dtype=bool), 0
    limit = ModelConstants.LOGIT_CLAMP
    free = np.abs(values) <= limit
    return np.clip(values, -limit, limit), free, int(np.count_nonzero(~free))


def _forward(
    params: ModelParams,
    sequence: EventSequence,
    features: Optional[np.ndarray] = None,
    clamp: bool = False,
) -> _Trace:
    n = len(sequence)
    if n < 2:
        raise ValidationError("likelihood needs a sequence of at least 2 events")
    times = sequence.times
    deltas = np.diff(times)
    if np.any(deltas <= 0):
        raise ValidationError(f"sequence {sequence.seq_id}: non-increasing times")
    marks = sequence.marks
    if np.any(marks >= params.K) or np.any(marks < 0):
        raise ValidationError(f"sequence {sequence.seq_id}: mark id outside [0, {params.K})")
    if features is None:
        features = featurize_sequence(sequence, params.calendar)
    X = features[:-1]
    marks_in, targets = marks[:-1], marks[1:]
    A, Hs = run_recurrence(params, X, marks_in)
    H_prev = np.vstack([np.zeros((1, params.H)), Hs[:-1]])
    idx = np.arange(n - 1)

    logits, logit_free, clamped = _clamp(Hs @ params.W_alpha.T, clamp)
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    step_ll = log_probs[idx, targets].copy()
    trace = _Trace(
        X=X, E=params.embed[marks_in], marks_in=marks_in, targets=targets,
        A=A, Hs=Hs, H_prev=H_prev, logits=logits, log_probs=log_probs,
        logit_free=logit_free, n_clamped=clamped,
    )
    if params.has_time_head:
        U = Hs @ params.W_nu.T
        if params.b_nu is not None:
            U = U + params.b_nu
        U, u_free, u_clamped = _clamp(U, clamp)
        nu = np.exp(U)
        lam = nu.sum(axis=1)
        sel = targets if params.head == "mark" else np.zeros_like(targets)
        T = params.shaping.integral(deltas)
        step_ll += U[idx, sel] + params.shaping.log_tau(deltas) - lam * T
        trace.U, trace.nu, trace.u_free, trace.lam = U, nu, u_free, lam
        trace.deltas, trace.T = deltas, T
        trace.n_clamped += u_clamped
    trace.step_ll = step_ll
    return trace


def nll(
    params: ModelParams,
    sequence: EventSequence,
    features: Optional[np.ndarray] = None,
    clamp: bool = False,
) -> Tuple[float, List[StepCache]]:
    """Negative log-likelihood of one sequence and its per-step activations."""
    trace = _forward(params, sequence, features, clamp)
    return float(-np.sum(trace.step_ll)), trace.caches()


@dataclass
class LossAndGradients:
    nll: float
    penalty: float
    gradients: Gradients
    n_transitions: int
    n_clamped: int = 0

    @property
    def objective(self) -> float:
        return self.nll + self.penalty


def loss_and_gradients(
    params: ModelParams,
    sequence: EventSequence,
    gamma: float = 0.0,
    features: Optional[np.ndarray] = None,
    clamp: bool = False,
) -> LossAndGradients:
    """NLL plus γ·Σ_steps Σ_e ν_e, and its exact gradient by BPTT."""
    tr = _forward(params, sequence, features, clamp)
    m = len(tr.targets)
    idx = np.arange(m)

    # mark head
    d_logits = np.exp(tr.log_probs)
    d_logits[idx, tr.targets] -= 1.0
    d_logits *= tr.logit_free
    grads: Gradients = {"W_alpha": d_logits.T @ tr.Hs}
    dH = d_logits @ params.W_alpha

    penalty = 0.0
    if params.has_time_head:
        dU = tr.nu * (tr.T + gamma)[:, None]
        sel = tr.targets if params.head == "mark" else np.zeros_like(tr.targets)
        dU[idx, sel] -= 1.0
        dU *= tr.u_free
        grads["W_nu"] = dU.T @ tr.Hs
        if params.b_nu is not None:
            grads["b_nu"] = dU.sum(axis=0)
        dH = dH + dU @ params.W_nu
        penalty = float(gamma * np.sum(tr.lam))
        if params.learns_w:
            dT = params.shaping.integral_dw(tr.deltas)
            grads["w"] = np.array([float(np.sum(tr.lam * dT - tr.deltas))])

    # back-propagation through time
    dA = np.empty_like(tr.A)
    dh_next = np.zeros(params.H)
    for i in range(m - 1, -1, -1):
        dh = dH[i] + dh_next
        da = dh * (1.0 - tr.Hs[i] ** 2)
        dA[i] = da
        dh_next = params.W_hh.T @ da
    grads["W_ht"] = dA.T @ tr.X
    grads["W_he"] = dA.T @ tr.E
    grads["W_hh"] = dA.T @ tr.H_prev
    d_embed = np.zeros_like(params.embed)
    np.add.at(d_embed, tr.marks_in, dA @ params.W_he)
    grads["embed"] = d_embed

    ordered = {name: grads[name] for name in params.blocks()}
    return LossAndGradients(
        nll=float(-np.sum(tr.step_ll)),
        penalty=penalty,
        gradients=ordered,
        n_transitions=m,
        n_clamped=tr.n_clamped,
    )


def gradients(
    params: ModelParams,
    sequence: EventSequence,
    gamma: float = 0.0,
    features: Optional[np.ndarray] = None,
) -> Gradients:
    return loss_and_gradients(params, sequence, gamma, features).gradients


def corpus_nll(params: ModelParams, sequences, features=None) -> float:
    features = features or [None] * len(sequences)
    return float(sum(nll(params, s, f)[0] for s, f in zip(sequences, features)))


# --------------------------------------------------
# Expected time and prediction
# --------------------------------------------------
@dataclass(frozen=True)
class _Occurrence:
    probability: float       # 1 - S(∞)
    conditional_mean: float  # E[Δ | an event occurs]


def _occurrence(shaping: ShapingFunction, lam: float) -> _Occurrence:
    if shaping.is_flat:
        return _Occurrence(1.0, 1.0 / lam)
    limit = shaping.integral_limit()
    s_inf = 0.0 if math.isinf(limit) else math.exp(-lam * limit)
    probability = -math.expm1(-lam * limit) if not math.isinf(limit) else 1.0
    if probability < 1e-12:
        raise InfiniteExpectedTimeError()

    def conditional_survival(x: float) -> float:
        comp = lam * float(shaping.integral(x))
        return (math.exp(-comp) - s_inf) / probability if math.isfinite(comp) else 0.0

    mean = quadrature(conditional_survival, 0.0, math.inf, tol=NumericConstants.QUAD_TOL)
    if not math.isfinite(mean):
        raise InfiniteExpectedTimeError()
    return _Occurrence(probability, mean)


def _offset(occ: _Occurrence, share: float, mode: str) -> float:
    if mode == "normalized":
        return occ.conditional_mean
    if mode == "raw":
        return share * occ.probability * occ.conditional_mean
    raise ValidationError(f"unknown expected-time mode: {mode}")


def expected_time(
    params: ModelParams,
    h: np.ndarray,
    mark_id: int,
    t_last: float,
    mode: str = "normalized",
) -> float:
    """Mean next-event time for ``mark_id``.

    ``normalized`` takes the mean of s(t|e,h)/∫s; ``raw`` integrates
    (t - t_last)·s(t|e,h) against the sub-density as written.
    """
    log_nu = _log_nu(params, h)
    nu = np.exp(log_nu)
    lam = float(nu.sum())
    share = float(nu[_row(params, mark_id)]) / lam
    return t_last + _offset(_occurrence(params.shaping, lam), share, mode)


def given_time_likelihoods(params: ModelParams, h: np.ndarray, t_last: float, t: float) -> np.ndarray:
    """r(e|h)·s(t|e,h) for every mark at an observed time."""
    probs = mark_distribution(params, h)
    return np.array([probs[e] * time_density(params, h, e, t_last, t) for e in range(params.K)])


def predict_next(
    params: ModelParams,
    h: np.ndarray,
    t_last: float,
    top_n: int,
    mode: str = "normalized",
) -> List[PredictionCandidate]:
    """Rank marks by r(e|h)·s(t̂_e|e,h) at each mark's expected time."""
    if not 1 <= top_n <= params.K:
        raise ValidationError(f"top_n must lie in [1, {params.K}]")
    probs = mark_distribution(params, h)
    nu = np.exp(_log_nu(params, h))
    lam = float(nu.sum())
    try:
        occ = _occurrence(params.shaping, lam)
    except NumericalError:
        occ = None

    candidates = []
    for e in range(params.K):
        if occ is None:
            candidates.append(PredictionCandidate(e, math.inf, 0.0))
            continue
        try:
            t_hat = t_last + _offset(occ, float(nu[_row(params, e)]) / lam, mode)
            likelihood = float(probs[e]) * time_density(params, h, e, t_last, t_hat)
        except NumericalError:
            t_hat, likelihood = math.inf, 0.0
        candidates.append(PredictionCandidate(e, t_hat, likelihood))
    candidates.sort(key=lambda c: (-c.likelihood, c.mark_id))
    return candidates[:top_n]
