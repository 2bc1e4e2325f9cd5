"""
Dense linear algebra helpers, stable softmax, quadrature and seeded RNGs.

Matrices and vectors are float64 numpy arrays. Random streams use numpy's
Philox counter-based bit generator so a (seed, stream) pair reproduces the
same draws on every platform.
"""
import math
import warnings
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from src.core.constants import NumericConstants
from src.core.exceptions import DimensionError, QuadratureError, ValidationError

Matrix = np.ndarray
Vector = np.ndarray


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed``; ``stream`` selects an independent substream."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def as_matrix(data, rows: int = None, cols: int = None) -> Matrix:
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {m.shape}")
    if (rows is not None and m.shape[0] != rows) or (cols is not None and m.shape[1] != cols):
        raise DimensionError(f"expected a {rows}x{cols} matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    return m


def matvec(m: Matrix, v: Vector) -> Vector:
    """Matrix-vector product without broadcasting."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape} by {v.shape}")
    return m @ v


def log_softmax(logits: Vector) -> Vector:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size < 1:
        raise ValidationError("log_softmax needs at least one logit")
    if not np.all(np.isfinite(logits)):
        raise ValidationError("log_softmax got non-finite logits")
    return logits - logsumexp(logits, axis=-1, keepdims=True)


def softmax(logits: Vector) -> Vector:
    return np.exp(log_softmax(logits))


def quadrature(
    f: Callable[[float], float],
    a: float,
    b: float = math.inf,
    tol: float = NumericConstants.QUAD_TOL,
    limit: int = NumericConstants.QUAD_LIMIT,
) -> float:
    """Adaptive Gauss-Kronrod integral of ``f`` over [a, b].

    An infinite upper limit is mapped onto [0, 1) with t = a + u/(1-u).
    Raises QuadratureError carrying the best estimate when the requested
    relative tolerance is not met.
    """
    if math.isinf(b):
        def g(u: float) -> float:
            if u >= 1.0:
                return 0.0
            one_minus = 1.0 - u
            return f(a + u / one_minus) / (one_minus * one_minus)

        lo, hi, integrand = 0.0, 1.0, g
    else:
        if b < a:
            raise ValidationError("quadrature needs a <= b")
        lo, hi, integrand = a, b, f

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(
            integrand, lo, hi, epsabs=0.0, epsrel=tol, limit=limit, full_output=1
        )
    value, abserr = float(out[0]), float(out[1])
    converged = len(out) == 3 and math.isfinite(value)
    if not converged and abserr <= tol * max(abs(value), 1e-300):
        converged = math.isfinite(value)
    if not converged:
        raise QuadratureError("quadrature did not converge", value)
    return value


def orthogonal_init(n: int, seed: int) -> Matrix:
    """Random orthogonal n x n matrix (QR of a Gaussian, sign-corrected)."""
    if n < 1:
        raise ValidationError("orthogonal_init needs n >= 1")
    rng = make_rng(seed, 0x0A7)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def global_norm(arrays: Sequence[np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(a * a)) for a in arrays)))
