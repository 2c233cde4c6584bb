"""Numerically stable log-space primitives.

Everything downstream (transformers, log-det chains, mixture densities)
computes in natural logarithms with these kernels. All arithmetic is
64-bit. The softplus delta keeps later log() calls strictly away from
zero; it lives inside softplus only, so logsigmoid inherits it and
logsumexp/logsoftmax stay exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# Additive floor inside softplus. Applied nowhere else.
DELTA = 1e-6

NEG_INF = float("-inf")


def logsumexp(v) -> float:
    """log(sum(exp(v))) for a nonempty vector, max-shifted before exp.

    All-(-inf) input returns -inf rather than erroring: masked Jacobian
    chains rely on structural zeros surviving the reduction.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DomainError("logsumexp of an empty vector")
    return float(logsumexp_over_axis(v.reshape(-1), axis=0))


def logsumexp_over_axis(a, axis: int):
    """Axis-wise stable logsumexp on arrays; -inf slices map to -inf."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def softplus(x):
    """log(1 + exp(x)) + DELTA, overflow-free for any finite x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))) + DELTA
    return float(out) if out.ndim == 0 else out


def softplus_inv(y: float) -> float:
    """Inverse of log(1 + exp(x)); ignores DELTA (sub-1e-6 effect)."""
    if y <= 0:
        raise DomainError("softplus_inv requires y > 0")
    # log(exp(y) - 1) = y + log(1 - exp(-y))
    return y + np.log(-np.expm1(-y))


def logsigmoid(x):
    """log sigmoid(x) = -softplus(-x); nonpositive up to DELTA."""
    x = np.asarray(x, dtype=np.float64)
    return -softplus(-x)


def sigmoid(x):
    """Logistic function, split at 0 to avoid overflowing exp."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def logit(p):
    """Inverse sigmoid on (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DomainError("logit requires arguments strictly inside (0, 1)")
    out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def logsoftmax(v):
    """v - logsumexp(v) on a nonempty vector; exps sum to 1."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DomainError("logsoftmax of an empty vector")
    return v - logsumexp(v)


def logsoftmax_over_axis(a, axis: int):
    a = np.asarray(a, dtype=np.float64)
    return a - np.expand_dims(logsumexp_over_axis(a, axis), axis)


@dataclass
class LogMatrix:
    """A matrix stored as entrywise natural logs of a nonnegative matrix.

    Entries are finite or -inf (log of a structural zero); NaN is never
    admitted.
    """

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2:
            raise DomainError("LogMatrix entries must be 2-D")
        if np.isnan(e).any() or np.any(e == np.inf):
            raise DomainError("LogMatrix entries must be finite or -inf")
        self.entries = e

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def from_dense(cls, m) -> "LogMatrix":
        m = np.asarray(m, dtype=np.float64)
        if np.any(m < 0):
            raise DomainError("from_dense requires a nonnegative matrix")
        with np.errstate(divide="ignore"):
            return cls(np.log(m))

    def to_dense(self) -> np.ndarray:
        return np.exp(self.entries)


def log_matmul(a: LogMatrix, b: LogMatrix) -> LogMatrix:
    """Logarithmic matrix product: out[i,k] = LSE_j(a[i,j] + b[j,k])."""
    if a.cols != b.rows:
        raise DomainError(
            f"log_matmul dimension mismatch: {a.rows}x{a.cols} vs {b.rows}x{b.cols}"
        )
    return LogMatrix(log_matmul_raw(a.entries, b.entries))


def log_matmul_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log_matmul on raw arrays; broadcasts leading (batch) axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    stacked = a[..., :, :, None] + b[..., None, :, :]
    return logsumexp_over_axis(stacked, axis=-2)
