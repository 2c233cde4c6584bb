"""Invertible scalar transformers and their exact log-derivatives.

Three families: affine (exp- or gate-parameterized scale), a single
hidden layer of softmax-weighted sigmoids behind an inverse-sigmoid
readout (dsf), and its multi-layer dense generalization with
row-stochastic mixing matrices (ddsf). Every forward returns both y and
log(dy/dx), with the log-derivative assembled entirely in log space so
stacked Jacobian chains neither vanish nor overflow.

The cores are written against the diffgraph dispatch layer: fed Values
they record a differentiable graph, fed ndarrays they run plain numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffgraph as dg
from . import stablemath as sm
from .errors import DomainError, RangeError, SaturationError

# Inversion-path floor: the pre-logit is clamped into [1e-12, 1 - 1e-12]
# so bracket probes at extreme x stay evaluable (and monotone).
LOG_EPS = float(np.log(1e-12))

# Forward-path saturation: log(D) or log(1-D) below this exponent
# underflows float64, i.e. the pre-logit is numerically 0 or 1. Stays
# clear of the nominal regime |a*x + b| <= 310.
LOG_UNDERFLOW = -708.0

# Debug switch for fault-injection runs; leave True in normal operation.
SATURATION_GUARD = True

BRACKET_CAP = 1e6

DSF_DEFAULT_D = 16
DDSF_DEFAULT_DIMS = (1, 16, 1)


# -- parameter containers ------------------------------------------------


@dataclass
class AffineParams:
    mu: float
    sigma_pre: float


@dataclass
class DsfParams:
    """Activated sigmoid-mixture parameters: simplex w, positive a."""

    w: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if not (self.w.shape == self.a.shape == self.b.shape):
            raise DomainError("w, a, b must share one length")
        if np.any(self.w <= 0) or abs(self.w.sum() - 1.0) > 1e-9:
            raise DomainError("w must be strictly positive and sum to 1")
        if np.any(self.a <= 0):
            raise DomainError("a must be strictly positive")


@dataclass
class DdsfLayerParams:
    """One dense layer: row-stochastic u and w, positive a, free b."""

    u: np.ndarray
    w: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        d_out, d_in = self.u.shape
        if self.w.shape != (d_out, d_out):
            raise DomainError(f"w must be {d_out}x{d_out}, got {self.w.shape}")
        if self.a.shape != (d_out,) or self.b.shape != (d_out,):
            raise DomainError("a and b must have the layer's output length")
        if np.any(self.u < 0) or np.any(np.abs(self.u.sum(axis=1) - 1.0) > 1e-9):
            raise DomainError("u rows must be nonnegative and sum to 1")
        if np.any(self.w < 0) or np.any(np.abs(self.w.sum(axis=1) - 1.0) > 1e-9):
            raise DomainError("w rows must be nonnegative and sum to 1")
        if np.any(self.a <= 0):
            raise DomainError("a must be strictly positive")

    @property
    def d_in(self):
        return self.u.shape[1]

    @property
    def d_out(self):
        return self.u.shape[0]


# -- shared plumbing -------------------------------------------------------


def _expand_last(x):
    if dg.is_value(x):
        return dg.reshape(x, tuple(x.shape) + (1,))
    return np.asarray(x, dtype=np.float64)[..., None]


def _expand_mid(x):
    """(n, d) -> (n, 1, d); (d,) -> (1, d)."""
    shape = tuple(x.shape)
    return dg.reshape(x, shape[:-1] + (1, shape[-1]))


def _raw(x):
    return x.data if dg.is_value(x) else np.asarray(x, dtype=np.float64)


def _check_saturation(log_num, log_den, x, mode, layer=None):
    """Keep the pre-logit numerically inside (0, 1).

    mode "raise": error once log(D) or log(1-D) underflows float64,
    naming the offending input magnitude. mode "clamp": floor both logs
    at LOG_EPS (numpy path only; used by bisection closures so bracket
    probes at extreme x stay evaluable). mode "ignore": fault injection.
    """
    if not SATURATION_GUARD or mode == "ignore":
        return log_num, log_den
    rn, rd = _raw(log_num), _raw(log_den)
    if mode == "clamp":
        if dg.is_value(log_num):
            raise DomainError("clamp mode is only available on the numpy path")
        return np.maximum(rn, LOG_EPS), np.maximum(rd, LOG_EPS)
    bad = (rn < LOG_UNDERFLOW) | (rd < LOG_UNDERFLOW)
    if not np.any(bad):
        return log_num, log_den
    xarr = np.atleast_1d(_raw(x))
    bad = np.atleast_1d(bad)
    if bad.ndim > xarr.ndim:  # per-unit flags: collapse trailing axes
        bad = bad.any(axis=tuple(range(xarr.ndim, bad.ndim)))
    if bad.shape == xarr.shape:
        mag = float(np.max(np.abs(xarr[bad])))
        index = int(np.argmax(bad))
    else:
        mag = float(np.max(np.abs(xarr)))
        index = 0
    where = "" if layer is None else f" in layer {layer}"
    raise SaturationError(
        f"pre-logit saturated{where} (|x| up to {mag:.6g})",
        magnitude=mag,
        layer=layer,
        index=index,
    )


# -- affine ----------------------------------------------------------------


def _affine_core(x, mu, s, kind):
    if kind == "exp":
        y = mu + dg.exp(s) * x
        logdet = s + dg.mul(x, 0.0)  # broadcast s to y's shape
    elif kind == "gate":
        g = dg.sigmoid(s)
        y = g * x + (1.0 - g) * mu
        logdet = dg.logsigmoid(s) + dg.mul(x, 0.0)
    else:
        raise DomainError(f"unknown affine kind {kind!r}")
    return y, logdet


def affine_forward(x, p: AffineParams, kind: str = "exp"):
    """y and log(dy/dx) for the affine transformer."""
    y, logdet = _affine_core(np.asarray(x, dtype=np.float64), p.mu, p.sigma_pre, kind)
    if np.ndim(x) == 0:
        return float(y), float(logdet)
    return y, logdet


# -- dsf -------------------------------------------------------------------


def _dsf_core(x, log_w, a, log_a, b, mode="raise"):
    """Sigmoid-mixture transformer on pre-activated logs.

    x: (...,); log_w/a/log_a/b: (..., d). Returns (y, logdet) shaped like
    x. log D and log(1-D) are two logsumexp reductions (the complement
    uses sum_j w_j sigmoid(-C_j), exact because w lies on the simplex);
    log(dy/dx) = LSE_j[log w_j + log a_j + log s(C_j) + log s(-C_j)]
    - log D - log(1-D). The softplus deltas inside logsigmoid cancel
    exactly in both y and logdet.
    """
    C = a * _expand_last(x) + b
    ls_pos = dg.logsigmoid(C)
    ls_neg = dg.logsigmoid(-C)
    log_num = dg.logsumexp(log_w + ls_pos, axis=-1)
    log_den = dg.logsumexp(log_w + ls_neg, axis=-1)
    log_num, log_den = _check_saturation(log_num, log_den, x, mode)
    y = log_num - log_den
    logdet = dg.logsumexp(log_w + log_a + ls_pos + ls_neg, axis=-1) - (
        log_num + log_den
    )
    return y, logdet


def dsf_forward(x, p: DsfParams, mode: str = "raise"):
    """y and log(dy/dx) from activated DsfParams (numpy path)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w, log_a = np.log(p.w), np.log(p.a)
    y, logdet = _dsf_core(np.asarray(x, dtype=np.float64), log_w, p.a, log_a, p.b, mode)
    if np.ndim(x) == 0:
        return float(y), float(logdet)
    return y, logdet


def dsf_from_preact(x, w_pre, a_pre, b, mode="raise"):
    """Same transformer fed conditioner pre-activations (graph or numpy)."""
    log_w = dg.logsoftmax(w_pre, axis=-1)
    a = dg.softplus(a_pre)
    return _dsf_core(x, log_w, a, dg.log(a), b, mode)


def dsf_prelogit(x, p: DsfParams):
    """The (0,1)-valued convex sigmoid combination before the logit."""
    x = np.asarray(x, dtype=np.float64)
    return sm.sigmoid(p.a * x[..., None] + p.b) @ p.w


# -- ddsf ------------------------------------------------------------------


def _ddsf_core(x, layers, mode="raise"):
    """Dense multi-layer transformer with a log-space Jacobian chain.

    x: (B,). Each entry of `layers` is a dict with keys u, log_u (batched
    (B, d_out, d_in) or shared (d_out, d_in)), log_w ((d_out, d_out)), a,
    log_a, b ((..., d_out)). The running quantity r = log(dh/dx) stays a
    (B, d_out) vector because the chain starts from a scalar, so each
    chain step is one broadcast add + logsumexp (a logarithmic dot
    product against a log-vector) instead of a full matrix product.
    """
    B = x.shape[0]
    h = dg.reshape(x, (B, 1))
    r = np.zeros((B, 1))  # log(dh0/dx) = log 1
    for li, lay in enumerate(layers):
        uh = dg.vsum(lay["u"] * _expand_mid(h), axis=-1)  # (B, d_out)
        C = lay["a"] * uh + lay["b"]
        ls_pos = dg.logsigmoid(C)
        ls_neg = dg.logsigmoid(dg.neg(C))
        log_num = dg.logsumexp(dg.add(lay["log_w"], _expand_mid(ls_pos)), axis=-1)
        log_den = dg.logsumexp(dg.add(lay["log_w"], _expand_mid(ls_neg)), axis=-1)
        log_num, log_den = _check_saturation(log_num, log_den, x, mode, layer=li)
        h = log_num - log_den

        s = dg.logsumexp(dg.add(lay["log_u"], _expand_mid(r)), axis=-1)
        col = ls_pos + ls_neg + lay["log_a"] + s
        r = dg.logsumexp(dg.add(lay["log_w"], _expand_mid(col)), axis=-1) - (
            log_num + log_den
        )
    if r.shape[-1] != 1:
        raise DomainError("ddsf layer chain must end with output size 1")
    y = dg.take(h, (slice(None), 0))
    logdet = dg.take(r, (slice(None), 0))
    return y, logdet


def ddsf_forward(x, layers, mode: str = "raise"):
    """y and log(dy/dx) for a list of activated DdsfLayerParams."""
    if not layers:
        raise DomainError("ddsf needs at least one layer")
    if layers[0].d_in != 1 or layers[-1].d_out != 1:
        raise DomainError("layer dimensions must chain from 1 to 1")
    for prev, nxt in zip(layers[:-1], layers[1:]):
        if prev.d_out != nxt.d_in:
            raise DomainError("layer dimensions do not chain")
    scalar = np.ndim(x) == 0
    xv = np.atleast_1d(np.asarray(x, dtype=np.float64))
    with np.errstate(divide="ignore"):
        prepared = [
            {
                "u": p.u,
                "log_u": np.log(p.u),
                "log_w": np.log(p.w),
                "a": p.a,
                "log_a": np.log(p.a),
                "b": p.b,
            }
            for p in layers
        ]
    y, logdet = _ddsf_core(xv, prepared, mode)
    if scalar:
        return float(y[0]), float(logdet[0])
    return y, logdet


# -- inversion and monotonicity -------------------------------------------


def invert(y, forward, bracket=(-1.0, 1.0)) -> float:
    """Bisection inverse of a strictly increasing scalar map.

    The bracket doubles outward from the hint until it straddles y (up to
    |x| = 1e6, else RangeError), then bisects until |forward(x) - y| <=
    1e-10 or the bracket width falls below 1e-12.
    """
    y = float(y)
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise DomainError("bracket hint must satisfy lo < hi")
    flo, fhi = forward(lo), forward(hi)
    w = hi - lo
    while flo > y:
        if lo <= -BRACKET_CAP:
            raise RangeError(f"no x in [-1e6, 1e6] reaches y = {y:.6g}")
        w *= 2.0
        lo = max(lo - w, -BRACKET_CAP)
        flo = forward(lo)
    w = hi - lo
    while fhi < y:
        if hi >= BRACKET_CAP:
            raise RangeError(f"no x in [-1e6, 1e6] reaches y = {y:.6g}")
        w *= 2.0
        hi = min(hi + w, BRACKET_CAP)
        fhi = forward(hi)
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = forward(mid)
        if abs(fm - y) <= 1e-10 or (hi - lo) <= 1e-12:
            return mid
        if fm < y:
            lo = mid
        else:
            hi = mid
    return mid


def invert_batch(y, forward, lo0: float = -1.0, hi0: float = 1.0) -> np.ndarray:
    """Vectorized bisection: forward maps (n,) -> (n,), monotone per entry."""
    y = np.asarray(y, dtype=np.float64)
    lo = np.full_like(y, lo0)
    hi = np.full_like(y, hi0)
    flo = forward(lo)
    fhi = forward(hi)
    w = hi - lo
    for _ in range(64):
        need_lo = flo > y
        need_hi = fhi < y
        if not (need_lo.any() or need_hi.any()):
            break
        if np.any(need_lo & (lo <= -BRACKET_CAP)) or np.any(
            need_hi & (hi >= BRACKET_CAP)
        ):
            raise RangeError("bracket expansion exhausted at |x| = 1e6")
        w = w * 2.0
        lo = np.where(need_lo, np.maximum(lo - w, -BRACKET_CAP), lo)
        hi = np.where(need_hi, np.minimum(hi + w, BRACKET_CAP), hi)
        flo = np.where(need_lo, forward(lo), flo)
        fhi = np.where(need_hi, forward(hi), fhi)
    else:
        raise RangeError("bracket expansion exhausted at |x| = 1e6")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = forward(mid)
        above = fm >= y
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.max(hi - lo) <= 1e-12:
            break
    return 0.5 * (lo + hi)


def check_monotone(forward, grid) -> bool:
    """True iff forward is strictly increasing along the given grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be strictly increasing with >= 2 points")
    ys = np.array([float(forward(float(g))) for g in grid])
    return bool(np.all(np.diff(ys) > 0))


# -- random valid parameterizations (property suites) -----------------------


def random_params(kind: str, rng: np.random.Generator, d: int = DSF_DEFAULT_D,
                  dims=DDSF_DEFAULT_DIMS):
    """Draw parameters satisfying each family's validity invariants."""
    if kind == "affine-exp" or kind == "affine-gate":
        return AffineParams(mu=float(rng.normal()), sigma_pre=float(rng.normal()))
    if kind == "dsf":
        w = np.exp(sm.logsoftmax(rng.normal(size=d)))
        a = sm.softplus(rng.normal(size=d) + 0.5)
        b = rng.normal(size=d) * 2.0
        return DsfParams(w=w, a=a, b=b)
    if kind == "ddsf":
        layers = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            u = np.exp(sm.logsoftmax_over_axis(rng.normal(size=(d_out, d_in)), 1))
            w = np.exp(sm.logsoftmax_over_axis(rng.normal(size=(d_out, d_out)), 1))
            a = sm.softplus(rng.normal(size=d_out) + 0.5)
            b = rng.normal(size=d_out) * 2.0
            layers.append(DdsfLayerParams(u=u, w=w, a=a, b=b))
        return layers
    raise DomainError(f"unknown transformer kind {kind!r}")


def forward_closure(kind: str, params, mode: str = "raise"):
    """Scalar y(x) closure for invert/check_monotone."""
    if kind == "affine-exp":
        return lambda x: affine_forward(x, params, "exp")[0]
    if kind == "affine-gate":
        return lambda x: affine_forward(x, params, "gate")[0]
    if kind == "dsf":
        return lambda x: dsf_forward(x, params, mode)[0]
    if kind == "ddsf":
        return lambda x: ddsf_forward(x, params, mode)[0]
    raise DomainError(f"unknown transformer kind {kind!r}")
