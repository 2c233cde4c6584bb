"""Toy target densities, energies, and exact samplers.

Every log-density closure accepts either an (n, dim) ndarray or a graph
Value, so energy-fitting losses can backpropagate through the target.
Invented constants (grid component sd, the four-mode surrogate, the
support barrier) are fixed here and echoed into emitted run configs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import diffgraph as dg
from .errors import DomainError

LOG_2PI = float(np.log(2.0 * np.pi))

# Smooth quadratic penalty replacing a hard support cutoff, so energy
# losses stay finite wherever early-training samples land.
BARRIER_SCALE = 1e6

GRID_COMPONENT_SD = 0.5
SINE_TIMES = (0.0, 5.0 / 6.0, 10.0 / 6.0)
SINE_OBS = (0.0, 0.0, 0.0)
SINE_NOISE_VAR = 0.125


@dataclass
class TargetSpec:
    """A named target: log-density (maybe unnormalized), optional sampler."""

    name: str
    dim: int
    log_density: Callable
    sampler: Optional[Callable] = None
    modes: Optional[list] = None
    normalized: bool = True
    meta: dict = field(default_factory=dict)


def _mixture_log_density(means: np.ndarray, sd: float):
    """Equal-weight isotropic Gaussian mixture, evaluated via logsumexp."""
    k, dim = means.shape
    log_norm = -0.5 * dim * LOG_2PI - dim * np.log(sd) - np.log(k)
    inv2v = 0.5 / (sd * sd)

    def logp(x):
        n = x.shape[0]
        xe = dg.reshape(x, (n, 1, dim))
        diff = dg.sub(xe, means.reshape(1, k, dim))
        sq = dg.vsum(dg.mul(diff, diff), axis=-1)  # (n, k)
        return dg.logsumexp(dg.mul(sq, -inv2v), axis=-1) + log_norm

    return logp


def _mixture_sampler(means: np.ndarray, sd: float):
    k, dim = means.shape

    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.integers(0, k, size=n)
        return means[comp] + sd * rng.standard_normal((n, dim))

    return sample


def gaussian_grid(k: int, sd: float = GRID_COMPONENT_SD) -> TargetSpec:
    """k x k equal mixture on the meshgrid over [-5, 5]^2.

    k >= 2 places means at -5 + 10*(i-1)/(k-1); k = 1 centers at the
    origin. Exact sampling draws a component then a Gaussian.
    """
    if k < 1:
        raise DomainError("mode count per dimension must be >= 1")
    if sd <= 0:
        raise DomainError("component sd must be positive")
    if k == 1:
        axis = np.array([0.0])
    else:
        axis = -5.0 + 10.0 * np.arange(k) / (k - 1)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    means = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    return TargetSpec(
        name=f"grid-k{k}",
        dim=2,
        log_density=_mixture_log_density(means, sd),
        sampler=_mixture_sampler(means, sd),
        modes=[tuple(m) for m in means],
        normalized=True,
        meta={"k": k, "sd": sd, "means": means.tolist()},
    )


def four_mode_energy() -> TargetSpec:
    """Unnormalized 2-D energy with four modes at (+-2, +-2), sd 0.5.

    A declared surrogate: acceptance on it is property-based (mode
    coverage), never value-matching.
    """
    means = np.array([[2.0, 2.0], [2.0, -2.0], [-2.0, 2.0], [-2.0, -2.0]])
    sd = 0.5
    return TargetSpec(
        name="four-mode",
        dim=2,
        log_density=_mixture_log_density(means, sd),
        sampler=_mixture_sampler(means, sd),
        modes=[tuple(m) for m in means],
        normalized=False,
        meta={"sd": sd, "means": means.tolist(), "surrogate": True},
    )


def sine_posterior() -> TargetSpec:
    """1-D unnormalized log-posterior over a sine frequency on [0, 2].

    Three observations equal to zero at fixed times; outside [0, 2] a
    smooth quadratic barrier stands in for the uniform prior's support.
    Posterior maxima sit at frequencies where every sin(2*pi*f*t_i)
    vanishes: {0.0, 0.6, 1.2, 1.8}.
    """
    times = np.asarray(SINE_TIMES)
    obs = np.asarray(SINE_OBS)
    inv2v = 0.5 / SINE_NOISE_VAR
    log_norm = -0.5 * LOG_2PI - 0.5 * np.log(SINE_NOISE_VAR)

    def logp(x):
        n = x.shape[0]
        f = dg.reshape(x, (n, 1))
        pred = dg.sin(dg.mul(f, 2.0 * np.pi * times.reshape(1, -1)))  # (n, 3)
        resid = dg.sub(obs.reshape(1, -1), pred)
        ll = dg.vsum(dg.mul(dg.mul(resid, resid), -inv2v), axis=-1) + 3.0 * log_norm
        f1 = dg.reshape(f, (n,))
        lo = dg.relu(dg.neg(f1))
        hi = dg.relu(f1 - 2.0)
        barrier = dg.mul(dg.mul(lo, lo) + dg.mul(hi, hi), -BARRIER_SCALE)
        return ll + barrier

    return TargetSpec(
        name="sine-posterior",
        dim=1,
        log_density=logp,
        sampler=None,
        modes=[0.0, 0.6, 1.2, 1.8],
        normalized=False,
        meta={"times": list(SINE_TIMES), "obs": list(SINE_OBS),
              "noise_var": SINE_NOISE_VAR, "barrier_scale": BARRIER_SCALE},
    )


def count_modes(samples, target: TargetSpec, radius: float) -> np.ndarray:
    """Fraction of samples within Euclidean `radius` of each declared mode."""
    if target.modes is None:
        raise DomainError(f"target {target.name!r} declares no mode list")
    if radius <= 0:
        raise DomainError("radius must be positive")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    modes = np.atleast_2d(np.asarray(target.modes, dtype=np.float64))
    if modes.shape[0] == 1 and modes.shape[1] == len(target.modes) and target.dim == 1:
        modes = modes.reshape(-1, 1)
    dist = np.linalg.norm(samples[:, None, :] - modes[None, :, :], axis=-1)
    return (dist <= radius).mean(axis=0)


_REGISTRY = {
    "grid-k2": lambda: gaussian_grid(2),
    "grid-k5": lambda: gaussian_grid(5),
    "grid-k10": lambda: gaussian_grid(10),
    "four-mode": four_mode_energy,
    "sine-posterior": sine_posterior,
}


def registry_names():
    return sorted(_REGISTRY)


def get_target(name: str) -> TargetSpec:
    if name not in _REGISTRY:
        raise DomainError(
            f"unknown target {name!r}; registry: {', '.join(registry_names())}"
        )
    return _REGISTRY[name]()
