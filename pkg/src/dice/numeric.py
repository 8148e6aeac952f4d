"""Shared numerics: optimizer, gradient oracle, chi-square tail, seeded streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfcinv


class DivergenceError(FloatingPointError):
    """Raised when an optimizer step would consume non-finite gradients."""


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and any extra integers.

    Extra keys give independent, reproducible sub-streams, e.g. one per
    grid-search candidate, regardless of which worker runs it.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Bias-corrected adaptive-moment update, in place on ``params``.

    Rejects the whole step (nothing is modified) if any gradient is
    non-finite.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def finite_diff_gradient(f, x, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` at vector ``x``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + eps
        fp = float(f(x.copy()))
        x[i] = old - eps
        fm = float(f(x.copy()))
        x[i] = old
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"f is not finite around coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad


def chi_square_sf_1df(g: float) -> float:
    """P(X >= g) for X ~ chi-square with one degree of freedom."""
    if g < 0 or math.isnan(g):
        raise ValueError(f"chi-square statistic must be >= 0, got {g}")
    return min(1.0, max(0.0, math.erfc(math.sqrt(g / 2.0))))


def chi_square_isf_1df(alpha: float) -> float:
    """Critical value g with chi_square_sf_1df(g) == alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return 2.0 * float(erfcinv(alpha)) ** 2
