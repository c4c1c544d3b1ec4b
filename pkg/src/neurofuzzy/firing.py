"""Normalization of preliminary rule firing levels.

Rows of ``w`` are observations and columns are rules.  Every transform here
works on whole batches and has a matching ``*_backward``.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InputError

ALPHAS = (1.0, 1.5)
ENTMAX_ITERATIONS = 50


def softmax(w: np.ndarray) -> np.ndarray:
    z = w - w.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entmax15_threshold(w: np.ndarray, iterations: int = ENTMAX_ITERATIONS) -> np.ndarray:
    """Solve ``sum_u max(w_u/2 - t, 0)^2 = 1`` for ``t`` row-wise by bisection."""
    z = w / 2.0
    hi = z.max(axis=-1, keepdims=True)
    lo = hi - 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        mass = (np.maximum(z - mid, 0.0) ** 2).sum(axis=-1, keepdims=True)
        too_low = mass >= 1.0
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    return 0.5 * (lo + hi)


def entmax15_threshold_sorted(w: np.ndarray) -> np.ndarray:
    """Exact threshold from the sorted row: the largest support whose closed-form root is consistent."""
    top = w.max(axis=-1, keepdims=True) / 2.0
    z = np.sort(w / 2.0 - top, axis=-1)[..., ::-1]
    k = np.arange(1, z.shape[-1] + 1)
    mean = np.cumsum(z, axis=-1) / k
    mean_sq = np.cumsum(z * z, axis=-1) / k
    # root of sum_{top k} (z - t)^2 = 1 that lies below the k-th largest entry
    disc = np.maximum((1.0 - k * (mean_sq - mean**2)) / k, 0.0)
    tau = mean - np.sqrt(disc)
    support = (tau <= z).sum(axis=-1, keepdims=True)
    return np.take_along_axis(tau, support - 1, axis=-1) + top


def entmax15(w: np.ndarray) -> np.ndarray:
    t = entmax15_threshold_sorted(w)
    p = np.maximum(w / 2.0 - t, 0.0) ** 2
    # rounding leaves ~1e-16 slack in the mass; renormalizing keeps exact zeros
    return p / p.sum(axis=-1, keepdims=True)


def normalize_firing(w, alpha: float = 1.0) -> np.ndarray:
    """Map preliminary firing levels to a distribution over rules.

    ``alpha = 1`` is the max-shifted softmax, ``alpha = 1.5`` the sparse
    1.5-entmax.
    """
    w = np.asarray(w, dtype=float)
    if alpha not in ALPHAS:
        raise ConfigError(f"alpha must be one of {ALPHAS}, got {alpha}")
    if not np.isfinite(w).all():
        raise InputError("firing levels must be finite")
    return softmax(w) if alpha == 1.0 else entmax15(w)


def normalize_firing_backward(out: np.ndarray, grad: np.ndarray, alpha: float) -> np.ndarray:
    """Vector-Jacobian product of :func:`normalize_firing` given its output."""
    if alpha == 1.0:
        return out * (grad - (out * grad).sum(axis=-1, keepdims=True))
    root = np.sqrt(out)
    g = grad * root
    q = g.sum(axis=-1, keepdims=True) / root.sum(axis=-1, keepdims=True)
    return g - q * root


def layer_normalize(w, gain, bias, eps: float = 1e-5):
    """Standardize each row over the rule dimension, then scale and shift.

    Returns ``(out, cache)``; the cache feeds :func:`layer_normalize_backward`.
    """
    w = np.asarray(w, dtype=float)
    mean = w.mean(axis=-1, keepdims=True)
    centered = w - mean
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    return gain * normed + bias, (normed, inv_std)


def layer_normalize_backward(grad: np.ndarray, cache, gain):
    """Return ``(d_w, d_gain, d_bias)``."""
    normed, inv_std = cache
    d_gain = (grad * normed).sum(axis=0)
    d_bias = grad.sum(axis=0)
    g = grad * gain
    d_w = inv_std * (g - g.mean(axis=-1, keepdims=True)
                     - normed * (g * normed).mean(axis=-1, keepdims=True))
    return d_w, d_gain, d_bias


def support_count(normalized: np.ndarray) -> np.ndarray:
    return (normalized > 0).sum(axis=-1)


def normalized_entropy(normalized: np.ndarray) -> np.ndarray:
    """Shannon entropy of each row divided by ``ln(n_rules)``."""
    p = np.asarray(normalized)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1) / np.log(p.shape[-1])
