"""Independent reference computations the library results are checked against."""

from collections.abc import Callable

import numpy as np

from sublab.tensor import Array

_MASK = (1 << 64) - 1


def splitmix64_first(state: int) -> int:
    """SplitMix64 written out from its published constants."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def numeric_gradient(f: Callable[[Array], float], x: Array, eps: float = 1e-6) -> Array:
    """Central differences of scalar ``f`` at ``x``."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def rel_error(a: Array, b: Array) -> float:
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)), 1e-12)
    return float(np.abs(a - b).max(initial=0.0)) / scale


def lstsq_residual(features: Array, covariates: Array) -> Array:
    design = np.hstack([covariates, np.ones((covariates.shape[0], 1))])
    beta, *_ = np.linalg.lstsq(design, features, rcond=None)
    out: Array = features - design @ beta
    return out


def hsic_cka(x: Array, y: Array) -> float:
    """Linear CKA through centered Gram matrices, ``tr(KHLH)`` form."""
    n = x.shape[0]
    h = np.eye(n) - np.ones((n, n)) / n
    k, l_ = h @ (x @ x.T) @ h, h @ (y @ y.T) @ h
    return float(np.sum(k * l_) / np.sqrt(np.sum(k * k) * np.sum(l_ * l_)))
