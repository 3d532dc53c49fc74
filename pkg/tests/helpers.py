"""Shared test oracles, independent of the library's backward machinery.

The finite-difference oracle only ever calls forward passes; it never touches
Tape.backward, so agreement between the two is evidence, not tautology.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-5


def fd_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences (f(x+eps) - f(x-eps)) / 2eps for scalar f."""
    flat = x.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * eps)
    return out.reshape(x.shape)


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference over the joint max magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def rng_array(rng: np.random.Generator, *shape, lo=-1.0, hi=1.0) -> np.ndarray:
    return rng.uniform(lo, hi, size=shape).astype(np.float64)
