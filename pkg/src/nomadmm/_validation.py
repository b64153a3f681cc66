"""Input checks shared across modules."""

from __future__ import annotations

import numbers

import numpy as np


def check_rng(rng) -> np.random.Generator:
    """Coerce ``None``, an int seed or a Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (numbers.Integral, list, tuple, np.ndarray)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")


def check_vector(x, n: int | None = None, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if n is not None and x.shape[0] != n:
        raise ValueError(f"{name} has length {x.shape[0]}, expected {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_system(H, r, K: int):
    """Validate a measurement pair and return ``(H, r, J)``.

    ``H`` may be ``(m, n)`` or batched ``(B, m, n)`` with ``r`` shaped to match.
    """
    H = np.asarray(H, dtype=complex)
    r = np.asarray(r, dtype=complex)
    if H.ndim not in (2, 3):
        raise ValueError(f"H must be 2-D or a batch of 2-D matrices, got shape {H.shape}")
    if r.shape != H.shape[:-1]:
        raise ValueError(f"r has shape {r.shape}, expected {H.shape[:-1]}")
    n = H.shape[-1]
    if K < 1 or n % K:
        raise ValueError(f"number of columns {n} is not a multiple of K={K}")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(r))):
        raise ValueError("H and r must be finite")
    return H, r, n // K


def check_positive(value, name: str, strict: bool = True) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "positive" if strict else "nonnegative"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value
