"""Proximal operators for the l1 and l2,1 penalties on complex vectors."""

from __future__ import annotations

import numpy as np

__all__ = ["soft_threshold", "block_soft_threshold", "group_soft_threshold"]


def soft_threshold(v, tau) -> np.ndarray:
    """Complex magnitude shrinkage ``v * max(|v| - tau, 0) / |v|``.

    Solves ``argmin_q tau*|q| + 0.5*|q - v|^2`` elementwise.

    Parameters
    ----------
    v : array_like, complex
    tau : float or array_like
        Nonnegative thresholds broadcastable against ``v``.

    Examples
    --------
    >>> soft_threshold(np.array([3.0, -0.5]), 1.0) + 0.0
    array([2.+0.j, 0.+0.j])
    """
    v = np.asarray(v, dtype=complex)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("thresholds must be nonnegative")
    if tau.ndim and np.broadcast_shapes(tau.shape, v.shape) != v.shape:
        raise ValueError(f"threshold shape {tau.shape} does not match input {v.shape}")
    mag = np.abs(v)
    scale = np.maximum(mag - tau, 0.0) / np.where(mag > 0, mag, 1.0)
    return v * scale


def group_soft_threshold(V, tau) -> np.ndarray:
    """Row-wise block shrinkage on ``V`` of shape ``(..., J, K)``.

    ``tau`` broadcasts against ``V.shape[:-1]``.
    """
    V = np.asarray(V, dtype=complex)
    norms = np.linalg.norm(V, axis=-1)
    scale = np.maximum(norms - tau, 0.0) / np.where(norms > 0, norms, 1.0)
    return V * scale[..., None]


def block_soft_threshold(v, tau: float) -> np.ndarray:
    """Shrink a single block toward zero by ``tau`` in Euclidean norm.

    Returns ``v / ||v|| * max(||v|| - tau, 0)``, the minimizer of
    ``tau*||z|| + 0.5*||z - v||^2``.

    Examples
    --------
    >>> block_soft_threshold(np.array([3.0, 4.0]), 2.5).real
    array([1.5, 2. ])
    """
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=complex)
    if v.ndim != 1:
        raise ValueError("block_soft_threshold expects a single 1-D block")
    return group_soft_threshold(v[None, :], tau)[0]
