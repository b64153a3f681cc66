"""Activity decisions from block norms, signal pruning and symbol demapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Codebook

__all__ = [
    "SupportEstimate",
    "fsj_threshold",
    "fsj_batch",
    "top_k_support",
    "top_k_mask",
    "prune_signal",
    "demap_symbols",
    "demap_batch",
]


@dataclass(frozen=True)
class SupportEstimate:
    """Outcome of the first-significant-jump rule.

    ``no_jump`` is set when no gap exceeded the threshold; the support is
    then empty and ``beta`` is ``inf``.
    """

    beta: float
    sparsity_hat: int
    support: frozenset
    block_norms: np.ndarray
    no_jump: bool = False


def fsj_batch(block_norms, alpha_fsj: float = 0.5, N_r: int = 1):
    """Vectorized first-significant-jump rule over the rows of ``block_norms``.

    Returns ``(beta, sparsity_hat, no_jump)`` arrays.  See
    :func:`fsj_threshold` for the rule.
    """
    norms = np.asarray(block_norms, dtype=float)
    if norms.ndim != 2:
        raise ValueError("block_norms must have shape (B, J)")
    if np.any(norms < 0):
        raise ValueError("block norms must be nonnegative")
    if not 0 < alpha_fsj < 1:
        raise ValueError(f"alpha_fsj must lie in (0, 1), got {alpha_fsj}")
    if N_r < 1:
        raise ValueError("N_r must be >= 1")
    srt = np.sort(norms, axis=1)
    gaps = np.diff(srt, axis=1)
    thresh = alpha_fsj * srt[:, -1] / N_r
    jumps = gaps > thresh[:, None]
    no_jump = ~jumps.any(axis=1)
    p = np.argmax(jumps, axis=1)
    beta = np.where(no_jump, np.inf, srt[np.arange(len(srt)), p])
    s_hat = np.sum(norms > beta[:, None], axis=1)
    return beta, s_hat, no_jump


def fsj_threshold(block_norms, alpha_fsj: float = 0.5, N_r: int = 1) -> SupportEstimate:
    """Detect active users from the first large gap in sorted block norms.

    Norms are sorted ascending and the threshold ``beta`` is the value just
    below the first consecutive gap exceeding ``alpha_fsj * max / N_r``.
    Users with norms strictly above ``beta`` are declared active.

    Parameters
    ----------
    block_norms : array_like of shape (J,)
    alpha_fsj : float in (0, 1)
    N_r : int
        Receive antenna count; larger arrays lower the jump threshold.

    Examples
    --------
    >>> est = fsj_threshold([0.01, 0.02, 0.03, 0.9, 1.0, 1.1], 0.5, 2)
    >>> est.beta, est.sparsity_hat, sorted(est.support)
    (0.03, 3, [3, 4, 5])
    """
    norms = np.asarray(block_norms, dtype=float)
    if norms.ndim != 1:
        raise ValueError("block_norms must be one-dimensional")
    if not np.any(norms > 0):
        raise ValueError("at least one block norm must be positive")
    beta, s_hat, no_jump = fsj_batch(norms[None], alpha_fsj, N_r)
    support = frozenset(int(j) for j in np.flatnonzero(norms > beta[0]))
    return SupportEstimate(float(beta[0]), int(s_hat[0]), support, norms.copy(), bool(no_jump[0]))


def top_k_mask(block_norms, k) -> np.ndarray:
    """Boolean mask of the ``k`` largest entries per row; ties go to lower indices.

    ``k`` may be a scalar or one count per row.
    """
    norms = np.asarray(block_norms, dtype=float)
    squeeze = norms.ndim == 1
    norms = np.atleast_2d(norms)
    B, J = norms.shape
    k = np.broadcast_to(np.asarray(k, dtype=int), (B,))
    if np.any(k < 0) or np.any(k > J):
        raise ValueError(f"k must lie in [0, {J}]")
    order = np.argsort(-norms, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(J)[None, :].repeat(B, 0), axis=1)
    mask = rank < k[:, None]
    return mask[0] if squeeze else mask


def top_k_support(block_norms, k: int) -> frozenset:
    """Users holding the ``k`` largest block norms (lowest index wins ties).

    Examples
    --------
    >>> sorted(top_k_support([5, 3, 9, 1], 2))
    [0, 2]
    """
    return frozenset(int(j) for j in np.flatnonzero(top_k_mask(block_norms, k)))


def prune_signal(x, support, K: int | None = None, J: int | None = None) -> np.ndarray:
    """Zero every block of ``x`` whose user is not in ``support``.

    ``support`` may be a set of user indices or a boolean mask of length
    ``J``; for a set, ``K`` (or ``J``) fixes the block layout.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    sup = np.asarray(support)
    if sup.dtype == bool:
        J = sup.shape[-1]
        mask = sup
    else:
        if K is None and J is None:
            raise ValueError("block length K or user count J is required for a set support")
        J = J if J is not None else n // K
        mask = np.zeros(J, bool)
        idx = np.fromiter((int(j) for j in support), dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= J):
            raise ValueError(f"support entries must lie in 0..{J - 1}")
        mask[idx] = True
    if n % J:
        raise ValueError(f"signal length {n} is not a multiple of J={J}")
    K = n // J
    blocks = x.reshape(*x.shape[:-1], J, K)
    return (blocks * mask[..., None]).reshape(x.shape)


def demap_batch(x_hat, cb: Codebook) -> np.ndarray:
    """Nearest-codeword index for every user block, shape ``(..., J)``.

    Ties resolve to the lowest codeword index.
    """
    x_hat = np.asarray(x_hat, dtype=complex)
    blocks = x_hat.reshape(*x_hat.shape[:-1], cb.J, 1, cb.K)
    dist = np.sum(np.abs(blocks - cb.words) ** 2, axis=-1)
    return np.argmin(dist, axis=-1)


def demap_symbols(x_hat, support, cb: Codebook) -> dict:
    """Map each user in ``support`` to its nearest codeword index."""
    x_hat = np.asarray(x_hat, dtype=complex)
    if x_hat.shape != (cb.J * cb.K,):
        raise ValueError(f"x_hat must have length {cb.J * cb.K}")
    idx = demap_batch(x_hat, cb)
    out = {}
    for j in sorted(int(j) for j in support):
        if not 0 <= j < cb.J:
            raise ValueError(f"user {j} outside 0..{cb.J - 1}")
        out[j] = int(idx[j])
    return out
