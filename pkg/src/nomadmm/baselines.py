"""Reference detectors: support-aware least squares, sparsity-aware ADMM, block subspace pursuit."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from ._validation import check_system
from .solvers import AdmmConfig, infer_block_size, solve_batch
from .support import prune_signal, top_k_mask

__all__ = [
    "RankDeficientError",
    "block_columns",
    "oracle_lse",
    "oracle_admm",
    "oracle_admm_batch",
    "bsp",
]


class RankDeficientError(np.linalg.LinAlgError):
    """A restricted least-squares system lacks full column rank."""


def block_columns(users, K: int) -> np.ndarray:
    """Column indices of the blocks belonging to ``users`` (sorted)."""
    users = sorted(int(j) for j in users)
    return (np.asarray(users, dtype=int)[:, None] * K + np.arange(K)[None, :]).ravel()


def _restricted_lstsq(H, r, users, K, require_full_rank=True):
    cols = block_columns(users, K)
    x = np.zeros(H.shape[1], dtype=complex)
    if cols.size == 0:
        return x
    sub = H[:, cols]
    coef, _, rank, _ = linalg.lstsq(sub, r, lapack_driver="gelsd")
    if require_full_rank and rank < cols.size:
        raise RankDeficientError(f"restricted system has rank {rank} < {cols.size} columns")
    x[cols] = coef
    return x


def oracle_lse(r, H, true_support, K: int | None = None) -> np.ndarray:
    """Least squares on the blocks of the true support, zero elsewhere.

    Raises
    ------
    RankDeficientError
        If the restricted matrix does not have full column rank.
    """
    K = K or infer_block_size(H)
    H, r, _ = check_system(H, r, K)
    if not true_support:
        raise ValueError("true_support must be nonempty")
    return _restricted_lstsq(H, r, true_support, K)


def oracle_admm_batch(variant: str, r, H, cfg: AdmmConfig, S_l, K: int | None = None):
    """Batched ADMM followed by keeping the ``S_l`` strongest blocks.

    Returns ``(mask, x_hat, solution)`` where ``mask`` has shape ``(B, J)``.
    """
    H = np.asarray(H, dtype=complex)
    K = K or infer_block_size(H)
    sol = solve_batch(variant, r, H, cfg, K)
    norms = np.linalg.norm(sol.x.reshape(sol.size, -1, K), axis=-1)
    mask = top_k_mask(norms, S_l)
    x_hat = prune_signal(sol.x, mask)
    return mask, x_hat, sol


def oracle_admm(r, H, cfg: AdmmConfig, true_S_l: int, K: int | None = None,
                variant: str = "group"):
    """ADMM detection with the number of active users known.

    Returns
    -------
    support : frozenset
    x_hat : ndarray
        Solver output restricted to ``support``.
    """
    mask, x_hat, _ = oracle_admm_batch(variant, r, H, cfg, true_S_l, K)
    return frozenset(int(j) for j in np.flatnonzero(mask[0])), x_hat[0]


def bsp(r, H, S_l: int, T_bsp: int = 10, K: int | None = None):
    """Block subspace pursuit with known sparsity.

    Each iteration correlates the residue with every user's columns, merges
    the ``S_l`` best-matching users into the current support, solves a
    minimum-norm least squares on the merged set, prunes back to the
    ``S_l`` strongest blocks, re-fits on them and recomputes the residue.
    Iterations stop once the residue norm fails to decrease.

    Returns
    -------
    support : frozenset
    x_hat : ndarray

    Raises
    ------
    RankDeficientError
        If the final ``S_l``-block system is rank deficient.
    """
    support, x, _ = _bsp_core(r, H, S_l, T_bsp, K)
    return support, x


def _bsp_core(r, H, S_l, T_bsp, K):
    H = np.asarray(H, dtype=complex)
    K = K or infer_block_size(H)
    H, r, J = check_system(H, r, K)
    if not 0 <= S_l <= J:
        raise ValueError(f"S_l must lie in [0, {J}]")
    if T_bsp < 1:
        raise ValueError("T_bsp must be >= 1")
    if S_l == 0:
        return frozenset(), np.zeros(J * K, dtype=complex), 0
    Hb = H.reshape(H.shape[0], J, K)

    def correlate(res):
        return np.linalg.norm(np.einsum("mjk,m->jk", Hb.conj(), res), axis=1)

    def strongest(values):
        return frozenset(int(j) for j in np.flatnonzero(top_k_mask(values, S_l)))

    support = strongest(correlate(r))
    x = _restricted_lstsq(H, r, support, K, require_full_rank=False)
    res = r - H @ x
    used = 0
    for _ in range(T_bsp):
        used += 1
        merged = support | strongest(correlate(res))
        b = _restricted_lstsq(H, r, merged, K, require_full_rank=False)
        cand = strongest(np.linalg.norm(b.reshape(J, K), axis=1))
        x_new = _restricted_lstsq(H, r, cand, K, require_full_rank=False)
        res_new = r - H @ x_new
        if np.linalg.norm(res_new) >= np.linalg.norm(res):
            break
        support, x, res = cand, x_new, res_new
    x = _restricted_lstsq(H, r, support, K, require_full_rank=True)
    return support, x, used
