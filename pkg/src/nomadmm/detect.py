"""One-shot detection pipeline: ADMM solve, activity decision, pruning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .solvers import VARIANTS, AdmmConfig, BatchSolution, infer_block_size, solve_batch
from .support import fsj_batch, prune_signal, top_k_mask

__all__ = ["DetectorConfig", "Detection", "detect"]


@dataclass(frozen=True)
class DetectorConfig:
    """Settings of the solve-then-threshold detector.

    Parameters
    ----------
    solver : AdmmConfig
    variant : {"group", "sparse-group"}
        Penalty used in the solve; the sparse-group form suits codebooks
        with zeros inside each codeword.
    alpha_fsj : float
        Jump-size factor of the first-significant-jump rule.
    """

    solver: AdmmConfig = field(default_factory=AdmmConfig)
    variant: str = "group"
    alpha_fsj: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS or self.variant == "prior":
            raise ValueError(f"variant must be 'group' or 'sparse-group', got {self.variant!r}")
        if not 0 < self.alpha_fsj < 1:
            raise ValueError("alpha_fsj must lie in (0, 1)")


@dataclass
class Detection:
    """Batched detector output.

    ``mask`` and ``block_norms`` have shape ``(B, J)``; ``x_hat`` has shape
    ``(B, J*K)`` and is zero outside ``mask``.  ``failed`` marks solves that
    diverged; their ``mask`` rows are empty.
    """

    mask: np.ndarray
    x_hat: np.ndarray
    sparsity_hat: np.ndarray
    block_norms: np.ndarray
    no_jump: np.ndarray
    iterations: np.ndarray
    failed: np.ndarray
    solution: BatchSolution = field(repr=False)


def activity_from_norms(norms, x, sparsity, alpha_fsj, N_r):
    """Keep the strongest blocks; their number comes from FSJ or is given."""
    if sparsity is None:
        _, s_hat, no_jump = fsj_batch(norms, alpha_fsj, N_r)
    else:
        s_hat = np.broadcast_to(np.asarray(sparsity, dtype=int), norms.shape[:1]).copy()
        no_jump = np.zeros(norms.shape[0], bool)
    mask = top_k_mask(norms, s_hat)
    return mask, prune_signal(x, mask), s_hat, no_jump


def detect(r, H, cfg: DetectorConfig, K: int | None = None, sparsity=None) -> Detection:
    """Run the detector on a batch of observations.

    Parameters
    ----------
    r : array of shape (B, m) or (m,)
    H : array of shape (B, m, n) or (m, n)
    cfg : DetectorConfig
    K : int, optional
        Block length; inferred from ``H`` when omitted.
    sparsity : int or array of shape (B,), optional
        Known number of active users.  When omitted the count is found with
        the first-significant-jump rule.
    """
    H = np.asarray(H, dtype=complex)
    K = K or infer_block_size(H)
    sol = solve_batch(cfg.variant, r, H, cfg.solver, K)
    N_r = H.shape[-2] // K
    x = sol.x
    norms = np.linalg.norm(x.reshape(sol.size, -1, K), axis=-1)
    failed = sol.diverged_at >= 0
    norms = np.where(failed[:, None], 0.0, norms)
    mask, x_hat, s_hat, no_jump = activity_from_norms(norms, x, sparsity, cfg.alpha_fsj, N_r)
    mask[failed] = False
    x_hat[failed] = 0.0
    return Detection(mask, x_hat, s_hat, norms, no_jump, sol.iterations, failed, sol)
