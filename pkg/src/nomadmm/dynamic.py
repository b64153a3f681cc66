"""Two-step detection over a frame of slots with slowly changing activity.

Step i runs the one-shot detector on every slot independently.  The frame
is then labelled by how the preliminary supports relate across adjacent
slots:

``Case1``
    no user is active in two consecutive slots;
``Case2a``
    some users persist but none repeats its codeword;
``Case2b``
    some persisting user repeats its codeword.

For ``Case2*`` frames step ii re-solves the slots in order.  Users found
both in the previous slot's final support and in the current preliminary
support form the quality set; they are exempt from the group penalty.  For
``Case2b`` the solve is additionally pulled toward the previous slot's
estimate of those users.

Functions named ``*_batch`` process ``B`` frames at once with arrays laid
out as ``(B, L, ...)``; the others are single-frame conveniences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detect import DetectorConfig, activity_from_norms, detect
from .model import Codebook
from .solvers import infer_block_size, solve_batch
from .support import demap_batch, prune_signal

__all__ = [
    "CASE_LABELS",
    "MODES",
    "SlotEstimate",
    "FrameEstimate",
    "FrameBatchEstimate",
    "step_i",
    "step_i_batch",
    "classify_case",
    "classify_batch",
    "quality_set",
    "prior_weights",
    "prior_signal",
    "step_ii",
    "step_ii_batch",
    "detect_frames",
]

CASE_LABELS = ("Case1", "Case2a", "Case2b")
MODES = ("auto", "case1", "case2a", "case2b")


@dataclass(frozen=True)
class SlotEstimate:
    """Preliminary per-slot result: support, pruned signal and codeword indices."""

    support_p: frozenset
    x_p: np.ndarray
    symbol_idx: dict
    sparsity_hat: int = 0


@dataclass
class FrameEstimate:
    case_label: str
    final_supports: list
    final_signals: list
    quality_sets: list
    prior_signals: list
    flagged_slots: list = field(default_factory=list)


@dataclass
class FrameBatchEstimate:
    """Step-i and final results for ``B`` frames.

    Masks have shape ``(B, L, J)``, signals ``(B, L, J*K)``, codeword
    indices ``(B, L, J)``.  ``labels`` holds indices into ``CASE_LABELS``.
    """

    labels: np.ndarray
    prelim_mask: np.ndarray
    prelim_x: np.ndarray
    prelim_sym: np.ndarray
    sparsity_hat: np.ndarray
    final_mask: np.ndarray
    final_x: np.ndarray
    final_sym: np.ndarray
    quality_mask: np.ndarray
    prior_x: np.ndarray
    iterations: np.ndarray
    flagged: np.ndarray

    def frame(self, b: int) -> FrameEstimate:
        def sets(m):
            return [frozenset(int(j) for j in np.flatnonzero(row)) for row in m]

        return FrameEstimate(
            case_label=CASE_LABELS[int(self.labels[b])],
            final_supports=sets(self.final_mask[b]),
            final_signals=[x.copy() for x in self.final_x[b]],
            quality_sets=sets(self.quality_mask[b]),
            prior_signals=[x.copy() for x in self.prior_x[b]],
            flagged_slots=[int(l) for l in np.flatnonzero(self.flagged[b])],
        )


def _per_slot_channels(H, B, L):
    H = np.asarray(H, dtype=complex)
    if H.ndim == 3:
        H = np.broadcast_to(H[:, None], (B, L) + H.shape[1:])
    if H.shape[:2] != (B, L):
        raise ValueError(f"channels must have shape (B, m, n) or (B, L, m, n), got {H.shape}")
    return H


def step_i_batch(obs, H, cfg: DetectorConfig, cb: Codebook, sparsity=None):
    """Independent one-shot detection of every slot of ``B`` frames.

    Parameters
    ----------
    obs : array of shape (B, L, m)
    H : array of shape (B, m, n) or (B, L, m, n)
    cfg : DetectorConfig
    cb : Codebook
    sparsity : int or array of shape (B, L), optional
        Known activity counts; FSJ is used when omitted.

    Returns
    -------
    mask, x_p, sym, s_hat, iterations, failed
    """
    obs = np.asarray(obs, dtype=complex)
    B, L, m = obs.shape
    Hs = _per_slot_channels(H, B, L)
    n = Hs.shape[-1]
    sp = None if sparsity is None else np.broadcast_to(np.asarray(sparsity), (B, L)).reshape(-1)
    det = detect(obs.reshape(B * L, m), Hs.reshape(B * L, m, n), cfg, cb.K, sp)
    mask = det.mask.reshape(B, L, -1)
    x_p = det.x_hat.reshape(B, L, n)
    sym = demap_batch(x_p, cb)
    return (mask, x_p, sym, det.sparsity_hat.reshape(B, L),
            det.iterations.reshape(B, L), det.failed.reshape(B, L))


def step_i(frame_obs, H, cfg: DetectorConfig, cb: Codebook) -> list:
    """Independent detection of each slot of one frame."""
    obs = np.asarray(frame_obs, dtype=complex)[None]
    mask, x_p, sym, s_hat, _, failed = step_i_batch(obs, np.asarray(H)[None], cfg, cb)
    if failed.any():
        from .solvers import DivergenceError

        raise DivergenceError(-1, f"slot {int(np.flatnonzero(failed[0])[0])}")
    out = []
    for l in range(obs.shape[1]):
        users = [int(j) for j in np.flatnonzero(mask[0, l])]
        out.append(SlotEstimate(frozenset(users), x_p[0, l], {j: int(sym[0, l, j]) for j in users},
                                int(s_hat[0, l])))
    return out


def classify_batch(mask, sym) -> np.ndarray:
    """Frame labels (indices into ``CASE_LABELS``) from preliminary estimates.

    Each adjacent slot pair is labelled on its own and the frame takes the
    most informative label found.
    """
    mask = np.asarray(mask, bool)
    if mask.shape[1] < 2:
        return np.zeros(mask.shape[0], int)
    common = mask[:, 1:] & mask[:, :-1]
    repeat = common & (sym[:, 1:] == sym[:, :-1])
    labels = np.zeros(mask.shape[0], int)
    labels[common.any(axis=(1, 2))] = 1
    labels[repeat.any(axis=(1, 2))] = 2
    return labels


def classify_case(estimates) -> str:
    """Label one frame from its list of :class:`SlotEstimate`."""
    if len(estimates) < 2:
        return CASE_LABELS[0]
    label = 0
    for prev, cur in zip(estimates[:-1], estimates[1:]):
        common = prev.support_p & cur.support_p
        if common:
            label = max(label, 1)
            if any(prev.symbol_idx[j] == cur.symbol_idx[j] for j in common):
                label = 2
    return CASE_LABELS[label]


def quality_set(prev_final_support, cur_prior_support) -> frozenset:
    """Users active in the previous slot's final estimate and the current preliminary one."""
    if prev_final_support is None:
        return frozenset()
    return frozenset(prev_final_support) & frozenset(cur_prior_support)


def prior_weights(q_set, J: int) -> np.ndarray:
    """Penalty multipliers: 0 for trusted users, 1 otherwise."""
    w = np.ones(J)
    for j in q_set:
        w[int(j)] = 0.0
    return w


def prior_signal(prev_x_final, q_set, K: int) -> np.ndarray:
    """Previous-slot estimate restricted to the blocks of ``q_set``."""
    return prune_signal(prev_x_final, q_set, K=K)


def step_ii_batch(obs, H, cfg: DetectorConfig, cb: Codebook, prelim, labels):
    """Sequential re-detection of the slots of ``Case2*`` frames.

    ``prelim`` is the tuple returned by :func:`step_i_batch`; ``labels``
    holds one label index per frame.  Frames labelled ``Case1`` keep their
    step-i results.  A slot whose solve diverges keeps its step-i result
    and is flagged.
    """
    obs = np.asarray(obs, dtype=complex)
    B, L, m = obs.shape
    Hs = _per_slot_channels(H, B, L)
    K, J = cb.K, cb.J
    N_r = m // K
    mask_p, x_p, sym_p, s_hat, iters, failed = prelim
    fin_mask, fin_x = mask_p.copy(), x_p.copy()
    q_mask = np.zeros_like(mask_p)
    prior_x = np.zeros_like(x_p)
    iters = iters.copy()
    flagged = failed.copy()
    labels = np.asarray(labels)
    for label in (1, 2):
        frames = np.flatnonzero(labels == label)
        if frames.size == 0:
            continue
        solver = cfg.solver.with_(mu=cfg.solver.mu if label == 2 else 0.0)
        for l in range(L):
            if l > 0:
                q = fin_mask[frames, l - 1] & mask_p[frames, l]
            else:
                q = np.zeros((frames.size, J), bool)
            beta = prune_signal(fin_x[frames, l - 1], q) if (label == 2 and l > 0) else None
            sol = solve_batch("prior", obs[frames, l], Hs[frames, l], solver, K,
                              w_prior=1.0 - q, beta=beta)
            ok = sol.diverged_at < 0
            norms = np.linalg.norm(sol.x.reshape(frames.size, J, K), axis=-1)
            mask, x_hat, _, _ = activity_from_norms(norms, sol.x, s_hat[frames, l], cfg.alpha_fsj, N_r)
            sel = frames[ok]
            fin_mask[sel, l] = mask[ok]
            fin_x[sel, l] = x_hat[ok]
            iters[frames, l] += sol.iterations
            flagged[frames[~ok], l] = True
            q_mask[frames, l] = q
            if beta is not None:
                prior_x[frames, l] = beta
    fin_sym = demap_batch(fin_x, cb)
    return FrameBatchEstimate(labels, mask_p, x_p, sym_p, s_hat, fin_mask, fin_x, fin_sym,
                              q_mask, prior_x, iters, flagged)


def step_ii(frame_obs, H, cfg: DetectorConfig, cb: Codebook, estimates) -> FrameEstimate:
    """Single-frame step ii from step-i ``estimates``."""
    obs = np.asarray(frame_obs, dtype=complex)[None]
    L = obs.shape[1]
    J, K = cb.J, cb.K
    mask = np.zeros((1, L, J), bool)
    sym = np.zeros((1, L, J), int)
    x_p = np.zeros((1, L, J * K), complex)
    s_hat = np.zeros((1, L), int)
    for l, est in enumerate(estimates):
        for j in est.support_p:
            mask[0, l, j] = True
            sym[0, l, j] = est.symbol_idx[j]
        x_p[0, l] = est.x_p
        s_hat[0, l] = est.sparsity_hat
    label = CASE_LABELS.index(classify_case(estimates))
    prelim = (mask, x_p, sym, s_hat, np.zeros((1, L), int), np.zeros((1, L), bool))
    return step_ii_batch(obs, np.asarray(H)[None], cfg, cb, prelim, np.array([label])).frame(0)


def detect_frames(obs, H, cfg: DetectorConfig, cb: Codebook, mode: str = "auto",
                  sparsity=None) -> FrameBatchEstimate:
    """Full two-step detection of ``B`` frames.

    ``mode="auto"`` labels each frame from its step-i estimates.  The other
    modes force one processing path on every frame: ``"case1"`` stops after
    step i, ``"case2a"`` runs step ii without the proximity term and
    ``"case2b"`` runs it with the proximity term.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    obs = np.asarray(obs, dtype=complex)
    prelim = step_i_batch(obs, H, cfg, cb, sparsity)
    B, L = obs.shape[:2]
    if mode == "auto":
        labels = classify_batch(prelim[0], prelim[2])
    else:
        labels = np.full(B, MODES.index(mode) - 1)
    if L < 2:
        labels = np.zeros(B, int)
    return step_ii_batch(obs, H, cfg, cb, prelim, labels)
