"""ADMM solvers for reweighted (sparse) group LASSO with complex blocks.

Three problem variants share one iteration engine:

``"sparse-group"``
    ``0.5||r - Hx||^2 + a1 sum_j w_j ||x_j|| + a2 sum_i w_i |x_i|`` with
    two splitting copies ``z`` (block penalty) and ``q`` (elementwise).
``"group"``
    ``0.5||r - Hx||^2 + a1 sum_j w_j ||x_j||`` with one copy ``z``.
``"prior"``
    the group problem plus ``0.5 mu ||x - beta||^2`` and per-user penalty
    multipliers (zero for users whose activity is already trusted).

Scaled duals follow ``u <- u + x - z``.  By default each iteration runs the
proximal steps first, then the ridge-type x-update, then the duals; with
that order the multiplier always equals the negative data-fit gradient, the
property the convergence checks rely on.  ``order="x-first"`` runs the
x-update first instead.

Two reweighting schedules are available.  ``"iteration"`` recomputes the
weights from the previous ``x`` at the start of iterations ``2..T_w`` and
freezes them afterwards.  ``"rounds"`` runs the inner loop with fixed
weights until the residual test passes, recomputes the weights from the
current ``x`` and resumes warm started, for ``T_w`` rounds in total.  In
both schedules ``T_w`` is the number of distinct weight vectors used and
the stopping test only ends a solve once the weights are frozen.

The engine is vectorized over a batch of independent problems; the public
single-problem functions are thin wrappers around it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from ._validation import check_positive, check_system, check_vector
from .prox import group_soft_threshold, soft_threshold

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "ConvergenceReport",
    "BatchSolution",
    "DivergenceError",
    "RhoConditions",
    "CachedFactor",
    "VARIANTS",
    "factorize",
    "update_weights",
    "x_update_sg",
    "x_update_g",
    "residuals",
    "stopping_thresholds",
    "augmented_lagrangian",
    "objective",
    "check_rho_conditions",
    "infer_block_size",
    "solve_batch",
    "admm_sparse_group_lasso",
    "admm_group_lasso",
    "admm_prior_aided",
    "write_trace",
]

VARIANTS = ("sparse-group", "group", "prior")
ORDERS = ("prox-first", "x-first")
SCHEDULES = ("iteration", "rounds")


class DivergenceError(FloatingPointError):
    """Raised when an iterate becomes non-finite."""

    def __init__(self, iteration: int, where: str = ""):
        self.iteration = iteration
        msg = f"ADMM diverged at iteration {iteration}"
        super().__init__(msg + (f" ({where})" if where else ""))


@dataclass(frozen=True)
class AdmmConfig:
    """Solver settings.

    Parameters
    ----------
    rho : float
        Augmented-Lagrangian penalty.
    alpha1, alpha2 : float
        Group and elementwise penalty levels.  ``alpha2`` is used only by
        the sparse-group solver.
    mu : float
        Weight of the proximity term toward a prior signal (prior solver).
    T : int
        Cap on the total number of iterations over all reweighting rounds.
    eps_abs, eps_rel : float
        Absolute and relative stopping tolerances.
    eps_w : float
        Floor added to norms when computing reweighting coefficients.
    T_w : int
        Number of distinct weight vectors (the first is all ones); 1
        disables reweighting.
    reweight : {"iteration", "rounds"}
        Reweighting schedule, see the module docstring.
    order : {"prox-first", "x-first"}
        Update order within an iteration.
    """

    rho: float = 1.0
    alpha1: float = 0.05
    alpha2: float = 0.0
    mu: float = 1.0
    T: int = 300
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    eps_w: float = 1e-6
    T_w: int = 5
    reweight: str = "iteration"
    order: str = "prox-first"

    def __post_init__(self):
        check_positive(self.rho, "rho")
        check_positive(self.alpha1, "alpha1", strict=False)
        check_positive(self.alpha2, "alpha2", strict=False)
        check_positive(self.mu, "mu", strict=False)
        check_positive(self.eps_abs, "eps_abs")
        check_positive(self.eps_rel, "eps_rel")
        check_positive(self.eps_w, "eps_w")
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if int(self.T_w) != self.T_w or self.T_w < 1:
            raise ValueError("T_w must be a positive integer")
        if self.reweight not in SCHEDULES:
            raise ValueError(f"reweight must be one of {SCHEDULES}, got {self.reweight!r}")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, got {self.order!r}")

    def with_(self, **changes) -> "AdmmConfig":
        return replace(self, **changes)


@dataclass
class AdmmState:
    """Iterates and per-iteration history of one solve.

    ``history`` maps ``"primal"``, ``"dual"``, ``"eps_pri"``, ``"eps_dual"``,
    ``"lagrangian"``, ``"objective"``, ``"lower_bound"`` and ``"frozen"`` to
    arrays of length ``t``.
    """

    x: np.ndarray
    z: np.ndarray
    q: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    w_group: np.ndarray
    w_elem: np.ndarray
    t: int = 0
    variant: str = "group"
    z_prev: np.ndarray | None = None
    q_prev: np.ndarray | None = None
    w_prior: np.ndarray | None = None
    beta: np.ndarray | None = None
    history: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.x.size // self.w_group.size

    @property
    def block_norms(self) -> np.ndarray:
        return np.linalg.norm(self.z.reshape(-1, self.K), axis=1)


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    iterations_used: int
    primal_residual: float
    dual_residual: float
    rho_conditions_met: bool
    lagrangian_monotone: bool
    lemma1_violations: int
    lemma2_violations: int = 0
    lemma3_violations: int = 0
    first_stop_iteration: int = -1
    rounds_used: int = 1


@dataclass(frozen=True)
class RhoConditions:
    """Outcome of the three penalty-size conditions for convergence."""

    rho: float
    lambda_min: float
    lambda_max: float
    positive: bool
    curvature: bool
    dominance: bool
    boundary: bool

    @property
    def all_met(self) -> bool:
        return self.positive and self.curvature and self.dominance


def check_rho_conditions(H, rho: float, mu: float = 0.0) -> RhoConditions:
    """Check ``rho > 0``, ``rho(rho + lmin) >= 2 lmax^2`` and ``rho > lmax``.

    ``lmin`` and ``lmax`` are the extreme eigenvalues of ``H^H H``.  With
    ``mu > 0`` (prior-aided objective) the smooth part gains ``mu I`` and
    the conditions use ``lmin + mu`` and ``lmax + mu``.  ``boundary`` is set
    when the second condition holds with near equality.
    """
    H = np.asarray(H, dtype=complex)
    eig = np.linalg.eigvalsh(H.conj().T @ H)
    lmin, lmax = float(eig[0]) + mu, float(eig[-1]) + mu
    lhs, rhs = rho * (rho + lmin), 2.0 * lmax**2
    return RhoConditions(
        rho=float(rho),
        lambda_min=lmin,
        lambda_max=lmax,
        positive=rho > 0,
        curvature=lhs >= rhs,
        dominance=rho > lmax,
        boundary=abs(lhs - rhs) <= 1e-12 * max(rhs, 1.0),
    )


def infer_block_size(H) -> int:
    """Largest block length consistent with a diagonally stacked ``H``."""
    H = np.asarray(H)
    m, n = H.shape[-2:]
    rows, cols = np.nonzero(np.any(H != 0, axis=0) if H.ndim == 3 else H != 0)
    g = math.gcd(m, n)
    for K in sorted((d for d in range(1, g + 1) if g % d == 0), reverse=True):
        if np.all(rows % K == cols % K):
            return K
    return 1


# -- building blocks ---------------------------------------------------------


@dataclass(frozen=True)
class CachedFactor:
    """Cholesky factor of ``H^H H + shift I`` together with ``H^H r``-ready data."""

    shift: float
    cho: tuple

    def solve(self, rhs) -> np.ndarray:
        return linalg.cho_solve(self.cho, rhs)


def factorize(H, shift: float) -> CachedFactor:
    """Factorize ``H^H H + shift I`` once for reuse across iterations."""
    check_positive(shift, "shift")
    H = np.asarray(H, dtype=complex)
    A = H.conj().T @ H + shift * np.eye(H.shape[1])
    return CachedFactor(float(shift), linalg.cho_factor(A, lower=True))


def x_update_sg(H, r, z, q, u1, u2, rho, factor: CachedFactor | None = None) -> np.ndarray:
    """Ridge step of the sparse-group solver.

    Returns ``(H^H H + 2 rho I)^{-1} (H^H r + rho (z + q - u1 - u2))``.
    """
    H = np.asarray(H, dtype=complex)
    if factor is None:
        factor = factorize(H, 2.0 * rho)
    elif not np.isclose(factor.shift, 2.0 * rho):
        raise ValueError("cached factor was built for a different shift")
    rhs = H.conj().T @ np.asarray(r) + rho * (np.asarray(z) + q - u1 - u2)
    return factor.solve(rhs)


def x_update_g(H, r, z, u, rho, mu: float = 0.0, beta_prior=None,
               factor: CachedFactor | None = None) -> np.ndarray:
    """Ridge step of the group and prior-aided solvers.

    Returns ``(H^H H + (mu + rho) I)^{-1} (H^H r + mu beta + rho (z - u))``.
    """
    H = np.asarray(H, dtype=complex)
    if factor is None:
        factor = factorize(H, mu + rho)
    elif not np.isclose(factor.shift, mu + rho):
        raise ValueError("cached factor was built for a different shift")
    rhs = H.conj().T @ np.asarray(r) + rho * (np.asarray(z) - u)
    if mu and beta_prior is not None:
        rhs = rhs + mu * np.asarray(beta_prior)
    return factor.solve(rhs)


def update_weights(x, K: int, eps_w: float):
    """Reweighting coefficients ``1/(||x_j|| + eps)`` and ``1/(|x_i| + eps)``.

    Returns ``(w_group, w_elem)``.  Works on a single vector of length
    ``J*K`` or a batch of shape ``(B, J*K)``.
    """
    x = np.asarray(x)
    blocks = x.reshape(*x.shape[:-1], -1, K)
    w_group = 1.0 / (np.linalg.norm(blocks, axis=-1) + eps_w)
    w_elem = 1.0 / (np.abs(x) + eps_w)
    return w_group, w_elem


def stopping_thresholds(x, z, u1, rho, eps_abs, eps_rel):
    """Primal and dual tolerances of the residual stopping test."""
    n = np.shape(x)[-1]
    base = math.sqrt(n) * eps_abs
    eps_pri = base + eps_rel * np.maximum(np.linalg.norm(x, axis=-1), np.linalg.norm(z, axis=-1))
    eps_dual = base + eps_rel * np.linalg.norm(rho * np.asarray(u1), axis=-1)
    return eps_pri, eps_dual


def residuals(state: AdmmState, rho: float):
    """Primal and dual residual norms of ``state``.

    The q-terms are folded in by root-sum-square on the sparse-group path.
    """
    if state.t < 1 or state.z_prev is None:
        raise ValueError("residuals need at least one completed iteration")
    rp2 = np.sum(np.abs(state.x - state.z) ** 2)
    rd2 = np.sum(np.abs(state.z - state.z_prev) ** 2)
    if state.variant == "sparse-group":
        rp2 += np.sum(np.abs(state.x - state.q) ** 2)
        rd2 += np.sum(np.abs(state.q - state.q_prev) ** 2)
    return float(np.sqrt(rp2)), float(rho * np.sqrt(rd2))


def _smooth(H, r, v, mu=0.0, beta=None):
    res = r - np.einsum("...ij,...j->...i", H, v)
    val = 0.5 * np.sum(np.abs(res) ** 2, axis=-1)
    if mu and beta is not None:
        val = val + 0.5 * mu * np.sum(np.abs(v - beta) ** 2, axis=-1)
    return val


def _group_penalty(z, K, w_group):
    return np.sum(w_group * np.linalg.norm(z.reshape(*z.shape[:-1], -1, K), axis=-1), axis=-1)


def objective(v, H, r, cfg: AdmmConfig, w_group, w_elem=None, variant="group",
              w_prior=None, beta=None) -> float:
    """Penalized least-squares objective of ``variant`` evaluated at ``v``."""
    v = np.asarray(v, dtype=complex)
    K = v.shape[-1] // np.shape(w_group)[-1]
    wg = np.asarray(w_group) * (1.0 if w_prior is None else np.asarray(w_prior))
    mu = cfg.mu if variant == "prior" else 0.0
    val = _smooth(np.asarray(H), np.asarray(r), v, mu, beta) + cfg.alpha1 * _group_penalty(v, K, wg)
    if variant == "sparse-group":
        val = val + cfg.alpha2 * np.sum(np.asarray(w_elem) * np.abs(v), axis=-1)
    return val


def augmented_lagrangian(state: AdmmState, H, r, cfg: AdmmConfig) -> float:
    """Augmented Lagrangian of the active variant with ``y = rho u``."""
    H = np.asarray(H, dtype=complex)
    r = np.asarray(r, dtype=complex)
    return float(_lagrangian(H, r, state.x, state.z, state.q, state.u1, state.u2,
                             state.w_group, state.w_elem, state.w_prior, state.beta,
                             cfg, state.variant))


def _lagrangian(H, r, x, z, q, u1, u2, wg, we, wp, beta, cfg, variant):
    rho = cfg.rho
    K = x.shape[-1] // wg.shape[-1]
    mu = cfg.mu if variant == "prior" else 0.0
    gw = wg if wp is None else wg * wp
    d1 = x - z
    val = (_smooth(H, r, x, mu, beta) + cfg.alpha1 * _group_penalty(z, K, gw)
           + rho * np.real(np.sum(np.conj(u1) * d1, axis=-1))
           + 0.5 * rho * np.sum(np.abs(d1) ** 2, axis=-1))
    if variant == "sparse-group":
        d2 = x - q
        val = val + (cfg.alpha2 * np.sum(we * np.abs(q), axis=-1)
                     + rho * np.real(np.sum(np.conj(u2) * d2, axis=-1))
                     + 0.5 * rho * np.sum(np.abs(d2) ** 2, axis=-1))
    return val


# -- batched engine ----------------------------------------------------------

_HIST_KEYS = ("primal", "dual", "eps_pri", "eps_dual", "lagrangian", "objective",
              "lower_bound", "dx2", "dy2")


@dataclass
class BatchSolution:
    """Final iterates and diagnostics for a batch of independent solves.

    Array attributes carry a leading batch axis.  ``history`` arrays have
    shape ``(B, T)`` and are NaN past each problem's last iteration.
    """

    variant: str
    cfg: AdmmConfig
    K: int
    x: np.ndarray
    z: np.ndarray
    q: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    z_prev: np.ndarray
    q_prev: np.ndarray
    w_group: np.ndarray
    w_elem: np.ndarray
    w_prior: np.ndarray | None
    beta: np.ndarray | None
    iterations: np.ndarray
    converged: np.ndarray
    first_stop: np.ndarray
    rounds: np.ndarray
    diverged_at: np.ndarray
    lambda_min: np.ndarray
    lambda_max: np.ndarray
    history: dict
    frozen: np.ndarray

    @property
    def size(self) -> int:
        return self.x.shape[0]

    @property
    def block_norms(self) -> np.ndarray:
        """Per-user norms of the sparse copy ``z``, shape ``(B, J)``."""
        return np.linalg.norm(self.z.reshape(self.size, -1, self.K), axis=-1)

    def rho_conditions_met(self) -> np.ndarray:
        rho = self.cfg.rho
        shift = self.cfg.mu if self.variant == "prior" else 0.0
        lmin, lmax = self.lambda_min + shift, self.lambda_max + shift
        return (rho * (rho + lmin) >= 2 * lmax**2) & (rho > lmax)

    def lemma_violations(self, slack1=1e-8, slack2=1e-9, slack3=1e-9):
        """Per-problem counts of violations of the three descent inequalities.

        Returns three integer arrays: multiplier-change bound, monotone
        Lagrangian (over consecutive frozen-weight iterations) and the
        Lagrangian lower bound.  The lower bound is not defined on the
        sparse-group path, whose count is always zero.
        """
        h = self.history
        shift = self.cfg.mu if self.variant == "prior" else 0.0
        lmax = (self.lambda_max + shift)[:, None]
        valid = np.isfinite(h["dx2"])
        v1 = valid & (h["dy2"] > lmax**2 * h["dx2"] + slack1)
        L = h["lagrangian"]
        pair = self.frozen[:, 1:] & self.frozen[:, :-1] & np.isfinite(L[:, 1:])
        tol2 = slack2 * np.maximum(1.0, np.abs(L[:, :-1]))
        v2 = pair & (L[:, 1:] > L[:, :-1] + tol2)
        lower = h["lower_bound"]
        tol3 = slack3 * np.maximum(1.0, np.abs(lower))
        v3 = np.isfinite(L) & (L < lower - tol3)
        return v1.sum(axis=1), v2.sum(axis=1), v3.sum(axis=1)

    def state(self, b: int = 0) -> AdmmState:
        t = int(self.iterations[b])
        hist = {k: self.history[k][b, :t].copy() for k in _HIST_KEYS}
        hist["frozen"] = self.frozen[b, :t].copy()
        return AdmmState(
            x=self.x[b].copy(), z=self.z[b].copy(), q=self.q[b].copy(),
            u1=self.u1[b].copy(), u2=self.u2[b].copy(),
            w_group=self.w_group[b].copy(), w_elem=self.w_elem[b].copy(), t=t,
            variant=self.variant, z_prev=self.z_prev[b].copy(), q_prev=self.q_prev[b].copy(),
            w_prior=None if self.w_prior is None else self.w_prior[b].copy(),
            beta=None if self.beta is None else self.beta[b].copy(),
            history=hist,
        )

    def report(self, b: int = 0) -> ConvergenceReport:
        t = int(self.iterations[b])
        v1, v2, v3 = (int(v[b]) for v in self.lemma_violations())
        return ConvergenceReport(
            converged=bool(self.converged[b]),
            iterations_used=t,
            primal_residual=float(self.history["primal"][b, t - 1]) if t else math.nan,
            dual_residual=float(self.history["dual"][b, t - 1]) if t else math.nan,
            rho_conditions_met=bool(self.rho_conditions_met()[b]),
            lagrangian_monotone=v2 == 0,
            lemma1_violations=v1,
            lemma2_violations=v2,
            lemma3_violations=v3,
            first_stop_iteration=int(self.first_stop[b]),
            rounds_used=int(self.rounds[b]) + 1,
        )


def _as_batch(a, B, n, name):
    if a is None:
        return None
    a = np.asarray(a)
    if a.ndim == 1:
        a = np.broadcast_to(a, (B, a.shape[0]))
    if a.shape != (B, n):
        raise ValueError(f"{name} must have shape ({B}, {n}), got {a.shape}")
    return np.array(a)


def solve_batch(variant: str, r, H, cfg: AdmmConfig, K: int | None = None, *,
                w_prior=None, beta=None, weights=None, elem_weights=None) -> BatchSolution:
    """Run ``B`` independent ADMM solves in lockstep.

    Parameters
    ----------
    variant : {"sparse-group", "group", "prior"}
    r : array of shape (B, m) or (m,)
    H : array of shape (B, m, n) or (m, n)
    cfg : AdmmConfig
    K : int, optional
        Block length; inferred from the sparsity pattern of ``H`` if omitted.
    w_prior : array of shape (B, J) or (J,), optional
        Per-user penalty multipliers (prior variant); ones by default.
    beta : array of shape (B, n) or (n,), optional
        Prior signal for the proximity term (prior variant).
    weights, elem_weights : arrays, optional
        Fixed group and elementwise weights.  When given, reweighting is
        disabled and these weights are used throughout.

    Problems that stop early are left untouched while the rest continue.
    A problem whose iterates become non-finite is frozen at its last
    finite state and marked in ``diverged_at``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    H = np.asarray(H, dtype=complex)
    if K is None:
        K = infer_block_size(H)
    single = H.ndim == 2
    if single:
        H = H[None]
        r = np.asarray(r, dtype=complex)[None]
    H, r, J = check_system(H, r, K)
    B, m, n = H.shape
    rho = cfg.rho
    mu = cfg.mu if variant == "prior" else 0.0
    sg = variant == "sparse-group"

    wp = _as_batch(w_prior, B, J, "w_prior") if variant == "prior" else None
    if variant == "prior":
        wp = np.ones((B, J)) if wp is None else wp.astype(float)
        if np.any(wp < 0):
            raise ValueError("w_prior must be nonnegative")
        beta = _as_batch(beta, B, n, "beta")
        beta = np.zeros((B, n), complex) if beta is None else beta.astype(complex)
    else:
        beta = None

    fixed = weights is not None
    wg = np.ones((B, J)) if weights is None else _as_batch(weights, B, J, "weights").astype(float)
    we = np.ones((B, n)) if elem_weights is None else _as_batch(elem_weights, B, n, "elem_weights").astype(float)
    rounds_total = 1 if fixed else int(cfg.T_w)
    per_iter = cfg.reweight == "iteration"

    Hh = np.conj(np.swapaxes(H, 1, 2))
    G = Hh @ H
    Hr = np.einsum("bij,bj->bi", Hh, r)
    eig = np.linalg.eigvalsh(G)
    shift = 2.0 * rho if sg else rho + mu
    chol = np.linalg.cholesky(G + shift * np.eye(n))
    Linv = np.linalg.solve(chol, np.broadcast_to(np.eye(n), (B, n, n)))
    Ainv = np.conj(np.swapaxes(Linv, 1, 2)) @ Linv
    base_rhs = Hr + (mu * beta if mu else 0.0)

    x = np.zeros((B, n), complex)
    z = np.zeros_like(x)
    q = np.zeros_like(x)
    u1 = np.zeros_like(x)
    u2 = np.zeros_like(x)
    z_prev, q_prev = z.copy(), q.copy()

    T = int(cfg.T)
    hist = {k: np.full((B, T), np.nan) for k in _HIST_KEYS}
    frozen = np.zeros((B, T), bool)
    active = np.ones(B, bool)
    converged = np.zeros(B, bool)
    first_stop = np.full(B, -1)
    rounds = np.zeros(B, int)
    iters = np.zeros(B, int)
    diverged = np.full(B, -1)
    prev_y = np.zeros_like(x)
    prev_x = np.zeros_like(x)

    def prox(x_, u1_, u2_, wg_, we_):
        tau = cfg.alpha1 * wg_ / rho
        if wp is not None:
            tau = tau * wp
        zn = group_soft_threshold((x_ + u1_).reshape(B, J, K), tau).reshape(B, n)
        qn = soft_threshold(x_ + u2_, cfg.alpha2 * we_ / rho) if sg else q
        return zn, qn

    def ridge(z_, q_, u1_, u2_):
        v = z_ + q_ - u1_ - u2_ if sg else z_ - u1_
        return np.einsum("bij,bj->bi", Ainv, base_rhs + rho * v)

    for t in range(T):
        if not active.any():
            break
        if per_iter and 1 <= t < rounds_total:
            wg[active], we[active] = update_weights(x[active], K, cfg.eps_w)
            rounds[active] += 1
        if cfg.order == "prox-first":
            zn, qn = prox(x, u1, u2, wg, we)
            xn = ridge(zn, qn, u1, u2)
        else:
            xn = ridge(z, q, u1, u2)
            zn, qn = prox(xn, u1, u2, wg, we)
        u1n = u1 + xn - zn
        u2n = u2 + xn - qn if sg else u2

        finite = np.all(np.isfinite(xn), axis=1) & np.all(np.isfinite(u1n), axis=1)
        if sg:
            finite &= np.all(np.isfinite(u2n), axis=1)
        bad = active & ~finite
        diverged[bad] = t + 1
        active &= finite
        a = active[:, None]
        z_prev = np.where(a, z, z_prev)
        q_prev = np.where(a, q, q_prev)
        prev_x = np.where(a, x, prev_x)
        x, z, q = np.where(a, xn, x), np.where(a, zn, z), np.where(a, qn, q)
        u1, u2 = np.where(a, u1n, u1), np.where(a, u2n, u2)

        rp2 = np.sum(np.abs(x - z) ** 2, axis=1)
        rd2 = np.sum(np.abs(z - z_prev) ** 2, axis=1)
        if sg:
            rp2 += np.sum(np.abs(x - q) ** 2, axis=1)
            rd2 += np.sum(np.abs(q - q_prev) ** 2, axis=1)
        rp, rd = np.sqrt(rp2), rho * np.sqrt(rd2)
        e_pri, e_dual = stopping_thresholds(x, z, u1, rho, cfg.eps_abs, cfg.eps_rel)

        y = rho * (u1 + u2) if sg else rho * u1
        gw = wg if wp is None else wg * wp
        lag = _lagrangian(H, r, x, z, q, u1, u2, wg, we, wp, beta, cfg, variant)
        obj = _smooth(H, r, z, mu, beta) + cfg.alpha1 * _group_penalty(z, K, gw)
        lower = obj.copy()
        if sg:
            obj = obj + cfg.alpha2 * np.sum(we * np.abs(z), axis=1)
            # the bound rests on y = -grad f, which holds only for the sum of the two multipliers
            lower = np.full_like(lower, np.nan)

        rec = active
        for key, val in (("primal", rp), ("dual", rd), ("eps_pri", e_pri), ("eps_dual", e_dual),
                         ("lagrangian", lag), ("objective", obj), ("lower_bound", lower)):
            hist[key][rec, t] = val[rec]
        if t > 0:
            hist["dx2"][rec, t] = np.sum(np.abs(x - prev_x) ** 2, axis=1)[rec]
            hist["dy2"][rec, t] = np.sum(np.abs(y - prev_y) ** 2, axis=1)[rec]
        prev_y = np.where(a, y, prev_y)
        frozen[rec, t] = rounds[rec] == rounds_total - 1
        iters[rec] = t + 1

        stop = active & (rp <= e_pri) & (rd <= e_dual)
        first_stop[stop & (first_stop < 0)] = t + 1
        done = stop & (rounds == rounds_total - 1)
        converged |= done
        active &= ~done
        bump = stop & ~done & (not per_iter)
        if bump.any():
            nwg, nwe = update_weights(x[bump], K, cfg.eps_w)
            wg[bump] = nwg
            we[bump] = nwe
            rounds[bump] += 1

    return BatchSolution(
        variant=variant, cfg=cfg, K=K, x=x, z=z, q=q, u1=u1, u2=u2,
        z_prev=z_prev, q_prev=q_prev, w_group=wg, w_elem=we, w_prior=wp, beta=beta,
        iterations=iters, converged=converged, first_stop=first_stop, rounds=rounds,
        diverged_at=diverged, lambda_min=eig[:, 0], lambda_max=eig[:, -1],
        history=hist, frozen=frozen,
    )


def _single(variant, r, H, cfg, K, **kw):
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2:
        raise ValueError(f"H must be a 2-D matrix, got shape {H.shape}")
    r = check_vector(r, H.shape[0], "r")
    sol = solve_batch(variant, r, H, cfg, K, **kw)
    if sol.diverged_at[0] >= 0:
        raise DivergenceError(int(sol.diverged_at[0]), variant)
    return sol.state(0), sol.report(0)


def admm_sparse_group_lasso(r, H, cfg: AdmmConfig, K: int | None = None, *,
                            weights=None, elem_weights=None):
    """Reweighted sparse group LASSO with block and elementwise splits.

    Returns
    -------
    state : AdmmState
    report : ConvergenceReport
    """
    return _single("sparse-group", r, H, cfg, K, weights=weights, elem_weights=elem_weights)


def admm_group_lasso(r, H, cfg: AdmmConfig, K: int | None = None, *, weights=None):
    """Reweighted group LASSO (block penalty only)."""
    return _single("group", r, H, cfg, K, weights=weights)


def admm_prior_aided(r, H, cfg: AdmmConfig, q_set=(), beta_prior=None, K: int | None = None, *,
                     weights=None):
    """Group LASSO with trusted users exempt from shrinkage and a pull toward ``beta_prior``.

    Users in ``q_set`` get a zero group penalty; ``cfg.mu`` weights the
    proximity term ``0.5 ||x - beta_prior||^2``.  ``beta_prior`` must vanish
    on blocks outside ``q_set``.
    """
    H = np.asarray(H, dtype=complex)
    if K is None:
        K = infer_block_size(H)
    J = H.shape[1] // K
    wp = np.ones(J)
    for j in q_set:
        if not 0 <= j < J:
            raise ValueError(f"user {j} in q_set outside 0..{J - 1}")
        wp[j] = 0.0
    if beta_prior is not None:
        beta_prior = check_vector(beta_prior, J * K, "beta_prior")
        outside = wp.astype(bool)
        if np.any(np.abs(beta_prior.reshape(J, K)[outside]) > 0):
            raise ValueError("beta_prior must be zero outside the quality set")
    return _single("prior", r, H, cfg, K, w_prior=wp, beta=beta_prior, weights=weights)


def write_trace(state: AdmmState, path) -> None:
    """Write per-iteration residuals and objective values as CSV."""
    h = state.history
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "r_p", "r_d", "L", "objective"])
        for i in range(state.t):
            w.writerow([i + 1] + [repr(float(h[k][i])) for k in ("primal", "dual", "lagrangian", "objective")])
