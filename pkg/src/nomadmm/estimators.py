"""Estimator-style wrappers around the ADMM solvers.

The wrappers follow the scikit-learn conventions (constructor stores
hyper-parameters untouched, ``fit`` returns ``self``, learned attributes
end in ``_``) so that ``get_params``, ``set_params`` and ``clone`` work.
Inputs are complex, so validation goes through the package helpers rather
than ``sklearn.utils.check_array``, which rejects complex data.

Examples
--------
>>> import numpy as np
>>> from nomadmm.model import draw_channel, assemble_channel_matrix
>>> rng = np.random.default_rng(0)
>>> H = assemble_channel_matrix(draw_channel(6, 2, 2, rng))
>>> x = np.zeros(12, complex); x[2:4] = [1, -1j]
>>> est = GroupLassoADMM(alpha1=0.01, block_size=2).fit(H, H @ x)
>>> bool(est.support_[1])
True
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from ._validation import check_system
from .solvers import AdmmConfig, admm_group_lasso, admm_prior_aided, admm_sparse_group_lasso, infer_block_size
from .support import fsj_threshold, top_k_support

__all__ = ["GroupLassoADMM", "SparseGroupLassoADMM", "PriorAidedADMM"]


class _AdmmEstimator(RegressorMixin, BaseEstimator):
    """Shared ``fit``/``predict`` logic; subclasses implement ``_solve``."""

    def __init__(self, rho=1.0, alpha1=0.05, T=300, T_w=5, eps_abs=1e-4, eps_rel=1e-2,
                 eps_w=1e-6, block_size=None, n_active=None, alpha_fsj=0.5):
        self.rho = rho
        self.alpha1 = alpha1
        self.T = T
        self.T_w = T_w
        self.eps_abs = eps_abs
        self.eps_rel = eps_rel
        self.eps_w = eps_w
        self.block_size = block_size
        self.n_active = n_active
        self.alpha_fsj = alpha_fsj

    def _config(self, **extra) -> AdmmConfig:
        return AdmmConfig(rho=self.rho, alpha1=self.alpha1, T=self.T, T_w=self.T_w,
                          eps_abs=self.eps_abs, eps_rel=self.eps_rel, eps_w=self.eps_w, **extra)

    def fit(self, H, r):
        """Solve for the block-sparse signal behind ``r = H x + noise``.

        Parameters
        ----------
        H : array of shape (m, n)
            Effective channel matrix.
        r : array of shape (m,)
            Received vector.

        Returns
        -------
        self
        """
        H = np.asarray(H, dtype=complex)
        K = self.block_size or infer_block_size(H)
        H, r, J = check_system(H, r, K)
        state, report = self._solve(r, H, K)
        self.coef_ = state.x.copy()
        self.block_norms_ = np.linalg.norm(self.coef_.reshape(J, K), axis=1)
        if self.n_active is None:
            self.sparsity_ = fsj_threshold(self.block_norms_, self.alpha_fsj, H.shape[0] // K).sparsity_hat
        else:
            self.sparsity_ = int(self.n_active)
        mask = np.zeros(J, bool)
        mask[list(top_k_support(self.block_norms_, self.sparsity_))] = True
        self.support_ = mask
        self.n_iter_ = report.iterations_used
        self.report_ = report
        self.n_features_in_ = H.shape[1]
        return self

    def predict(self, H):
        """Noise-free observation ``H @ coef_``."""
        if not hasattr(self, "coef_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")
        H = np.asarray(H, dtype=complex)
        if H.shape[-1] != self.n_features_in_:
            raise ValueError(f"H has {H.shape[-1]} columns, expected {self.n_features_in_}")
        return H @ self.coef_

    def score(self, H, r, sample_weight=None):
        """Fraction of received energy explained by the fit."""
        r = np.asarray(r, dtype=complex)
        res = r - self.predict(H)
        return 1.0 - float(np.vdot(res, res).real / max(np.vdot(r, r).real, 1e-300))


class GroupLassoADMM(_AdmmEstimator):
    """Reweighted group LASSO solved by ADMM, one block per user."""

    def _solve(self, r, H, K):
        return admm_group_lasso(r, H, self._config(), K)


class SparseGroupLassoADMM(_AdmmEstimator):
    """Reweighted sparse group LASSO: block penalty plus elementwise penalty ``alpha2``."""

    def __init__(self, rho=1.0, alpha1=0.05, alpha2=0.01, T=300, T_w=5, eps_abs=1e-4,
                 eps_rel=1e-2, eps_w=1e-6, block_size=None, n_active=None, alpha_fsj=0.5):
        super().__init__(rho=rho, alpha1=alpha1, T=T, T_w=T_w, eps_abs=eps_abs, eps_rel=eps_rel,
                         eps_w=eps_w, block_size=block_size, n_active=n_active, alpha_fsj=alpha_fsj)
        self.alpha2 = alpha2

    def _solve(self, r, H, K):
        return admm_sparse_group_lasso(r, H, self._config(alpha2=self.alpha2), K)


class PriorAidedADMM(_AdmmEstimator):
    """Group LASSO with trusted users and a pull toward a prior estimate.

    Parameters
    ----------
    trusted : iterable of int
        Users exempt from the group penalty.
    prior : array of shape (n,), optional
        Prior signal, zero outside the ``trusted`` blocks.
    mu : float
        Weight of the proximity term.
    """

    def __init__(self, rho=1.0, alpha1=0.05, mu=1.0, trusted=(), prior=None, T=300, T_w=5,
                 eps_abs=1e-4, eps_rel=1e-2, eps_w=1e-6, block_size=None, n_active=None,
                 alpha_fsj=0.5):
        super().__init__(rho=rho, alpha1=alpha1, T=T, T_w=T_w, eps_abs=eps_abs, eps_rel=eps_rel,
                         eps_w=eps_w, block_size=block_size, n_active=n_active, alpha_fsj=alpha_fsj)
        self.mu = mu
        self.trusted = trusted
        self.prior = prior

    def _solve(self, r, H, K):
        return admm_prior_aided(r, H, self._config(mu=self.mu), tuple(self.trusted), self.prior, K)
