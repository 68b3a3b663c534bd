"""Scikit-learn style estimators wrapping the marginal transfer learner.

Rows are grouped into task bags through the ``groups`` argument of ``fit``
and ``predict``; with ``groups=None`` all rows form a single bag (the usual
single-test-task deployment).  Parameters follow sklearn conventions, so
``get_params`` / ``set_params`` / ``clone`` and grid tools work unchanged.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bags import Bag
from .errors import UsageError
from .kernels import KernelSpec
from .learner import predict_bag, train

_METHOD_MAP = {
    ("mtl", "exact"): "exact_dual",
    ("mtl", "rff"): "rff_linear",
    ("mtl", "nystrom"): "nystrom_linear",
    ("pooling", "exact"): "pooling_exact",
    ("pooling", "rff"): "pooling_linear",
    ("pooling", "nystrom"): "pooling_linear",
}


def _group_indices(groups, n: int) -> list[np.ndarray]:
    """Index arrays per task, ordered by first appearance; one group if None."""
    if groups is None:
        return [np.arange(n)]
    groups = np.asarray(groups).ravel()
    if groups.shape[0] != n:
        raise UsageError(f"{groups.shape[0]} group entries for {n} rows")
    out: dict = {}
    for i, g in enumerate(groups):
        out.setdefault(g.item() if isinstance(g, np.generic) else g, []).append(i)
    return [np.asarray(v, dtype=np.intp) for v in out.values()]


class _MarginalTransferBase(BaseEstimator):
    def __init__(self, method="mtl", trainer="rff", kx="gaussian", sigma_x=1.0,
                 kxp="gaussian", sigma_xp=1.0, kp="gaussian_like", sigma_p=1.0,
                 kappa=1.0, lam=1e-3, n_inner=2048, n_outer=2048, n_landmarks=None,
                 tol=None, max_iter=None, random_state=0):
        self.method = method
        self.trainer = trainer
        self.kx = kx
        self.sigma_x = sigma_x
        self.kxp = kxp
        self.sigma_xp = sigma_xp
        self.kp = kp
        self.sigma_p = sigma_p
        self.kappa = kappa
        self.lam = lam
        self.n_inner = n_inner
        self.n_outer = n_outer
        self.n_landmarks = n_landmarks
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    _loss_kind = "hinge"

    def _spec(self) -> KernelSpec:
        return KernelSpec(
            kx_kind=self.kx, sigma_x=self.sigma_x,
            kxp_kind=self.kxp, sigma_xp=self.sigma_xp,
            kp_kind=self.kp, sigma_p=self.sigma_p, kappa=self.kappa,
        )

    def _fit(self, X, y, groups, eps=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise UsageError(f"{y.shape[0]} labels for {X.shape[0]} rows")
        key = (self.method, self.trainer)
        if key not in _METHOD_MAP:
            raise UsageError(f"unsupported method/trainer combination {key!r}")
        bags = [
            Bag(task_id=str(i), points=X[idx], labels=y[idx])
            for i, idx in enumerate(_group_indices(groups, X.shape[0]))
        ]
        self.model_ = train(
            bags, self._spec(), self.lam, loss_kind=self._loss_kind,
            method=_METHOD_MAP[key], seed=self.random_state,
            L=self.n_inner, Q=self.n_outer, n_landmarks=self.n_landmarks,
            eps=eps, tol=self.tol, max_iter=self.max_iter,
            linear_map=self.trainer if _METHOD_MAP[key] == "pooling_linear" else None,
        )
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X, groups=None):
        """Raw margins f(P_bag, x); each bag supplies its own marginal."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        for idx in _group_indices(groups, X.shape[0]):
            out[idx] = predict_bag(self.model_, X[idx])
        return out


class MarginalTransferClassifier(ClassifierMixin, _MarginalTransferBase):
    """Binary classifier (labels -1/+1) trained with the hinge loss."""

    _loss_kind = "hinge"

    def fit(self, X, y, groups=None):
        self._fit(X, y, groups)
        self.classes_ = np.array([-1.0, 1.0])
        return self

    def predict(self, X, groups=None):
        margins = self.decision_function(X, groups=groups)
        return np.where(margins >= 0.0, 1.0, -1.0)


class MarginalTransferRegressor(RegressorMixin, _MarginalTransferBase):
    """Support-vector regressor with the eps-insensitive loss."""

    _loss_kind = "eps_insensitive"

    def __init__(self, method="mtl", trainer="rff", kx="gaussian", sigma_x=1.0,
                 kxp="gaussian", sigma_xp=1.0, kp="gaussian_like", sigma_p=1.0,
                 kappa=1.0, lam=1e-3, n_inner=2048, n_outer=2048, n_landmarks=None,
                 tol=None, max_iter=None, random_state=0, eps=None):
        super().__init__(
            method=method, trainer=trainer, kx=kx, sigma_x=sigma_x, kxp=kxp,
            sigma_xp=sigma_xp, kp=kp, sigma_p=sigma_p, kappa=kappa, lam=lam,
            n_inner=n_inner, n_outer=n_outer, n_landmarks=n_landmarks,
            tol=tol, max_iter=max_iter, random_state=random_state,
        )
        self.eps = eps

    def fit(self, X, y, groups=None):
        if self.trainer == "exact":
            raise UsageError("the exact dual path is hinge-only; use trainer='rff' or 'nystrom'")
        return self._fit(X, y, groups, eps=self.eps)

    def predict(self, X, groups=None):
        return self.decision_function(X, groups=groups)
