"""Scikit-learn style estimator API.

``ClusterRobustOLS`` wraps the functional core in a fit/predict estimator
with ``get_params``/``set_params``, so it composes with pipelines, cloning
and model-selection utilities. ``WithinTransformer`` is the matching
transformer for sweeping out fixed effects by group demeaning before
estimation.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import covariance as cov_mod
from .covariance import DF_NORMAL, TestResult, t_test
from .data import ClusterPartition, RegressionProblem
from .ols import fit_ols
from .validation import check_matrix, check_vector

__all__ = ["ClusterRobustOLS", "WithinTransformer"]

_ESTIMATOR_FUNCS = {
    "lz": lambda fit, problem, self: cov_mod.lz_cov(
        fit, problem, small_sample=self.small_sample_scale
    ),
    "bm": lambda fit, problem, self: cov_mod.bm_cov(
        fit, problem, adjustment=self.bm_adjust
    ),
    "lcoc": lambda fit, problem, self: cov_mod.lcoc_cov(fit, problem),
}


class ClusterRobustOLS(BaseEstimator):
    """OLS with cluster-robust covariance estimates for the focal block.

    Parameters
    ----------
    cov_estimators : tuple of str, default ("lz", "bm", "lcoc")
        Which covariance estimators to compute at fit time.
    bm_adjust : {"cr2", "cr3"}, default "cr2"
        Bell-McCaffrey adjustment variant.
    df_rule : {"normal", "g-1"}, default "normal"
        Reference distribution for ``t_test``.
    small_sample_scale : bool, default False
        Apply the conventional G/(G-1)*(n-1)/(n-p) factor to the
        Liang-Zeger estimator.

    Attributes
    ----------
    coef_ : array, shape (r,)
        Coefficients on the focal columns of X.
    control_coef_ : array, shape (k,)
        Coefficients on the controls.
    cov_ : dict
        Map estimator name -> CovEstimate.
    leverage_, resid_, rank_ : fit diagnostics.

    Examples
    --------
    >>> import numpy as np
    >>> rng = np.random.default_rng(0)
    >>> X = rng.standard_normal((40, 1))
    >>> y = 0.5 * X[:, 0] + rng.standard_normal(40)
    >>> model = ClusterRobustOLS().fit(X, y, clusters=np.arange(40) // 4)
    >>> model.std_errors("lcoc").shape
    (1,)
    """

    def __init__(
        self,
        cov_estimators=("lz", "bm", "lcoc"),
        bm_adjust: str = "cr2",
        df_rule: str = DF_NORMAL,
        small_sample_scale: bool = False,
    ):
        self.cov_estimators = cov_estimators
        self.bm_adjust = bm_adjust
        self.df_rule = df_rule
        self.small_sample_scale = small_sample_scale

    def fit(self, X, y, *, controls=None, clusters=None):
        """Fit on focal regressors X, with optional controls and clusters.

        With ``clusters=None`` every observation is its own cluster, which
        makes the estimators collapse to their heteroskedasticity-robust
        counterparts (HC0 / HC2-HC3 / leave-one-out crossfit).
        """
        y = check_vector(y, "y")
        X = check_matrix(X, "X", n_rows=y.shape[0])
        unknown = set(self.cov_estimators) - set(_ESTIMATOR_FUNCS)
        if unknown:
            raise ValueError(f"unknown covariance estimators: {sorted(unknown)}")
        partition = (
            ClusterPartition(list(clusters))
            if clusters is not None
            else ClusterPartition.singletons(y.shape[0])
        )
        problem = RegressionProblem(y, X, controls, partition)
        fit = fit_ols(problem)
        self.problem_ = problem
        self.fit_ = fit
        self.coef_ = fit.beta
        self.control_coef_ = fit.gamma
        self.resid_ = fit.residuals_full
        self.leverage_ = fit.leverage
        self.rank_ = fit.rank
        self.n_features_in_ = X.shape[1]
        self.cov_ = {
            name: _ESTIMATOR_FUNCS[name](fit, problem, self)
            for name in self.cov_estimators
        }
        return self

    def _check_fitted(self):
        if not hasattr(self, "fit_"):
            raise NotFittedError("this ClusterRobustOLS instance is not fitted yet")

    def predict(self, X, controls=None) -> np.ndarray:
        self._check_fitted()
        X = check_matrix(X, "X")
        out = X @ self.coef_
        if self.control_coef_.size:
            if controls is None:
                raise ValueError("model was fit with controls; pass them to predict")
            controls = check_matrix(controls, "controls", n_rows=X.shape[0])
            out = out + controls @ self.control_coef_
        return out

    def std_errors(self, kind: str) -> np.ndarray:
        self._check_fitted()
        return self.cov_[kind].std_errors

    def t_test(
        self, coord: int = 0, null_value: float = 0.0, kind: str = "lcoc"
    ) -> TestResult:
        self._check_fitted()
        return t_test(
            self.cov_[kind],
            self.fit_,
            self.problem_,
            coord=coord,
            null_value=null_value,
            df_rule=self.df_rule,
        )


class WithinTransformer(TransformerMixin, BaseEstimator):
    """Demean columns by group to sweep out group fixed effects.

    ``fit`` learns per-group column means; ``transform`` subtracts them.
    Groups are per-row metadata, passed to both calls:

    >>> t = WithinTransformer()
    >>> Xw = t.fit_transform(X, groups=state_labels)
    """

    def fit(self, X, y=None, *, groups):
        X = check_matrix(X, "X")
        groups = list(groups)
        if len(groups) != X.shape[0]:
            raise ValueError("groups must have one label per row")
        means = {}
        for lab in sorted(set(groups)):
            idx = [i for i, g in enumerate(groups) if g == lab]
            means[lab] = X[idx].mean(axis=0)
        self.group_means_ = means
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, *, groups) -> np.ndarray:
        if not hasattr(self, "group_means_"):
            raise NotFittedError("this WithinTransformer instance is not fitted yet")
        X = check_matrix(X, "X")
        groups = list(groups)
        if len(groups) != X.shape[0]:
            raise ValueError("groups must have one label per row")
        out = np.empty_like(X)
        for i, lab in enumerate(groups):
            if lab not in self.group_means_:
                raise ValueError(f"unseen group label in transform: {lab!r}")
            out[i] = X[i] - self.group_means_[lab]
        return out

    def fit_transform(self, X, y=None, *, groups) -> np.ndarray:
        return self.fit(X, groups=groups).transform(X, groups=groups)
