"""Cluster-robust covariance estimators for the focal OLS coefficients.

Three feasible estimators are provided, all sandwiches around the
partialled focal regressors vhat:

* ``lz_cov``   -- Liang-Zeger plug-in: per-cluster meat block uhat_g uhat_g'.
* ``bm_cov``   -- Bell-McCaffrey bias-reduced linearization: residuals are
  premultiplied by the inverse symmetric square root (CR2) or the inverse
  (CR3) of the cluster's annihilator block before entering the sandwich.
* ``lcoc_cov`` -- leave-cluster-out crossfit: pairs the level response with
  residuals from a fit that excludes the observation's whole cluster, which
  makes the meat conditionally unbiased for the infeasible target. With
  singleton clusters it reduces to the leave-one-out crossfit estimator.

``sigma_oracle`` computes the infeasible meat from a known error covariance
and is the ground truth for simulations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .data import RegressionProblem
from .exceptions import (
    ClusterNotLeaveOutIdentifiedError,
    NonPositiveVarianceError,
)
from .ols import OlsFit
from .omega import PSD_TOL, OmegaSpec

__all__ = [
    "CovEstimate",
    "TestResult",
    "lz_cov",
    "bm_cov",
    "lcoc_cov",
    "sigma_oracle",
    "beta_cov_from_meat",
    "leave_cluster_out_residuals",
    "leave_cluster_out_beta",
    "t_test",
    "DF_NORMAL",
    "DF_G1",
]

DF_NORMAL = "normal"
DF_G1 = "g-1"


@dataclass(frozen=True, eq=False)
class CovEstimate:
    """An r x r covariance estimate for the focal coefficients.

    ``matrix`` is the covariance of beta-hat. ``meat`` is the middle term on
    the 1/n scale (the estimate of the infeasible target returned by
    ``sigma_oracle``); for kind ``ORACLE`` the two coincide by convention
    since the oracle is defined on the meat scale.
    """

    matrix: np.ndarray
    kind: str
    meat: np.ndarray
    min_eigenvalue: float
    is_psd: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.matrix), 0.0, None))


@dataclass(frozen=True)
class TestResult:
    estimate: float
    std_error: float
    statistic: float
    p_value: float
    df_rule: str


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _finish(matrix: np.ndarray, kind: str, meat: np.ndarray, diagnostics: dict) -> CovEstimate:
    matrix = _symmetrize(matrix)
    min_eig = float(np.linalg.eigvalsh(matrix)[0]) if matrix.size else 0.0
    return CovEstimate(
        matrix=matrix,
        kind=kind,
        meat=_symmetrize(meat),
        min_eigenvalue=min_eig,
        is_psd=bool(min_eig >= -PSD_TOL),
        diagnostics=diagnostics,
    )


def _bread(fit: OlsFit) -> np.ndarray:
    """(vhat' vhat)^{-1}; r x r, so the explicit inverse is cheap and safe."""
    n = fit.vhat.shape[0]
    return _symmetrize(np.linalg.inv(n * fit.gamma_gram))


def _annihilator_eigh(fit: OlsFit, problem: RegressionProblem, label):
    """Eigendecomposition of the annihilator block M[g, g] for one cluster."""
    idx = problem.partition.indices(label)
    qg = fit.q[idx]
    mgg = np.eye(len(idx)) - qg @ qg.T
    w, v = np.linalg.eigh(_symmetrize(mgg))
    return idx, w, v


def _require_identified(label, w: np.ndarray) -> None:
    if w[0] <= PSD_TOL:
        raise ClusterNotLeaveOutIdentifiedError(label, float(w[0]))


def lz_cov(
    fit: OlsFit, problem: RegressionProblem, small_sample: bool = False
) -> CovEstimate:
    """Liang-Zeger plug-in sandwich.

    The raw plug-in carries no small-sample factor. ``small_sample=True``
    applies the conventional G/(G-1) * (n-1)/(n-p) multiplier used by most
    regression software, for comparison only.
    """
    n = problem.n_obs
    uhat = fit.residuals_full
    meat_sum = np.zeros((problem.n_focal, problem.n_focal))
    for lab in problem.partition.labels:
        idx = problem.partition.groups[lab]
        s = fit.vhat[idx].T @ uhat[idx]
        meat_sum += np.outer(s, s)
    if small_sample:
        g = problem.partition.n_clusters
        if g < 2:
            raise ValueError("small-sample factor needs at least two clusters")
        meat_sum *= g / (g - 1) * (n - 1) / (n - problem.n_params)
    bread = _bread(fit)
    return _finish(
        bread @ meat_sum @ bread,
        "LZ",
        meat_sum / n,
        {"design_condition": fit.design_condition()},
    )


def bm_cov(
    fit: OlsFit, problem: RegressionProblem, adjustment: str = "cr2"
) -> CovEstimate:
    """Bell-McCaffrey adjusted sandwich (CR2 by default, CR3 by flag).

    CR2 rescales each cluster's residuals by the inverse symmetric square
    root of the annihilator block; CR3 uses the full inverse. Both require
    every block to be invertible above tolerance.
    """
    adjustment = adjustment.lower()
    if adjustment not in ("cr2", "cr3"):
        raise ValueError(f"adjustment must be 'cr2' or 'cr3', got {adjustment!r}")
    n = problem.n_obs
    uhat = fit.residuals_full
    meat_sum = np.zeros((problem.n_focal, problem.n_focal))
    min_eig = np.inf
    max_cond = 1.0
    for lab in problem.partition.labels:
        idx, w, v = _annihilator_eigh(fit, problem, lab)
        _require_identified(lab, w)
        min_eig = min(min_eig, float(w[0]))
        max_cond = max(max_cond, float(w[-1] / w[0]))
        power = -0.5 if adjustment == "cr2" else -1.0
        adj = v @ ((w**power) * (v.T @ uhat[idx]))
        s = fit.vhat[idx].T @ adj
        meat_sum += np.outer(s, s)
    bread = _bread(fit)
    return _finish(
        bread @ meat_sum @ bread,
        "BM",
        meat_sum / n,
        {
            "adjustment": adjustment,
            "min_annihilator_eigenvalue": min_eig,
            "max_annihilator_condition": max_cond,
            "design_condition": fit.design_condition(),
        },
    )


def leave_cluster_out_residuals(fit: OlsFit, problem: RegressionProblem, label) -> np.ndarray:
    """Residuals at cluster g of the fit that excludes cluster g.

    Computed as M[g, g]^{-1} uhat_g, which equals the from-scratch refit
    residuals whenever the block is invertible (a rank-|g| downdate of the
    normal equations).
    """
    idx, w, v = _annihilator_eigh(fit, problem, label)
    _require_identified(label, w)
    u = fit.residuals_full[idx]
    return v @ ((v.T @ u) / w)


def leave_cluster_out_beta(fit: OlsFit, problem: RegressionProblem, label) -> np.ndarray:
    """Full coefficient vector (gamma, beta order) of the fit without cluster g.

    Uses the factorization downdate
    ``coef - (X'X)^{-1} X_g' M[g,g]^{-1} uhat_g``
    rather than refitting; tests verify equality with the explicit refit.
    """
    idx, w, v = _annihilator_eigh(fit, problem, label)
    _require_identified(label, w)
    u = fit.residuals_full[idx]
    lco = v @ ((v.T @ u) / w)
    design_g = np.hstack([problem.W[idx], problem.X[idx]])
    return fit.coef_full - fit.gram_inverse_apply(design_g.T @ lco)


def lcoc_cov(fit: OlsFit, problem: RegressionProblem) -> CovEstimate:
    """Leave-cluster-out crossfit sandwich.

    Per cluster the meat kernel crosses the level response with the
    leave-cluster-out residuals, symmetrized and halved so that summing over
    ordered within-cluster pairs does not double count:

        meat = (1/2n) * sum_g [ (V_g' y_g)(u_{g,-g}' V_g) + transpose ]

    The result is unbiased for the infeasible meat but need not be PSD;
    indefiniteness is reported through ``is_psd``, never clipped.
    """
    n = problem.n_obs
    r = problem.n_focal
    uhat = fit.residuals_full
    meat_sum = np.zeros((r, r))
    min_eig = np.inf
    max_cond = 1.0
    for lab in problem.partition.labels:
        idx, w, v = _annihilator_eigh(fit, problem, lab)
        _require_identified(lab, w)
        min_eig = min(min_eig, float(w[0]))
        max_cond = max(max_cond, float(w[-1] / w[0]))
        lco = v @ ((v.T @ uhat[idx]) / w)
        vg = fit.vhat[idx]
        a = vg.T @ problem.y[idx]
        b = vg.T @ lco
        meat_sum += np.outer(a, b) + np.outer(b, a)
    bread = _bread(fit)
    return _finish(
        bread @ (0.5 * meat_sum) @ bread,
        "LCOC",
        meat_sum / (2 * n),
        {
            "min_annihilator_eigenvalue": min_eig,
            "max_annihilator_condition": max_cond,
            "design_condition": fit.design_condition(),
        },
    )


def sigma_oracle(fit: OlsFit, problem: RegressionProblem, omega: OmegaSpec) -> CovEstimate:
    """Infeasible meat (1/n) sum_g vhat_g' Omega_g vhat_g from a known Omega."""
    omega.validate_for(problem.partition)
    n = problem.n_obs
    r = problem.n_focal
    meat = np.zeros((r, r))
    for lab in problem.partition.labels:
        idx = problem.partition.groups[lab]
        vg = fit.vhat[idx]
        meat += vg.T @ omega.block(lab) @ vg
    meat /= n
    return _finish(meat, "ORACLE", meat, {})


def beta_cov_from_meat(fit: OlsFit, meat: np.ndarray) -> np.ndarray:
    """Coefficient covariance gram^{-1} meat gram^{-1} / n from a 1/n-scale meat."""
    n = fit.vhat.shape[0]
    bread = _bread(fit)
    return _symmetrize(n * bread @ meat @ bread)


def t_test(
    cov: CovEstimate,
    fit: OlsFit,
    problem: RegressionProblem,
    coord: int = 0,
    null_value: float = 0.0,
    df_rule: str = DF_NORMAL,
) -> TestResult:
    """Two-sided t-test of beta[coord] = null_value under the given covariance.

    p-values use the standard normal by default or a Student-t with G - 1
    degrees of freedom when ``df_rule='g-1'``.
    """
    if df_rule not in (DF_NORMAL, DF_G1):
        raise ValueError(f"df_rule must be '{DF_NORMAL}' or '{DF_G1}', got {df_rule!r}")
    var = float(cov.matrix[coord, coord])
    if not var > 0.0:
        raise NonPositiveVarianceError(
            f"estimated variance for coordinate {coord} is {var:.3e}; "
            f"{cov.kind} inference is unusable there"
        )
    se = float(np.sqrt(var))
    stat = (float(fit.beta[coord]) - null_value) / se
    if df_rule == DF_NORMAL:
        p = 2.0 * scipy.stats.norm.sf(abs(stat))
    else:
        g = problem.partition.n_clusters
        if g < 2:
            raise ValueError("G-1 degrees of freedom need at least two clusters")
        p = 2.0 * scipy.stats.t.sf(abs(stat), df=g - 1)
    return TestResult(
        estimate=float(fit.beta[coord]),
        std_error=se,
        statistic=stat,
        p_value=float(p),
        df_rule=df_rule,
    )
