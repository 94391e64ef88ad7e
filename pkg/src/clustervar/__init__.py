"""Cluster-robust covariance estimation for OLS with many regressors.

Provides the Liang-Zeger plug-in, Bell-McCaffrey adjusted (CR2/CR3) and
leave-cluster-out crossfit covariance estimators for the focal block of a
linear regression, exact finite-sample bias audits of the plug-in under a
known error covariance, a reproducible Monte Carlo harness, and a
scikit-learn style estimator surface.
"""

from .bias import (
    BiasReport,
    GershgorinChain,
    bias_bounds,
    bias_report,
    cluster_bias,
    gershgorin_chain,
    proportionate_bias,
)
from .covariance import (
    DF_G1,
    DF_NORMAL,
    CovEstimate,
    TestResult,
    beta_cov_from_meat,
    bm_cov,
    lcoc_cov,
    leave_cluster_out_beta,
    leave_cluster_out_residuals,
    lz_cov,
    sigma_oracle,
    t_test,
)
from .data import ClusterPartition, RegressionProblem
from .estimator import ClusterRobustOLS, WithinTransformer
from .io import DatasetSpec, LoadedDataset, load_csv, load_dataset, within_transform
from .montecarlo import (
    McConfig,
    McSummary,
    NormalityReport,
    SimulatedDraw,
    normality_check,
    run_experiment,
    simulate_dgp,
)
from .ols import OlsFit, annihilator_block, fit_ols, hat_block, leverage_histogram
from .omega import OmegaSpec

__version__ = "0.1.0"

__all__ = [
    "BiasReport",
    "GershgorinChain",
    "bias_bounds",
    "bias_report",
    "cluster_bias",
    "gershgorin_chain",
    "proportionate_bias",
    "DF_G1",
    "DF_NORMAL",
    "CovEstimate",
    "TestResult",
    "beta_cov_from_meat",
    "bm_cov",
    "lcoc_cov",
    "leave_cluster_out_beta",
    "leave_cluster_out_residuals",
    "lz_cov",
    "sigma_oracle",
    "t_test",
    "ClusterPartition",
    "RegressionProblem",
    "ClusterRobustOLS",
    "WithinTransformer",
    "DatasetSpec",
    "LoadedDataset",
    "load_csv",
    "load_dataset",
    "within_transform",
    "McConfig",
    "McSummary",
    "NormalityReport",
    "SimulatedDraw",
    "normality_check",
    "run_experiment",
    "simulate_dgp",
    "OlsFit",
    "annihilator_block",
    "fit_ols",
    "hat_block",
    "leverage_histogram",
    "OmegaSpec",
]
