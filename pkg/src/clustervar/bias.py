"""Exact finite-sample bias of the plug-in cluster covariance.

For a user-supplied error covariance Omega, the per-cluster bias of the
plug-in meat block is

    B_g = H_g Omega H_g' - (H_gg Omega_g + Omega_g H_gg),

assembled blockwise so the n x n Omega is never materialized. The
proportionate bias for a direction w is a ratio of sums of quadratic forms
in the z_g = X_g (X'X)^{-1} w, and is bounded by extreme eigenvalues of
B_g Omega_g^{-1} over clusters. A Weyl/Gershgorin chain gives computable
relaxations of those eigenvalue bounds; every link in the chain weakly
dominates the exact quantity it bounds.

Under homoskedasticity (Omega = sigma^2 I) the bias collapses to
B_g = -sigma^2 H_gg, which is negative semidefinite: the plug-in is biased
downward, and the bounds shrink to zero as the maximum leverage does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import RegressionProblem
from .exceptions import SingularOmegaBlockError, ZeroDenominatorError
from .ols import OlsFit
from .omega import PSD_TOL, OmegaSpec

__all__ = [
    "cluster_bias",
    "proportionate_bias",
    "bias_bounds",
    "gershgorin_chain",
    "bias_report",
    "GershgorinChain",
    "BiasReport",
]

DEFINITENESS_TOL = 1e-10


@dataclass(frozen=True)
class GershgorinChain:
    """Computable relaxations of the eigenvalue bound on one cluster's bias.

    ``weyl_upper`` bounds the top eigenvalue of B_g by splitting it into its
    two Hermitian summands. ``cross_gershgorin_lower`` is a Gershgorin row
    bound from below on the smallest eigenvalue of H_gg Omega_g +
    Omega_g H_gg; ``hat_gershgorin_upper`` bounds the top eigenvalue of
    H_gg from above by its worst Gershgorin row. ``product_upper`` combines
    the hat bound with the top eigenvalue of Omega to dominate the first
    Weyl summand, and ``chain_upper`` is the fully relaxed upper bound on
    the top eigenvalue of B_g.
    """

    weyl_upper: float
    cross_gershgorin_lower: float
    hat_gershgorin_upper: float
    omega_max_eigenvalue: float
    product_upper: float
    chain_upper: float


@dataclass(frozen=True, eq=False)
class BiasReport:
    """Bias audit for one fit, one Omega and one direction."""

    per_cluster_bias: dict
    pb: float
    lower_bound: float
    upper_bound: float
    direction: np.ndarray
    gershgorin: dict
    definiteness: dict


def _omega_core(fit: OlsFit, problem: RegressionProblem, omega: OmegaSpec) -> np.ndarray:
    """Q' blockdiag(Omega) Q, the p x p core of every H_g Omega H_g' block."""
    p = fit.q.shape[1]
    core = np.zeros((p, p))
    for lab in problem.partition.labels:
        idx = problem.partition.groups[lab]
        qg = fit.q[idx]
        core += qg.T @ omega.block(lab) @ qg
    return core


def _bias_block(fit, problem, omega, core, label) -> np.ndarray:
    idx = problem.partition.indices(label)
    qg = fit.q[idx]
    hgg = qg @ qg.T
    og = omega.block(label)
    b = qg @ core @ qg.T - (hgg @ og + og @ hgg)
    return 0.5 * (b + b.T)


def cluster_bias(fit: OlsFit, problem: RegressionProblem, omega: OmegaSpec, label) -> np.ndarray:
    """Exact bias B_g of the plug-in block uhat_g uhat_g' for Omega_g."""
    omega.validate_for(problem.partition)
    core = _omega_core(fit, problem, omega)
    return _bias_block(fit, problem, omega, core, label)


def _directions(fit: OlsFit, problem: RegressionProblem, w: np.ndarray) -> dict:
    """z_g = X_g (X'X)^{-1} w for every cluster, in design (W, X) order."""
    w = np.asarray(w, dtype=float)
    if w.shape != (problem.n_params,):
        raise ValueError(
            f"direction must have length {problem.n_params}, got {w.shape}"
        )
    if not np.any(w):
        raise ValueError("direction w must be nonzero")
    u = fit.gram_inverse_apply(w)
    out = {}
    for lab in problem.partition.labels:
        idx = problem.partition.groups[lab]
        out[lab] = problem.W[idx] @ u[: problem.n_controls] + problem.X[idx] @ u[problem.n_controls:]
    return out


def proportionate_bias(
    fit: OlsFit, problem: RegressionProblem, omega: OmegaSpec, w
) -> float:
    """Bias of the estimated variance of w'coef relative to its true variance.

    Invariant to rescaling of w. Negative values mean the plug-in estimator
    understates the variance in direction w.
    """
    omega.validate_for(problem.partition)
    core = _omega_core(fit, problem, omega)
    z = _directions(fit, problem, np.asarray(w, dtype=float))
    num = 0.0
    den = 0.0
    for lab in problem.partition.labels:
        zg = z[lab]
        num += float(zg @ _bias_block(fit, problem, omega, core, lab) @ zg)
        den += float(zg @ omega.block(lab) @ zg)
    if den <= 0.0:
        raise ZeroDenominatorError(
            "direction is annihilated by the design/error covariance"
        )
    return num / den


def _omega_inv_sqrt(label, block: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(block)
    if w[0] <= PSD_TOL:
        raise SingularOmegaBlockError(label, float(w[0]))
    return v @ ((w**-0.5)[:, None] * v.T)


def bias_bounds(fit: OlsFit, problem: RegressionProblem, omega: OmegaSpec):
    """Extreme eigenvalues of B_g Omega_g^{-1} over all clusters.

    Returns ``(lower, upper)`` such that the proportionate bias of any
    direction lies in [lower, upper]. The eigenvalues are real because the
    product is similar to the symmetric congruence
    Omega_g^{-1/2} B_g Omega_g^{-1/2}, which is how they are computed.
    """
    omega.validate_for(problem.partition)
    core = _omega_core(fit, problem, omega)
    lower = np.inf
    upper = -np.inf
    for lab in problem.partition.labels:
        isq = _omega_inv_sqrt(lab, omega.block(lab))
        b = _bias_block(fit, problem, omega, core, lab)
        eigs = np.linalg.eigvalsh(isq @ b @ isq)
        lower = min(lower, float(eigs[0]))
        upper = max(upper, float(eigs[-1]))
    return lower, upper


def gershgorin_chain(
    fit: OlsFit, problem: RegressionProblem, omega: OmegaSpec, label
) -> GershgorinChain:
    """Weyl/Gershgorin relaxations of the top-eigenvalue bound for one cluster."""
    omega.validate_for(problem.partition)
    idx = problem.partition.indices(label)
    og = omega.block(label)
    if np.linalg.eigvalsh(og)[0] <= PSD_TOL:
        raise SingularOmegaBlockError(label, float(np.linalg.eigvalsh(og)[0]))
    core = _omega_core(fit, problem, omega)
    qg = fit.q[idx]
    hgg = qg @ qg.T
    hgg = 0.5 * (hgg + hgg.T)

    spread = qg @ core @ qg.T
    spread = 0.5 * (spread + spread.T)
    cross = hgg @ og + og @ hgg
    cross = 0.5 * (cross + cross.T)

    weyl_upper = float(np.linalg.eigvalsh(spread)[-1] - np.linalg.eigvalsh(cross)[0])

    abs_cross = np.abs(cross)
    radius = abs_cross.sum(axis=1) - np.abs(np.diag(cross))
    cross_gershgorin_lower = float(np.min(np.diag(cross) - radius))

    abs_hat = np.abs(hgg)
    hat_radius = abs_hat.sum(axis=1) - np.abs(np.diag(hgg))
    hat_gershgorin_upper = float(np.max(np.diag(hgg) + hat_radius))

    omega_max = omega.max_eigenvalue()
    product_upper = hat_gershgorin_upper * omega_max
    return GershgorinChain(
        weyl_upper=weyl_upper,
        cross_gershgorin_lower=cross_gershgorin_lower,
        hat_gershgorin_upper=hat_gershgorin_upper,
        omega_max_eigenvalue=omega_max,
        product_upper=product_upper,
        chain_upper=product_upper - cross_gershgorin_lower,
    )


def _classify(eigs: np.ndarray) -> str:
    lo, hi = float(eigs[0]), float(eigs[-1])
    if lo > DEFINITENESS_TOL:
        return "positive definite"
    if hi < -DEFINITENESS_TOL:
        return "negative definite"
    if lo >= -DEFINITENESS_TOL and hi <= DEFINITENESS_TOL:
        return "zero"
    if lo >= -DEFINITENESS_TOL:
        return "positive semidefinite"
    if hi <= DEFINITENESS_TOL:
        return "negative semidefinite"
    return "indefinite"


def bias_report(
    fit: OlsFit, problem: RegressionProblem, omega: OmegaSpec, w
) -> BiasReport:
    """Full bias audit: per-cluster blocks, bounds and the Gershgorin chain."""
    omega.validate_for(problem.partition)
    core = _omega_core(fit, problem, omega)
    blocks = {}
    definiteness = {}
    chains = {}
    for lab in problem.partition.labels:
        b = _bias_block(fit, problem, omega, core, lab)
        blocks[lab] = b
        definiteness[lab] = _classify(np.linalg.eigvalsh(b))
        chains[lab] = gershgorin_chain(fit, problem, omega, lab)
    lower, upper = bias_bounds(fit, problem, omega)
    pb = proportionate_bias(fit, problem, omega, w)
    return BiasReport(
        per_cluster_bias=blocks,
        pb=pb,
        lower_bound=lower,
        upper_bound=upper,
        direction=np.asarray(w, dtype=float),
        gershgorin=chains,
        definiteness=definiteness,
    )
