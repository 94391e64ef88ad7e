"""Dense least-squares core: rank-revealing fit, partialling, block algebra.

The fit keeps the column-pivoted QR factorization of the assembled design
``(W, X)``. Every downstream quantity -- leverage, hat and annihilator
blocks, leave-cluster-out downdates -- is derived from that factorization;
the explicit inverse of the Gram matrix is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .data import RegressionProblem
from .exceptions import RankDeficientError
from .validation import check_finite

__all__ = [
    "OlsFit",
    "fit_ols",
    "annihilator_block",
    "hat_block",
    "leverage_histogram",
]


@dataclass(frozen=True, eq=False)
class OlsFit:
    """Result of a full-rank OLS fit.

    Attributes
    ----------
    beta : array, shape (r,)
        Coefficients on the focal regressors X.
    gamma : array, shape (k,)
        Coefficients on the controls W.
    residuals_full : array, shape (n,)
        Residuals of the full regression of y on (W, X).
    vhat : array, shape (n, r)
        Focal regressors with the controls partialled out, M_W X.
    y_partialled : array, shape (n,)
        Response with the controls partialled out, M_W y.
    gamma_gram : array, shape (r, r)
        vhat' vhat / n.
    leverage : array, shape (n,)
        Diagonal of the hat matrix of the full design.
    rank : int
        Numerical rank detected by the pivoted factorization (= r + k).
    """

    beta: np.ndarray
    gamma: np.ndarray
    residuals_full: np.ndarray
    vhat: np.ndarray
    y_partialled: np.ndarray
    gamma_gram: np.ndarray
    leverage: np.ndarray
    rank: int
    q: np.ndarray
    r_factor: np.ndarray
    perm: np.ndarray

    @property
    def coef_full(self) -> np.ndarray:
        """Stacked coefficient vector in design order (gamma, beta)."""
        return np.concatenate([self.gamma, self.beta])

    def gram_inverse_apply(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (design' design) z = rhs via two triangular solves."""
        rhs = np.asarray(rhs, dtype=float)
        one_d = rhs.ndim == 1
        b = rhs[:, None] if one_d else rhs
        t = sla.solve_triangular(self.r_factor, b[self.perm], trans="T", lower=False)
        s = sla.solve_triangular(self.r_factor, t, lower=False)
        out = np.empty_like(b)
        out[self.perm] = s
        return out[:, 0] if one_d else out

    def design_condition(self) -> float:
        """Condition estimate from the pivoted R diagonal."""
        d = np.abs(np.diag(self.r_factor))
        return float(d[0] / d[-1]) if d[-1] > 0 else np.inf


def _rank_tolerance(diag_r: np.ndarray, n: int, p: int) -> float:
    # max(n, p) * eps * largest column norm; |R[0,0]| is the largest
    # column norm delivered by the pivoting.
    return max(n, p) * np.finfo(float).eps * (diag_r[0] if diag_r.size else 0.0)


def fit_ols(problem: RegressionProblem) -> OlsFit:
    """Fit y on the assembled design (W, X) by column-pivoted QR.

    Raises
    ------
    RankDeficientError
        If the numerical rank of the design is below r + k.
    NonFiniteError
        If the inputs contain NaN/Inf (checked at problem construction;
        re-checked here for problems built from raw arrays).
    """
    n, p = problem.n_obs, problem.n_params
    design = problem.design()
    check_finite(design, "design")
    check_finite(problem.y, "y")

    q, r_factor, piv = sla.qr(design, mode="economic", pivoting=True)
    diag_r = np.abs(np.diag(r_factor))
    tol = _rank_tolerance(diag_r, n, p)
    rank = int(np.sum(diag_r > tol))
    if rank < p:
        raise RankDeficientError(rank, p)

    qty = q.T @ problem.y
    coef = np.empty(p)
    coef[piv] = sla.solve_triangular(r_factor, qty, lower=False)
    residuals = problem.y - design @ coef
    leverage = np.einsum("ij,ij->i", q, q)

    k = problem.n_controls
    if k:
        qw, _ = sla.qr(problem.W, mode="economic")
        vhat = problem.X - qw @ (qw.T @ problem.X)
        y_partialled = problem.y - qw @ (qw.T @ problem.y)
    else:
        vhat = problem.X.copy()
        y_partialled = problem.y.copy()
    gamma_gram = vhat.T @ vhat / n

    return OlsFit(
        beta=coef[k:],
        gamma=coef[:k],
        residuals_full=residuals,
        vhat=vhat,
        y_partialled=y_partialled,
        gamma_gram=gamma_gram,
        leverage=leverage,
        rank=rank,
        q=q,
        r_factor=r_factor,
        perm=np.asarray(piv, dtype=np.intp),
    )


def hat_block(fit: OlsFit, problem: RegressionProblem, g, h) -> np.ndarray:
    """Hat-matrix block H[g, h] = X_g (X'X)^{-1} X_h' of the full design.

    With the thin factorization design = Q R this is Q_g Q_h'. The diagonal
    block H[g, g] is symmetric PSD with eigenvalues in [0, 1].
    """
    gi = problem.partition.indices(g)
    hi = problem.partition.indices(h)
    block = fit.q[gi] @ fit.q[hi].T
    if g == h:
        block = 0.5 * (block + block.T)
    return block


def annihilator_block(fit: OlsFit, problem: RegressionProblem, g) -> np.ndarray:
    """Annihilator block M[g, g] = I - H[g, g]; symmetric, eigenvalues in [0, 1]."""
    gi = problem.partition.indices(g)
    qg = fit.q[gi]
    block = np.eye(len(gi)) - qg @ qg.T
    return 0.5 * (block + block.T)


def leverage_histogram(fit: OlsFit, bins: int):
    """Histogram of leverage values over [0, max leverage], left-closed bins.

    Returns a list of ``((lo, hi), count)`` pairs whose counts sum to n.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    top = float(np.max(fit.leverage))
    if top <= 0.0:
        top = 1.0
    edges = np.linspace(0.0, top, bins + 1)
    counts, _ = np.histogram(fit.leverage, bins=edges)
    return [
        ((float(edges[i]), float(edges[i + 1])), int(counts[i])) for i in range(bins)
    ]
