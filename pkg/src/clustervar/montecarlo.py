"""Monte Carlo harness for the clustered, heteroskedastic panel design.

The data generating process draws a panel of N units over T periods:

    y_it = x_it * beta + w_it' gamma_t + e_it,
    e_it = (ar * e_{i,t-1} + innov * u_it) * |x_it|,   e_{i,0} = 0,

with x_it, w_it and u_it iid standard normal and gamma_t uniform on a
configurable range, redrawn per replication by default. Each unit is one
cluster; the design has one focal column plus T * dim_w interaction
columns (the controls are active only in their own period), so the
parameter count is 1 + T * dim_w.

Conditional on the x-path, the errors of a unit are a lower-triangular
linear map L of its iid innovations, so the exact conditional error
covariance is L L' and the infeasible target variance is available per
replication. Replications use independent counter-keyed RNG streams, and
aggregation reduces in replication order, so results are bit-identical for
any worker count.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from . import covariance as cov_mod
from .covariance import DF_G1, DF_NORMAL, beta_cov_from_meat, sigma_oracle, t_test
from .data import ClusterPartition, RegressionProblem
from .exceptions import ClusterNotLeaveOutIdentifiedError, DegenerateDistributionError
from .ols import fit_ols
from .omega import OmegaSpec

__all__ = [
    "McConfig",
    "McSummary",
    "EstimatorSummary",
    "NormalityReport",
    "SimulatedDraw",
    "simulate_dgp",
    "run_experiment",
    "normality_check",
    "resolve_workers",
]

ESTIMATOR_NAMES = ("lz", "bm", "lcoc")

THREADS_ENV_VAR = "CLUSTERVAR_THREADS"


def resolve_workers(workers: int | None = None) -> int:
    """Explicit argument wins, then the CLUSTERVAR_THREADS variable, then 1."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(THREADS_ENV_VAR)
    if env:
        return max(1, int(env))
    return 1


@dataclass(frozen=True)
class McConfig:
    """Configuration of one simulation experiment."""

    n_units: int
    n_periods: int
    dim_w: int
    reps: int
    seed: int
    beta: float = 0.5
    ar_coef: float = 0.8
    innov_coef: float = 0.2
    gamma_range: tuple = (-0.5, 0.5)
    null_value: float = 0.5
    nominal_size: float = 0.05
    estimators: tuple = ESTIMATOR_NAMES
    bm_adjust: str = "cr2"
    df_rule: str = DF_NORMAL
    freeze_gamma: bool = False

    def __post_init__(self):
        if min(self.n_units, self.n_periods, self.reps) < 1 or self.dim_w < 0:
            raise ValueError("n_units, n_periods, reps must be >= 1 and dim_w >= 0")
        if not abs(self.ar_coef) < 1:
            raise ValueError("|ar_coef| must be below 1")
        if not 0 < self.nominal_size < 1:
            raise ValueError("nominal_size must lie in (0, 1)")
        bad = set(self.estimators) - set(ESTIMATOR_NAMES)
        if bad:
            raise ValueError(f"unknown estimators: {sorted(bad)}")
        if self.df_rule not in (DF_NORMAL, DF_G1):
            raise ValueError(f"df_rule must be '{DF_NORMAL}' or '{DF_G1}'")

    @property
    def n_obs(self) -> int:
        return self.n_units * self.n_periods

    @property
    def n_params(self) -> int:
        return 1 + self.n_periods * self.dim_w


@dataclass(frozen=True, eq=False)
class SimulatedDraw:
    """One replication: the problem, the realized errors, and the exact
    conditional error covariance given the x-path."""

    problem: RegressionProblem
    true_errors: np.ndarray
    omega: OmegaSpec


def _rep_rng(seed: int, stream: int) -> np.random.Generator:
    # stream 0 is reserved for the frozen-gamma draw; replication
    # rep_index uses stream rep_index + 1
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


def simulate_dgp(config: McConfig, rep_index: int) -> SimulatedDraw:
    """Draw one replication, deterministic in (config.seed, rep_index)."""
    if rep_index < 0:
        raise ValueError("rep_index must be >= 0")
    n_units, n_periods, dim_w = config.n_units, config.n_periods, config.dim_w
    rng = _rep_rng(config.seed, rep_index + 1)

    x = rng.standard_normal((n_units, n_periods))
    w = rng.standard_normal((n_units, n_periods, dim_w))
    lo, hi = config.gamma_range
    if config.freeze_gamma:
        gamma = _rep_rng(config.seed, 0).uniform(lo, hi, size=(n_periods, dim_w))
        rng.uniform(lo, hi, size=(n_periods, dim_w))  # keep stream positions aligned
    else:
        gamma = rng.uniform(lo, hi, size=(n_periods, dim_w))
    innov = rng.standard_normal((n_units, n_periods))

    ax = np.abs(x)
    eps = np.empty((n_units, n_periods))
    prev = np.zeros(n_units)
    for t in range(n_periods):
        prev = (config.ar_coef * prev + config.innov_coef * innov[:, t]) * ax[:, t]
        eps[:, t] = prev

    y = config.beta * x + np.einsum("itj,tj->it", w, gamma) + eps

    n = config.n_obs
    focal = x.reshape(n, 1)
    controls = np.zeros((n, n_periods * dim_w))
    if dim_w:
        w_flat = w.reshape(n, dim_w)
        periods = np.tile(np.arange(n_periods), n_units)
        rows = np.arange(n)[:, None]
        cols = periods[:, None] * dim_w + np.arange(dim_w)[None, :]
        controls[rows, cols] = w_flat
    assignments = np.repeat(np.arange(n_units), n_periods)
    problem = RegressionProblem(
        y.reshape(n), focal, controls, ClusterPartition(assignments)
    )

    # exact conditional covariance: eps_i = L u_i given the x-path
    blocks = {}
    for i in range(n_units):
        lmat = np.zeros((n_periods, n_periods))
        for t in range(n_periods):
            if t:
                lmat[t, :t] = config.ar_coef * ax[i, t] * lmat[t - 1, :t]
            lmat[t, t] = config.innov_coef * ax[i, t]
        blocks[i] = lmat @ lmat.T
    return SimulatedDraw(
        problem=problem,
        true_errors=eps.reshape(n),
        omega=OmegaSpec(blocks),
    )


@dataclass(frozen=True)
class EstimatorSummary:
    """Error moments of one variance estimator across replications.

    bias/variance/mse are moments of the per-replication error
    (estimate - true variance); mse = variance + bias^2 up to float
    accumulation.
    """

    bias: float
    variance: float
    mse: float
    rejection_rate: float
    rep_count: int
    failures: tuple = ()
    unusable_tests: int = 0


@dataclass(frozen=True)
class McSummary:
    per_estimator: dict
    true_variance: float
    rep_count: int
    elapsed: float = field(compare=False, default=0.0)
    records: tuple = ()


def _one_rep(config: McConfig, rep_index: int) -> dict:
    draw = simulate_dgp(config, rep_index)
    problem = draw.problem
    fit = fit_ols(problem)
    oracle = sigma_oracle(fit, problem, draw.omega)
    true_var = float(beta_cov_from_meat(fit, oracle.meat)[0, 0])
    out = {"true_var": true_var, "estimates": {}, "failures": {}}
    for name in config.estimators:
        try:
            if name == "lz":
                est = cov_mod.lz_cov(fit, problem)
            elif name == "bm":
                est = cov_mod.bm_cov(fit, problem, adjustment=config.bm_adjust)
            else:
                est = cov_mod.lcoc_cov(fit, problem)
            var_hat = float(est.matrix[0, 0])
            if var_hat > 0:
                res = t_test(
                    est, fit, problem, 0, config.null_value, df_rule=config.df_rule
                )
                reject = res.p_value < config.nominal_size
            else:
                # indefinite LCOC draw: the variance estimate still enters the
                # error moments, but the t-test is unusable and is tallied
                reject = None
            out["estimates"][name] = (var_hat, reject)
        except ClusterNotLeaveOutIdentifiedError as exc:
            out["failures"][name] = str(exc.label)
    return out


def run_experiment(
    config: McConfig, workers: int | None = None, keep_records: bool = False
) -> McSummary:
    """Run the full experiment and summarize per-estimator error moments.

    Results are bit-identical for a fixed seed regardless of the worker
    count; replication records are reduced in replication order. With
    ``keep_records=True`` the per-replication records (true variance and
    per-estimator variance estimate / rejection flag) are attached to the
    summary for downstream statistical tests.
    """
    workers = resolve_workers(workers)
    start = time.perf_counter()
    if workers == 1:
        records = [_one_rep(config, r) for r in range(config.reps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda r: _one_rep(config, r), range(config.reps)))

    true_vars = np.array([rec["true_var"] for rec in records])
    per_estimator = {}
    for name in config.estimators:
        errors = []
        rejects = []
        failures = []
        unusable = 0
        for rep_index, rec in enumerate(records):
            if name in rec["failures"]:
                failures.append((rep_index, rec["failures"][name]))
                continue
            var_hat, reject = rec["estimates"][name]
            errors.append(var_hat - rec["true_var"])
            if reject is None:
                unusable += 1
            else:
                rejects.append(reject)
        err = np.asarray(errors)
        bias = float(np.mean(err)) if err.size else float("nan")
        variance = float(np.var(err)) if err.size else float("nan")
        mse = float(np.mean(err**2)) if err.size else float("nan")
        per_estimator[name] = EstimatorSummary(
            bias=bias,
            variance=variance,
            mse=mse,
            rejection_rate=float(np.mean(rejects)) if rejects else float("nan"),
            rep_count=len(errors),
            failures=tuple(failures),
            unusable_tests=unusable,
        )
    return McSummary(
        per_estimator=per_estimator,
        true_variance=float(np.mean(true_vars)),
        rep_count=config.reps,
        elapsed=time.perf_counter() - start,
        records=tuple(
            (rec["true_var"], rec["estimates"], rec["failures"]) for rec in records
        )
        if keep_records
        else (),
    )


@dataclass(frozen=True)
class NormalityReport:
    coverage: float
    ks_distance: float
    rep_count: int


def normality_check(
    config: McConfig, coord: int = 0, workers: int | None = None
) -> NormalityReport:
    """Coverage and Kolmogorov-Smirnov distance of oracle-standardized stats.

    Per replication the statistic is the coord entry of
    Sigma^{-1/2} sqrt(n) Gram (beta_hat - beta), which is standard normal
    when the estimator is well behaved. Returns the empirical two-sided 95%
    coverage and the KS distance to the standard normal.
    """
    workers = resolve_workers(workers)

    def one(rep_index: int) -> float:
        draw = simulate_dgp(config, rep_index)
        fit = fit_ols(draw.problem)
        oracle = sigma_oracle(fit, draw.problem, draw.omega)
        w, v = np.linalg.eigh(oracle.meat)
        if w[0] <= 1e-14:
            raise DegenerateDistributionError(
                "oracle meat is singular; standardized statistic undefined"
            )
        isq = v @ ((w**-0.5)[:, None] * v.T)
        n = draw.problem.n_obs
        dev = np.sqrt(n) * fit.gamma_gram @ (fit.beta - config.beta)
        return float((isq @ dev)[coord])

    if workers == 1:
        stats = [one(r) for r in range(config.reps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(one, range(config.reps)))
    stats = np.asarray(stats)
    if float(np.std(stats)) == 0.0:
        raise DegenerateDistributionError("standardized statistics are constant")
    z975 = scipy.stats.norm.ppf(0.975)
    coverage = float(np.mean(np.abs(stats) <= z975))
    ks = float(scipy.stats.kstest(stats, "norm").statistic)
    return NormalityReport(coverage=coverage, ks_distance=ks, rep_count=config.reps)
