"""Command line front end.

Four subcommands: ``fit`` (estimate and report standard errors), ``mc``
(run the simulation harness), ``bias`` (exact plug-in bias audit for a
parametric error covariance), and ``leverage`` (leverage summary and
histogram). Reports are JSON envelopes, printed to stdout or written
atomically with ``--out``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import sys
import warnings

import click
import numpy as np

from . import __version__
from . import covariance as cov_mod
from .bias import bias_report
from .covariance import DF_G1, DF_NORMAL, t_test
from .data import RegressionProblem
from .exceptions import DataError, NumericalError
from .io import (
    DatasetSpec,
    DroppedColumnWarning,
    LoadedDataset,
    load_dataset,
    render_report,
    within_transform,
    write_report,
    write_text_atomic,
)
from .montecarlo import McConfig, run_experiment
from .ols import annihilator_block, fit_ols, leverage_histogram
from .omega import OmegaSpec

VERSION_STRING = f"clustervar {__version__}"

# annihilator blocks above the hard identification tolerance but below this
# are flagged in reports: leave-out estimators are unstable there
NEAR_SINGULAR_TOL = 1e-6


def _comma_list(value: str | None) -> tuple:
    if not value:
        return ()
    return tuple(name.strip() for name in value.split(",") if name.strip())


def _dataset_options(func):
    options = [
        click.option("--data", "data_path", required=True, help="CSV file path."),
        click.option("--y", "y_col", required=True, help="Response column."),
        click.option("--x", "x_cols", required=True, help="Focal columns, comma separated."),
        click.option("--controls", "w_cols", default="", help="Control columns, comma separated."),
        click.option("--cluster", "cluster_col", required=True, help="Cluster label column."),
        click.option("--absorb", "absorb_col", default=None, help="Fixed-effect column to sweep out."),
        click.option("--interact-time", "interact_time_col", default=None,
                     help="Expand controls into per-period columns of this column."),
    ]
    for opt in reversed(options):
        func = opt(func)
    return func


def _build_spec(data_path, y_col, x_cols, w_cols, cluster_col, absorb_col, interact_time_col) -> DatasetSpec:
    try:
        return DatasetSpec(
            path=data_path,
            y_col=y_col,
            x_cols=_comma_list(x_cols),
            w_cols=_comma_list(w_cols),
            cluster_col=cluster_col,
            absorb_col=absorb_col,
            interact_time_col=interact_time_col,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


def _load(spec: DatasetSpec, captured: list):
    """Load the dataset and apply the within-transformation if requested."""
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            loaded = load_dataset(spec)
            if spec.absorb_col is not None:
                problem = within_transform(
                    loaded.problem,
                    loaded.absorb,
                    x_names=loaded.x_names,
                    w_names=loaded.w_names,
                )
                dropped = {
                    (w.message.role, w.message.index)
                    for w in caught
                    if isinstance(w.message, DroppedColumnWarning)
                }
                loaded = LoadedDataset(
                    problem=problem,
                    x_names=tuple(
                        n for j, n in enumerate(loaded.x_names) if ("x", j) not in dropped
                    ),
                    w_names=tuple(
                        n for j, n in enumerate(loaded.w_names) if ("w", j) not in dropped
                    ),
                    absorb=loaded.absorb,
                )
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    for item in caught:
        captured.append({"type": type(item.message).__name__, "message": str(item.message)})
    return loaded


def _emit(envelope: dict, out_path: str | None) -> None:
    if out_path:
        write_report(out_path, envelope)
    else:
        click.echo(render_report(envelope), nl=False)


@click.group()
@click.version_option(version=__version__, prog_name="clustervar")
def cli():
    """Cluster-robust covariance estimation for OLS with many regressors."""


@cli.command("fit")
@_dataset_options
@click.option("--estimator", "estimators", default="lz,bm,lcoc",
              help="Estimators to compute: any of lz, bm, lcoc (comma separated).")
@click.option("--bm-adjust", type=click.Choice(["cr2", "cr3"]), default="cr2")
@click.option("--df", "df_rule", type=click.Choice([DF_NORMAL, DF_G1]), default=None,
              help="Degrees-of-freedom rule for p-values; both are reported when omitted.")
@click.option("--bins", type=int, default=20, help="Leverage histogram bins.")
@click.option("--out", "out_path", default=None, help="Write the JSON report here.")
def cmd_fit(data_path, y_col, x_cols, w_cols, cluster_col, absorb_col,
            interact_time_col, estimators, bm_adjust, df_rule, bins, out_path):
    """Fit OLS and report cluster-robust standard errors."""
    spec = _build_spec(data_path, y_col, x_cols, w_cols, cluster_col,
                       absorb_col, interact_time_col)
    names = _comma_list(estimators)
    unknown = set(names) - {"lz", "bm", "lcoc"}
    if not names or unknown:
        raise click.UsageError(f"--estimator must name lz, bm and/or lcoc, got {estimators!r}")
    captured: list = []
    loaded = _load(spec, captured)
    problem = loaded.problem
    fit = fit_ols(problem)

    if {"bm", "lcoc"} & set(names):
        for lab in problem.partition.labels:
            low = float(np.linalg.eigvalsh(annihilator_block(fit, problem, lab))[0])
            if low <= NEAR_SINGULAR_TOL:
                captured.append({
                    "type": "NearSingularCluster",
                    "message": f"cluster {lab!r}: min annihilator eigenvalue {low:.3e}",
                })

    estimator_results = {}
    for name in names:
        if name == "lz":
            est = cov_mod.lz_cov(fit, problem)
        elif name == "bm":
            est = cov_mod.bm_cov(fit, problem, adjustment=bm_adjust)
        else:
            est = cov_mod.lcoc_cov(fit, problem)
        if name == "lcoc" and not est.is_psd:
            captured.append({
                "type": "NonPsdEstimate",
                "message": f"LCOC covariance is indefinite (min eigenvalue {est.min_eigenvalue:.3e})",
            })
        rules = [df_rule] if df_rule else [DF_NORMAL, DF_G1]
        p_values = {}
        for rule in rules:
            per_coord = {}
            for j, col in enumerate(loaded.x_names):
                if est.matrix[j, j] > 0:
                    per_coord[col] = t_test(est, fit, problem, j, 0.0, df_rule=rule).p_value
                else:
                    per_coord[col] = None
                    captured.append({
                        "type": "NonPositiveVariance",
                        "message": f"{name} variance for {col} is non-positive; no p-value",
                    })
            p_values[rule] = per_coord
        estimator_results[name] = {
            "std_errors": dict(zip(loaded.x_names, est.std_errors)),
            "p_values": p_values,
            "min_eigenvalue": est.min_eigenvalue,
            "is_psd": est.is_psd,
            "diagnostics": est.diagnostics,
        }

    hist = leverage_histogram(fit, bins)
    envelope = {
        "command": "fit",
        "version": VERSION_STRING,
        "seed": None,
        "config": {
            "data": spec.path, "y": spec.y_col, "x": list(spec.x_cols),
            "controls": list(spec.w_cols), "cluster": spec.cluster_col,
            "absorb": spec.absorb_col, "interact_time": spec.interact_time_col,
            "estimator": list(names), "bm_adjust": bm_adjust, "df": df_rule,
        },
        "results": {
            "n_obs": problem.n_obs,
            "n_clusters": problem.partition.n_clusters,
            "rank": fit.rank,
            "p_over_n": fit.rank / problem.n_obs,
            "coefficients": {
                "focal": dict(zip(loaded.x_names, fit.beta)),
                "controls": dict(zip(loaded.w_names, fit.gamma)),
            },
            "estimators": estimator_results,
            "leverage": {
                "mean": float(np.mean(fit.leverage)),
                "max": float(np.max(fit.leverage)),
                "histogram": [[lo, hi, count] for (lo, hi), count in hist],
            },
        },
        "warnings": captured,
    }
    _emit(envelope, out_path)


@cli.command("mc")
@click.option("--reps", required=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--n-units", type=int, default=50)
@click.option("--t", "n_periods", type=int, default=20)
@click.option("--dim-w", type=int, default=9)
@click.option("--beta", type=float, default=0.5)
@click.option("--out", "out_path", default=None)
def cmd_mc(reps, seed, n_units, n_periods, dim_w, beta, out_path):
    """Run the Monte Carlo harness and report error moments per estimator."""
    try:
        config = McConfig(
            n_units=n_units, n_periods=n_periods, dim_w=dim_w,
            reps=reps, seed=seed, beta=beta,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    summary = run_experiment(config)
    captured = []
    per_estimator = {}
    for name, est in summary.per_estimator.items():
        per_estimator[name] = {
            "bias": est.bias,
            "variance": est.variance,
            "mse": est.mse,
            "rejection_rate": est.rejection_rate,
            "rep_count": est.rep_count,
            "unusable_tests": est.unusable_tests,
            "failed_reps": [[rep, label] for rep, label in est.failures],
        }
        for rep, label in est.failures:
            captured.append({
                "type": "DroppedReplication",
                "message": f"{name}: replication {rep} dropped, cluster {label} not leave-out identified",
            })
        if est.unusable_tests:
            captured.append({
                "type": "UnusableTests",
                "message": f"{name}: {est.unusable_tests} replication(s) had non-positive variance; no t-test",
            })
    envelope = {
        "command": "mc",
        "version": VERSION_STRING,
        "seed": seed,
        "config": {
            "reps": reps, "n_units": n_units, "t": n_periods, "dim_w": dim_w,
            "beta": beta, "ar_coef": config.ar_coef, "innov_coef": config.innov_coef,
            "gamma_range": list(config.gamma_range), "null_value": config.null_value,
            "nominal_size": config.nominal_size, "estimators": list(config.estimators),
        },
        "results": {
            "true_variance": summary.true_variance,
            "rep_count": summary.rep_count,
            "estimators": per_estimator,
        },
        "warnings": captured,
    }
    _emit(envelope, out_path)


def _parse_omega(problem: RegressionProblem, text: str) -> OmegaSpec:
    try:
        family, _, args = text.partition(":")
        values = [float(v) for v in args.split(",")] if args else []
        if family == "iid" and len(values) == 1:
            return OmegaSpec.scaled_identity(problem.partition, values[0])
        if family == "equi" and len(values) == 2:
            return OmegaSpec.equicorrelated(problem.partition, *values)
        if family == "ar1" and len(values) == 2:
            return OmegaSpec.ar1(problem.partition, *values)
    except ValueError as exc:
        raise click.UsageError(f"bad --omega value {text!r}: {exc}") from None
    raise click.UsageError(
        f"--omega must be iid:s2, equi:s2,rho or ar1:s2,rho; got {text!r}"
    )


def _parse_direction(problem: RegressionProblem, text: str) -> np.ndarray:
    kind, _, arg = text.partition(":")
    if kind != "coord":
        raise click.UsageError(f"--direction must be coord:INDEX, got {text!r}")
    try:
        coord = int(arg)
    except ValueError:
        raise click.UsageError(f"--direction must be coord:INDEX, got {text!r}") from None
    if not 0 <= coord < problem.n_focal:
        raise click.UsageError(
            f"direction coordinate {coord} out of range for {problem.n_focal} focal columns"
        )
    w = np.zeros(problem.n_params)
    w[problem.n_controls + coord] = 1.0
    return w


@cli.command("bias")
@_dataset_options
@click.option("--omega", "omega_text", required=True,
              help="Error covariance family: iid:s2 | equi:s2,rho | ar1:s2,rho.")
@click.option("--direction", "direction_text", default="coord:0",
              help="Direction for the proportionate bias, coord:INDEX over focal columns.")
@click.option("--out", "out_path", default=None)
def cmd_bias(data_path, y_col, x_cols, w_cols, cluster_col, absorb_col,
             interact_time_col, omega_text, direction_text, out_path):
    """Audit the exact finite-sample bias of the plug-in estimator."""
    spec = _build_spec(data_path, y_col, x_cols, w_cols, cluster_col,
                       absorb_col, interact_time_col)
    captured: list = []
    loaded = _load(spec, captured)
    problem = loaded.problem
    fit = fit_ols(problem)
    omega = _parse_omega(problem, omega_text)
    w = _parse_direction(problem, direction_text)
    report = bias_report(fit, problem, omega, w)
    per_cluster = {}
    for lab in problem.partition.labels:
        chain = report.gershgorin[lab]
        per_cluster[str(lab)] = {
            "bias_matrix": report.per_cluster_bias[lab].tolist(),
            "definiteness": report.definiteness[lab],
            "gershgorin": {
                "weyl_upper": chain.weyl_upper,
                "cross_gershgorin_lower": chain.cross_gershgorin_lower,
                "hat_gershgorin_upper": chain.hat_gershgorin_upper,
                "omega_max_eigenvalue": chain.omega_max_eigenvalue,
                "product_upper": chain.product_upper,
                "chain_upper": chain.chain_upper,
            },
        }
    envelope = {
        "command": "bias",
        "version": VERSION_STRING,
        "seed": None,
        "config": {
            "data": spec.path, "y": spec.y_col, "x": list(spec.x_cols),
            "controls": list(spec.w_cols), "cluster": spec.cluster_col,
            "absorb": spec.absorb_col, "interact_time": spec.interact_time_col,
            "omega": omega_text, "direction": direction_text,
        },
        "results": {
            "n_obs": problem.n_obs,
            "rank": fit.rank,
            "p_over_n": fit.rank / problem.n_obs,
            "proportionate_bias": report.pb,
            "lower_bound": report.lower_bound,
            "upper_bound": report.upper_bound,
            "per_cluster": per_cluster,
        },
        "warnings": captured,
    }
    _emit(envelope, out_path)


@cli.command("leverage")
@_dataset_options
@click.option("--bins", type=int, default=30)
@click.option("--hist-csv", "hist_csv", default=None,
              help="Also write the histogram as lo,hi,count CSV rows for plotting.")
@click.option("--out", "out_path", default=None)
def cmd_leverage(data_path, y_col, x_cols, w_cols, cluster_col, absorb_col,
                 interact_time_col, bins, hist_csv, out_path):
    """Report the leverage distribution of the fitted design."""
    if bins < 1:
        raise click.UsageError("--bins must be >= 1")
    spec = _build_spec(data_path, y_col, x_cols, w_cols, cluster_col,
                       absorb_col, interact_time_col)
    captured: list = []
    loaded = _load(spec, captured)
    problem = loaded.problem
    fit = fit_ols(problem)
    hist = leverage_histogram(fit, bins)
    envelope = {
        "command": "leverage",
        "version": VERSION_STRING,
        "seed": None,
        "config": {
            "data": spec.path, "y": spec.y_col, "x": list(spec.x_cols),
            "controls": list(spec.w_cols), "cluster": spec.cluster_col,
            "absorb": spec.absorb_col, "interact_time": spec.interact_time_col,
            "bins": bins,
        },
        "results": {
            "n_obs": problem.n_obs,
            "rank": fit.rank,
            "p_over_n": fit.rank / problem.n_obs,
            "mean": float(np.mean(fit.leverage)),
            "max": float(np.max(fit.leverage)),
            "histogram": [[lo, hi, count] for (lo, hi), count in hist],
        },
        "warnings": captured,
    }
    if hist_csv:
        rows = "lo,hi,count\n" + "".join(
            f"{lo!r},{hi!r},{count}\n" for (lo, hi), count in hist
        )
        write_text_atomic(hist_csv, rows)
    _emit(envelope, out_path)


def main(argv=None) -> int:
    """Run the CLI, mapping error families to exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except NumericalError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return 3
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
