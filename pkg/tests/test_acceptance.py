"""Acceptance suite.

Each criterion runs at its stated tolerance and prints one PASS/FAIL line
(visible with ``pytest -v`` through the test names, and with ``-s`` through
the prints). Heavy simulation runs are shared across clauses via
module-scoped fixtures.

Two rejection-rate clauses of the Monte Carlo criterion (test_c4e, test_c4f)
encode the reference experiment's reported size behavior, which this
configuration demonstrably does not produce (the oracle-variance test is
exactly calibrated, the feasible estimators' sampling noise at 50 clusters
is simply too large). They are kept strict and fail honestly rather than
being loosened; see the Monte Carlo notes in the README.
"""

import time

import numpy as np
import pytest
from dataclasses import replace

from clustervar import (
    ClusterPartition,
    McConfig,
    OmegaSpec,
    RegressionProblem,
    bias_bounds,
    bm_cov,
    cluster_bias,
    fit_ols,
    gershgorin_chain,
    hat_block,
    lcoc_cov,
    leave_cluster_out_residuals,
    lz_cov,
    normality_check,
    proportionate_bias,
    run_experiment,
    sigma_oracle,
)
from clustervar.cli import main as cli_main

import oracles


def report(name, ok, detail=""):
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name}: {detail}"


def random_problem(rng):
    # n <= 60, p <= 12, cluster sizes 1..5
    while True:
        n_clusters = int(rng.integers(4, 13))
        sizes = rng.integers(1, 6, size=n_clusters)
        n = int(sizes.sum())
        r = int(rng.integers(1, 4))
        k = int(rng.integers(0, 10 - r))
        if n >= r + k + 4:
            break
    labels = np.repeat(np.arange(n_clusters), sizes)
    rng.shuffle(labels)
    X = rng.standard_normal((n, r))
    W = rng.standard_normal((n, k))
    coef = rng.standard_normal(r + k)
    y = W @ coef[:k] + X @ coef[k:] + rng.standard_normal(n)
    return RegressionProblem(y, X, W, ClusterPartition(labels))


# ---------------------------------------------------------------------------
# 1. exact-identity suite


class TestCriterion1:
    def test_c1a_c1b_woodbury_and_fwl_on_100_problems(self):
        rng = np.random.default_rng(1001)
        start = time.perf_counter()
        worst_lco = 0.0
        worst_fwl = 0.0
        checked = 0
        while checked < 100:
            prob = random_problem(rng)
            if prob.n_obs > 60 or prob.n_obs < prob.n_params + 6:
                continue
            fit = fit_ols(prob)
            design = prob.design()
            vhat = oracles.partialled(prob.X, prob.W)
            beta_fwl = oracles.normal_equations_coef(vhat, prob.y)
            err = np.max(np.abs(fit.beta - beta_fwl)) / max(
                1.0, np.max(np.abs(beta_fwl))
            )
            worst_fwl = max(worst_fwl, err)
            for lab in prob.partition.labels:
                gi = prob.partition.groups[lab]
                coef = oracles.refit_without(design, prob.y, gi)
                expected = prob.y[gi] - design[gi] @ coef
                got = leave_cluster_out_residuals(fit, prob, lab)
                err = np.max(np.abs(got - expected)) / max(
                    1.0, np.max(np.abs(expected))
                )
                worst_lco = max(worst_lco, err)
            checked += 1
        elapsed = time.perf_counter() - start
        report("c1a leave-cluster-out residuals = refit residuals",
               worst_lco < 1e-8, f"worst rel err {worst_lco:.2e}")
        report("c1b FWL full-fit beta = partialled beta",
               worst_fwl < 1e-8, f"worst rel err {worst_fwl:.2e}")
        report("c1 runtime budget", elapsed < 30, f"{elapsed:.1f}s")

    def test_c1c_homoskedastic_bias_closed_form(self):
        rng = np.random.default_rng(1002)
        worst = 0.0
        for _ in range(25):
            prob = random_problem(rng)
            fit = fit_ols(prob)
            sigma2 = float(rng.uniform(0.3, 3.0))
            omega = OmegaSpec.scaled_identity(prob.partition, sigma2)
            for lab in prob.partition.labels:
                got = cluster_bias(fit, prob, omega, lab)
                expected = -sigma2 * hat_block(fit, prob, lab, lab)
                worst = max(worst, np.max(np.abs(got - expected)))
        report("c1c homoskedastic bias B_g = -s2 H_gg", worst < 1e-10,
               f"worst abs err {worst:.2e}")

    def test_c1d_degenerate_singleton_reductions(self):
        rng = np.random.default_rng(1003)
        worst = {"hc0": 0.0, "hc2": 0.0, "hc3": 0.0, "loo": 0.0}
        for _ in range(20):
            n = int(rng.integers(15, 40))
            X = rng.standard_normal((n, 1))
            W = rng.standard_normal((n, int(rng.integers(0, 4))))
            y = rng.standard_normal(n)
            prob = RegressionProblem(y, X, W)
            fit = fit_ols(prob)
            design = prob.design()
            k = prob.n_controls
            for kind, func in (("hc0", lambda: lz_cov(fit, prob)),
                               ("hc2", lambda: bm_cov(fit, prob, "cr2")),
                               ("hc3", lambda: bm_cov(fit, prob, "cr3"))):
                expected = oracles.hc_sandwich(design, y, kind)[k:, k:]
                err = np.max(np.abs(func().matrix - expected)) / max(
                    1.0, np.max(np.abs(expected))
                )
                worst[kind] = max(worst[kind], err)
            loo = oracles.loo_crossfit_scalar(
                fit.vhat[:, 0], y, fit.residuals_full, fit.leverage, n
            )
            err = abs(lcoc_cov(fit, prob).matrix[0, 0] - loo) / max(1.0, abs(loo))
            worst["loo"] = max(worst["loo"], err)
        for kind, label in (("hc0", "LZ = HC0"), ("hc2", "BM(CR2) = HC2"),
                            ("hc3", "BM(CR3) = HC3"),
                            ("loo", "LCOC = leave-one-out crossfit")):
            report(f"c1d {label}", worst[kind] < 1e-10,
                   f"worst rel err {worst[kind]:.2e}")


# ---------------------------------------------------------------------------
# 2. bound containment


def random_omega(rng, partition):
    kind = rng.integers(0, 3)
    sigma2 = float(rng.uniform(0.5, 2.0))
    if kind == 0:
        return OmegaSpec.scaled_identity(partition, sigma2)
    if kind == 1:
        max_size = max(partition.sizes().values())
        lo = -1.0 / max(max_size - 1, 1) + 0.1
        return OmegaSpec.equicorrelated(partition, sigma2, float(rng.uniform(lo, 0.85)))
    return OmegaSpec.ar1(partition, sigma2, float(rng.uniform(-0.85, 0.85)))


class TestCriterion2:
    def test_c2a_c2b_containment_and_gershgorin_dominance(self):
        rng = np.random.default_rng(2001)
        start = time.perf_counter()
        checked = 0
        contained = True
        dominated = True
        while checked < 100:
            prob = random_problem(rng)
            if prob.n_obs > 30:
                continue
            omega = random_omega(rng, prob.partition)
            if min(np.linalg.eigvalsh(b)[0] for b in omega.blocks.values()) <= 1e-8:
                continue
            fit = fit_ols(prob)
            lower, upper = bias_bounds(fit, prob, omega)
            w = rng.standard_normal(prob.n_params)
            pb = proportionate_bias(fit, prob, omega, w)
            contained &= (lower - 1e-8 <= pb <= upper + 1e-8)
            full = np.zeros((prob.n_obs, prob.n_obs))
            for lab, gi in prob.partition.groups.items():
                full[np.ix_(gi, gi)] = omega.block(lab)
            design = prob.design()
            for lab in prob.partition.labels:
                gi = prob.partition.groups[lab]
                chain = gershgorin_chain(fit, prob, omega, lab)
                bg = oracles.cluster_bias_expectation(design, full, gi)
                hgg = oracles.hat_block(design, gi, gi)
                og = omega.block(lab)
                cross = hgg @ og + og @ hgg
                hg = oracles.hat_block(design, gi, np.arange(prob.n_obs))
                spread = hg @ full @ hg.T
                dominated &= chain.weyl_upper >= np.linalg.eigvalsh(bg)[-1] - 1e-8
                dominated &= (chain.cross_gershgorin_lower
                              <= np.linalg.eigvalsh(cross)[0] + 1e-8)
                dominated &= (chain.hat_gershgorin_upper
                              >= np.linalg.eigvalsh(hgg)[-1] - 1e-8)
                dominated &= (chain.product_upper
                              >= np.linalg.eigvalsh(spread)[-1] - 1e-8)
                dominated &= chain.chain_upper >= chain.weyl_upper - 1e-8
            checked += 1
        elapsed = time.perf_counter() - start
        report("c2a proportionate bias within eigenvalue bounds (100 draws)",
               contained)
        report("c2b every Gershgorin/Weyl link dominates its exact value",
               dominated)
        report("c2 runtime budget", elapsed < 60, f"{elapsed:.1f}s")

    def test_c2c_replicated_design_bounds_shrink(self):
        rng = np.random.default_rng(2002)
        base_X = rng.standard_normal((8, 1))
        base_W = np.ones((8, 1))
        worst = []
        for m in range(1, 65):
            X = np.tile(base_X, (m, 1))
            W = np.tile(base_W, (m, 1))
            labels = np.repeat(np.arange(4 * m), 2)
            prob = RegressionProblem(rng.standard_normal(8 * m), X, W,
                                     ClusterPartition(labels))
            fit = fit_ols(prob)
            omega = OmegaSpec.ar1(prob.partition, 1.0, 0.5)
            lower, upper = bias_bounds(fit, prob, omega)
            worst.append(max(abs(lower), abs(upper)))
        monotone = all(b <= a + 1e-6 for a, b in zip(worst, worst[1:]))
        report("c2c replicated-design bounds non-increasing", monotone,
               f"m=1 bound {worst[0]:.3e}, m=64 bound {worst[-1]:.3e}")
        report("c2c bounds approach zero", worst[-1] < worst[0] / 32)


# ---------------------------------------------------------------------------
# 3. LCOC unbiasedness on a fixed design


class TestCriterion3:
    def test_c3_lcoc_mean_matches_oracle_200k_draws(self):
        rng = np.random.default_rng(3001)
        sizes = [5] * 6
        part = ClusterPartition(np.repeat(np.arange(6), sizes[0]))
        n = 30
        X = rng.standard_normal((n, 2))
        W = rng.standard_normal((n, 2))
        theta = np.array([0.3, -0.7, 0.5, 1.1])
        omega = OmegaSpec.ar1(part, 1.0, 0.5)
        chol = {g: np.linalg.cholesky(omega.block(g)) for g in part.labels}
        base = RegressionProblem(np.zeros(n), X, W, part)
        mu = base.design() @ theta
        target = sigma_oracle(fit_ols(base.with_response(mu + 1.0)), base, omega).meat

        draws = 200_000
        start = time.perf_counter()
        acc = np.zeros((2, 2))
        acc2 = np.zeros((2, 2))
        noise = rng.standard_normal((draws, n))
        for d in range(draws):
            u = np.empty(n)
            z = noise[d]
            for g in part.labels:
                gi = part.groups[g]
                u[gi] = chol[g] @ z[gi]
            prob = base.with_response(mu + u)
            meat = lcoc_cov(fit_ols(prob), prob).meat
            acc += meat
            acc2 += meat * meat
        elapsed = time.perf_counter() - start
        mean = acc / draws
        mc_se = np.sqrt((acc2 / draws - mean**2) / draws)
        dev = np.abs(mean - target) / mc_se
        report("c3 LCOC mean within 3 MC-SE of oracle (componentwise)",
               bool(np.all(dev < 3.0)),
               f"max dev {dev.max():.2f} MC-SE over 200k draws ({elapsed:.0f}s)")
        # removing the 1/2 factor doubles the estimator exactly (it is
        # linear in the kernel), so the oracle must flag a 2x expectation
        dev_nohalf = np.abs(2.0 * mean - target) / (2.0 * mc_se)
        report("c3 guard: without the 1/2 factor the oracle detects 2x bias",
               bool(np.all(dev_nohalf > 3.0)),
               f"min dev {dev_nohalf.min():.1f} MC-SE")


# ---------------------------------------------------------------------------
# 4. Monte Carlo desk-scale replication


MC_CONFIG = McConfig(n_units=50, n_periods=20, dim_w=9, reps=500, seed=101)


@pytest.fixture(scope="module")
def mc_records():
    summary = run_experiment(MC_CONFIG, workers=2, keep_records=True)
    errors = {}
    for name in ("lz", "bm", "lcoc"):
        errors[name] = np.array([
            rec[1][name][0] - rec[0] for rec in summary.records if name in rec[1]
        ])
    return summary, errors


def paired_abs_bias_z(d_big, d_small):
    # one-sided: |bias(big)| exceeds |bias(small)|
    n = len(d_big)
    c = np.sign(d_big.mean()) * d_big - np.sign(d_small.mean()) * d_small
    return c.mean() / (c.std(ddof=1) / np.sqrt(n))


def paired_var_z(d_small, d_big):
    # one-sided: var(big) exceeds var(small)
    n = len(d_small)
    q = (d_big - d_big.mean()) ** 2 - (d_small - d_small.mean()) ** 2
    return q.mean() / (q.std(ddof=1) / np.sqrt(n))


class TestCriterion4:
    def test_c4a_lz_bias_negative(self, mc_records):
        _, errors = mc_records
        d = errors["lz"]
        z = d.mean() / (d.std(ddof=1) / np.sqrt(len(d)))
        report("c4a sign(bias_LZ) < 0 at 3 sigma", z < -3.0, f"z = {z:.1f}")

    def test_c4b_lcoc_bias_smallest(self, mc_records):
        _, errors = mc_records
        z_lz = paired_abs_bias_z(errors["lz"], errors["lcoc"])
        z_bm = paired_abs_bias_z(errors["bm"], errors["lcoc"])
        report("c4b |bias_LCOC| smallest at 3 sigma",
               z_lz > 3.0 and z_bm > 3.0,
               f"z vs LZ = {z_lz:.1f}, z vs BM = {z_bm:.1f}")

    def test_c4c_variance_ordering(self, mc_records):
        _, errors = mc_records
        z1 = paired_var_z(errors["lz"], errors["bm"])
        z2 = paired_var_z(errors["bm"], errors["lcoc"])
        report("c4c Var_LZ < Var_BM < Var_LCOC at 3 sigma",
               z1 > 3.0 and z2 > 3.0, f"z(BM>LZ) = {z1:.1f}, z(LCOC>BM) = {z2:.1f}")

    def test_c4d_lz_over_rejects(self, mc_records):
        summary, _ = mc_records
        rate = summary.per_estimator["lz"].rejection_rate
        report("c4d rejection_LZ > 5%", rate > MC_CONFIG.nominal_size,
               f"rate = {rate:.3f}")

    def test_c4e_bm_under_rejects(self, mc_records):
        # Known-red clause: kept strict instead of being loosened. At this
        # configuration the BM estimate is itself noisy enough that its
        # t-test over-rejects; only the infeasible oracle variance is
        # correctly sized (see README Monte Carlo notes).
        summary, _ = mc_records
        rate = summary.per_estimator["bm"].rejection_rate
        report("c4e rejection_BM < 5%", rate < MC_CONFIG.nominal_size,
               f"rate = {rate:.3f}")

    def test_c4f_lcoc_rejection_closest_to_nominal(self, mc_records):
        # Known-red clause, same analysis as test_c4e.
        summary, _ = mc_records
        nominal = MC_CONFIG.nominal_size
        dist = {
            name: abs(summary.per_estimator[name].rejection_rate - nominal)
            for name in ("lz", "bm", "lcoc")
        }
        report("c4f |rejection_LCOC - 5%| smallest",
               dist["lcoc"] <= min(dist["lz"], dist["bm"]),
               f"distances {dist}")


# ---------------------------------------------------------------------------
# 5. normality of oracle-standardized statistics


class TestCriterion5:
    def test_c5_coverage_and_ks(self):
        config = replace(MC_CONFIG, reps=2000, seed=424242)
        start = time.perf_counter()
        result = normality_check(config, workers=2)
        elapsed = time.perf_counter() - start
        ks_crit = 1.358 / np.sqrt(config.reps)
        report("c5 coverage in [0.93, 0.97]",
               0.93 <= result.coverage <= 0.97,
               f"coverage = {result.coverage:.4f} ({elapsed:.0f}s)")
        report("c5 KS distance below 5% critical value",
               result.ks_distance < ks_crit,
               f"KS = {result.ks_distance:.4f}, crit = {ks_crit:.4f}")


# ---------------------------------------------------------------------------
# 6. CLI end to end


FIXTURE_ROWS = (
    "y,x,w,cl\n"
    "4.0,1.0,1.0,a\n"
    "1.5,2.0,1.0,a\n"
    "0.0,1.0,1.0,b\n"
    "0.0,3.0,1.0,b\n"
    "5.0,2.0,1.0,c\n"
    "5.5,4.0,1.0,c\n"
)

# frozen from the explicit-inverse oracles on the fixture above
FIXTURE_BETA = 0.6341463414634154
FIXTURE_GAMMA = 1.292682926829265
FIXTURE_SE = {"lz": 0.5122978863165316, "bm": 0.9122710633751318,
              "lcoc": 1.5879890458960642}


class TestCriterion6:
    def test_c6_fixture_reproduces_frozen_values(self, tmp_path, capsys):
        import json

        path = tmp_path / "fixture.csv"
        path.write_text(FIXTURE_ROWS, encoding="utf-8")
        code = cli_main([
            "fit", "--data", str(path), "--y", "y", "--x", "x",
            "--controls", "w", "--cluster", "cl",
        ])
        out = capsys.readouterr().out
        assert code == 0
        rep = json.loads(out)
        beta = rep["results"]["coefficients"]["focal"]["x"]
        gamma = rep["results"]["coefficients"]["controls"]["w"]
        ok = (abs(beta - FIXTURE_BETA) < 1e-10
              and abs(gamma - FIXTURE_GAMMA) < 1e-10)
        ses = {name: rep["results"]["estimators"][name]["std_errors"]["x"]
               for name in ("lz", "bm", "lcoc")}
        for name, expected in FIXTURE_SE.items():
            ok &= abs(ses[name] - expected) < 1e-10
        report("c6 fixture beta and standard errors match frozen oracles", ok,
               f"beta = {beta:.12f}, ses = {ses}")

    def test_c6_reports_byte_identical_across_runs_and_workers(
        self, tmp_path, monkeypatch
    ):
        path = tmp_path / "fixture.csv"
        path.write_text(FIXTURE_ROWS, encoding="utf-8")
        payloads = []
        for workers in ("1", "8"):
            monkeypatch.setenv("CLUSTERVAR_THREADS", workers)
            for run_index in range(2):
                out = tmp_path / f"fit-{workers}-{run_index}.json"
                assert cli_main([
                    "fit", "--data", str(path), "--y", "y", "--x", "x",
                    "--controls", "w", "--cluster", "cl", "--out", str(out),
                ]) == 0
                payloads.append(out.read_bytes())
        fit_identical = len(set(payloads)) == 1
        payloads = []
        for workers in ("1", "8"):
            monkeypatch.setenv("CLUSTERVAR_THREADS", workers)
            for run_index in range(2):
                out = tmp_path / f"mc-{workers}-{run_index}.json"
                assert cli_main([
                    "mc", "--reps", "10", "--seed", "7", "--n-units", "6",
                    "--t", "4", "--dim-w", "1", "--out", str(out),
                ]) == 0
                payloads.append(out.read_bytes())
        mc_identical = len(set(payloads)) == 1
        report("c6 seeded reports byte-identical across runs and 1 vs 8 workers",
               fit_identical and mc_identical)
