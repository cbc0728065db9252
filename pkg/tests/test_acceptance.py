"""End-to-end acceptance checks: one pass/fail line per shipped guarantee.

Covered, in order: generator event rates and latent correlation; the
complete-data reduction to an ordinary probit regression; agreement of
every integration branch and stratum-risk formula with large Monte Carlo
oracles; estimator bias, interval coverage, and band coverage under both
sampling designs; size and power of the curve-gap test; and the suite of
exact numerical properties (mixture identity, posterior mass, analytic
score, quadrature stability, thread determinism).

The three coverage/calibration studies each run 100 full-pipeline
replications at N = 10,000 with 100 perturbation draws and take tens of
minutes apiece on a single core; everything else finishes in seconds to
minutes.  Each test aggregates all of its sub-checks and reports every
violation in one assertion message.
"""

import dataclasses

import numpy as np
import statsmodels.api as sm

from vecurves import (
    EstimationOptions,
    Observation,
    Quadrature,
    RiskParams,
    averaged_risk,
    default_profile,
    fit_beta,
    fit_nuisance,
    null_baseline_profile,
    risk_by_stratum,
    risk_design,
    simulate_trial,
    strong_baseline_profile,
)
from vecurves.censnorm import CensoredNormalModel
from vecurves.curves import default_grid
from vecurves.inference import run_ensemble
from vecurves.likelihood import BranchTensors
from vecurves.nuisance import NuisanceFit, invert_to_b_given_s, mixed_b_given_s
from vecurves.simulate import _draw_population, monte_carlo

from . import oracles
from .conftest import complete_dataset, moderate_beta

VE_KINDS = ("marginal", "seropositive", "seronegative")


def test_generator_event_rates_and_latent_correlation():
    problems = []

    placebo, vaccine = [], []
    for rep in range(20):
        data = simulate_trial(default_profile(seed=1000 + rep))
        placebo.append(data.y[data.z == 0].mean())
        vaccine.append(data.y[data.z == 1].mean())
    for label, rates, target in (("placebo", placebo, 0.04),
                                 ("vaccine", vaccine, 0.02)):
        rate = float(np.mean(rates))
        if abs(rate - target) > 0.005:
            problems.append(f"{label} infection rate {rate:.4f} is more than "
                            f"0.005 from {target}")

    x, b_star, _, s_star, _ = _draw_population(
        default_profile(seed=1), np.random.default_rng(7), 400_000)
    for lev in range(1, 5):
        corr = float(np.corrcoef(s_star[x == lev], b_star[x == lev])[0, 1])
        if abs(corr - 0.732) > 0.03:
            problems.append(f"latent corr(S*, B*) at x={lev} is {corr:.3f}, "
                            f"more than 0.03 from 0.732")

    assert not problems, "\n".join(problems)


def test_complete_data_fit_matches_direct_probit_regression():
    data = complete_dataset(6000, seed=2026)
    fit = fit_beta(data, fit_nuisance(data), gtol=1e-8)
    design = risk_design(data.z, data.s, data.b, data.x, data.n_levels)
    oracle = sm.Probit(data.y, design).fit(method="newton", tol=1e-10, disp=0)
    gap = float(np.max(np.abs(fit.params.as_array() - oracle.params)))
    assert gap <= 1e-6, f"max coefficient gap {gap:.2e} > 1e-6"


def _draw_comparison_case(rng, quad):
    """One random model/observation with every compared risk in
    [0.15, 0.95], so a million-draw oracle (relative noise about 2e-4
    at that level) can resolve the 1e-3 tolerance being verified."""
    while True:
        coef_b = np.concatenate([[rng.uniform(1.0, 2.0)],
                                 rng.uniform(-0.4, 0.4, 3)])
        sigma_b = float(rng.uniform(0.5, 1.0))
        coef_s = np.concatenate([[rng.uniform(0.8, 1.8)],
                                 [rng.uniform(0.2, 0.7)],
                                 rng.uniform(-0.3, 0.3, 3)])
        sigma_s = float(rng.uniform(0.5, 1.0))
        beta = RiskParams(
            float(rng.uniform(-0.8, 0.2)), float(rng.uniform(-0.6, 0.0)),
            float(rng.uniform(-0.4, 0.1)), float(rng.uniform(-0.2, 0.2)),
            float(rng.uniform(-0.5, 0.1)), float(rng.uniform(-0.3, 0.3)),
            beta6=tuple(rng.uniform(-0.3, 0.3, 3)),
        )
        nus = NuisanceFit(
            b_given_x=CensoredNormalModel(
                coef=coef_b, sigma=sigma_b, limit=1.0,
                design_labels=("intercept", "x2", "x3", "x4")),
            s_given_b=CensoredNormalModel(
                coef=coef_s, sigma=sigma_s, limit=1.0,
                design_labels=("intercept", "b", "x2", "x3", "x4")),
            weights=None, limit=1.0, n_levels=4,
        )
        z = int(rng.integers(2))
        x = int(rng.integers(1, 5))
        y = int(rng.integers(2))
        s_obs = float(rng.uniform(1.0, 3.0))
        b_obs = float(rng.uniform(1.0, 3.0))

        branch_obs = (
            Observation(z=z, x=x, y_tau=0, y=y, delta=0, s=None,
                        delta_b=1, b=b_obs),
            Observation(z=z, x=x, y_tau=0, y=y, delta=1, s=s_obs,
                        delta_b=0, b=None),
            Observation(z=z, x=x, y_tau=0, y=y, delta=0, s=None,
                        delta_b=0, b=None),
        )
        values = [averaged_risk(o, beta, nus, quad) for o in branch_obs]
        values += [float(risk_by_stratum(beta, nus, s_obs, x, k, quad, z=z))
                   for k in VE_KINDS]
        if 0.15 <= min(values) and max(values) <= 0.95:
            return (beta, nus, z, x, s_obs, b_obs, branch_obs,
                    values[:3], values[3:])


def test_integration_branches_and_stratum_risks_match_monte_carlo():
    rng = np.random.default_rng(20260814)
    quad = Quadrature(60)
    problems = []
    worst = 0.0

    for i in range(50):
        (beta, nus, z, x, s_obs, b_obs, branch_obs,
         branch_vals, stratum_vals) = _draw_comparison_case(rng, quad)
        coef_b, sigma_b = nus.b_given_x.coef, nus.b_given_x.sigma
        coef_s, sigma_s = nus.s_given_b.coef, nus.s_given_b.sigma
        law = dict(coef_b=coef_b, sigma_b=sigma_b, coef_s=coef_s,
                   sigma_s=sigma_s, limit=1.0, n_levels=4, n=1_000_000)

        checks = [
            ("S-integrated branch", branch_vals[0],
             oracles.rbar_s_integrated(
                 beta.as_array(), z, b_obs, x, coef_s=coef_s, sigma_s=sigma_s,
                 limit=1.0, n_levels=4, n=1_000_000, seed=1000 * i + 1)),
            ("B-integrated branch", branch_vals[1],
             oracles.rbar_b_integrated(
                 beta.as_array(), z, s_obs, x, seed=1000 * i + 2, **law)),
            ("doubly integrated branch", branch_vals[2],
             oracles.rbar_double_integrated(
                 beta.as_array(), z, x, seed=1000 * i + 3, **law)),
        ]
        for j, stratum in enumerate(VE_KINDS):
            checks.append((
                f"{stratum} stratum risk", stratum_vals[j],
                oracles.stratum_risk(
                    beta.as_array(), z, s_obs, x, stratum,
                    seed=1000 * i + 4 + j, **law),
            ))

        for label, got, want in checks:
            rel = abs(got - want) / abs(want)
            worst = max(worst, rel)
            if rel > 1e-3:
                problems.append(f"configuration {i}: {label} relative error "
                                f"{rel:.2e} > 1e-3 (got {got:.6f}, "
                                f"oracle {want:.6f})")

    print(f"worst relative error over 300 comparisons: {worst:.2e}")
    assert not problems, "\n".join(problems)


def _coverage_study(design, seed, *, replications=100, n_subjects=10_000,
                    n_truth=8_000_000):
    config = dataclasses.replace(
        default_profile(seed=seed, s_mean_uses_censored_b=True),
        n_subjects=n_subjects, design=design, cpv_fraction=0.70,
    )
    return monte_carlo(config, EstimationOptions(n_perturb=100),
                       replications=replications, n_truth=n_truth)


def _bias_and_coverage_problems(report, label):
    m = report.grid.values.size
    idx = np.arange(m)
    central = (idx >= 0.05 * (m - 1) - 1e-9) & (idx <= 0.95 * (m - 1) + 1e-9)
    problems = []
    for kind in VE_KINDS:
        bias = float(np.max(np.abs(report.bias[kind])[central]))
        if bias > 0.05:
            problems.append(f"{label} {kind}: |bias| reaches {bias:.3f} > 0.05 "
                            f"on the central 90% of the grid")
        cov = report.pointwise_coverage[kind]
        if np.any((cov < 0.90) | (cov > 0.99)):
            problems.append(
                f"{label} {kind}: pointwise coverage outside [0.90, 0.99] at "
                f"{int(np.sum((cov < 0.90) | (cov > 0.99)))} of {m} grid "
                f"points (range {cov.min():.2f} to {cov.max():.2f})")
        simul = report.simultaneous_coverage[kind]
        if simul < 0.90:
            problems.append(f"{label} {kind}: simultaneous band coverage "
                            f"{simul:.2f} < 0.90")
    if report.failures:
        problems.append(f"{label}: {len(report.failures)} of "
                        f"{report.n_requested} replications failed")
    return problems


def test_bias_and_coverage_under_bip_only_sampling():
    report = _coverage_study("bip", seed=41)
    problems = _bias_and_coverage_problems(report, "BIP")
    if report.runtime_seconds > 8 * 3600:
        problems.append(f"study took {report.runtime_seconds:.0f} s, "
                        f"over the 8-hour budget")

    smoke = _coverage_study("bip", seed=42, replications=50, n_subjects=4000,
                            n_truth=2_000_000)
    if smoke.runtime_seconds > 3600:
        problems.append(f"reduced N=4,000/50-replication profile took "
                        f"{smoke.runtime_seconds:.0f} s > 3600")
    if smoke.n_completed != 50:
        problems.append(f"reduced profile completed {smoke.n_completed}/50 "
                        f"replications")

    assert not problems, "\n".join(problems)


def test_bias_and_coverage_under_bip_plus_cpv_sampling():
    report = _coverage_study("bip-cpv", seed=51)
    problems = _bias_and_coverage_problems(report, "BIP+CPV")
    if report.runtime_seconds > 8 * 3600:
        problems.append(f"study took {report.runtime_seconds:.0f} s, "
                        f"over the 8-hour budget")
    assert not problems, "\n".join(problems)


def test_gap_test_size_and_power():
    problems = []

    null_cfg = dataclasses.replace(
        null_baseline_profile(seed=61, s_mean_uses_censored_b=True),
        design="bip-cpv", cpv_fraction=0.70,
    )
    null = monte_carlo(null_cfg, EstimationOptions(n_perturb=100),
                       replications=100, n_truth=1_000_000)
    if null.rejection_rate > 0.10:
        problems.append(f"size: rejection rate {null.rejection_rate:.2f} > "
                        f"0.10 with identical true stratum curves")

    strong_cfg = dataclasses.replace(
        strong_baseline_profile(seed=62, s_mean_uses_censored_b=True),
        design="bip-cpv", cpv_fraction=0.70,
    )
    strong = monte_carlo(strong_cfg, EstimationOptions(n_perturb=100),
                         replications=100, n_truth=1_000_000)
    if strong.rejection_rate < 0.80:
        problems.append(f"power: rejection rate {strong.rejection_rate:.2f} < "
                        f"0.80 with a strong baseline-marker effect")

    assert not problems, "\n".join(problems)


def test_numerical_property_suite(bip_trial, bip_nuisance, cpv_trial,
                                  cpv_pipeline):
    problems = []
    quad = Quadrature(40)
    beta = moderate_beta()

    # the marginal curve is exactly the mixture of the stratum curves
    s = np.linspace(1.0, 4.0, 9)
    x = np.full(9, 2)
    at_limit, _, _ = mixed_b_given_s(
        bip_nuisance.b_given_x, bip_nuisance.s_given_b, s, x, quad,
        bip_nuisance.n_levels)
    sn = risk_by_stratum(beta, bip_nuisance, s, x, "seronegative", quad)
    sp = risk_by_stratum(beta, bip_nuisance, s, x, "seropositive", quad)
    marg = risk_by_stratum(beta, bip_nuisance, s, x, "marginal", quad)
    if not np.array_equal(marg, at_limit * sn + (1.0 - at_limit) * sp):
        gap = np.max(np.abs(marg - (at_limit * sn + (1.0 - at_limit) * sp)))
        problems.append(f"mixture identity violated by {gap:.2e}")

    # the inverted conditional law of B given S is a probability measure
    for s0, x0 in ((1.2, 1), (2.0, 2), (3.1, 4)):
        law = invert_to_b_given_s(bip_nuisance.b_given_x,
                                  bip_nuisance.s_given_b, s0, x0, quad)
        if abs(law.mass() - 1.0) > 1e-8:
            problems.append(f"posterior mass at (s={s0}, x={x0}) is "
                            f"{law.mass():.10f}, off 1 by more than 1e-8")

    # analytic score equals finite differences of the objective
    tensors = BranchTensors(bip_trial, bip_nuisance, quad)
    rng = np.random.default_rng(3)
    worst_rel = 0.0
    for _ in range(2):
        point = beta.as_array() + 0.3 * rng.standard_normal(9)
        _, grad, _ = tensors.negloglik_grad(point)
        for j in range(point.size):
            h = 1e-6 * max(1.0, abs(point[j]))
            up, dn = point.copy(), point.copy()
            up[j] += h
            dn[j] -= h
            fd = (tensors.negloglik_grad(up)[0]
                  - tensors.negloglik_grad(dn)[0]) / (2 * h)
            worst_rel = max(worst_rel,
                            abs(grad[j] - fd) / max(abs(fd), 1e-4))
    if worst_rel > 1e-5:
        problems.append(f"score vs finite differences: relative error "
                        f"{worst_rel:.2e} > 1e-5")

    # doubling the quadrature no longer moves the estimate
    fit40 = fit_beta(bip_trial, bip_nuisance, Quadrature(40))
    fit80 = fit_beta(bip_trial, bip_nuisance, Quadrature(80))
    move = float(np.max(np.abs(fit40.params.as_array()
                               - fit80.params.as_array())))
    if move > 1e-4:
        problems.append(f"doubling quadrature nodes moves the estimate by "
                        f"{move:.2e} > 1e-4")

    # worker count cannot change any byte of the ensemble
    grid = default_grid(cpv_trial, 13)
    one = run_ensemble(cpv_trial, grid, cpv_pipeline, n_draws=24,
                       master_seed=9, threads=1)
    two = run_ensemble(cpv_trial, grid, cpv_pipeline, n_draws=24,
                       master_seed=9, threads=2)
    for kind in one.kinds:
        if not np.array_equal(one.values[kind], two.values[kind]):
            problems.append(f"{kind} ensemble differs between 1 and 2 worker "
                            f"processes")

    assert not problems, "\n".join(problems)
