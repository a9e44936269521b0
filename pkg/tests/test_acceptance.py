"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-4 need desk-scale posterior fits (hours on one core); set
``ROBIT_FIT_CACHE`` to a directory to keep them across sessions. Run with
``pytest tests/test_acceptance.py -s -m acceptance`` to see the verdict lines.
"""
from __future__ import annotations

import functools
import hashlib
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from acceptance_lib import (
    FIT_TRACE, SEEDS, SWAPPED_SIGMA2, TraceMonitor, dataset, fit, model_spec, report,
)
from robit import cli
from robit.distributions import rng_stream, truncated_normal
from robit.gibbs import GibbsSampler, q_mnr_conditional, q_target_arrays
from robit.model import ModelSpec, PriorSpec, ParameterState, build_dataset
from robit.posterior import PosteriorDraws, psrf, summarize
from robit.predictive import (
    PredictionConfig, Scenario, arc_elasticity, brier_score, predict_probabilities, quadratic_loss,
)
from robit.proposals import (
    NuTargetParams, build_nu_proposal, nu_log_target, nu_log_target_d2, q_log_target_d2,
    q_mode_array, q_proposal_arrays, QTargetParams, q_log_target,
)
from robit.validation import joint_distribution_test

pytestmark = [pytest.mark.acceptance]


# -- 1. parameter recovery, Example I ------------------------------------------

@pytest.mark.slow
def test_criterion_1_parameter_recovery():
    spec = model_spec("MNR")
    covered, nu_means = None, []
    for seed in SEEDS:
        bundle = dataset(1, seed)
        draws, _, _ = fit(1, seed, "MNR", 2)
        names = spec.parameter_names(bundle.dataset.coef_names)
        truth = bundle.identified.flat(spec)
        rows = {r.name: r for r in summarize(draws)}
        hits = np.array([rows[n].q025 <= t <= rows[n].q975 for n, t in zip(names, truth)
                         if n != "nu"])
        covered = hits.astype(int) if covered is None else covered + hits
        nu_means.append(rows["nu"].mean)
    checked = [n for n in names if n != "nu"]
    nu_ok = all(1.7 <= m <= 2.4 for m in nu_means)
    cov_ok = bool(np.all(covered >= 9))
    worst = checked[int(np.argmin(covered))]
    detail = (f"nu means {np.round(nu_means, 3).tolist()} (all in [1.7, 2.4]: {nu_ok}); "
              f"coverage counts of 10 {dict(zip(checked, covered.tolist()))}; lowest {worst}")
    report(1, nu_ok and cov_ok, detail)
    assert nu_ok and cov_ok, detail


# -- 2. DOF separation, Example II ----------------------------------------------

@pytest.mark.slow
def test_criterion_2_dof_ordering():
    ordered, means = 0, []
    for seed in SEEDS:
        draws, _, _ = fit(2, seed, "GenMNR", 1)
        m = [float(draws[f"nu_{s}"].mean()) for s in (1, 2, 3)]
        means.append(np.round(m, 2).tolist())
        ordered += int(m[0] > m[1] > m[2])
    detail = f"ordered in {ordered}/10 seeds; posterior means {means}"
    report(2, ordered >= 8, detail)
    assert ordered >= 8, detail


# -- 3. quadratic-loss ordering -------------------------------------------------

FITS_CHAINS = {1: 2, 2: 1}


@functools.lru_cache(maxsize=None)
def predicted(example, kernel):
    bundle = dataset(example, 0, truth=True)
    draws, _, _ = fit(example, 0, kernel, FITS_CHAINS[example])
    return predict_probabilities(draws, model_spec(kernel), bundle.dataset, PredictionConfig())


@pytest.mark.slow
def test_criterion_3_quadratic_loss_ordering():
    ql = {}
    for example in (1, 2):
        truth = dataset(example, 0, truth=True).true_probs
        ql[example] = {k: quadratic_loss(truth, predicted(example, k)) for k in ("MNP", "MNR", "GenMNR")}
    q1, q2 = ql[1], ql[2]
    ok1 = q1["MNR"] < q1["GenMNR"] < q1["MNP"]
    ok2 = q2["GenMNR"] < q2["MNR"] < q2["MNP"]
    ratio = q1["MNR"] / q1["MNP"]
    fmt = lambda d: ", ".join(f"{k}={v:.2f}" for k, v in d.items())  # noqa: E731
    detail = (f"N=10000 desk scale (ordering only). Example I: {fmt(q1)} ordering ok={ok1}, "
              f"MNR/MNP={ratio:.3f} (full-scale bound 0.3, not gated); "
              f"Example II: {fmt(q2)} ordering ok={ok2}")
    report(3, ok1 and ok2, detail)
    assert ok1 and ok2, detail


# -- 4. elasticity robustness ---------------------------------------------------

def _elasticity(example, kernel, scenario, sigma2=None, chains=2):
    bundle = dataset(example, 0, sigma2)
    draws, _, _ = fit(example, 0, kernel, chains, sigma2)
    return arc_elasticity(draws, model_spec(kernel), bundle.dataset, scenario).elasticities


@pytest.mark.slow
def test_criterion_4_elasticities():
    rare = Scenario(2, "k4", 1.10)
    common = Scenario(1, "k4", 1.10)
    bundle = dataset(1, 0)
    truth_rare = bundle.true_elasticity(rare).elasticities
    truth_common = bundle.true_elasticity(common).elasticities
    mnr = _elasticity(1, "MNR", rare)
    mnp = _elasticity(1, "MNP", rare)
    part1 = abs(mnr[1] - 1.08) <= 0.10 and (1.08 - mnp[1]) >= 0.15
    common_est = {k: _elasticity(1, k, common) for k in ("MNP", "MNR", "GenMNR")}
    gaps = {k: float(np.max(np.abs(v - truth_common))) for k, v in common_est.items()}
    part2 = all(g <= 0.05 for g in gaps.values())
    # Not gated: the same scenario on data generated with sigma2 = (1.4, 1.2, 0.8).
    sw_truth = dataset(1, 0, SWAPPED_SIGMA2).true_elasticity(rare).elasticities
    sw_mnr = _elasticity(1, "MNR", rare, SWAPPED_SIGMA2)
    sw_mnp = _elasticity(1, "MNP", rare, SWAPPED_SIGMA2)
    detail = (f"alt-2 +10%: truth(simulated)={truth_rare[1]:.3f}, MNR={mnr[1]:.3f}, MNP={mnp[1]:.3f}, "
              f"|MNR-1.08|<=0.10 and 1.08-MNP>=0.15: {part1}; "
              f"alt-1 +10% truth row {np.round(truth_common, 3).tolist()}, max gaps {gaps}: {part2}; "
              f"[info, sigma2={SWAPPED_SIGMA2}] truth={sw_truth[1]:.3f}, MNR={sw_mnr[1]:.3f}, "
              f"MNP={sw_mnp[1]:.3f}")
    report(4, part1 and part2, detail)
    assert part1 and part2, detail


# -- 5/6. property suite --------------------------------------------------------

TINY_PRIOR = PriorSpec(zeta0=np.zeros(2), B0=np.eye(2), rho=5.0, S=np.eye(2), alpha0=4.0, beta0=1.0)


def _geweke():
    X = np.random.default_rng(1).uniform(-1, 1, size=(8, 2, 2))
    out = {}
    for kernel in ("MNP", "MNR", "GenMNR"):
        res = joint_distribution_test(ModelSpec(kernel, TINY_PRIOR), X, n_marginal=20_000,
                                      n_successive=50_000, seed=3)
        out[kernel] = res
    return out


def _density_checks():
    """Largest deviation of conditional log-density differences from brute-force oracles."""
    rng = np.random.default_rng(11)
    worst = 0.0
    d = 3
    A = rng.standard_normal((d, d))
    Sigma = A @ A.T + d * np.eye(d)
    Sigma *= d / np.trace(Sigma)
    P = np.linalg.inv(Sigma)
    grid = np.linspace(0.05, 6.0, 100)
    # MNR: q | . ~ Gamma((nu + d)/2, rate (nu + z'Pz)/2)
    z = rng.standard_normal(d)
    nu = 2.7
    brute = np.array([stats.multivariate_normal.logpdf(z, np.zeros(d), Sigma / q)
                      + stats.gamma.logpdf(q, nu / 2, scale=2 / nu) for q in grid])
    shape, rate = q_mnr_conditional(z[None, :], P, nu)
    impl = stats.gamma.logpdf(grid, shape, scale=1 / rate[0])
    worst = max(worst, np.max(np.abs(np.diff(brute) - np.diff(impl))))
    # GenMNR: one scale per coordinate, f(q) of the sampler's target arrays
    spec = ModelSpec("GenMNR", PriorSpec.default(4, 3))
    data = build_dataset(np.zeros((1, 4, 0)), np.array([4]), 4, (1, 2, 3))
    nus = np.array([0.8, 3.0, 9.0])
    w = -np.abs(rng.standard_normal((1, d)))
    qs = rng.gamma(2.0, 0.5, size=(1, d))
    state = ParameterState(beta=np.zeros(3), Sigma=Sigma, w=w, nu=nus, q=qs)
    for s in range(d):
        u, c, shape = q_target_arrays(state, data, spec, s, P)
        target = QTargetParams(float(u[0]), float(c[0]), float(nus[s]))
        brute = []
        for q in grid:
            qq = qs[0].copy()
            qq[s] = q
            cov = Sigma / np.sqrt(np.outer(qq, qq))
            brute.append(stats.multivariate_normal.logpdf(w[0], np.zeros(d), cov)
                         + stats.gamma.logpdf(q, nus[s] / 2, scale=2 / nus[s]))
        impl = q_log_target(grid, target)
        worst = max(worst, np.max(np.abs(np.diff(brute) - np.diff(impl))))
    # nu: sum of Gamma(nu/2, nu/2) log densities plus the Gamma(alpha0, beta0) prior
    q = rng.gamma(1.0, 1.0, size=500)
    alpha0, beta0 = 2.0, 0.1
    target = NuTargetParams.from_scales(q, alpha0, beta0)
    nu_grid = np.linspace(0.3, 40.0, 100)
    brute = np.array([np.sum(stats.gamma.logpdf(q, v / 2, scale=2 / v))
                      + stats.gamma.logpdf(v, alpha0, scale=1 / beta0) for v in nu_grid])
    impl = np.array([nu_log_target(v, target) for v in nu_grid])
    worst = max(worst, np.max(np.abs(np.diff(brute) - np.diff(impl))))
    return float(worst)


def _truncation_violations(n=1_000_000):
    rng = np.random.default_rng(5)
    mu = rng.normal(0.0, 5.0, n)
    sigma = np.exp(rng.uniform(-3.0, 3.0, n))
    a = mu + sigma * rng.normal(0.0, 6.0, n)
    width = sigma * np.exp(rng.uniform(-8.0, 3.0, n))
    lower, upper = a, a + width
    kind = rng.integers(0, 4, n)
    lower = np.where(kind == 1, -np.inf, lower)
    upper = np.where(kind == 2, np.inf, upper)
    upper = np.where(kind == 3, np.inf, upper)
    x = truncated_normal(mu, sigma, lower, upper, rng_stream(6))
    return int(np.sum(~np.isfinite(x) | (x < lower) | (x > upper)))


def _proposal_identities(n=10_000):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(n // 2):
        nu = rng.uniform(0.5, 50.0)
        q = rng.gamma(nu / 2, 2 / nu, size=int(rng.integers(20, 2000)))
        target = NuTargetParams.from_scales(q, rng.uniform(1.0, 5.0), rng.uniform(0.01, 1.0))
        prop, mode = build_nu_proposal(target)
        curv = nu_log_target_d2(mode, target)
        worst = max(worst, abs(prop.mode - mode) / mode,
                    abs(-(prop.alpha_star - 1) / mode ** 2 - curv) / abs(curv))
    m = n - n // 2
    nu_j = rng.uniform(1.01, 60.0, m)
    u = nu_j + np.exp(rng.normal(0.0, 2.0, m))
    c = rng.normal(0.0, 3.0, m)
    alpha, beta = q_proposal_arrays(u, c, nu_j - 1.0)
    mode = q_mode_array(u, c, nu_j - 1.0)
    curv = np.array([q_log_target_d2(mo, QTargetParams(uu, cc, vv)) for mo, uu, cc, vv in zip(mode, u, c, nu_j)])
    worst = max(worst, float(np.max(np.abs((alpha - 1) / beta - mode) / mode)),
                float(np.max(np.abs(-(alpha - 1) / mode ** 2 - curv) / np.abs(curv))))
    return worst


def _kernel_reduction(n_draws=5_000, thin=5):
    """Retained beta draws of MNP and of MNR with nu = 1e6 held fixed and q frozen at 1."""
    rng = np.random.default_rng(9)
    N = 400
    obs = rng.uniform(0.0, 2.0, size=(N, 3, 1))
    util = obs[:, :, 0] * -1.0 + np.array([0.5, 0.2, 0.0]) + rng.standard_normal((N, 3))
    data = build_dataset(obs, util.argmax(axis=1) + 1, 3, (1, 2), attribute_names=("x",))
    spec_p = ModelSpec("MNP", PriorSpec.default(3, 3))
    spec_r = ModelSpec("MNR", PriorSpec.default(3, 3))
    monitor = TraceMonitor()
    out = {}
    for spec, fixed in ((spec_p, ()), (spec_r, ("nu", "q"))):
        sampler = GibbsSampler(spec, data, rng_stream(21, 0), fixed=fixed)
        if spec.kernel == "MNR":
            sampler.state.nu = 1e6
        keep = []
        for t in range(1, 1_000 + n_draws * thin + 1):
            sampler.sweep()
            monitor(t, sampler)
            if t > 1_000 and t % thin == 0:
                keep.append(sampler.state.beta.copy())
        out[spec.kernel] = np.array(keep)
    pvals = [stats.ks_2samp(out["MNP"][:, k], out["MNR"][:, k]).pvalue for k in range(3)]
    return pvals, monitor


@functools.lru_cache(maxsize=None)
def property_suite():
    t0 = time.perf_counter()
    geweke = _geweke()
    density = _density_checks()
    violations = _truncation_violations()
    identities = _proposal_identities()
    pvals, monitor = _kernel_reduction()
    elapsed = time.perf_counter() - t0
    return dict(geweke=geweke, density=density, violations=violations, identities=identities,
                ks=pvals, trace=max([r.max_trace_error for r in geweke.values()] + [monitor.max_error]),
                elapsed=elapsed)


def test_criterion_5_property_suite():
    r = property_suite()
    # include the desk-scale fits already run in this session
    fit_trace = max(FIT_TRACE.values(), default=0.0)
    a = {k: round(v.max_abs_z, 2) for k, v in r["geweke"].items()}
    ok = {
        "a": all(v.passed(4.0) for v in r["geweke"].values()),
        "b": r["density"] < 1e-8,
        "c": max(r["trace"], fit_trace) <= 1e-10,
        "d": r["violations"] == 0,
        "e": r["identities"] <= 1e-10,
        "f": all(p > 0.001 for p in r["ks"]),
    }
    detail = (f"(a) Geweke max|z| {a}; (b) density dev {r['density']:.2e}; "
              f"(c) max trace error {max(r['trace'], fit_trace):.1e}; (d) violations {r['violations']}; "
              f"(e) identity dev {r['identities']:.1e}; (f) KS p {np.round(r['ks'], 4).tolist()}; "
              f"flags {ok}")
    report(5, all(ok.values()), detail)
    assert all(ok.values()), detail


def test_criterion_6_metric_identities():
    J = 4
    y = np.array([1, 3, 4, 2])
    perfect = np.eye(J)[y - 1]
    truth = np.random.default_rng(2).dirichlet(np.ones(J), size=50)
    rng = np.random.default_rng(3)
    chains = PosteriorDraws(("theta",), rng.standard_normal((2, 5_000, 1)), np.arange(5_000))
    checks = {
        "brier_perfect": brier_score(y, perfect) == 0.0,
        "brier_uniform": brier_score(np.array([2]), np.full((1, J), 0.25)) == 0.75,
        "ql_truth": quadratic_loss(truth, truth) == 0.0,
        "rhat_iid": psrf(chains)["theta"] < 1.01,
    }
    elapsed = property_suite()["elapsed"]
    checks["property_suite_under_10_min"] = elapsed <= 600.0
    detail = f"{checks}; property suite {elapsed:.0f} s"
    report(6, all(checks.values()), detail)
    assert all(checks.values()), detail


# -- 7. determinism ---------------------------------------------------------------

def _pipeline(root: Path, workers: int):
    sim, fitdir, rep = root / "sim", root / "fit", root / "rep"
    for p in (sim, fitdir, rep):
        p.mkdir(parents=True)
    run = lambda *argv: cli.main([str(a) for a in argv])  # noqa: E731
    codes = [
        run("simulate", "--example", 1, "--n", 300, "--seed", 4, "--truth-draws", 500, "--out", sim),
        run("fit", "--config", sim / "model.json", "--data", sim / "data.csv", "--chains", 2,
            "--iterations", 300, "--warmup", 100, "--thin", 2, "--seed", 8, "--workers", workers,
            "--out", fitdir),
        run("summarize", "--draws", fitdir / "draws.csv", "--truth", sim / "truth.json",
            "--out", rep / "summary.csv", "--figures", rep),
        run("diagnose", "--draws", fitdir / "draws.csv", "--out", rep / "rhat.csv", "--figures", rep),
        run("predict", "--config", fitdir / "effective_config.json", "--data", sim / "data.csv",
            "--draws", fitdir / "draws.csv", "--n-posterior-draws", 20, "--n-error-draws", 64,
            "--out", rep / "probs.csv"),
        run("elasticity", "--config", fitdir / "effective_config.json", "--data", sim / "data.csv",
            "--draws", fitdir / "draws.csv", "--n-posterior-draws", 20, "--n-error-draws", 64,
            "--scenario", "alt=2,attr=k4,change=+10%", "--out", rep / "elasticity.csv",
            "--figures", rep),
        run("score", "--config", fitdir / "effective_config.json", "--data", sim / "data.csv",
            "--draws", fitdir / "draws.csv", "--n-posterior-draws", 20, "--n-error-draws", 64,
            "--metric", "ql", "--truth-probs", sim / "true_probs.csv",
            "--per-observation", rep / "ql.csv", "--figures", rep),
    ]
    digests = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "timing.json":
            digests[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return codes, digests


def test_criterion_7_determinism(tmp_path):
    codes_a, first = _pipeline(tmp_path / "a", workers=1)
    codes_b, second = _pipeline(tmp_path / "b", workers=1)
    codes_c, parallel = _pipeline(tmp_path / "c", workers=2)
    # diagnose may legitimately return 1 on a short run; everything else must succeed
    ok_codes = all(c in (0, 1) for c in codes_a + codes_b + codes_c)
    same = first == second
    draws_parallel = first["fit/draws.csv"] == parallel["fit/draws.csv"]
    differing = sorted(k for k in first if first.get(k) != second.get(k))
    detail = (f"{len(first)} files hashed per run; identical across reruns: {same} {differing}; "
              f"2-worker draws identical to serial: {draws_parallel}; exit codes {codes_a}")
    report(7, ok_codes and same and draws_parallel, detail)
    assert ok_codes and same and draws_parallel, detail
