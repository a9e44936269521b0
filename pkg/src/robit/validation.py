"""Sampler-correctness checks: joint-distribution (successive-conditional) tests.

The marginal-conditional simulator draws parameters from the prior. The
successive-conditional simulator alternates "regenerate data given the
parameters" with one Gibbs sweep. If the sampler leaves the posterior
invariant, both produce the prior as the marginal law of the parameters, so
their moments must agree up to Monte Carlo error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import rng_stream, sample_inverse_wishart
from .gibbs import GibbsSampler
from .model import ChoiceDataset, ParameterState, choices_from_latent


def draw_prior(spec, rng):
    """(beta, Sigma, nu) from the prior, Sigma rescaled to trace J-1."""
    pri = spec.priors
    K, d = pri.K, pri.d
    beta = np.linalg.solve(np.linalg.cholesky(pri.B0).T, rng.standard_normal(K))
    tilde = sample_inverse_wishart(pri.rho, pri.S, rng)
    Sigma = tilde * d / np.trace(tilde)
    nu = None
    if spec.n_dof:
        nu = rng.gamma(pri.alpha0, 1.0 / pri.beta0, size=spec.n_dof)
        if spec.kernel == "MNR":
            nu = float(nu[0])
    return beta, Sigma, nu


def draw_scales(spec, nu, N, rng):
    if spec.kernel == "MNP":
        return None
    if spec.kernel == "MNR":
        return rng.gamma(0.5 * nu, 2.0 / nu, size=N)
    nu = np.asarray(nu, float)
    return rng.gamma(0.5 * nu, 2.0 / nu, size=(N, nu.size))


def draw_utilities(spec, X, beta, Sigma, q, rng):
    """w = X beta + Qc^{-1/2} eps with eps ~ N(0, Sigma)."""
    N, d, _ = X.shape
    eps = rng.standard_normal((N, d)) @ np.linalg.cholesky(Sigma).T
    if spec.kernel == "MNR":
        eps = eps / np.sqrt(q)[:, None]
    elif spec.kernel == "GenMNR":
        eps = eps / np.sqrt(q[:, spec.group_of])
    return X @ beta + eps


def test_functions(theta):
    """First and second moments of every recorded parameter."""
    theta = np.asarray(theta, float)
    return np.concatenate([theta, theta ** 2], axis=-1)


def batch_means_se(values, n_batches=50):
    """Monte Carlo standard error of a column mean from non-overlapping batch means."""
    n = values.shape[0] // n_batches * n_batches
    batches = values[:n].reshape(n_batches, -1, values.shape[1]).mean(axis=1)
    return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)


@dataclass
class JointTestResult:
    names: tuple
    marginal_mean: np.ndarray
    successive_mean: np.ndarray
    z: np.ndarray
    max_trace_error: float = 0.0

    @property
    def max_abs_z(self):
        return float(np.max(np.abs(self.z)))

    def passed(self, bound=4.0):
        return bool(np.all(np.abs(self.z) < bound))


def joint_distribution_test(spec, X, n_marginal=20_000, n_successive=100_000, seed=0,
                            burn=1_000, n_batches=50):
    """Compare prior moments with those of the data-regenerating Gibbs chain."""
    X = np.asarray(X, float)
    N = X.shape[0]
    names = spec.parameter_names()
    rng_m = rng_stream(seed, 0)
    marginal = np.array([
        ParameterState(beta=b, Sigma=S, w=np.zeros((0, 0)), nu=v).flat()
        for b, S, v in (draw_prior(spec, rng_m) for _ in range(n_marginal))
    ])

    rng = rng_stream(seed, 1)
    beta, Sigma, nu = draw_prior(spec, rng)
    q = draw_scales(spec, nu, N, rng)
    w = draw_utilities(spec, X, beta, Sigma, q, rng)
    sampler = None
    out = np.empty((n_successive, len(names)))
    for t in range(burn + n_successive):
        y = _choices(w)
        data = ChoiceDataset(X, y, X.shape[1] + 1)
        state = ParameterState(beta=beta, Sigma=Sigma, w=w, nu=nu, q=q)
        if sampler is None:
            sampler = GibbsSampler(spec, data, rng, state=state)
        else:
            sampler.data, sampler.state = data, state
        sampler.sweep()
        st = sampler.state
        beta, Sigma, nu = st.beta, st.Sigma, st.nu
        if nu is not None and spec.kernel == "GenMNR":
            nu = np.array(nu, copy=True)
        if t >= burn:
            out[t - burn] = st.flat()
        q = draw_scales(spec, nu, N, rng)
        w = draw_utilities(spec, X, beta, Sigma, q, rng)

    gm, gs = test_functions(marginal), test_functions(out)
    se_m = gm.std(axis=0, ddof=1) / np.sqrt(gm.shape[0])
    se_s = batch_means_se(gs, n_batches)
    z = (gs.mean(axis=0) - gm.mean(axis=0)) / np.sqrt(se_m ** 2 + se_s ** 2)
    labels = tuple(names) + tuple(f"{n}^2" for n in names)
    d = spec.J - 1
    diag = [names.index(f"Sigma_{j}_{j}") for j in range(1, d + 1)]
    trace_err = float(np.max(np.abs(out[:, diag].sum(axis=1) - d)))
    return JointTestResult(labels, gm.mean(axis=0), gs.mean(axis=0), z, trace_err)


def _choices(w):
    pos = choices_from_latent(w)
    return np.where(pos < 0, w.shape[1] + 1, pos + 1)
