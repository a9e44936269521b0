"""Gibbs samplers for the probit (MNP), robit (MNR) and generalised robit (GenMNR) kernels.

All three kernels share one sweep. Each observation carries a per-coordinate
scale vector ``qc`` (ones for MNP, q_i repeated for MNR, q_is expanded over
the coordinates of block s for GenMNR), and the kernel error is
N(0, Qc^-1/2 Sigma Qc^-1/2). Within a sweep the steps run in the order
w, [q], beta, Sigma, [nu].
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .distributions import rng_stream, sample_inverse_wishart, truncated_normal
from .errors import ChainAborted, InvalidArgument, ModeNotFound, NumericalError
from .model import ParameterState, choices_from_latent
from .posterior import PosteriorDraws
from .proposals import GammaProposal, NuTargetParams, build_nu_proposal, nu_log_target, q_proposal_arrays

log = logging.getLogger(__name__)

JITTER = 1e-10
INIT_NU = 10.0


@dataclass(frozen=True)
class ChainConfig:
    total_iterations: int = 300_000
    warmup: int = 200_000
    thin: int = 10
    n_chains: int = 1
    seed: int = 0
    init: str = "default"

    def __post_init__(self):
        if self.total_iterations < 1 or self.thin < 1 or self.n_chains < 1:
            raise InvalidArgument("iterations, thin and chains must be positive")
        if not 0 <= self.warmup < self.total_iterations:
            raise InvalidArgument("warmup must be in [0, total_iterations)")
        if self.init != "default":
            raise InvalidArgument(f"unknown init policy {self.init!r}")

    @property
    def retained(self):
        return (self.total_iterations - self.warmup) // self.thin


@dataclass
class SamplerTelemetry:
    mh_accept_rate_nu: list = field(default_factory=list)
    mh_accept_rate_q: float | None = None
    mh_accept_rate_sigma: float = 0.0
    nu_mode_not_found: int = 0
    jitter_events: int = 0
    wall_time: float = 0.0

    def as_dict(self):
        return {
            "mh_accept_rate_nu": list(self.mh_accept_rate_nu),
            "mh_accept_rate_q": self.mh_accept_rate_q,
            "mh_accept_rate_sigma": self.mh_accept_rate_sigma,
            "nu_mode_not_found": self.nu_mode_not_found,
            "jitter_events": self.jitter_events,
            "wall_time": self.wall_time,
        }


def _precision(Sigma, counters=None):
    try:
        chol = linalg.cholesky(Sigma, lower=True)
    except linalg.LinAlgError:
        log.warning("Cholesky of Sigma failed; adding %.0e jitter", JITTER)
        if counters is not None:
            counters["jitter"] += 1
        try:
            chol = linalg.cholesky(Sigma + JITTER * np.eye(len(Sigma)), lower=True)
        except linalg.LinAlgError:
            raise NumericalError("Sigma is singular even after jitter") from None
    P = linalg.cho_solve((chol, True), np.eye(len(Sigma)))
    return 0.5 * (P + P.T)


def _scales(state, spec, N):
    """Per-coordinate scale matrix (N, J-1)."""
    d = state.Sigma.shape[0]
    if spec.kernel == "MNP" or state.q is None:
        return np.ones((N, d))
    if spec.kernel == "MNR":
        return np.repeat(state.q[:, None], d, axis=1)
    return state.q[:, spec.group_of]


def utility_index(data, beta):
    """X_i beta for every observation, shape (N, J-1)."""
    N, d, K = data.X.shape
    return (data.X.reshape(N * d, K) @ beta).reshape(N, d)


@dataclass(frozen=True)
class _ChoiceLayout:
    """Index sets for the truncation regions, computed once per dataset."""

    chosen: np.ndarray
    own: tuple        # own[j]: rows whose choice is coordinate j
    other: tuple      # other[j]: (rows, chosen coordinate) of rows choosing another non-base alternative
    base: np.ndarray  # rows choosing the base alternative

    @classmethod
    def build(cls, chosen, d):
        base = np.flatnonzero(chosen < 0)
        own, other = [], []
        for j in range(d):
            own.append(np.flatnonzero(chosen == j))
            rows = np.flatnonzero((chosen >= 0) & (chosen != j))
            other.append((rows, chosen[rows]))
        return cls(chosen, tuple(own), tuple(other), base)


def _latent_bounds(j, w, layout):
    """Truncation region of coordinate j given the other coordinates and the choice."""
    N, d = w.shape
    lower = np.full(N, -np.inf)
    upper = np.full(N, np.inf)
    own = layout.own[j]
    if own.size:
        rest = [k for k in range(d) if k != j]
        top_other = w[np.ix_(own, rest)].max(axis=1) if rest else np.full(own.size, -np.inf)
        lower[own] = np.maximum(0.0, top_other)
    upper[layout.base] = 0.0
    rows, cols = layout.other[j]
    upper[rows] = np.maximum(0.0, w[rows, cols])
    return lower, upper


def conditional_moments(j, w, xb, P, qc):
    """Mean and variance of latent coordinate j given the rest (vectorised over observations)."""
    z = w - xb
    sq = np.sqrt(qc)
    pjj = P[j, j]
    cross = (z * sq) @ P[:, j] - pjj * sq[:, j] * z[:, j]
    mu = xb[:, j] - cross / (pjj * sq[:, j])
    tau2 = 1.0 / (pjj * qc[:, j])
    return mu, tau2


def update_latent_utilities(state, data, spec, rng, *, P=None, layout=None, xb=None):
    """Sequential truncated-normal update of every w_ij (j inner, vectorised over i)."""
    if P is None:
        P = _precision(state.Sigma)
    w = state.w
    if layout is None:
        layout = _ChoiceLayout.build(data.latent_choice, w.shape[1])
    if xb is None:
        xb = utility_index(data, state.beta)
    qc = _scales(state, spec, data.N)
    for j in range(w.shape[1]):
        mu, tau2 = conditional_moments(j, w, xb, P, qc)
        lower, upper = _latent_bounds(j, w, layout)
        if not (np.all(np.isfinite(mu)) and np.all(tau2 > 0)):
            i = int(np.flatnonzero(~(np.isfinite(mu) & (tau2 > 0)))[0])
            raise NumericalError("invalid latent-utility conditional", observation=i, coordinate=j)
        w[:, j] = truncated_normal(mu, np.sqrt(tau2), lower, upper, rng)
    return w


def q_mnr_conditional(z, P, nu):
    """(shape, rate) of q_i | rest: Gamma((nu + J - 1)/2, (nu + z_i' Sigma^-1 z_i)/2)."""
    dist = np.sum((z @ P) * z, axis=1)
    return 0.5 * (nu + z.shape[1]), 0.5 * (nu + dist)


def update_q_mnr(state, data, spec, rng, *, P=None, xb=None):
    """Conjugate Gamma draw of every q_i."""
    if P is None:
        P = _precision(state.Sigma)
    z = state.w - (utility_index(data, state.beta) if xb is None else xb)
    shape, rate = q_mnr_conditional(z, P, float(state.nu))
    state.q = rng.gamma(shape, 1.0 / rate)
    return state.q


def q_target_arrays(state, data, spec, s, P, z=None):
    """(u, c, shape term) of the scale conditional of block s for every observation."""
    if z is None:
        z = state.w - utility_index(data, state.beta)
    groups = spec.group_of
    inside = groups == s
    outside = ~inside
    qc = _scales(state, spec, data.N)
    zs = z[:, inside]
    u = spec_nu(state, s) + np.sum((zs @ P[np.ix_(inside, inside)]) * zs, axis=1)
    other = (np.sqrt(qc[:, outside]) * z[:, outside]) @ P[np.ix_(outside, inside)]
    c = np.sum(zs * other, axis=1)
    shape_term = spec_nu(state, s) + int(inside.sum()) - 2.0
    return u, c, shape_term


def spec_nu(state, s):
    return float(np.atleast_1d(state.nu)[s])


def update_q_genmnr(state, data, spec, rng, *, P=None, xb=None):
    """Metropolised independence update of every q_is; returns (accepted, attempted)."""
    if P is None:
        P = _precision(state.Sigma)
    z = state.w - (utility_index(data, state.beta) if xb is None else xb)
    accepted = 0
    N = data.N
    for s in range(len(spec.dof_groups)):
        u, c, shape_term = q_target_arrays(state, data, spec, s, P, z)
        alpha, beta = q_proposal_arrays(u, c, shape_term)
        q_old = state.q[:, s]
        q_new = rng.gamma(alpha, 1.0 / beta)
        q_new = np.maximum(q_new, np.finfo(float).tiny)

        def log_f(q):
            return -0.5 * q * u - np.sqrt(q) * c + 0.5 * shape_term * np.log(q)

        def log_g(q):
            return (alpha - 1.0) * np.log(q) - beta * q

        ratio = (log_f(q_new) - log_g(q_new)) - (log_f(q_old) - log_g(q_old))
        if np.any(np.isnan(ratio)):
            i = int(np.flatnonzero(np.isnan(ratio))[0])
            raise NumericalError("non-finite scale target", observation=i, block=s)
        accept = np.log(rng.random(N)) < ratio
        state.q[:, s] = np.where(accept, q_new, q_old)
        accepted += int(accept.sum())
    return accepted, N * len(spec.dof_groups)


def update_beta(state, data, spec, rng, *, P=None):
    """beta ~ N(B_hat sum psi_i, B_hat), B_hat = (sum omega_i + B0)^-1."""
    if P is None:
        P = _precision(state.Sigma)
    B0 = spec.priors.B0
    K = B0.shape[0]
    if data.N == 0:
        prec = np.array(B0)
        lin = np.zeros(K)
    else:
        N, d = data.N, data.J - 1
        sq = np.sqrt(_scales(state, spec, N))
        Xs = (data.X * sq[:, :, None]).reshape(N, d * K)
        gram = (Xs.T @ Xs).reshape(d, K, d, K)
        # sum_i Xs_i' P Xs_i = sum_{j,k} P_jk (Xs_j' Xs_k)
        prec = np.tensordot(P, gram, axes=([0, 1], [0, 2])) + B0
        lin = Xs.reshape(N * d, K).T @ ((state.w * sq) @ P).reshape(N * d)
    try:
        R = linalg.cholesky(prec, lower=True)
    except linalg.LinAlgError:
        raise NumericalError("beta posterior precision is not SPD") from None
    mean = linalg.cho_solve((R, True), lin)
    state.beta = mean + linalg.solve_triangular(R.T, rng.standard_normal(K), lower=False)
    return state.beta


def sigma_log_correction(Sigma, S, A, df_prior, n_obs):
    """log target/proposal (up to a constant) for a trace-normalised Sigma.

    Target: trace-restricted inverse-Wishart prior times the Gaussian residual
    likelihood. Proposal: IW(n + rho, S + A) rescaled to trace J-1.
    """
    d = Sigma.shape[0]
    P = _precision(Sigma)
    c_s = float(np.sum(S * P))
    c_a = float(np.sum(A * P))
    return (-0.5 * d * df_prior * math.log(c_s) - 0.5 * c_a
            + 0.5 * d * (n_obs + df_prior) * math.log(c_s + c_a))


def update_sigma(state, data, spec, rng, *, xb=None):
    """Trace-normalised inverse-Wishart step; returns True if the proposal was accepted."""
    d = state.Sigma.shape[0]
    pri = spec.priors
    z = state.w - (utility_index(data, state.beta) if xb is None else xb)
    zt = z * np.sqrt(_scales(state, spec, data.N))
    A = zt.T @ zt
    tilde = sample_inverse_wishart(data.N + pri.rho, pri.S + A, rng)
    alpha2 = np.trace(tilde) / d
    proposal = tilde / alpha2
    log_new = sigma_log_correction(proposal, pri.S, A, pri.rho, data.N)
    log_old = sigma_log_correction(state.Sigma, pri.S, A, pri.rho, data.N)
    if not math.isfinite(log_new - log_old):
        raise NumericalError("non-finite Sigma acceptance ratio")
    if math.log(rng.random()) < log_new - log_old:
        state.Sigma = proposal
        return True
    return False


class _NuUpdater:
    """Keeps the last good proposal per DOF for the mode-not-found fallback."""

    def __init__(self, n_dof, priors):
        self.priors = priors
        self.last = [None] * n_dof
        self.last_mode = [None] * n_dof
        self.accepted = np.zeros(n_dof, dtype=np.int64)
        self.attempted = np.zeros(n_dof, dtype=np.int64)
        self.not_found = 0

    def step(self, s, nu_old, q, rng):
        pri = self.priors
        target = NuTargetParams.from_scales(q, pri.alpha0, pri.beta0)
        try:
            proposal, mode = build_nu_proposal(target, start=self.last_mode[s])
            self.last[s], self.last_mode[s] = proposal, mode
        except ModeNotFound as exc:
            self.not_found += 1
            log.debug("DOF %d: %s; reusing previous proposal", s, exc)
            proposal = self.last[s] or GammaProposal(pri.alpha0, pri.beta0)
        nu_new = float(proposal.draw(rng))
        self.attempted[s] += 1
        if not nu_new > 0:
            return nu_old
        ratio = ((nu_log_target(nu_new, target) - proposal.log_kernel(nu_new))
                 - (nu_log_target(nu_old, target) - proposal.log_kernel(nu_old)))
        if math.isnan(ratio):
            raise NumericalError("NaN in DOF acceptance ratio", dof=s)
        if math.log(rng.random()) < ratio:
            self.accepted[s] += 1
            return nu_new
        return nu_old


class GibbsSampler:
    """One chain. ``fixed`` may contain "nu" (hold nu) and/or "q" (hold the scales)."""

    def __init__(self, spec, data, rng, *, state=None, fixed=()):
        if spec.J != data.J or spec.priors.K != data.K:
            raise InvalidArgument(
                f"model (J={spec.J}, K={spec.priors.K}) does not match data (J={data.J}, K={data.K})")
        self.spec = spec
        self.data = data
        self.rng = rng
        self.fixed = frozenset(fixed)
        self.nu_updater = _NuUpdater(spec.n_dof, spec.priors)
        self.counters = {"jitter": 0, "sigma_acc": 0, "sweeps": 0, "q_acc": 0, "q_att": 0}
        self._layout = None
        self.state = state if state is not None else self.initial_state()

    @property
    def layout(self):
        if self._layout is None or self._layout[0] is not self.data:
            self._layout = (self.data, _ChoiceLayout.build(self.data.latent_choice, self.data.J - 1))
        return self._layout[1]

    def initial_state(self):
        spec, data = self.spec, self.data
        d = data.J - 1
        chosen = data.latent_choice
        w = -np.ones((data.N, d))
        rows = np.flatnonzero(chosen >= 0)
        w[rows, chosen[rows]] = 1.0
        nu = q = None
        if spec.kernel == "MNR":
            nu, q = INIT_NU, np.ones(data.N)
        elif spec.kernel == "GenMNR":
            nu, q = np.full(spec.n_dof, INIT_NU), np.ones((data.N, spec.n_dof))
        state = ParameterState(beta=np.zeros(data.K), Sigma=np.eye(d), w=w, nu=nu, q=q)
        update_latent_utilities(state, data, spec, self.rng, layout=self.layout)
        return state

    def sweep(self):
        spec, data, state, rng = self.spec, self.data, self.state, self.rng
        P = _precision(state.Sigma, self.counters)
        xb = utility_index(data, state.beta)
        update_latent_utilities(state, data, spec, rng, P=P, layout=self.layout, xb=xb)
        if "q" not in self.fixed:
            if spec.kernel == "MNR":
                update_q_mnr(state, data, spec, rng, P=P, xb=xb)
            elif spec.kernel == "GenMNR":
                acc, att = update_q_genmnr(state, data, spec, rng, P=P, xb=xb)
                self.counters["q_acc"] += acc
                self.counters["q_att"] += att
        update_beta(state, data, spec, rng, P=P)
        if update_sigma(state, data, spec, rng, xb=utility_index(data, state.beta)):
            self.counters["sigma_acc"] += 1
        if spec.kernel != "MNP" and "nu" not in self.fixed:
            self.update_nu()
        self.counters["sweeps"] += 1
        return state

    def update_nu(self):
        state = self.state
        if self.spec.kernel == "MNR":
            state.nu = self.nu_updater.step(0, float(state.nu), state.q, self.rng)
        else:
            for s in range(self.spec.n_dof):
                state.nu[s] = self.nu_updater.step(s, float(state.nu[s]), state.q[:, s], self.rng)

    def telemetry(self, wall_time=0.0):
        nu = self.nu_updater
        c = self.counters
        return SamplerTelemetry(
            mh_accept_rate_nu=[float(a / t) if t else 0.0 for a, t in zip(nu.accepted, nu.attempted)],
            mh_accept_rate_q=(c["q_acc"] / c["q_att"]) if c["q_att"] else None,
            mh_accept_rate_sigma=c["sigma_acc"] / c["sweeps"] if c["sweeps"] else 0.0,
            nu_mode_not_found=nu.not_found,
            jitter_events=c["jitter"],
            wall_time=wall_time,
        )


def check_state(state, data):
    """Sweep invariants: trace restriction, positive scales, choice consistency."""
    d = state.Sigma.shape[0]
    problems = []
    if abs(np.trace(state.Sigma) - d) > 1e-10:
        problems.append(f"trace(Sigma) = {np.trace(state.Sigma)!r}")
    if state.q is not None and not np.all(state.q > 0):
        problems.append("non-positive latent scale")
    if state.nu is not None and not np.all(np.atleast_1d(state.nu) > 0):
        problems.append("non-positive DOF")
    bad = np.flatnonzero(choices_from_latent(state.w) != data.latent_choice)
    if bad.size:
        problems.append(f"latent utilities inconsistent with choices at observations {bad[:5].tolist()}")
    return problems


def run_single_chain(spec, data, config, chain, fixed=(), callback=None):
    rng = rng_stream(config.seed, chain)
    start = time.perf_counter()
    sampler = GibbsSampler(spec, data, rng, fixed=fixed)
    retained = np.empty((config.retained, len(spec.parameter_names(data.coef_names))))
    iters = np.empty(config.retained, dtype=np.int64)
    r = 0
    for t in range(1, config.total_iterations + 1):
        try:
            sampler.sweep()
        except (NumericalError, InvalidArgument, FloatingPointError) as exc:
            raise ChainAborted(f"chain {chain + 1} aborted at iteration {t}: {exc}", chain, t,
                               [(chain, retained[:r].copy(), iters[:r].copy())]) from exc
        if callback is not None:
            callback(t, sampler)
        if t > config.warmup and (t - config.warmup) % config.thin == 0 and r < config.retained:
            retained[r] = sampler.state.flat()
            iters[r] = t
            r += 1
    return retained, iters, sampler.telemetry(time.perf_counter() - start)


def _chain_job(args):
    return run_single_chain(*args)


def run_chain(spec, data, config, *, fixed=(), workers=1, callback=None):
    """Run ``config.n_chains`` independent chains; returns PosteriorDraws with telemetry."""
    jobs = [(spec, data, config, c, fixed) for c in range(config.n_chains)]
    if workers > 1 and config.n_chains > 1 and callback is None:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = []
        for job in jobs:
            try:
                results.append(run_single_chain(*job, callback=callback))
            except ChainAborted as exc:
                done = [(c, res[0], res[1]) for c, res in enumerate(results)]
                exc.partial = done + exc.partial
                raise
    values = np.stack([res[0] for res in results])
    draws = PosteriorDraws(spec.parameter_names(data.coef_names), values, results[0][1])
    draws.telemetry = [res[2] for res in results]
    return draws


def with_config(config, **changes):
    return replace(config, **changes)
