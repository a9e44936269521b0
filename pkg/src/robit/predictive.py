"""Simulated choice probabilities, fit metrics and aggregate arc elasticities."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .distributions import rng_stream
from .errors import InvalidArgument
from .model import lower_triangle

# (observation, error draw) pairs simulated per block; bounds peak memory
BLOCK_CELLS = 1 << 20


@dataclass(frozen=True)
class PredictionConfig:
    n_posterior_draws: int = 200
    n_error_draws: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.n_posterior_draws < 1 or self.n_error_draws < 1:
            raise InvalidArgument("posterior and error draw counts must be >= 1")

    @property
    def budget(self):
        return self.n_posterior_draws * self.n_error_draws


@dataclass(frozen=True)
class Scenario:
    """Multiply attribute ``attribute`` of alternative ``alternative`` (1-based) by ``change``."""

    alternative: int
    attribute: str
    change: float

    def __post_init__(self):
        if self.change == 1.0:
            raise InvalidArgument("scenario change must differ from 0%")

    @property
    def delta(self):
        return self.change - 1.0

    @property
    def label(self):
        return f"alt={self.alternative},attr={self.attribute},change={100 * self.delta:+g}%"

    @classmethod
    def parse(cls, text):
        """Parse ``alt=2,attr=x_1,change=+10%`` (change may also be a factor like 1.1)."""
        fields = dict(part.split("=", 1) for part in text.replace(" ", "").split(",") if part)
        try:
            alt = int(fields["alt"])
            attr = fields["attr"]
            raw = fields["change"]
        except (KeyError, ValueError):
            raise InvalidArgument(f"cannot parse scenario {text!r}; expected alt=..,attr=..,change=..") from None
        m = re.fullmatch(r"([+-]?\d+(?:\.\d*)?)%", raw)
        change = 1.0 + float(m.group(1)) / 100.0 if m else float(raw)
        return cls(alt, attr, change)

    def apply(self, data):
        if data.attributes is None:
            raise InvalidArgument("dataset carries no undifferenced attributes to perturb")
        try:
            k = data.coef_names.index(self.attribute)
        except ValueError:
            raise InvalidArgument(f"unknown attribute {self.attribute!r}") from None
        if not 1 <= self.alternative <= data.J:
            raise InvalidArgument(f"alternative {self.alternative} not in 1..{data.J}")
        attrs = np.array(data.attributes)
        if np.all(attrs[:, self.alternative - 1, k] == 0):
            raise InvalidArgument("baseline attribute values are all zero; a multiplicative change has no effect")
        attrs[:, self.alternative - 1, k] *= self.change
        return data.with_attributes(attrs)


@dataclass(frozen=True)
class DrawParameters:
    beta: np.ndarray
    Sigma: np.ndarray
    nu: np.ndarray | None


def unpack_draw(vector, spec):
    """Split a recorded draw (beta, unique Sigma, nu) into its parts."""
    K, d = spec.priors.K, spec.priors.d
    beta = np.asarray(vector[:K], float)
    n_sig = d * (d + 1) // 2
    rows, cols = lower_triangle(d)
    Sigma = np.zeros((d, d))
    Sigma[rows - 1, cols - 1] = vector[K:K + n_sig]
    Sigma = Sigma + np.tril(Sigma, -1).T
    nu = np.asarray(vector[K + n_sig:], float) if spec.n_dof else None
    return DrawParameters(beta, Sigma, nu)


def check_compatible(draws, spec, data):
    expected = spec.parameter_names(data.coef_names)
    if tuple(draws.names) != tuple(expected):
        missing = sorted(set(expected) - set(draws.names))
        extra = sorted(set(draws.names) - set(expected))
        raise InvalidArgument(f"draws do not match the model: missing {missing}, unexpected {extra}")


def kernel_errors(kernel, Sigma, nu, group_of, shape, rng):
    """Kernel errors of shape ``shape + (J-1,)`` from the normal-mixture representation."""
    d = Sigma.shape[0]
    eps = rng.standard_normal(shape + (d,)) @ np.linalg.cholesky(Sigma).T
    if kernel == "MNR":
        nu = float(np.atleast_1d(nu)[0])
        q = rng.gamma(0.5 * nu, 2.0 / nu, size=shape)
        eps /= np.sqrt(q)[..., None]
    elif kernel == "GenMNR":
        nu = np.asarray(nu, float)
        q = rng.gamma(0.5 * nu, 2.0 / nu, size=shape + (nu.size,))
        eps /= np.sqrt(q[..., group_of])
    return eps


def _alternative_lookup(data):
    """Map latent position (or -1 for the base) to a 0-based alternative column."""
    lookup = np.empty(data.J, dtype=np.int64)
    lookup[:-1] = np.asarray(data.non_base) - 1
    lookup[-1] = data.base_alternative - 1
    return lookup


def simulate_counts(kernel, group_of, params, datasets, n_error, rng):
    """Choice counts (per dataset) over ``n_error`` error draws per observation.

    All datasets share the same error draws (common random numbers).
    """
    first = datasets[0]
    N, J = first.N, first.J
    lookup = _alternative_lookup(first)
    counts = [np.zeros((N, J), dtype=np.int64) for _ in datasets]
    rows = np.arange(N)
    chunk = max(1, BLOCK_CELLS // n_error)
    for start in range(0, N, chunk):
        stop = min(start + chunk, N)
        eps = kernel_errors(kernel, params.Sigma, params.nu, group_of, (stop - start, n_error), rng)
        for data, cnt in zip(datasets, counts):
            w = (data.X[start:stop] @ params.beta)[:, None, :] + eps
            top = w.argmax(axis=2)
            pos = np.where(np.take_along_axis(w, top[..., None], axis=2)[..., 0] >= 0, top, J - 1)
            cell = (rows[start:stop, None] - start) * J + lookup[pos]
            cnt[start:stop] += np.bincount(cell.ravel(), minlength=(stop - start) * J).reshape(-1, J)
    return counts


def _thin_indices(total, n):
    if n >= total:
        return np.arange(total)
    return np.unique(np.linspace(0, total - 1, n).round().astype(int))


def predict_probabilities(draws, spec, data, config=PredictionConfig(), scenarios=()):
    """Posterior-predictive probabilities (N, J), plus one matrix per scenario dataset.

    Posterior draw s uses the generator ``rng_stream(seed, s)``, so baseline
    and perturbed designs see identical random numbers.
    """
    check_compatible(draws, spec, data)
    datasets = [data] + list(scenarios)
    pooled = draws.pooled()
    idx = _thin_indices(pooled.shape[0], config.n_posterior_draws)
    totals = [np.zeros((data.N, data.J), dtype=np.int64) for _ in datasets]
    for s, row in enumerate(idx):
        params = unpack_draw(pooled[row], spec)
        counts = simulate_counts(spec.kernel, spec.group_of, params, datasets,
                                 config.n_error_draws, rng_stream(config.seed, s))
        for tot, cnt in zip(totals, counts):
            tot += cnt
    denom = float(len(idx) * config.n_error_draws)
    probs = [tot / denom for tot in totals]
    return probs[0] if not scenarios else probs


def true_probabilities(kernel, params, data, n_error=10_000, seed=0, group_of=None, scenarios=()):
    """Choice probabilities at known parameters by Monte Carlo frequency."""
    datasets = [data] + list(scenarios)
    counts = simulate_counts(kernel, group_of, params, datasets, n_error, rng_stream(seed, 0))
    probs = [c / float(n_error) for c in counts]
    return probs[0] if not scenarios else probs


def _check_stochastic(p, name):
    p = np.asarray(p, float)
    if p.ndim != 2:
        raise InvalidArgument(f"{name} must be an (N, J) matrix")
    if np.any(p < -1e-12) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise InvalidArgument(f"{name} rows must be probability vectors")
    return p


def quadratic_loss(true_probs, fitted_probs):
    """Sum over observations and alternatives of squared probability errors."""
    p = _check_stochastic(true_probs, "true_probs")
    ph = _check_stochastic(fitted_probs, "fitted_probs")
    if p.shape != ph.shape:
        raise InvalidArgument(f"shape mismatch {p.shape} vs {ph.shape}")
    return float(np.sum((p - ph) ** 2))


def brier_terms(choices, fitted_probs):
    """Per-observation Brier contributions; ``choices`` are 1-based."""
    ph = _check_stochastic(fitted_probs, "fitted_probs")
    y = np.asarray(choices)
    if y.shape != (ph.shape[0],):
        raise InvalidArgument("choices and probabilities disagree on the number of observations")
    if np.any((y < 1) | (y > ph.shape[1])):
        raise InvalidArgument(f"choices must lie in 1..{ph.shape[1]}")
    onehot = np.zeros_like(ph)
    onehot[np.arange(y.size), y - 1] = 1.0
    return np.sum((onehot - ph) ** 2, axis=1)


def brier_score(choices, fitted_probs):
    return float(np.sum(brier_terms(choices, fitted_probs)))


@dataclass(frozen=True)
class ElasticityResult:
    scenario: Scenario
    elasticities: np.ndarray  # NaN where baseline demand is zero
    baseline_demand: np.ndarray
    scenario_demand: np.ndarray

    @property
    def undefined(self):
        return tuple(int(j) + 1 for j in np.flatnonzero(np.isnan(self.elasticities)))


def elasticity_from_probabilities(p0, p1, delta):
    """((Q1 - Q0)/Q0)/delta per alternative with aggregate demand Q = column sums."""
    q0 = np.asarray(p0).sum(axis=0)
    q1 = np.asarray(p1).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(q0 > 0, (q1 - q0) / q0 / delta, np.nan)
    return e, q0, q1


def arc_elasticity(draws, spec, data, scenario, config=PredictionConfig()):
    """Aggregate arc elasticities (baseline denominator) with common random numbers."""
    perturbed = scenario.apply(data)
    p0, p1 = predict_probabilities(draws, spec, data, config, scenarios=[perturbed])
    e, q0, q1 = elasticity_from_probabilities(p0, p1, scenario.delta)
    return ElasticityResult(scenario, e, q0, q1)


def true_arc_elasticity(kernel, params, data, scenario, n_error=10_000, seed=0, group_of=None):
    perturbed = scenario.apply(data)
    p0, p1 = true_probabilities(kernel, params, data, n_error, seed, group_of, scenarios=[perturbed])
    e, q0, q1 = elasticity_from_probabilities(p0, p1, scenario.delta)
    return ElasticityResult(scenario, e, q0, q1)
