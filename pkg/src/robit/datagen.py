"""Forward simulation of choice data under the probit/robit kernels.

``example1`` and ``example2`` bind the two synthetic designs: four
alternatives with the fourth as base, alternative-specific constants for the
first three, and four generic attributes drawn from U(0, 2) for every
alternative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import cholesky_spd, rng_stream
from .errors import InvalidArgument
from .model import ModelSpec, PriorSpec, build_dataset, choices_from_latent
from .predictive import DrawParameters, Scenario, kernel_errors, true_arc_elasticity, true_probabilities


@dataclass(frozen=True)
class TrueParameters:
    beta: np.ndarray
    Sigma: np.ndarray
    nu: np.ndarray | float | None = None

    def identified(self):
        """Same model on the trace(Sigma) = J-1 scale: (beta/alpha, Sigma/alpha^2, nu)."""
        d = self.Sigma.shape[0]
        alpha2 = np.trace(self.Sigma) / d
        return TrueParameters(np.asarray(self.beta) / np.sqrt(alpha2),
                              np.asarray(self.Sigma) / alpha2, self.nu), float(alpha2)

    def as_draw(self):
        nu = None if self.nu is None else np.atleast_1d(np.asarray(self.nu, float))
        return DrawParameters(np.asarray(self.beta, float), np.asarray(self.Sigma, float), nu)

    def flat(self, spec):
        """Values in the order of ``spec.parameter_names()``."""
        d = self.Sigma.shape[0]
        parts = [np.ravel(self.beta), np.asarray(self.Sigma)[np.tril_indices(d)]]
        if spec.n_dof:
            parts.append(np.atleast_1d(self.nu))
        return np.concatenate(parts).astype(float)


def uniform_attributes(low=0.0, high=2.0, n_attributes=4):
    def law(rng, N, J):
        return rng.uniform(low, high, size=(N, J, n_attributes))
    return law


@dataclass
class SimulationBundle:
    dataset: object
    spec: ModelSpec
    truth: TrueParameters
    identified: TrueParameters
    scale: float
    true_probs: np.ndarray | None
    truth_seed: int
    n_truth_draws: int
    metadata: dict = field(default_factory=dict)

    def true_elasticity(self, scenario, n_error=None):
        return true_arc_elasticity(
            self.spec.kernel, self.truth.as_draw(), self.dataset, scenario,
            n_error or self.n_truth_draws, self.truth_seed, self.spec.group_of)


def generate(spec, truth, N, attribute_law=None, rng=None, *, base_alternative=None,
             asc_alternatives=None, attribute_names=(), n_truth_draws=10_000, compute_truth=True):
    """Simulate a dataset under ``spec.kernel`` at (possibly unscaled) ``truth``.

    Returns a :class:`SimulationBundle` carrying the dataset, the truth on the
    generating and on the identified scale, and Monte Carlo true probabilities.
    """
    if N < 1:
        raise InvalidArgument("N must be positive")
    rng = rng if rng is not None else rng_stream(0)
    J, K = spec.J, spec.priors.K
    d = J - 1
    Sigma = np.asarray(truth.Sigma, float)
    if Sigma.shape != (d, d):
        raise InvalidArgument(f"Sigma must be {d}x{d}")
    cholesky_spd(Sigma, "true Sigma")
    beta = np.asarray(truth.beta, float)
    if beta.shape != (K,):
        raise InvalidArgument(f"beta must have length {K}")
    if spec.n_dof:
        nu = np.atleast_1d(np.asarray(truth.nu, float))
        if nu.size != spec.n_dof or np.any(~(nu > 0)):
            raise InvalidArgument(f"need {spec.n_dof} positive DOF values, got {truth.nu}")
    base = J if base_alternative is None else base_alternative
    asc = tuple(a for a in range(1, J + 1) if a != base) if asc_alternatives is None else tuple(asc_alternatives)
    law = attribute_law or uniform_attributes(n_attributes=K - len(asc))
    obs = np.asarray(law(rng, N, J), float)
    if obs.shape != (N, J, K - len(asc)):
        raise InvalidArgument(f"attribute law returned {obs.shape}, expected {(N, J, K - len(asc))}")

    names = tuple(attribute_names) or ()
    placeholder = build_dataset(obs, np.full(N, base), base, asc, attribute_names=names)
    params = truth.as_draw()
    eps = kernel_errors(spec.kernel, Sigma, params.nu, spec.group_of, (N,), rng)
    w = placeholder.X @ beta + eps
    pos = choices_from_latent(w)
    non_base = np.asarray(placeholder.non_base)
    y = np.where(pos < 0, base, non_base[np.maximum(pos, 0)])
    dataset = build_dataset(obs, y, base, asc, attribute_names=names)

    truth_seed = int(rng.integers(2**62))
    probs = None
    if compute_truth:
        probs = true_probabilities(spec.kernel, params, dataset, n_truth_draws, truth_seed, spec.group_of)
    ident, scale = truth.identified()
    return SimulationBundle(dataset, spec, truth, ident, scale, probs, truth_seed, n_truth_draws)


EXAMPLE_OMEGA = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.3], [0.0, 0.3, 1.0]])
EXAMPLE_SIGMA2 = np.array([1.4, 0.8, 1.2])
EXAMPLE_ATTRIBUTES = ("k4", "k5", "k6", "k7")


def example_sigma(sigma2=EXAMPLE_SIGMA2):
    """Sigma = D Omega D with D = diag(sqrt(sigma2))."""
    D = np.diag(np.sqrt(np.asarray(sigma2, float)))
    return D @ EXAMPLE_OMEGA @ D


def example_scenarios():
    """Perturbations of the first attribute of alternative 2 and of alternative 1."""
    return [Scenario(alt, "k4", 1.0 + pct / 100.0) for alt in (2, 1) for pct in (5, 10, 25)]


def _example(kernel, beta, nu, N, seed, n_truth_draws, compute_truth, sigma2):
    spec = ModelSpec(kernel, PriorSpec.default(4, 7))
    truth = TrueParameters(np.array(beta, float), example_sigma(sigma2), nu)
    bundle = generate(spec, truth, N, uniform_attributes(0.0, 2.0, 4), rng_stream(seed, 0),
                      base_alternative=4, asc_alternatives=(1, 2, 3),
                      attribute_names=EXAMPLE_ATTRIBUTES, n_truth_draws=n_truth_draws,
                      compute_truth=compute_truth)
    bundle.metadata.update({"seed": seed, "N": N, "sigma2": tuple(map(float, sigma2))})
    return bundle


def example1(N=40_000, seed=0, n_truth_draws=10_000, compute_truth=True, sigma2=EXAMPLE_SIGMA2):
    """Robit data: beta = (1, -2, 1, 1, -1, 1, -1), nu = 2."""
    bundle = _example("MNR", (1, -2, 1, 1, -1, 1, -1), 2.0, N, seed, n_truth_draws, compute_truth,
                      sigma2)
    bundle.metadata["example"] = 1
    return bundle


def example2(N=40_000, seed=0, n_truth_draws=10_000, compute_truth=True, sigma2=EXAMPLE_SIGMA2):
    """Generalised robit data: nu = (5, 3, 1) per coordinate, beta_2 = -1.8."""
    bundle = _example("GenMNR", (1, -1.8, 1, 1, -1, 1, -1), np.array([5.0, 3.0, 1.0]),
                      N, seed, n_truth_draws, compute_truth, sigma2)
    bundle.metadata["example"] = 2
    return bundle
