import numpy as np
import pytest
from scipy import stats

from robit.errors import InvalidArgument
from robit.model import ModelSpec, PriorSpec, build_dataset
from robit.posterior import PosteriorDraws
from robit.predictive import (
    DrawParameters, PredictionConfig, Scenario, arc_elasticity, brier_score, brier_terms,
    check_compatible, elasticity_from_probabilities, predict_probabilities, quadratic_loss,
    true_arc_elasticity, true_probabilities, unpack_draw,
)


def design(N=200, J=4, seed=0):
    rng = np.random.default_rng(seed)
    obs = rng.uniform(0.0, 2.0, size=(N, J, 1))
    return build_dataset(obs, rng.integers(1, J + 1, N), J, tuple(range(1, J)), attribute_names=("x",))


def point_draws(spec, data, beta, Sigma, nu=()):
    names = spec.parameter_names(data.coef_names)
    d = Sigma.shape[0]
    row = np.concatenate([beta, Sigma[np.tril_indices(d)], np.atleast_1d(nu)])
    return PosteriorDraws(names, row[None, None, :])


# -- probabilities -----------------------------------------------------------------

def test_symmetric_probit_is_uniform():
    # i.i.d. level errors difference to Sigma proportional to I + 11' (trace J-1)
    data = design(N=50)
    spec = ModelSpec("MNP", PriorSpec.default(4, 4))
    Sigma = 0.5 * (np.eye(3) + np.ones((3, 3)))
    draws = point_draws(spec, data, np.zeros(4), Sigma)
    p = predict_probabilities(draws, spec, data, PredictionConfig(1, 100_000, seed=1))
    assert np.allclose(p, 0.25, atol=0.01)
    assert np.allclose(p.sum(axis=1), 1.0)


def test_identity_difference_covariance_orthant():
    # Sigma = I on the differences: base chosen iff all three are negative (1/8)
    data = design(N=50)
    spec = ModelSpec("MNP", PriorSpec.default(4, 4))
    draws = point_draws(spec, data, np.zeros(4), np.eye(3))
    p = predict_probabilities(draws, spec, data, PredictionConfig(1, 100_000, seed=1))
    assert np.allclose(p, [7 / 24, 7 / 24, 7 / 24, 1 / 8], atol=0.01)


def test_binary_probit_closed_form():
    rng = np.random.default_rng(2)
    obs = rng.normal(size=(30, 2, 1))
    data = build_dataset(obs, np.ones(30, dtype=int), 2, (1,), attribute_names=("x",))
    spec = ModelSpec("MNP", PriorSpec.default(2, 2))
    beta = np.array([0.3, -0.8])
    draws = point_draws(spec, data, beta, np.array([[1.0]]))
    p = predict_probabilities(draws, spec, data, PredictionConfig(1, 200_000, seed=3))
    exact = stats.norm.cdf(data.X[:, 0, :] @ beta)
    assert np.max(np.abs(p[:, 0] - exact)) < 0.005


def test_robit_with_huge_dof_matches_probit():
    data = design(N=10)
    Sigma = np.array([[1.2, 0.3, 0.0], [0.3, 0.8, 0.2], [0.0, 0.2, 1.0]])
    beta = np.array([0.5, -0.5, 0.2, -1.0])
    cfg = PredictionConfig(1, 400_000, seed=4)
    mnp = ModelSpec("MNP", PriorSpec.default(4, 4))
    mnr = ModelSpec("MNR", PriorSpec.default(4, 4))
    p0 = predict_probabilities(point_draws(mnp, data, beta, Sigma), mnp, data, cfg)
    p1 = predict_probabilities(point_draws(mnr, data, beta, Sigma, 1e6), mnr, data, cfg)
    assert np.max(np.abs(p0 - p1)) < 0.005


def test_true_probabilities_reproducible():
    data = design(N=20)
    params = DrawParameters(np.array([0.1, 0.2, 0.3, -1.0]), np.eye(3), np.array([4.0]))
    a = true_probabilities("MNR", params, data, 1000, seed=5)
    b = true_probabilities("MNR", params, data, 1000, seed=5)
    assert np.array_equal(a, b)


def test_unpack_and_compatibility():
    data = design(N=5)
    spec = ModelSpec("GenMNR", PriorSpec.default(4, 4))
    Sigma = np.array([[1.0, 0.2, 0.1], [0.2, 0.9, 0.3], [0.1, 0.3, 1.1]])
    draws = point_draws(spec, data, np.arange(4.0), Sigma, [2.0, 3.0, 4.0])
    params = unpack_draw(draws.pooled()[0], spec)
    assert np.array_equal(params.Sigma, Sigma)
    assert np.array_equal(params.nu, [2.0, 3.0, 4.0])
    with pytest.raises(InvalidArgument, match="unexpected"):
        check_compatible(draws, ModelSpec("MNP", PriorSpec.default(4, 4)), data)


# -- metrics -----------------------------------------------------------------------------

def test_quadratic_loss_values():
    p = np.array([[0.2, 0.8], [0.5, 0.5]])
    assert quadratic_loss(p, p) == 0.0
    assert quadratic_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])) == 0.5
    with pytest.raises(InvalidArgument):
        quadratic_loss(p, p[:1])
    with pytest.raises(InvalidArgument):
        quadratic_loss(p, np.array([[0.2, 0.9], [0.5, 0.5]]))


def test_brier_values():
    assert brier_score(np.array([1, 3]), np.eye(3)[[0, 2]]) == 0.0
    assert brier_score(np.array([2]), np.full((1, 4), 0.25)) == 0.75
    assert brier_score(np.array([1, 2]), np.eye(2)[[1, 0]]) == 4.0
    assert np.array_equal(brier_terms(np.array([1, 2]), np.eye(2)[[1, 0]]), [2.0, 2.0])
    with pytest.raises(InvalidArgument):
        brier_score(np.array([3]), np.full((1, 2), 0.5))


# -- elasticities --------------------------------------------------------------------------

def test_elasticity_definition():
    p0 = np.array([[0.10, 0.90]])
    p1 = np.array([[0.11, 0.89]])
    e, q0, q1 = elasticity_from_probabilities(p0, p1, 0.10)
    assert e[0] == pytest.approx(1.0, abs=1e-12)


def test_elasticity_undefined_for_zero_demand():
    e, _, _ = elasticity_from_probabilities(np.array([[0.0, 1.0]]), np.array([[0.0, 1.0]]), 0.1)
    assert np.isnan(e[0]) and e[1] == 0.0


def test_zero_coefficient_gives_zero_elasticity():
    data = design(N=100)
    spec = ModelSpec("MNP", PriorSpec.default(4, 4))
    draws = point_draws(spec, data, np.array([0.4, -0.3, 0.1, 0.0]), np.eye(3))
    res = arc_elasticity(draws, spec, data, Scenario(2, "x", 1.25), PredictionConfig(1, 2000, 6))
    # common random numbers make the effect exactly zero
    assert np.array_equal(res.elasticities, np.zeros(4))


def test_direct_elasticity_sign():
    data = design(N=300)
    params = DrawParameters(np.array([0.2, 0.1, 0.0, -1.0]), np.eye(3), None)
    res = true_arc_elasticity("MNP", params, data, Scenario(2, "x", 1.10), 2000, seed=7)
    assert res.elasticities[1] < 0
    assert np.all(res.elasticities[[0, 2, 3]] > 0)


def test_scenario_parse_and_apply():
    sc = Scenario.parse("alt=2,attr=x,change=+10%")
    assert (sc.alternative, sc.attribute) == (2, "x")
    assert sc.change == pytest.approx(1.1)
    assert sc.label == "alt=2,attr=x,change=+10%"
    assert Scenario.parse("alt=1,attr=x,change=0.8").delta == pytest.approx(-0.2)
    data = design(N=10)
    new = sc.apply(data)
    assert np.allclose(new.attributes[:, 1, -1], 1.1 * data.attributes[:, 1, -1])
    assert np.allclose(new.X[:, 1, -1], 1.1 * data.attributes[:, 1, -1] - data.attributes[:, 3, -1])
    with pytest.raises(InvalidArgument):
        Scenario.parse("alt=2,change=+10%")
    with pytest.raises(InvalidArgument):
        Scenario(2, "x", 1.0)
    with pytest.raises(InvalidArgument):
        Scenario(9, "x", 1.1).apply(data)
    with pytest.raises(InvalidArgument):
        Scenario(2, "nope", 1.1).apply(data)
