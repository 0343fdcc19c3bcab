import pytest
import numpy as np

from po_forge.base import ModelError, IllConditionedError
from po_forge.lasso import soft_threshold, fit_lasso, fit_riesz, \
    riesz_as_lasso, penalty_grid, cross_validate_penalty, kkt_violation, \
    cv_losses


@pytest.fixture
def problem(rng):
    n, p = 300, 6
    design = np.hstack([np.ones((n, 1)), rng.standard_normal((n, p - 1))])
    beta = np.array([1., 2., 0., 0., -1.5, 0.])
    response = design @ beta + 0.5 * rng.standard_normal(n)
    weights = rng.uniform(0.5, 1.5, n)
    weights /= weights.sum()
    return design, response, weights


def test_soft_threshold():
    assert soft_threshold(3., 1.) == 2.
    assert soft_threshold(-3., 1.) == -2.
    assert soft_threshold(0.5, 1.) == 0.
    np.testing.assert_array_equal(
        soft_threshold(np.array([-2., 0.2, 2.]), 0.5), [-1.5, 0, 1.5])
    with pytest.raises(ValueError):
        soft_threshold(1., -1.)


def test_unpenalized_is_weighted_least_squares(problem):
    design, response, weights = problem
    fit = fit_lasso(design, response, weights, alpha=0.)
    root = np.sqrt(weights)
    expected = np.linalg.lstsq(
        design * root[:, np.newaxis], response * root, rcond=None)[0]
    np.testing.assert_allclose(fit.coefficients, expected, atol=1e-8)


def test_penalty_grid_zeroes_everything(problem):
    design, response, weights = problem
    grid = penalty_grid(design, response, weights)
    assert grid.shape == (50, )
    assert grid[-1] / grid[0] == pytest.approx(1e-4)
    assert np.all(np.diff(grid) < 0)

    fit = fit_lasso(design, response, weights, alpha=grid[0])
    assert not np.any(fit.coefficients)
    fit = fit_lasso(design, response, weights, alpha=grid[10])
    assert np.any(fit.coefficients)


@pytest.mark.parametrize('alpha', [0.01, 0.1, 1.])
def test_coordinate_descent_optimality(problem, alpha):
    design, response, weights = problem
    fit = fit_lasso(design, response, weights, alpha=alpha)
    assert fit.converged
    assert kkt_violation(fit, design, response, weights) < 1e-6
    # the objective never increases from one sweep to the next
    assert np.all(np.diff(fit.objective_trace) <= 1e-12)


def test_orthonormal_design_closed_form(rng):
    n, p = 64, 5
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    design = np.sqrt(n) * q
    response = rng.standard_normal(n)
    weights = np.full(n, 1 / n)
    linear = design.T @ (weights * response)
    for alpha in (0.01, 0.1, 0.5):
        fit = fit_lasso(design, response, weights, alpha=alpha)
        np.testing.assert_allclose(
            fit.coefficients, soft_threshold(linear, alpha / 2), atol=1e-8)


@pytest.mark.parametrize('seed', range(20))
def test_kkt_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(60, 201))
    p = int(rng.integers(2, 51))
    design = rng.standard_normal((n, p))
    response = design[:, :3] @ rng.standard_normal(min(p, 3)) + \
        rng.standard_normal(n)
    weights = rng.uniform(0.5, 1.5, n)
    weights /= weights.sum()
    alpha = penalty_grid(design, response, weights)[int(rng.integers(1, 30))]
    fit = fit_lasso(design, response, weights, alpha=alpha)
    assert fit.converged
    assert kkt_violation(fit, design, response, weights) < 1e-6


def test_weight_and_penalty_scaling(problem):
    design, response, weights = problem
    fit = fit_lasso(design, response, weights, alpha=0.1)
    scaled = fit_lasso(design, response, 3 * weights, alpha=0.3)
    np.testing.assert_allclose(
        fit.coefficients, scaled.coefficients, atol=1e-7)


def test_riesz_matches_lasso_on_synthetic_response(problem, rng):
    design, _, weights = problem
    targets = design * rng.uniform(0.5, 2., (design.shape[0], 1))
    synthetic = riesz_as_lasso(design, targets, weights)
    for alpha in (0., 0.05, 0.5):
        riesz = fit_riesz(design, targets, weights, alpha=alpha)
        lasso = fit_lasso(design, synthetic, weights, alpha=alpha)
        np.testing.assert_allclose(
            riesz.coefficients, lasso.coefficients, atol=1e-6)
        assert kkt_violation(
            riesz, design, weights=weights, targets=targets) < 1e-6


def test_riesz_as_lasso_needs_more_rows():
    design = np.ones((3, 4))
    with pytest.raises(IllConditionedError):
        riesz_as_lasso(design, design)


def test_cv_prefers_larger_penalty_on_ties(problem):
    design, _, weights = problem
    response = np.zeros(design.shape[0])
    alpha = cross_validate_penalty(
        design, response, weights, folds=5, seed=2)
    assert alpha == penalty_grid(design, response, weights)[0]


def test_cv_selects_from_grid(problem):
    design, response, weights = problem
    grid, losses = cv_losses(design, response, weights, folds=5, seed=1)
    alpha = cross_validate_penalty(design, response, weights, folds=5,
                                   seed=1)
    assert alpha in grid
    assert losses[list(grid).index(alpha)] == losses.min()


def test_bad_inputs(problem):
    design, response, weights = problem
    with pytest.raises(ModelError):
        fit_lasso(design, response[:-1], weights)
    with pytest.raises(ModelError):
        fit_lasso(design, response, weights, alpha=-1.)
    with pytest.raises(ModelError):
        cross_validate_penalty(design, response, weights, folds=1)
