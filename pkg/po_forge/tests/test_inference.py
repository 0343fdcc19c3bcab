from types import SimpleNamespace

import pytest
import numpy as np

from po_forge.base import ModelError, PositivityError
from po_forge.model import FunctionalSpec
from po_forge.estimate import make_folds
from po_forge.inference import analytic_se, multiplier_bootstrap, \
    multiplier_weights, bootstrap_ci, delta_method, linearize, \
    evaluate_combination, write_draws_csv, MIN_DRAWS


def make_result(name, value, psi, weights=None):
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[0]
    weights = np.full(n, 1. / n) if weights is None else np.asarray(weights)
    return SimpleNamespace(
        name=name, lambda_hat=value, psi=psi, weights=weights)


@pytest.fixture
def ratio_results(rng):
    n = 400
    return {
        'num': make_result('num', 0.6, rng.standard_normal(n)),
        'den': make_result('den', 0.4, rng.standard_normal(n)),
    }


@pytest.fixture
def registry():
    return {'ratio': FunctionalSpec.derived('ratio', 'ratio',
                                            ['num', 'den'])}


def test_analytic_se():
    assert analytic_se([1., -1., 1., -1.]) == pytest.approx(0.5)
    assert analytic_se(
        [1., 1., 1., 1.], [.1, .2, .3, .4]) == pytest.approx(np.sqrt(.3))
    with pytest.raises(ModelError):
        analytic_se([1.])


def test_ones_law_is_degenerate_for_centered_psi():
    result = make_result('a', 2., [1., -1., 2., -2.])
    draws = multiplier_bootstrap([result], B=5, weight_law='ones')
    np.testing.assert_allclose(draws.column('a'), 2.)


def test_bootstrap_is_reproducible_and_shares_multipliers(rng):
    psi = rng.standard_normal(50)
    results = [make_result('a', 1., psi), make_result('b', -1., psi)]
    first = multiplier_bootstrap(results, B=30, seed=7)
    second = multiplier_bootstrap(results, B=30, seed=7)
    np.testing.assert_array_equal(first.draws, second.draws)
    np.testing.assert_allclose(
        first.column('a') - 1., first.column('b') + 1.)

    other = multiplier_bootstrap(results, B=30, seed=8)
    assert not np.allclose(first.draws, other.draws)


def test_bootstrap_spread_matches_analytic_se(rng):
    result = make_result('a', 0., rng.standard_normal(200))
    draws = multiplier_bootstrap([result], B=4000, seed=1)
    assert np.std(draws.column('a')) == pytest.approx(
        analytic_se(result), rel=0.05)


def test_rademacher_weights():
    w = multiplier_weights(1000, 3, 'rademacher', seed=2)
    assert set(np.unique(w)) == {-1., 1.}
    with pytest.raises(ModelError):
        multiplier_weights(10, 0, 'cauchy')


def test_bootstrap_rejects_mismatched_results():
    with pytest.raises(ModelError):
        multiplier_bootstrap(
            [make_result('a', 0., [1., -1.]),
             make_result('b', 0., [1., -1., 0.])], B=10)
    with pytest.raises(ModelError):
        multiplier_bootstrap([make_result('a', 0., [1., -1.])], B=0)


def test_bootstrap_rejects_mismatched_fold_plans(rng):
    psi = rng.standard_normal(40)
    first, second = make_result('a', 0., psi), make_result('b', 0., psi)
    first.fold_plan = make_folds(40, 2, seed=1)
    second.fold_plan = make_folds(40, 2, seed=1)
    draws = multiplier_bootstrap([first, second], B=5)
    assert draws.names == ('a', 'b')

    second.fold_plan = make_folds(40, 2, seed=2)
    with pytest.raises(ModelError, match='fold plan'):
        multiplier_bootstrap([first, second], B=5)
    second.fold_plan = make_folds(40, 4, seed=1)
    with pytest.raises(ModelError, match='fold plan'):
        multiplier_bootstrap([first, second], B=5)
    # a no-split result does not mix with a cross-fitted one
    second.fold_plan = None
    with pytest.raises(ModelError, match='fold plan'):
        multiplier_bootstrap([first, second], B=5)


def test_bootstrap_ci_is_symmetric():
    draws = 1. + np.linspace(-2, 2, 101)
    ci = bootstrap_ci(draws, 1., level=0.9)
    assert ci.half_width == pytest.approx(np.quantile(
        np.abs(draws - 1.), 0.9))
    assert ci.lower == pytest.approx(1. - ci.half_width)
    assert ci.covers(1.)
    assert not ci.warnings

    few = bootstrap_ci(draws[:MIN_DRAWS - 1], 1.)
    assert few.warnings
    with pytest.raises(ModelError):
        bootstrap_ci(draws, 1., level=1.)


def test_linearize_ratio(ratio_results, registry):
    estimate = linearize('ratio', registry, ratio_results)
    assert estimate.point == pytest.approx(1.5)
    assert estimate.gradient['num'] == pytest.approx(2.5)
    assert estimate.gradient['den'] == pytest.approx(-0.6 / 0.16)
    expected = 2.5 * ratio_results['num'].psi - \
        0.6 / 0.16 * ratio_results['den'].psi
    np.testing.assert_allclose(estimate.psi, expected)
    assert estimate.se == pytest.approx(analytic_se(expected))


def test_delta_method_interval(ratio_results, registry):
    draws = multiplier_bootstrap(list(ratio_results.values()), B=500,
                                 seed=4)
    estimate = delta_method('ratio', registry, ratio_results, draws, 0.95)
    star = draws.column('num') / draws.column('den')
    np.testing.assert_allclose(estimate.draws, star)
    assert estimate.ci.half_width == pytest.approx(
        np.quantile(np.abs(star - 1.5), 0.95))
    assert estimate.to_dict()['ci']['level'] == 0.95


def test_delta_method_positivity(ratio_results, registry):
    results = dict(ratio_results)
    results['den'] = make_result('den', 1e-4, results['den'].psi)
    with pytest.raises(PositivityError):
        delta_method('ratio', registry, results, p_min=0.005)


def test_evaluate_combination_on_arrays(registry):
    values = {'num': np.array([1., 2.]), 'den': np.array([2., 4.])}
    np.testing.assert_allclose(
        evaluate_combination('ratio', registry, values), [.5, .5])
    with pytest.raises(ModelError):
        evaluate_combination('unknown', registry, values)


def test_write_draws(tmp_path, ratio_results):
    draws = multiplier_bootstrap(list(ratio_results.values()), B=3)
    filename = tmp_path / 'draws.csv'
    write_draws_csv(str(filename), draws)
    lines = filename.read_text(encoding='utf-8').splitlines()
    assert lines[0] == 'replicate,functional,value'
    assert len(lines) == 1 + 3 * 2
    assert lines[1].startswith('0,num,')
