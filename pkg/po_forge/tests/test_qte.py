import logging

import pytest
import numpy as np

from po_forge.base import ModelError
from po_forge.model import FunctionalSpec
from po_forge.identify import solve_functional
from po_forge.estimate import EstimatorSettings, estimate_type_functional, \
    make_folds
from po_forge.estimate.qte import QteArm, monotone_cdf, \
    generalized_inverse, bootstrap_quantiles, estimate_qte


def test_monotone_cdf():
    np.testing.assert_array_equal(
        monotone_cdf([-.1, .3, .2, .6, 1.2]), [0, .3, .3, .6, 1])
    np.testing.assert_array_equal(
        monotone_cdf([[.5, .1], [.2, .4]]), [[.5, .5], [.2, .4]])


def test_generalized_inverse():
    grid = [0., 1., 2., 3.]
    cdf = [.1, .5, .5, .9]
    np.testing.assert_array_equal(
        generalized_inverse(cdf, grid, [.1, .3, .5, .6]), [0, 1, 1, 3])
    # never reached
    np.testing.assert_array_equal(generalized_inverse(cdf, grid, [.95]), [3])

    rows = generalized_inverse([cdf, [.5, .5, 1., 1.]], grid, [.5, .9])
    np.testing.assert_array_equal(rows, [[1, 3], [0, 2]])


def test_complier_qte(late_model, late_data):
    settings = EstimatorSettings(folds=2, penalty=0.01, bootstrap=50, seed=2)
    result = estimate_qte(
        late_data, late_model, QteArm('1', ('complier', )),
        QteArm('0', ('complier', )), np.linspace(-3, 5, 81),
        (.25, .5, .75), settings)
    np.testing.assert_allclose(result.qte, 1., atol=0.4)
    assert np.all(np.diff(result.treated_cdf) >= 0)
    assert result.half_width.shape == (3, )
    assert np.all(result.half_width >= 0)

    data = result.to_dict()
    assert data['taus'] == [.25, .5, .75]
    assert data['level'] == 0.95


@pytest.mark.parametrize('grid,taus', [
    ([0., 0., 1.], (.5, )), ([], (.5, )), ([0., 1.], (0., )),
    ([0., 1.], (.5, 1.))])
def test_qte_bad_arguments(late_model, late_data, grid, taus):
    with pytest.raises(ModelError):
        estimate_qte(late_data, late_model, QteArm('1', ('complier', )),
                     QteArm('0', ('complier', )), grid, taus)


def test_arm_label():
    assert QteArm('1', ('complier', )).label == 'y1_complier'
    assert QteArm('1', ('a', ), name='arm').label == 'arm'


def test_bootstrap_quantiles_drops_small_probabilities():
    grid = [0., 1., 2.]
    numerators = [[.1, .3, .5], [.1, .2, .3], [.2, .3, .4], [.2, .4, .4]]
    quantiles, usable = bootstrap_quantiles(
        numerators, [.5, -.001, 0., .4], grid, [.5, .9], p_min=0.)
    np.testing.assert_array_equal(usable, [True, False, False, True])
    np.testing.assert_array_equal(quantiles, [[1, 2], [0, 1]])

    quantiles, usable = bootstrap_quantiles(
        numerators, [.5, -.001, 0., .4], grid, [.5], p_min=.45)
    np.testing.assert_array_equal(usable, [True, False, False, False])
    assert quantiles.shape == (1, 1)


def test_qte_bootstrap_below_p_min(late_model, late_data, caplog):
    settings = EstimatorSettings(folds=2, penalty=0.01, seed=2)
    plan = make_folds(late_data.n, 2, 2)
    group = FunctionalSpec.indicator('p_complier', ('complier', ))
    prob = estimate_type_functional(
        late_data, late_model, solve_functional(late_model, group), None,
        settings, plan)

    # the point estimate sits exactly at the threshold, so about half of
    # the draws fall below it
    settings = EstimatorSettings(
        folds=2, penalty=0.01, seed=2, bootstrap=50, p_min=prob.lambda_hat)
    with caplog.at_level(logging.WARNING, logger='po_forge.estimate.qte'):
        result = estimate_qte(
            late_data, late_model, QteArm('1', ('complier', )),
            QteArm('0', ('complier', )), np.linspace(-3, 5, 41), (.5, ),
            settings, plan)

    assert len(result.warnings) == 1
    assert 'bootstrap draws' in result.warnings[0]
    assert result.warnings[0] in caplog.messages
    assert result.to_dict()['warnings'] == list(result.warnings)
    assert np.all(np.isfinite(result.half_width))
    assert np.all(result.half_width >= 0)
