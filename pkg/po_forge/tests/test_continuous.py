import pytest
import numpy as np

from po_forge.base import ModelError, UnsupportedModeError
from po_forge.model import preset_models
from po_forge.estimate import Dataset, EstimatorSettings
from po_forge.estimate.continuous import biweight_density, biweight_cdf, \
    BIWEIGHT_VARIANCE, ContinuousBasis, default_bandwidth, quadrature_nodes, \
    continuous_moment_target, estimate_threshold_functional
from po_forge.simulate.continuous import PartialMonotonicityDgp


@pytest.fixture(scope='module')
def pmono_data():
    return PartialMonotonicityDgp().generate(10000, seed=8)[0]


@pytest.fixture
def threshold_settings():
    return EstimatorSettings(
        folds=2, penalty=1e-3, bootstrap=0, seed=1, y_lower=-10.,
        y_upper=10.)


def test_biweight_kernel():
    assert biweight_cdf(-1.) == pytest.approx(0.)
    assert biweight_cdf(0.) == pytest.approx(0.5)
    assert biweight_cdf(1.) == pytest.approx(1.)
    assert biweight_cdf(3.) == pytest.approx(1.)
    assert biweight_density(1.5) == 0.
    nodes, weights = quadrature_nodes(-1., 1.)
    assert weights @ biweight_density(nodes) == pytest.approx(1.)
    assert weights @ (nodes ** 2 * biweight_density(nodes)) == \
        pytest.approx(BIWEIGHT_VARIANCE)


def test_default_bandwidth():
    assert default_bandwidth(10000, 0., 1.) == pytest.approx(0.05)
    assert default_bandwidth(10000, 0., 2., constant=2.) == \
        pytest.approx(0.2)


def test_quadrature_nodes():
    nodes, weights = quadrature_nodes(0., 1., breakpoints=(.25, .5, 2.))
    # three panels of 16 nodes, the out of range breakpoint is clipped
    assert nodes.shape == (48, )
    assert weights.sum() == pytest.approx(1.)
    assert np.all((nodes > 0) & (nodes < 1))
    with pytest.raises(ModelError):
        quadrature_nodes(0., 1., order=4)


def test_moment_target_closed_form():
    basis = ContinuousBasis(q=2, n_covariates=1)
    a, b, h = .3, .6, .05
    x = np.array([[0.], [1.], [2.]])
    target = continuous_moment_target(basis, x, 1, 0., 1., a, b, h)
    assert target.shape == (3, 10)
    np.testing.assert_allclose(target[:, :5], 0.)

    s2 = BIWEIGHT_VARIANCE
    expected = [0., a - b, a ** 2 - b ** 2,
                a ** 3 - b ** 3 + 3 * s2 * h ** 2 * (a - b), 0.]
    for row in target:
        np.testing.assert_allclose(row[5:], expected, atol=1e-12)


def test_moment_target_arguments():
    basis = ContinuousBasis(q=2, n_covariates=0)
    x = np.zeros((2, 0))
    with pytest.raises(ModelError):
        continuous_moment_target(basis, x, 1, 0., 1., .3, .6)
    with pytest.raises(ModelError):
        continuous_moment_target(basis, x, 1, 0., 1., .6, .3, .05)
    with pytest.raises(ModelError):
        continuous_moment_target(basis, x, 1, 0., 1., .3, .6, 0.)

    # a smooth ell vanishing at the ends, ell(w) = w (1 - w)
    target = continuous_moment_target(
        basis, x, 0, 0., 1., ell_prime=lambda w: 1 - 2 * w)
    # int_0^1 (1 - 2w) w^k dw
    np.testing.assert_allclose(
        target[0, :4], [0., -1. / 6, -1. / 6, -3. / 20], atol=1e-12)


def test_basis_blocks():
    basis = ContinuousBasis(q=2, n_covariates=1, degree=2)
    assert basis.block == 4
    design = basis.evaluate([0, 1], [.5, 2.], [[3.], [4.]])
    np.testing.assert_allclose(
        design, [[1, .5, .25, 3, 0, 0, 0, 0], [0, 0, 0, 0, 1, 2, 4, 4]])
    with pytest.raises(ModelError):
        basis.evaluate([0], [.5], [[1., 2.]])


def test_threshold_probability(pmono_data, threshold_settings):
    model = preset_models()['pmono']
    result = estimate_threshold_functional(
        pmono_data, model, '1', .3, .6, settings=threshold_settings)
    assert result.name == 'p_K1'
    assert result.extras['bandwidth'] == pytest.approx(0.05)
    assert abs(result.lambda_hat - .3) < 3 * result.se


def test_threshold_outcome(pmono_data, threshold_settings):
    model = preset_models()['pmono']
    truth = PartialMonotonicityDgp().threshold_outcome(.3, .6, h=.05)
    assert truth == pytest.approx(.435)
    result = estimate_threshold_functional(
        pmono_data, model, '1', .3, .6, treatment='1',
        settings=threshold_settings)
    assert result.name == 'y1_K1'
    assert abs(result.lambda_hat - truth) < 3 * result.se

    with pytest.raises(ModelError, match='bounded'):
        estimate_threshold_functional(
            pmono_data, model, '1', .3, .6, treatment='1',
            settings=EstimatorSettings(folds=2, penalty=1e-3))


def test_threshold_needs_continuous_data(late_model, late_data, pmono_data):
    with pytest.raises(UnsupportedModeError):
        estimate_threshold_functional(late_data, late_model, '1', .3, .6)

    model = preset_models()['pmono']
    no_w = Dataset.from_arrays(
        pmono_data.y, pmono_data.t, pmono_data.z, pmono_data.x,
        treatments=model.treatments.labels,
        instruments=model.instruments.values)
    with pytest.raises(ModelError, match='continuous'):
        estimate_threshold_functional(no_w, model, '1', .3, .6)


def test_pmono_truths():
    dgp = PartialMonotonicityDgp()
    assert dgp.threshold_probability(.3, .6) == pytest.approx(.3)
    assert dgp.threshold_outcome(.3, .6, treatment='0') == 0.
    with pytest.raises(ModelError):
        dgp.threshold_probability(.01, .6, h=.05)

    data, truth = dgp.generate(500, seed=3)
    assert np.all(truth.k0 <= truth.k1)
    assert data.w is not None and data.w.shape == (500, )
    np.testing.assert_array_equal(
        data.t, (np.where(data.z == 1, truth.k1, truth.k0) > data.w))
