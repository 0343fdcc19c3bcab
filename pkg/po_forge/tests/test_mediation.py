import pytest
import numpy as np

from po_forge.base import ModelError, PositivityError
from po_forge.model import MTO_PROBABILITIES
from po_forge.estimate import EstimatorSettings, make_folds, estimate_named
from po_forge.estimate.mediation import mediation_cn, mediation_ca, \
    implied_late, derived_mediation_effects, mediation_registry, \
    MEDIATION_EFFECTS
from po_forge.inference import multiplier_bootstrap
from po_forge.simulate import mto_eimc_dgp, oracle_value


@pytest.fixture(scope='module')
def mto_spec():
    return mto_eimc_dgp()


@pytest.fixture(scope='module')
def mto_data(mto_spec):
    return mto_spec.generate(20000, seed=21)[0]


@pytest.fixture
def mediation_settings():
    return EstimatorSettings(
        folds=2, penalty=1e-3, bootstrap=0, seed=5, y_lower=-10.,
        y_upper=10.)


@pytest.mark.parametrize('cde0,cde1,cte,expected', [
    (0.024, 0.048, 0.059, 0.039),
    (0.127, -0.003, 0.132, 0.070),
    (-0.042, -0.074, -0.412, -0.106),
    (0.498, 2.928, 2.479, 1.840)])
def test_implied_late_of_published_effects(cde0, cde1, cte, expected):
    # NN, NA, CN, CC, CA, AN, AA
    p_cn, p_cc, p_ca = MTO_PROBABILITIES[2:5]
    late = implied_late(p_cn, p_ca, p_cc, cde0, cde1, cte)
    assert late == pytest.approx(expected, abs=0.005)


def test_implied_late_on_draws():
    ones = np.ones(3)
    late = implied_late(ones, ones, 2 * ones, ones, 2 * ones,
                        np.array([0., 1., 2.]))
    np.testing.assert_allclose(late, [.75, 1.25, 1.75])

    with pytest.raises(PositivityError):
        implied_late(0., 0., 0., 1., 1., 1., p_min=0.005)


@pytest.mark.parametrize('name,score', [
    ('y00_CN', mediation_cn), ('y11_CA', mediation_ca)])
def test_mediation_scores_match_oracle(
        mto_spec, mto_data, mediation_settings, name, score):
    truth = oracle_value(mto_spec, mto_spec.model.functional(name))
    result = score(mto_data, settings=mediation_settings)
    assert result.name == name
    assert result.folds == 2
    assert 0 < result.se < 0.05
    assert abs(result.lambda_hat - truth) < 3 * result.se


def test_mediation_without_splitting(mto_spec, mto_data):
    settings = EstimatorSettings(
        folds=1, penalty=1e-3, bootstrap=0, y_lower=-10., y_upper=10.)
    truth = oracle_value(mto_spec, mto_spec.model.functional('y00_CN'))
    result = mediation_cn(mto_data, settings=settings)
    assert result.folds == 1
    assert abs(result.lambda_hat - truth) < 3 * result.se


def test_mediation_needs_bounded_outcomes(mto_data):
    with pytest.raises(ModelError, match='bounded'):
        mediation_cn(mto_data, settings=EstimatorSettings(folds=2))


def test_mediation_needs_mto_labels(late_data, mediation_settings):
    with pytest.raises(ModelError, match='MTO'):
        mediation_ca(late_data, settings=mediation_settings)


def test_derived_mediation_effects(mto_spec, mto_data, mediation_settings):
    plan = make_folds(mto_data.n, 2, seed=5)
    cache = {}
    for name in MEDIATION_EFFECTS:
        estimate_named(mto_data, mto_spec.model, name, mediation_settings,
                       fold_plan=plan, mediation=True, cache=cache)
    assert 'y00_CN' in cache and 'y11_CA' in cache
    assert cache['y00_CN'].fold_plan is plan

    draws = multiplier_bootstrap(list(cache.values()), B=200, seed=1)
    effects = derived_mediation_effects(cache, draws)
    assert set(effects) == set(MEDIATION_EFFECTS) | {'implied_late'}

    # the implied LATE is the same functional as the LATE
    implied, late = effects['implied_late'], effects['late']
    assert implied.point == pytest.approx(late.point)
    assert implied.se == pytest.approx(late.se)
    assert implied.ci is not None

    registry = mediation_registry()
    for name in MEDIATION_EFFECTS:
        truth = oracle_value(mto_spec, registry[name],
                             list(registry.values()))
        assert abs(effects[name].point - truth) < 3 * effects[name].se
