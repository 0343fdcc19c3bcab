import math

import pytest
import numpy as np

from po_forge.base import ModelError
from po_forge.estimate import EstimatorSettings, NuisanceOverride
from po_forge.simulate import late3_dgp, mto_eimc_dgp
from po_forge.simulate.continuous import PartialMonotonicityDgp
from po_forge.simulate.study import MonteCarloStudy, StudyTarget, \
    functional_targets, threshold_target, monte_carlo, summary_table


@pytest.fixture
def study_settings():
    return EstimatorSettings(folds=2, penalty=0.01, bootstrap=0, seed=0)


def make_study(targets, settings, **kwargs):
    kwargs.setdefault('reps', 4)
    kwargs.setdefault('n', 600)
    kwargs.setdefault('seed', 9)
    return MonteCarloStudy(
        dgp=late3_dgp(), targets=targets, settings=settings, **kwargs)


def test_functional_targets(study_settings):
    spec = late3_dgp()
    targets = functional_targets(spec, ['p_complier', 'late'],
                                 study_settings)
    assert [t.name for t in targets] == ['p_complier', 'late']
    assert targets[0].truth == pytest.approx(.5)
    assert targets[1].truth == pytest.approx(1.)

    rigged = functional_targets(
        spec, ['p_complier'], override=NuisanceOverride(beta=0.),
        suffix='_rigged')
    assert rigged[0].name == 'p_complier_rigged'
    assert rigged[0].functional == 'p_complier'

    with pytest.raises(ModelError):
        functional_targets(spec, ['p_nobody'])


def test_threshold_target():
    target = threshold_target(PartialMonotonicityDgp(), .3, .6)
    assert target.name == 'p_K1'
    assert target.truth == pytest.approx(.3)
    assert threshold_target(
        PartialMonotonicityDgp(), .3, .6, treatment='1').truth == \
        pytest.approx(.435)
    with pytest.raises(ModelError):
        threshold_target(PartialMonotonicityDgp(), .3, .6, c='0')


async def test_threads_do_not_change_the_summary(study_settings):
    targets = functional_targets(late3_dgp(), ['p_complier'], study_settings)
    single = make_study(targets, study_settings, threads=1)
    multi = make_study(targets, study_settings, threads=3)
    first = await single.run_study()
    second = await multi.run_study()
    assert first.to_dict() == second.to_dict()
    assert [r.seed for r in single.records] == \
        [r.seed for r in multi.records]
    assert single.completed == 4
    assert not single.active

    summary = first.target('p_complier')
    assert summary.failures == 0
    assert abs(summary.bias) < 0.2
    assert 0 <= summary.coverage <= 1


async def test_rigged_nuisances_are_caught(study_settings):
    spec = late3_dgp()
    targets = functional_targets(
        spec, ['p_complier'], override=NuisanceOverride(beta=0., gamma=0.),
        suffix='_rigged')
    study = make_study(targets, study_settings)
    summary = (await study.run_study()).target('p_complier_rigged')
    assert summary.mean == 0.
    assert summary.bias == pytest.approx(-.5)
    assert summary.coverage == 0.


async def test_failing_target_is_recorded(study_settings):
    def broken(data, settings):
        raise ModelError('no estimate')

    targets = functional_targets(late3_dgp(), ['p_complier'], study_settings)
    targets.append(StudyTarget(name='broken', truth=0., estimator=broken))
    study = make_study(targets, study_settings)
    summary = await study.run_study()

    broken_summary = summary.target('broken')
    assert broken_summary.failures == 4
    assert math.isnan(broken_summary.mean)
    assert summary.target('p_complier').failures == 0
    assert all(len(r.errors) == 1 for r in study.records)
    assert all(np.isnan(r.estimates[1]) for r in study.records)


@pytest.mark.parametrize('kwargs', [
    {'reps': 1}, {'threads': 0}, {'interval': 'wald'}, {'level': 1.},
    {'interval': 'bootstrap'}])
def test_study_check(study_settings, kwargs):
    targets = functional_targets(late3_dgp(), ['p_complier'], study_settings)
    with pytest.raises(ModelError):
        make_study(targets, study_settings, **kwargs).check()
    with pytest.raises(ModelError):
        MonteCarloStudy(dgp=late3_dgp(), targets=()).check()


def test_monte_carlo_with_bootstrap_intervals():
    settings = EstimatorSettings(
        folds=2, penalty=0.01, bootstrap=99, y_lower=-10., y_upper=10.)
    targets = functional_targets(late3_dgp(), ['p_complier', 'late'],
                                 settings)
    summary = monte_carlo(
        late3_dgp(), targets, reps=3, n=600, settings=settings, seed=1,
        interval='bootstrap')
    assert summary.interval == 'bootstrap'
    assert summary.reps == 3

    table = summary_table(summary)
    assert table['name'] == ['p_complier', 'late']
    assert table['truth'] == [pytest.approx(.5), pytest.approx(1.)]
    assert set(table) == {'name', 'truth', 'bias', 'mc_sd', 'mc_se',
                          'mean_se', 'coverage'}


@pytest.mark.slow
def test_mto_outcome_moment_is_unbiased():
    settings = EstimatorSettings(
        folds=2, penalty=1e-3, bootstrap=0, y_lower=-10., y_upper=10.)
    spec = mto_eimc_dgp()
    targets = functional_targets(spec, ['y10_CN', 'p_CN'], settings)
    summary = monte_carlo(
        spec, targets, reps=500, n=2000, settings=settings, seed=3,
        threads=4)
    for name in ('y10_CN', 'p_CN'):
        target = summary.target(name)
        assert target.failures == 0
        assert abs(target.bias) < 3 * target.mc_se
        assert target.mean_se == pytest.approx(target.mc_sd, rel=0.15)
