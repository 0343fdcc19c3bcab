from dataclasses import replace

import pytest
import numpy as np

from po_forge.base import ModelError
from po_forge.model import OutcomeTransform, DERIVED_FUNCTIONAL
from po_forge.identify import solve_functional
from po_forge.simulate import late3_dgp, mto_eimc_dgp, headstart_dgp, \
    dgp_presets, oracle_value, oracle_values, kappa_population_moment, \
    enumerate_population, validate_dgp, dgp_to_dict, dgp_from_dict, \
    load_dgp, dump_dgp, generate_data, CovariateCell, OutcomeLaw


@pytest.mark.parametrize('weighted,y1,y0', [
    (False, .875, .375), (True, .9375, .4375)])
def test_late3_oracles(weighted, y1, y0):
    values = oracle_values(late3_dgp(weighted=weighted))
    assert values['p_complier'] == pytest.approx(.5)
    assert values['y1_complier'] == pytest.approx(y1)
    assert values['y0_complier'] == pytest.approx(y0)
    assert values['late'] == pytest.approx(1.)


def test_weighted_target_masses():
    np.testing.assert_allclose(
        late3_dgp(weighted=True).target_masses(), [.25, .75])
    np.testing.assert_allclose(late3_dgp().target_masses(), [.5, .5])


@pytest.mark.parametrize('spec', [late3_dgp(), late3_dgp(weighted=True),
                                  mto_eimc_dgp(), headstart_dgp()])
def test_kappa_moment_equals_oracle(spec):
    model = spec.model
    for functional in model.functionals:
        if functional.kind == DERIVED_FUNCTIONAL:
            continue
        solution = solve_functional(model, functional)
        if not solution.identified:
            continue
        assert kappa_population_moment(spec, solution) == pytest.approx(
            oracle_value(spec, functional), abs=1e-10)


def test_population_masses():
    population = enumerate_population(mto_eimc_dgp())
    assert population.mass.sum() == pytest.approx(1.)
    # 2 cells, 7 types, 2 instrument values
    assert population.mass.shape == (28, )


def test_generate_is_deterministic():
    spec = late3_dgp()
    first, truth = spec.generate(300, seed=4)
    second, _ = spec.generate(300, seed=4)
    np.testing.assert_array_equal(first.y, second.y)
    np.testing.assert_array_equal(first.t, second.t)
    third, _ = spec.generate(300, seed=5)
    assert not np.array_equal(first.y, third.y)
    np.testing.assert_array_equal(generate_data(spec, 300, 4)[0].y, first.y)

    # observed outcomes are the potential outcome of the observed treatment
    np.testing.assert_array_equal(
        first.y, truth.potential[np.arange(300), first.t])
    assert set(np.unique(first.x)) <= {0., 1.}
    with pytest.raises(ModelError):
        spec.generate(0)


def test_generated_type_shares():
    spec = mto_eimc_dgp()
    data, truth = spec.generate(20000, seed=1)
    shares = np.bincount(truth.types, minlength=7) / data.n
    np.testing.assert_allclose(
        shares, spec.base_type_probabilities(), atol=0.015)


def test_weighted_generate_attaches_cell_weights():
    data, truth = late3_dgp(weighted=True).generate(200, seed=2)
    raw = np.where(truth.cells == 1, 3., 1.)
    np.testing.assert_allclose(data.omega, raw / raw.sum())


def test_dgp_dict_round_trip(tmp_path):
    spec = late3_dgp(weighted=True)
    assert dgp_from_dict(dgp_to_dict(spec)) == spec

    filename = str(tmp_path / 'dgp.json')
    dump_dgp(filename, spec)
    assert load_dgp(filename) == spec
    assert load_dgp('preset:mto7') == mto_eimc_dgp()
    assert set(dgp_presets()) == {
        'late3', 'late3-weighted', 'mto7', 'headstart5'}

    with pytest.raises(ModelError):
        load_dgp('preset:nothing')


def test_dgp_dict_errors():
    data = dgp_to_dict(late3_dgp())
    with pytest.raises(ModelError):
        dgp_from_dict(dict(data, colour='red'))
    with pytest.raises(ModelError):
        dgp_from_dict({k: v for k, v in data.items() if k != 'model'})

    spec = dgp_from_dict({'model': 'preset:late3',
                          'cells': [{'probability': 1.}]})
    assert spec.model.name == 'late3'
    assert validate_dgp(spec) == []


def test_validate_dgp():
    spec = late3_dgp()
    assert validate_dgp(spec) == []

    bad = replace(spec, cells=(
        CovariateCell(probability=.6, covariates=(0., )),
        CovariateCell(probability=.3, covariates=(1., ),
                      instrument_probabilities=(1e-4, 1 - 1e-4))))
    errors = validate_dgp(bad)
    assert any('sum to 1' in e for e in errors)
    assert any('below' in e for e in errors)

    bad = replace(spec, outcomes=spec.outcomes + (
        (('never', '2'), OutcomeLaw.gaussian(0.)), ))
    assert any('unknown pair' in e for e in validate_dgp(bad))

    bad = replace(spec, default_outcome=OutcomeLaw(
        means=(0., 1.), sds=(1., ), weights=(1., )))
    assert validate_dgp(bad)
    with pytest.raises(ModelError):
        oracle_values(bad)


def test_clipped_and_indicator_oracles():
    spec = late3_dgp()
    functional = spec.model.functional('y1_complier')
    clipped = functional.rho.clipped(-50., 50.)
    assert oracle_value(spec, functional, rho=clipped) == \
        pytest.approx(.875)
    # the two cells sit symmetrically around the threshold
    value = oracle_value(
        spec, functional, rho=OutcomeTransform.indicator(1.75))
    assert value == pytest.approx(.25)
