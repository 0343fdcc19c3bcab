import pytest
import numpy as np

from po_forge.base import ModelError, PositivityError
from po_forge.model import preset_models, validate_model, model_to_dict, \
    model_from_dict, load_model, dump_model, OutcomeTransform, Combination, \
    ModelSpec, TreatmentSpace, InstrumentSpace, SupportRestriction, \
    ResponseType, FunctionalSpec, ell_vector, response_matrix_types, \
    response_matrix_outcome, OUTCOME_FUNCTIONAL


@pytest.mark.parametrize('name', ['mto7', 'headstart5', 'late3', 'pmono'])
def test_presets_are_valid(name):
    assert validate_model(preset_models()[name]) == []


def test_mto_registry_names(mto_model):
    names = [f.name for f in mto_model.functionals]
    for name in ('p_CN', 'p_CC', 'p_CA', 'y00_CN', 'y11_CA', 'cde0', 'cde1',
                 'cte', 'late'):
        assert name in names
    # components are declared before the functionals combining them
    assert names.index('p_compliers') < names.index('late')


def test_invalid_model_diagnostics():
    model = ModelSpec(
        treatments=TreatmentSpace(labels=('a', )),
        instruments=InstrumentSpace(values=('0', '1')),
        support=SupportRestriction(types=(
            ResponseType(assignment=('a', 'a')),
            ResponseType(assignment=('a', 'a')),
            ResponseType(assignment=('a', 'b', 'a')))),
        functionals=(FunctionalSpec.indicator('p_x', ['missing']), ))
    diagnostics = validate_model(model)
    assert any('at least 2 treatments' in d for d in diagnostics)
    assert any('pairwise distinct' in d for d in diagnostics)
    assert any('expected 2' in d for d in diagnostics)
    assert any('unknown types' in d for d in diagnostics)


def test_derived_needs_declared_components(late_model):
    functionals = (FunctionalSpec.derived(
        'ratio', 'ratio', ['p_complier', 'p_later']), ) + \
        late_model.functionals
    diagnostics = validate_model(late_model.with_functionals(functionals))
    assert any('undeclared components' in d for d in diagnostics)


def test_model_dict_round_trip(mto_model):
    assert model_from_dict(model_to_dict(mto_model)) == mto_model


def test_model_dict_rejects_unknown_keys(late_model):
    data = model_to_dict(late_model)
    data['colour'] = 'blue'
    with pytest.raises(ModelError):
        model_from_dict(data)


def test_load_model_file(tmp_path, late_model):
    filename = str(tmp_path / 'late.json')
    dump_model(filename, late_model)
    assert load_model(filename) == late_model
    assert load_model('preset:late3') == late_model

    with pytest.raises(ModelError):
        load_model('preset:unknown')


def test_ell_vector(late_model):
    ell = ell_vector(late_model, late_model.functional('p_complier'))
    np.testing.assert_array_equal(ell, [0, 1, 0])

    with pytest.raises(ModelError):
        late_model.functional('p_nobody')


def test_response_matrix(late_model):
    np.testing.assert_array_equal(
        response_matrix_types(late_model),
        [[1, 0, 1, 0], [1, 0, 0, 1], [0, 1, 0, 1]])


@pytest.mark.parametrize('t', ['00', '01', '10', '11'])
def test_outcome_matrix_selects_treatment_columns(mto_model, t):
    omega = response_matrix_types(mto_model)
    d = mto_model.treatments.d
    k = mto_model.treatments.index(t)
    columns = [j * d + k for j in range(mto_model.instruments.q)]
    np.testing.assert_array_equal(
        response_matrix_outcome(mto_model, t), omega[:, columns])


def test_outcome_transforms():
    y = np.array([-3., 0.5, 4.])
    np.testing.assert_array_equal(OutcomeTransform()(y), y)
    clipped = OutcomeTransform().clipped(-1, 1)
    assert clipped.bounded
    np.testing.assert_array_equal(clipped(y), [-1, 0.5, 1])
    np.testing.assert_array_equal(
        OutcomeTransform.indicator(0.5)(y), [1, 1, 0])
    # only the identity gets clipped
    indicator = OutcomeTransform.indicator(0.)
    assert indicator.clipped(-1, 1) is indicator


def test_combination_gradients():
    values = {'a': (3., {'a': 1.}), 'b': (2., {'b': 1.})}
    value, grad = Combination('ratio', ('a', 'b')).evaluate_with_gradient(
        values)
    assert value == pytest.approx(1.5)
    assert grad['a'] == pytest.approx(0.5)
    assert grad['b'] == pytest.approx(-0.75)

    value, grad = Combination(
        'affine', ('a', 'b'), (2., -1.), 1.).evaluate_with_gradient(values)
    assert value == pytest.approx(5.)
    assert grad == {'a': 2., 'b': -1.}

    with pytest.raises(PositivityError):
        Combination('ratio', ('a', 'b')).evaluate_with_gradient(
            {'a': (1., {'a': 1.}), 'b': (1e-4, {'b': 1.})}, p_min=0.005)


def test_outcome_functional_needs_treatment(late_model):
    bad = FunctionalSpec.indicator('y_c', ['complier'],
                                   kind=OUTCOME_FUNCTIONAL)
    diagnostics = validate_model(late_model.with_functionals((bad, )))
    assert any('no target treatment' in d for d in diagnostics)
