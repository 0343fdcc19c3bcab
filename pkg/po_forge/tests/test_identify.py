import pytest
import numpy as np

from po_forge.base import ModelError, PositivityError, UnsupportedModeError
from po_forge.model import preset_models, ModelSpec, TreatmentSpace, \
    InstrumentSpace, SupportRestriction, response_matrix_outcome
from po_forge.identify import solve_functional, kappa_weights, \
    observed_kappa, moment_target, identification_report, \
    check_rank_condition, check_nullspace_condition, solve_type_functional, \
    solve_outcome_functional


def test_late_complier_weights(late_model):
    solution = solve_functional(late_model, late_model.functional(
        'p_complier'))
    assert solution.identified
    assert solution.residual < 1e-12
    # minimum norm among the solutions (a, a - 1, -a, 1 - a)
    np.testing.assert_allclose(
        solution.blocks, [[.5, -.5], [-.5, .5]], atol=1e-12)


@pytest.mark.parametrize('name,expected', [
    ('y1_complier', [-1, 1]), ('y0_complier', [1, -1])])
def test_late_outcome_weights(late_model, name, expected):
    solution = solve_functional(late_model, late_model.functional(name))
    assert solution.identified
    np.testing.assert_allclose(solution.s, expected, atol=1e-12)


def test_kappa_weights(late_model):
    solution = solve_functional(late_model, late_model.functional(
        'p_complier'))
    kappa = kappa_weights(solution, [.25, .75])
    assert kappa.shape == (1, 2, 2)
    np.testing.assert_allclose(kappa[0, 0], [2, -2])
    np.testing.assert_allclose(kappa[0, 1], [-2 / 3, 2 / 3])

    observed = observed_kappa(
        solution, np.array([[.25, .75]] * 3), [0, 1, 1], [0, 0, 1])
    np.testing.assert_allclose(observed, [2, -2, 2 / 3])

    with pytest.raises(PositivityError):
        kappa_weights(solution, [0., 1.])


def test_outcome_kappa_uses_treatment_mask(late_model):
    solution = solve_functional(late_model, late_model.functional(
        'y1_complier'))
    kappa = observed_kappa(solution, [.5, .5], [1., 0., 1.], [0, 1, 1])
    np.testing.assert_allclose(kappa, [-2, 0, 2])


def test_moment_target_sums_blocks(late_model):
    solution = solve_functional(late_model, late_model.functional(
        'y1_complier'))
    basis = late_model.basis(1)
    x = np.array([[2.], [-1.]])
    target = moment_target(solution, basis, x)
    # columns are 1{z=0}[1, x] and 1{z=1}[1, x]
    np.testing.assert_allclose(
        target, [[-1, -2, 1, 2], [-1, 1, 1, -1]], atol=1e-12)


def test_unidentified_mediation_outcomes(mto_model):
    report = identification_report(mto_model)
    assert not report.verdict('y00_CN').identified
    assert not report.verdict('y11_CA').identified
    assert report.verdict('y00_CNCC').identified
    assert report.verdict('p_CN').identified
    # derived functionals inherit from their components
    assert not report.verdict('cde0').identified
    assert report.verdict('late').identified
    assert report.verdict('y00_CN').residual > 1e-3


def test_late_efficiency_checks(late_model):
    assert check_rank_condition(late_model) == {'0': True, '1': True}
    assert check_nullspace_condition(late_model)
    report = identification_report(late_model)
    assert report.efficient
    data = report.to_dict()
    assert data['model'] == 'late3'
    assert {f['name'] for f in data['functionals']} == {
        f.name for f in late_model.functionals}


def test_invalid_model_report():
    model = ModelSpec(
        treatments=TreatmentSpace(labels=('0', )),
        instruments=InstrumentSpace(values=('0', )),
        support=SupportRestriction(types=()))
    report = identification_report(model)
    assert report.diagnostics
    assert not report.verdicts


def test_continuous_model_has_no_report():
    with pytest.raises(UnsupportedModeError):
        identification_report(preset_models()['pmono'])


def test_solve_shape_mismatch():
    with pytest.raises(ModelError):
        solve_type_functional(np.eye(3), [1., 0.], 3)


def test_mto_identification_goldens(mto_model):
    report = identification_report(mto_model)
    for label in mto_model.support.labels:
        verdict = report.verdict(f'p_{label}')
        assert verdict.identified
        assert verdict.residual < 1e-8
    verdict = report.verdict('y00_CNCC')
    np.testing.assert_allclose(verdict.s, [1, -1], atol=1e-10)


def test_headstart_is_efficient():
    model = preset_models()['headstart5']
    report = identification_report(model)
    assert all(report.verdict(f'p_{label}').identified
               for label in model.support.labels)
    assert check_rank_condition(model) == {'n': True, 'c': True, 'h': True}
    assert check_nullspace_condition(model)
    assert report.efficient


def test_solve_outcome_functional(late_model):
    omega = response_matrix_outcome(late_model, '1')
    solution = solve_outcome_functional(omega, [0, 1, 0], '1')
    assert solution.identified
    assert solution.target_treatment == '1'
    np.testing.assert_allclose(solution.s, [-1, 1], atol=1e-10)

    # the never takers never take treatment 1
    solution = solve_outcome_functional(omega, [1, 0, 0], '1')
    assert not solution.identified
