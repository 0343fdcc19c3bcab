"""Mediation
=============

Orthogonal scores for the two MTO outcome moments that need the exogeneity
of irrelevant mediator choices (EIMC), ``E[rho(Y*(0,0)) 1{T* = CN}]`` and
``E[rho(Y*(1,1)) 1{T* = CA}]``, and the mediation effects built from them.

Treatments are labelled ``'00'``, ``'01'``, ``'10'`` and ``'11'`` (relocation
then mental health) and instruments ``'0'`` and ``'1'``.

The nuisances of the ``CN`` score are

* ``m(Z, X)``, the regression of ``rho(Y) 1{T = 00}`` on ``b(Z, X)``;
* ``p_00`` and ``p_10``, the regressions of ``1{T = 00}`` and ``1{T = 10}``;
* ``kappa_c``, the Riesz representer of ``b(0, X) - b(1, X)``;
* ``u(X) = f(X)'(pi_cc + pi_cn)`` and ``c(X) = f(X)'pi_cn / u(X)``, where
  ``pi_cc`` and ``pi_cn`` are the Lasso regressions of
  ``1{T in (00, 10)} kappa_c`` and ``-1{T = 10} kappa_c`` on
  ``f(X) = [1, X]``.

The ``CA`` score mirrors it with treatments ``11`` and ``01`` and the
instrument values swapped.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Mapping, Dict

import numpy as np

from po_forge.base import ModelError, PositivityError
from po_forge.model import BasisSpec, OutcomeTransform, preset_models
from po_forge.estimate import Dataset, EstimatorSettings, EstimateResult, \
    FoldPlan, fit_nuisance, finish_estimate, make_folds, task_seed
from po_forge.inference import BootstrapDraws, DeltaEstimate, delta_method, \
    bootstrap_ci, analytic_se

__all__ = (
    'FLOOR_WARNING_SHARE', 'mediation_cn', 'mediation_ca', 'implied_late',
    'derived_mediation_effects', 'mediation_registry', 'MEDIATION_EFFECTS')

logger = logging.getLogger(__name__)

FLOOR_WARNING_SHARE = 0.05
"""A warning is attached when ``u(X)`` is floored on more than this share of
the sample.
"""

MEDIATION_EFFECTS = ('cde0', 'cde1', 'cte', 'late')


@dataclass(frozen=True)
class _Side:
    name: str
    target: str
    other: str
    hi: str
    lo: str
    cc_sign: float


_CN = _Side('y00_CN', target='00', other='10', hi='0', lo='1', cc_sign=1.)
_CA = _Side('y11_CA', target='11', other='01', hi='1', lo='0', cc_sign=-1.)


def _index(labels, label: str, what: str) -> int:
    if label not in labels:
        raise ModelError(
            f'Mediation scores need an MTO-shaped data set, {what} '
            f'"{label}" is missing from {list(labels)}')
    return labels.index(label)


def _bounded(rho: Optional[OutcomeTransform], settings: EstimatorSettings
             ) -> OutcomeTransform:
    rho = rho or OutcomeTransform()
    if rho.bounded:
        return rho
    if settings.y_lower is None or settings.y_upper is None:
        raise ModelError(
            'Mediation scores need a bounded outcome transform; set y_lower '
            'and y_upper to clip identity outcomes')
    return rho.clipped(settings.y_lower, settings.y_upper)


def _mediation(
        side: _Side, data: Dataset, basis: Optional[BasisSpec],
        f_design: Optional[np.ndarray], settings: Optional[EstimatorSettings],
        fold_plan: Optional[FoldPlan], rho: Optional[OutcomeTransform]
) -> EstimateResult:
    settings = settings or EstimatorSettings()
    rho = _bounded(rho, settings)
    t_target = _index(data.treatments, side.target, 'treatment')
    t_other = _index(data.treatments, side.other, 'treatment')
    z_hi = _index(data.instruments, side.hi, 'instrument value')
    z_lo = _index(data.instruments, side.lo, 'instrument value')
    if len(data.instruments) != 2:
        raise ModelError('Mediation scores need a binary instrument')

    basis = basis or BasisSpec(q=2, n_covariates=data.m)
    design = basis.evaluate(data.z, data.x)
    b_hi = basis.evaluate_at(z_hi, data.x)
    b_lo = basis.evaluate_at(z_lo, data.x)
    if f_design is None:
        f_design = np.hstack([np.ones((data.n, 1)), data.x])
    f_design = np.asarray(f_design, dtype=float)

    own = data.treatment_mask(t_target)
    other = data.treatment_mask(t_other)
    outcome = rho(data.y) * own
    cc_types = np.isin(
        data.t, [_index(data.treatments, '00', 'treatment'),
                 _index(data.treatments, '10', 'treatment')]).astype(float)

    if settings.folds == 1 and fold_plan is None:
        splits = [(np.arange(data.n), np.arange(data.n))]
        folds = 1
        plan = None
    else:
        plan = fold_plan or make_folds(data.n, settings.folds, settings.seed)
        splits = [(plan.train(k), plan.test(k)) for k in range(plan.folds)]
        folds = plan.folds

    scores = np.zeros(data.n)
    floored = clipped = 0
    for k, (train, test) in enumerate(splits):
        w = data.omega[train] / data.omega[train].sum()
        d_train = design[train]

        def regress(response, key, rows=d_train):
            return fit_nuisance(
                rows, w, settings, response=response[train],
                seed=task_seed(settings.seed, k, key)).coefficients

        beta_m = regress(outcome, 0)
        beta_own = regress(own, 1)
        beta_other = regress(other, 2)
        gamma = fit_nuisance(
            d_train, w, settings, targets=(b_hi - b_lo)[train],
            seed=task_seed(settings.seed, k, 3)).coefficients

        kappa = design @ gamma
        f_train = f_design[train]
        pi_cc = regress(side.cc_sign * cc_types * kappa, 4, f_train)
        pi_c = regress(-other * kappa, 5, f_train)

        f_test = f_design[test]
        u = f_test @ (pi_cc + pi_c)
        low = u < settings.u_min
        floored += int(low.sum())
        u = np.where(low, settings.u_min, u)
        c = (f_test @ pi_c) / u
        out = (c < 0) | (c > 1)
        clipped += int(out.sum())
        c = np.clip(c, 0., 1.)

        d_test, hi, lo = design[test], b_hi[test], b_lo[test]
        kap = kappa[test]
        delta_m = (hi - lo) @ beta_m
        scores[test] = (
            (outcome[test] - d_test @ beta_m) * c * kap
            + delta_m * c
            - delta_m / u * (other[test] - d_test @ beta_other) * kap
            - delta_m / u * ((hi - lo) @ beta_other)
            - delta_m * c / u * (own[test] - d_test @ beta_own) * kap
            - delta_m * c / u * ((hi - lo) @ beta_own))

    warnings = []
    n_scored = sum(len(test) for _, test in splits)
    if floored > FLOOR_WARNING_SHARE * n_scored:
        warnings.append(
            f'{side.name}: u(X) was floored at {settings.u_min} for '
            f'{floored} of {n_scored} observations')
    if clipped:
        warnings.append(
            f'{side.name}: c(X) was clipped to [0, 1] for {clipped} '
            f'observations')
    for msg in warnings:
        logger.warning(msg)

    return finish_estimate(
        side.name, scores, data.omega, folds=folds, seed=settings.seed,
        fold_plan=plan, warnings=tuple(warnings),
        extras={'u_floored': floored, 'c_clipped': clipped})


def mediation_cn(
        data: Dataset, basis: Optional[BasisSpec] = None,
        f_design: Optional[np.ndarray] = None,
        settings: Optional[EstimatorSettings] = None,
        fold_plan: Optional[FoldPlan] = None,
        rho: Optional[OutcomeTransform] = None) -> EstimateResult:
    """Estimates ``E[rho(Y*(0,0)) 1{T* = CN}]`` under EIMC.

    With ``settings.folds == 1`` the nuisances are fitted once on the full
    sample, otherwise they are cross-fitted.

    :param f_design: The covariate basis ``f(X)``, ``[1, X]`` when None.
    """
    return _mediation(_CN, data, basis, f_design, settings, fold_plan, rho)


def mediation_ca(
        data: Dataset, basis: Optional[BasisSpec] = None,
        f_design: Optional[np.ndarray] = None,
        settings: Optional[EstimatorSettings] = None,
        fold_plan: Optional[FoldPlan] = None,
        rho: Optional[OutcomeTransform] = None) -> EstimateResult:
    """Estimates ``E[rho(Y*(1,1)) 1{T* = CA}]`` under EIMC. See
    :func:`mediation_cn`.
    """
    return _mediation(_CA, data, basis, f_design, settings, fold_plan, rho)


def implied_late(p_cn, p_ca, p_cc, cde0, cde1, cte, p_min: float = 0.):
    """The LATE implied by the mediation effects,
    ``(p_CN CDE0 + p_CA CDE1 + p_CC CTE) / (p_CN + p_CA + p_CC)``.

    Works elementwise on arrays of draws.
    """
    total = p_cn + p_ca + p_cc
    if np.ndim(total) == 0 and abs(total) < max(p_min, 1e-300):
        raise PositivityError(
            f'The complier mass p_CN + p_CA + p_CC = {total:.4g} is below '
            f'{p_min}')
    return (p_cn * cde0 + p_ca * cde1 + p_cc * cte) / total


def mediation_registry() -> Dict[str, object]:
    """The MTO functionals by name, including the derived effects.
    """
    return {f.name: f for f in preset_models()['mto7'].functionals}


def derived_mediation_effects(
        results: Mapping[str, EstimateResult],
        draws: Optional[BootstrapDraws] = None, level: float = 0.95,
        p_min: float = 0.005) -> Dict[str, DeltaEstimate]:
    """CDE0, CDE1, CTE, LATE and the implied LATE from the component
    estimates.

    ``results`` maps the component names of
    :func:`~po_forge.model.mto_mediation_functionals` (``y10_CN``,
    ``y00_CN``, ``p_CN``, ...) to their estimates. A type probability below
    ``p_min`` raises :class:`~po_forge.base.PositivityError` naming it.
    """
    registry = mediation_registry()
    effects = {
        name: delta_method(name, registry, results, draws, level, p_min)
        for name in MEDIATION_EFFECTS}

    probs = {k: results[k].lambda_hat for k in ('p_CN', 'p_CA', 'p_CC')}
    point = implied_late(
        probs['p_CN'], probs['p_CA'], probs['p_CC'], effects['cde0'].point,
        effects['cde1'].point, effects['cte'].point, p_min)
    # algebraically the same functional as the LATE, so it shares its
    # linearization
    late = effects['late']
    ci = star = None
    if draws is not None:
        star = implied_late(
            draws.column('p_CN'), draws.column('p_CA'), draws.column('p_CC'),
            effects['cde0'].draws, effects['cde1'].draws,
            effects['cte'].draws)
        ci = bootstrap_ci(star, point, level)
    effects['implied_late'] = DeltaEstimate(
        name='implied_late', point=float(point), psi=late.psi,
        weights=late.weights, se=analytic_se(late.psi, late.weights),
        gradient=late.gradient, ci=ci, draws=star)
    return effects
