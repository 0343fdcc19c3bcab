"""Survey-weighted estimation
==============================

The no-split variant of the double-robust estimators: the nuisances are
fitted once on the full sample with the survey weights, the estimate is the
survey-weighted mean of the scores and the standard error is
``sqrt(sum(omega_i^2 psi_i^2))``.

The Riesz representers are fitted through the equivalent Lasso of the
synthetic response when the weighted Gram matrix allows it.
"""
import copy
from typing import Optional

import numpy as np

from po_forge.model import ModelSpec, BasisSpec, OutcomeTransform, \
    TYPE_FUNCTIONAL
from po_forge.identify import IdentificationSolution, moment_target
from po_forge.estimate import Dataset, EstimatorSettings, EstimateResult, \
    NuisanceOverride, NuisanceFits, finish_estimate, outcome_transform, \
    check_identified, fit_components, apply_override, component_scores

__all__ = ('estimate_weighted_no_split', )


def estimate_weighted_no_split(
        data: Dataset, model: ModelSpec, solution: IdentificationSolution,
        basis: Optional[BasisSpec] = None,
        settings: Optional[EstimatorSettings] = None,
        override: Optional[NuisanceOverride] = None,
        rho: Optional[OutcomeTransform] = None) -> EstimateResult:
    """Full-sample survey-weighted estimate of a type or outcome functional.
    """
    settings = copy.copy(settings or EstimatorSettings())
    settings.riesz_route = 'lasso'
    check_identified(solution, solution.kind)
    basis = basis or model.basis(data.m)
    name = solution.name
    if solution.is_zero():
        return finish_estimate(
            name, np.zeros(data.n), data.omega, seed=settings.seed)

    design = basis.evaluate(data.z, data.x)
    targets = moment_target(solution, basis, data.x)
    if solution.kind == TYPE_FUNCTIONAL:
        responses = np.stack(
            [data.treatment_mask(m) for m in range(model.treatments.d)],
            axis=1)
    else:
        if rho is None:
            rho = outcome_transform(solution, settings)
        t = model.treatments.index(solution.target_treatment)
        responses = (rho(data.y) * data.treatment_mask(t))[:, np.newaxis]
        targets = targets[:, np.newaxis, :]

    beta, gamma, a_beta, a_gamma = fit_components(
        design, data.omega, responses, targets, settings, settings.seed,
        (0, ))
    beta, gamma = apply_override(override, beta, gamma, targets)
    scores = component_scores(design, responses, targets, beta, gamma)
    fits = NuisanceFits(
        beta=(beta, ), gamma=(gamma, ), alpha_beta=(a_beta, ),
        alpha_gamma=(a_gamma, ))
    return finish_estimate(
        name, scores, data.omega, folds=1, seed=settings.seed, nuisance=fits)
