"""Quantile treatment effects
=============================

Quantile treatment effects for a group of response types. The CDF of
``Y*(t)`` within a group ``A`` is estimated on a grid as
``E[1{Y*(t) <= y} 1{T* in A}] / P(T* in A)``, made monotone by a running
maximum, clipped to ``[0, 1]`` and inverted with the left-continuous
generalized inverse.

Pointwise bands use joint multiplier draws of every grid point and both
arms.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, List

import numpy as np

from po_forge.base import ModelError, PositivityError
from po_forge.model import ModelSpec, FunctionalSpec, OutcomeTransform, \
    OUTCOME_FUNCTIONAL
from po_forge.identify import solve_functional
from po_forge.estimate import Dataset, EstimatorSettings, FoldPlan, \
    EstimateResult, estimate_type_functional, estimate_outcome_functional, \
    make_folds
from po_forge.inference import multiplier_bootstrap
from po_forge.utils import empirical_quantile

__all__ = (
    'QteArm', 'QteResult', 'monotone_cdf', 'generalized_inverse',
    'bootstrap_quantiles', 'estimate_qte')

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QteArm:
    """The potential outcome ``Y*(treatment)`` within the response types
    ``types``.
    """

    treatment: str

    types: Tuple[str, ...]

    name: str = ''

    @property
    def label(self) -> str:
        return self.name or f'y{self.treatment}_{"".join(self.types)}'


@dataclass(frozen=True)
class QteResult:

    taus: np.ndarray

    qte: np.ndarray

    treated_quantiles: np.ndarray

    control_quantiles: np.ndarray

    y_grid: np.ndarray

    treated_cdf: np.ndarray

    control_cdf: np.ndarray

    half_width: Optional[np.ndarray] = None

    level: float = 0.95

    warnings: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        data = {
            'taus': self.taus.tolist(), 'qte': self.qte.tolist(),
            'treated_quantiles': self.treated_quantiles.tolist(),
            'control_quantiles': self.control_quantiles.tolist(),
            'y_grid': self.y_grid.tolist(),
            'treated_cdf': self.treated_cdf.tolist(),
            'control_cdf': self.control_cdf.tolist()}
        if self.half_width is not None:
            data['half_width'] = self.half_width.tolist()
            data['level'] = self.level
        if self.warnings:
            data['warnings'] = list(self.warnings)
        return data


def monotone_cdf(values) -> np.ndarray:
    """Running maximum along the last axis, clipped to ``[0, 1]``.
    """
    return np.clip(np.maximum.accumulate(np.asarray(values, float), axis=-1),
                   0., 1.)


def generalized_inverse(cdf, y_grid, taus) -> np.ndarray:
    """``inf{y in grid: F(y) >= tau}`` for every tau, the last grid point
    when the CDF never reaches tau. ``cdf`` may hold one CDF per row.
    """
    cdf = np.asarray(cdf, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    taus = np.asarray(taus, dtype=float)
    reached = cdf[..., np.newaxis, :] >= taus[:, np.newaxis]
    first = np.where(
        reached.any(axis=-1), reached.argmax(axis=-1), y_grid.shape[0] - 1)
    return y_grid[first]


def bootstrap_quantiles(
        numerators, denominators, y_grid, taus, p_min: float = 0.
) -> Tuple[np.ndarray, np.ndarray]:
    """Quantiles of the bootstrap CDFs ``numerators / denominators``.

    :param numerators: ``B x G`` draws of the grid point moments.
    :param denominators: Length-B draws of the group probability.
    :returns: The ``B' x len(taus)`` quantiles of the draws whose group
        probability is positive and at least ``p_min``, and the length-B
        mask of those draws.
    """
    numerators = np.asarray(numerators, dtype=float)
    denominators = np.asarray(denominators, dtype=float)
    usable = (denominators > 0) & (denominators >= p_min)
    cdf = numerators[usable] / denominators[usable, np.newaxis]
    return generalized_inverse(monotone_cdf(cdf), y_grid, taus), usable


def _arm_estimates(
        data: Dataset, model: ModelSpec, arm: QteArm, y_grid: np.ndarray,
        settings: EstimatorSettings, plan: FoldPlan
) -> Tuple[EstimateResult, List[EstimateResult]]:
    group = FunctionalSpec.indicator(f'p_{arm.label}', arm.types)
    prob = estimate_type_functional(
        data, model, solve_functional(model, group), None, settings, plan)
    if prob.lambda_hat < settings.p_min:
        raise PositivityError(
            f'Group probability of {list(arm.types)} is '
            f'{prob.lambda_hat:.4g}, below {settings.p_min}')

    outcome = FunctionalSpec.indicator(
        arm.label, arm.types, kind=OUTCOME_FUNCTIONAL,
        target_treatment=arm.treatment)
    solution = solve_functional(model, outcome)
    cdf = []
    for i, y in enumerate(y_grid):
        result = estimate_outcome_functional(
            data, model, solution, None, settings, plan,
            rho=OutcomeTransform.indicator(y))
        cdf.append(result.renamed(f'{arm.label}_F{i}'))
    return prob, cdf


def estimate_qte(
        data: Dataset, model: ModelSpec, treated: QteArm, control: QteArm,
        y_grid: Sequence[float], taus: Sequence[float],
        settings: Optional[EstimatorSettings] = None,
        fold_plan: Optional[FoldPlan] = None) -> QteResult:
    """Estimates ``Q_treated(tau) - Q_control(tau)`` for every tau, with
    pointwise bootstrap half-widths when ``settings.bootstrap`` is positive.
    """
    settings = settings or EstimatorSettings()
    y_grid = np.asarray(y_grid, dtype=float)
    taus = np.asarray(taus, dtype=float)
    if y_grid.ndim != 1 or not y_grid.size or np.any(np.diff(y_grid) <= 0):
        raise ModelError('The outcome grid must be strictly increasing')
    if np.any(taus <= 0) or np.any(taus >= 1):
        raise ModelError('Quantile levels must lie in (0, 1)')
    plan = fold_plan or make_folds(data.n, settings.folds, settings.seed)

    arms = [_arm_estimates(data, model, arm, y_grid, settings, plan)
            for arm in (treated, control)]
    cdfs = [monotone_cdf([r.lambda_hat / prob.lambda_hat for r in cdf])
            for prob, cdf in arms]
    quantiles = [generalized_inverse(cdf, y_grid, taus) for cdf in cdfs]
    qte = quantiles[0] - quantiles[1]

    half_width = None
    warnings = []
    if settings.bootstrap:
        results = [r for prob, cdf in arms for r in [prob] + cdf]
        draws = multiplier_bootstrap(
            results, settings.bootstrap, settings.weight_law, settings.seed)
        numerators = [
            np.stack([draws.column(r.name) for r in cdf], axis=1)
            for _, cdf in arms]
        denominators = [draws.column(prob.name) for prob, _ in arms]
        usable = np.ones(settings.bootstrap, dtype=bool)
        for den in denominators:
            usable &= (den > 0) & (den >= settings.p_min)

        dropped = int(settings.bootstrap - usable.sum())
        if dropped:
            msg = (
                f'{dropped} of {settings.bootstrap} bootstrap draws had a '
                f'group probability below {settings.p_min} and were dropped')
            logger.warning(msg)
            warnings.append(msg)

        if usable.any():
            star = [
                bootstrap_quantiles(
                    num[usable], den[usable], y_grid, taus,
                    settings.p_min)[0]
                for num, den in zip(numerators, denominators)]
            deviation = np.abs(star[0] - star[1] - qte)
            half_width = np.array([
                empirical_quantile(deviation[:, k], settings.level)
                for k in range(taus.shape[0])])
        else:
            half_width = np.full(taus.shape[0], np.nan)

    return QteResult(
        taus=taus, qte=qte, treated_quantiles=quantiles[0],
        control_quantiles=quantiles[1], y_grid=y_grid, treated_cdf=cdfs[0],
        control_cdf=cdfs[1], half_width=half_width, level=settings.level,
        warnings=tuple(warnings))
