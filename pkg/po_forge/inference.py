"""Inference
=============

Analytic standard errors from influence values, the multiplier bootstrap,
symmetric bootstrap confidence intervals and delta-method inference for
smooth combinations of estimates.

The functions accept any result object with ``name``, ``lambda_hat``,
``psi`` and ``weights`` attributes (see
:class:`~po_forge.estimate.EstimateResult`), where ``weights`` are the
estimation weights summing to one.
"""
import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence, Mapping, Optional, Tuple, Dict, Union

import numpy as np

from po_forge.base import ModelError
from po_forge.model import FunctionalSpec, DERIVED_FUNCTIONAL
from po_forge.utils import rng_stream, empirical_quantile

__all__ = (
    'WEIGHT_LAWS', 'MIN_DRAWS', 'analytic_se', 'BootstrapDraws',
    'multiplier_weights', 'multiplier_bootstrap', 'ConfidenceInterval',
    'bootstrap_ci', 'DeltaEstimate', 'evaluate_combination', 'linearize',
    'delta_method', 'write_draws_csv')

logger = logging.getLogger(__name__)

WEIGHT_LAWS = ('normal', 'rademacher', 'ones')
"""Multiplier laws. ``ones`` is the degenerate ``W = 1`` law, used to check
that influence values are centered.
"""

MIN_DRAWS = 20
"""Fewer bootstrap draws than this attach a warning to intervals.
"""


def _is_uniform(weights: np.ndarray) -> bool:
    return bool(np.all(weights == weights[0]))


def analytic_se(psi, weights=None) -> float:
    """Standard error from influence values.

    With uniform (or no) weights it is ``sd(psi) / sqrt(n)``, the standard
    deviation taken around zero since ``psi`` is centered. Otherwise it is
    ``sqrt(sum(w_i^2 psi_i^2))``. A result object may be passed instead of
    ``psi``.
    """
    if hasattr(psi, 'psi'):
        weights = psi.weights if weights is None else weights
        psi = psi.psi
    psi = np.asarray(psi, dtype=float).reshape(-1)
    n = psi.shape[0]
    if n < 2:
        raise ModelError(f'A standard error needs n >= 2, got n={n}')
    if weights is None or _is_uniform(np.asarray(weights, dtype=float)):
        return float(np.sqrt(np.mean(psi ** 2)) / np.sqrt(n))
    weights = np.asarray(weights, dtype=float)
    return float(np.sqrt(np.sum(weights ** 2 * psi ** 2)))


@dataclass(frozen=True)
class BootstrapDraws:
    """Multiplier bootstrap draws of several functionals, one column each.
    """

    draws: np.ndarray
    '''``B x G`` array of perturbed estimates.
    '''

    names: Tuple[str, ...]

    lambda_hat: Tuple[float, ...]

    weight_law: str = 'normal'

    seed: int = 0

    @property
    def B(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        if name not in self.names:
            raise ModelError(f'No bootstrap draws for "{name}"')
        return self.draws[:, self.names.index(name)]

    def estimate(self, name: str) -> float:
        return self.lambda_hat[self.names.index(name)]

    def as_mapping(self) -> Dict[str, np.ndarray]:
        return {name: self.draws[:, i] for i, name in enumerate(self.names)}


def multiplier_weights(
        n: int, b: int, weight_law: str = 'normal', seed: int = 0
) -> np.ndarray:
    """The multipliers of replicate ``b``, drawn from the stream
    ``(seed, b)``.
    """
    if weight_law == 'normal':
        return rng_stream(seed, b).standard_normal(n)
    if weight_law == 'rademacher':
        return rng_stream(seed, b).choice(np.array([-1., 1.]), size=n)
    if weight_law == 'ones':
        return np.ones(n)
    raise ModelError(
        f'Unknown weight law "{weight_law}", expected one of {WEIGHT_LAWS}')


def _check_fold_plans(results: Sequence) -> None:
    # results without a fold_plan attribute carry no plan to compare
    planned = [r for r in results if hasattr(r, 'fold_plan')]
    if not planned:
        return

    def key(result):
        plan = result.fold_plan
        return None if plan is None else plan.fingerprint()

    first = key(planned[0])
    for result in planned[1:]:
        if key(result) != first:
            raise ModelError(
                f'Result "{result.name}" was cross-fitted with another fold '
                f'plan than "{planned[0].name}"')


def multiplier_bootstrap(
        results: Sequence, B: int = 1000, weight_law: str = 'normal',
        seed: int = 0) -> BootstrapDraws:
    """Draws ``lambda* = lambda_hat + sum_i w_i W_i psi_i`` for every result.

    The same multipliers ``W`` are shared by all results within a replicate,
    so any function of the draws has the joint law needed by
    :func:`delta_method`.
    """
    if B < 1:
        raise ModelError(f'The bootstrap needs B >= 1, got {B}')
    if not results:
        raise ModelError('No results to bootstrap')
    n = results[0].psi.shape[0]
    for result in results:
        if result.psi.shape[0] != n:
            raise ModelError(
                f'Result "{result.name}" has {result.psi.shape[0]} '
                f'influence values, expected {n}')
    _check_fold_plans(results)
    if weight_law not in WEIGHT_LAWS:
        raise ModelError(
            f'Unknown weight law "{weight_law}", expected one of '
            f'{WEIGHT_LAWS}')

    # column g holds w_i * psi_gi
    scaled = np.stack(
        [np.asarray(r.weights) * np.asarray(r.psi) for r in results], axis=1)
    center = np.array([r.lambda_hat for r in results], dtype=float)
    draws = np.empty((B, len(results)))
    for b in range(B):
        draws[b] = center + multiplier_weights(n, b, weight_law, seed) @ scaled

    return BootstrapDraws(
        draws=draws, names=tuple(r.name for r in results),
        lambda_hat=tuple(float(v) for v in center), weight_law=weight_law,
        seed=seed)


@dataclass(frozen=True)
class ConfidenceInterval:
    """A symmetric interval ``center +/- half_width``.
    """

    center: float

    half_width: float

    level: float

    warnings: Tuple[str, ...] = ()

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {
            'lower': self.lower, 'upper': self.upper,
            'half_width': self.half_width, 'level': self.level}


def _check_level(level: float):
    if not 0 < level < 1:
        raise ModelError(f'Confidence level must be in (0, 1), got {level}')


def bootstrap_ci(draws, lambda_hat: float, level: float = 0.95
                 ) -> ConfidenceInterval:
    """Interval ``lambda_hat +/- c`` with ``c`` the ``level`` quantile of
    ``|lambda* - lambda_hat|``.
    """
    _check_level(level)
    draws = np.asarray(draws, dtype=float).reshape(-1)
    if not draws.size:
        raise ModelError('No bootstrap draws')
    warnings = ()
    if draws.shape[0] < MIN_DRAWS:
        msg = (f'Only {draws.shape[0]} bootstrap draws, intervals need at '
               f'least {MIN_DRAWS}')
        logger.warning(msg)
        warnings = (msg, )
    half = empirical_quantile(np.abs(draws - lambda_hat), level)
    return ConfidenceInterval(
        center=float(lambda_hat), half_width=half, level=level,
        warnings=warnings)


def evaluate_combination(
        name: str, registry: Mapping[str, FunctionalSpec],
        values: Mapping[str, Union[float, np.ndarray]]):
    """Evaluates functional ``name`` on base values, which may be arrays of
    bootstrap draws. Base functionals are looked up in ``values`` and derived
    ones are combined recursively through ``registry``.
    """
    if name in values:
        return values[name]
    spec = registry.get(name)
    if spec is None or spec.kind != DERIVED_FUNCTIONAL or \
            spec.combine is None:
        raise ModelError(f'Cannot evaluate "{name}": no estimate and no '
                         f'combination')
    combine = spec.combine
    comps = [evaluate_combination(c, registry, values)
             for c in combine.components]
    if combine.op == 'ratio':
        with np.errstate(divide='ignore', invalid='ignore'):
            return comps[0] / comps[1]
    if combine.op == 'difference':
        return comps[0] - comps[1]
    if combine.op == 'affine':
        coefficients = combine.coefficients or (1., ) * len(comps)
        return combine.constant + sum(
            c * v for c, v in zip(coefficients, comps))
    raise ModelError(f'Unknown combination "{combine.op}"')


def _value_and_gradient(
        name: str, registry: Mapping[str, FunctionalSpec],
        estimates: Mapping[str, float], p_min: float
) -> Tuple[float, Dict[str, float]]:
    if name in estimates:
        return float(estimates[name]), {name: 1.}
    spec = registry.get(name)
    if spec is None or spec.combine is None:
        raise ModelError(f'Cannot evaluate "{name}": no estimate and no '
                         f'combination')
    parts = {
        c: _value_and_gradient(c, registry, estimates, p_min)
        for c in spec.combine.components}
    return spec.combine.evaluate_with_gradient(parts, p_min=p_min)


@dataclass(frozen=True)
class DeltaEstimate:
    """A smooth combination of estimates with its linearized influence
    values and, when draws were given, a bootstrap interval.
    """

    name: str

    point: float

    psi: np.ndarray

    weights: np.ndarray

    se: float

    gradient: Dict[str, float] = field(default_factory=dict)

    ci: Optional[ConfidenceInterval] = None

    draws: Optional[np.ndarray] = None

    @property
    def lambda_hat(self) -> float:
        return self.point

    def to_dict(self) -> dict:
        data = {'name': self.name, 'estimate': self.point, 'se': self.se,
                'gradient': dict(self.gradient)}
        if self.ci is not None:
            data['ci'] = self.ci.to_dict()
        return data


def linearize(
        name: str, registry: Mapping[str, FunctionalSpec],
        results: Mapping, p_min: float = 0.) -> DeltaEstimate:
    """Point value, gradient and linearized influence values
    ``sum_g dF/dlambda_g psi_g`` of functional ``name``.

    A ratio whose denominator estimate is below ``p_min`` in absolute value
    raises :class:`~po_forge.base.PositivityError`.
    """
    estimates = {k: r.lambda_hat for k, r in results.items()}
    point, gradient = _value_and_gradient(name, registry, estimates, p_min)
    first = next(iter(results.values()))
    psi = np.zeros_like(np.asarray(first.psi, dtype=float))
    for comp, slope in gradient.items():
        psi = psi + slope * np.asarray(results[comp].psi, dtype=float)
    weights = np.asarray(first.weights, dtype=float)
    return DeltaEstimate(
        name=name, point=float(point), psi=psi, weights=weights,
        se=analytic_se(psi, weights), gradient=gradient)


def delta_method(
        name: str, registry: Mapping[str, FunctionalSpec],
        results: Mapping, draws: Optional[BootstrapDraws] = None,
        level: float = 0.95, p_min: float = 0.) -> DeltaEstimate:
    """Point estimate ``F(lambda_hat)`` and, with draws, the interval
    ``F(lambda_hat) +/- c`` where ``c`` is the ``level`` quantile of
    ``|F(lambda*) - F(lambda_hat)|`` over the joint draws.

    ``name`` may also be a base functional, in which case this is
    :func:`bootstrap_ci` of its own draws.
    """
    _check_level(level)
    estimate = linearize(name, registry, results, p_min)
    if draws is None:
        return estimate
    values = draws.as_mapping()
    star = np.asarray(
        evaluate_combination(name, registry, values), dtype=float)
    ci = bootstrap_ci(star, estimate.point, level)
    return DeltaEstimate(
        name=estimate.name, point=estimate.point, psi=estimate.psi,
        weights=estimate.weights, se=estimate.se, gradient=estimate.gradient,
        ci=ci, draws=star)


def write_draws_csv(filename: str, draws: BootstrapDraws) -> None:
    """Writes draws in long form with columns ``replicate, functional,
    value``.
    """
    with open(filename, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(['replicate', 'functional', 'value'])
        for b in range(draws.B):
            for g, name in enumerate(draws.names):
                writer.writerow([b, name, repr(float(draws.draws[b, g]))])
