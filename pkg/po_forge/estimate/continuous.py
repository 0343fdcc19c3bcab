"""Continuous instrument
=========================

Estimation with an instrument ``Z = (C, W)`` made of a binary component
``C`` and a continuous component ``W`` in ``[w_lo, w_hi]``, under partial
monotonicity: ``T*(c, w) = 1{K_c* > w}`` for thresholds ``K_0* <= K_1*``.

The expectation of ``1{a <= K_c* <= b}`` is approximated by the smooth
``F((b - K_c*) / h) - F((a - K_c*) / h)``, with ``F`` the biweight CDF. Its
Riesz moment target is

.. math::

    M(X) = \\int h^{-1} (F'((a - w) / h) - F'((b - w) / h)) b(c, w, X) dw,

computed by composite Gauss-Legendre quadrature. The Riesz fit absorbs the
instrument density, so none is estimated.
"""
from dataclasses import dataclass
from typing import Optional, Callable, Sequence

import numpy as np

from po_forge.base import ModelError, UnsupportedModeError
from po_forge.model import ModelSpec, OutcomeTransform
from po_forge.estimate import Dataset, EstimatorSettings, EstimateResult, \
    FoldPlan, make_folds, cross_fit_scores, finish_estimate

__all__ = (
    'MIN_QUADRATURE_ORDER', 'biweight_density', 'biweight_cdf',
    'BIWEIGHT_VARIANCE', 'ContinuousBasis', 'default_bandwidth',
    'quadrature_nodes', 'continuous_moment_target',
    'estimate_threshold_functional')

MIN_QUADRATURE_ORDER = 8

BIWEIGHT_VARIANCE = 1. / 7.
"""Variance of the biweight kernel.
"""


def biweight_density(u) -> np.ndarray:
    """``15/16 (1 - u^2)^2`` on ``[-1, 1]``, zero outside.
    """
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1, 15. / 16. * (1 - u ** 2) ** 2, 0.)


def biweight_cdf(u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=float), -1., 1.)
    return 0.5 + 15. / 16. * (u - 2 * u ** 3 / 3 + u ** 5 / 5)


@dataclass(frozen=True)
class ContinuousBasis:
    """``b(C, W, X)``: for every value of ``C`` the indicator ``1{C = c}``
    times ``[1, W, ..., W^degree, X_1, ..., X_m]``.
    """

    q: int

    n_covariates: int

    degree: int = 3

    @property
    def block(self) -> int:
        return self.degree + 1 + self.n_covariates

    @property
    def p(self) -> int:
        return self.q * self.block

    def _rows(self, w, x) -> np.ndarray:
        w = np.asarray(w, dtype=float).reshape(-1)
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            x = x.reshape(w.shape[0], self.n_covariates)
        if x.shape[1] != self.n_covariates:
            raise ModelError(
                f'Basis expects {self.n_covariates} covariates, got '
                f'{x.shape[1]}')
        powers = w[:, np.newaxis] ** np.arange(self.degree + 1)
        return np.hstack([powers, x])

    def evaluate(self, c, w, x) -> np.ndarray:
        rows = self._rows(w, x)
        c = np.asarray(c, dtype=int).reshape(-1)
        out = np.zeros((rows.shape[0], self.p))
        k = self.block
        for j in range(self.q):
            sel = c == j
            out[sel, j * k:(j + 1) * k] = rows[sel]
        return out

    def evaluate_at(self, c: int, w, x) -> np.ndarray:
        rows = self._rows(w, x)
        out = np.zeros((rows.shape[0], self.p))
        out[:, c * self.block:(c + 1) * self.block] = rows
        return out


def default_bandwidth(n: int, w_lo: float, w_hi: float,
                      constant: float = 1.) -> float:
    """``constant * n^(-1/4) * (w_hi - w_lo) / 2``.
    """
    return constant * n ** -0.25 * (w_hi - w_lo) / 2


def quadrature_nodes(
        w_lo: float, w_hi: float, breakpoints: Sequence[float] = (),
        order: int = 16):
    """Composite Gauss-Legendre nodes and weights over ``[w_lo, w_hi]``, with
    one panel between every pair of consecutive breakpoints.
    """
    if order < MIN_QUADRATURE_ORDER:
        raise ModelError(
            f'Quadrature order must be at least {MIN_QUADRATURE_ORDER}, got '
            f'{order}')
    edges = np.unique(np.clip(
        np.concatenate([[w_lo, w_hi], np.asarray(breakpoints, float)]),
        w_lo, w_hi))
    base, base_weights = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for left, right in zip(edges[:-1], edges[1:]):
        half = (right - left) / 2
        nodes.append(left + half * (base + 1))
        weights.append(half * base_weights)
    return np.concatenate(nodes), np.concatenate(weights)


def continuous_moment_target(
        basis: ContinuousBasis, x, c: int, w_lo: float, w_hi: float,
        a: Optional[float] = None, b: Optional[float] = None,
        h: Optional[float] = None,
        ell_prime: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        order: int = 16, breakpoints: Sequence[float] = ()) -> np.ndarray:
    """Per-observation Riesz targets ``M(X_i)`` of a threshold functional of
    ``K_c*``.

    Either the endpoints ``a < b`` with bandwidth ``h`` (smoothed
    ``1{a <= K_c* <= b}``), or the derivative ``ell_prime`` of a
    differentiable ``ell`` vanishing at the support ends.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, basis.n_covariates)
    n = x.shape[0]
    if ell_prime is None:
        if a is None or b is None or h is None:
            raise ModelError('Give a, b and h, or ell_prime')
        if h <= 0:
            raise ModelError(f'The bandwidth must be positive, got {h}')
        if not w_lo < a < b < w_hi:
            raise ModelError(
                f'Need w_lo < a < b < w_hi, got a={a}, b={b} on '
                f'[{w_lo}, {w_hi}]')
        breakpoints = tuple(breakpoints) + (a - h, a + h, b - h, b + h)

        def ell_prime(w):
            return (biweight_density((a - w) / h) -
                    biweight_density((b - w) / h)) / h

    nodes, weights = quadrature_nodes(w_lo, w_hi, breakpoints, order)
    scale = weights * ell_prime(nodes)
    target = np.zeros((n, basis.p))
    for w, s in zip(nodes, scale):
        if s:
            target += s * basis.evaluate_at(c, np.full(n, w), x)
    return target


def estimate_threshold_functional(
        data: Dataset, model: ModelSpec, c: str, a: float, b: float,
        treatment: Optional[str] = None,
        settings: Optional[EstimatorSettings] = None,
        basis: Optional[ContinuousBasis] = None,
        fold_plan: Optional[FoldPlan] = None,
        rho: Optional[OutcomeTransform] = None,
        name: str = '') -> EstimateResult:
    """Cross-fitted estimate of ``P(a <= K_c* <= b)`` or, with ``treatment``,
    of ``E[rho(Y*(treatment)) 1{a <= K_c* <= b}]`` for a binary treatment.

    The bandwidth is ``settings.bandwidth`` or :func:`default_bandwidth`.
    """
    settings = settings or EstimatorSettings()
    inst = model.instruments
    if model.is_discrete:
        raise UnsupportedModeError(
            f'Threshold functionals need a continuous-pair instrument, model '
            f'"{model.name}" is discrete')
    if data.w is None:
        raise ModelError('The data set has no continuous instrument column')
    c_index = inst.index(c)
    treated = model.treatments.index('1')
    untreated = model.treatments.index('0')
    basis = basis or ContinuousBasis(q=inst.q, n_covariates=data.m)
    h = settings.bandwidth or default_bandwidth(
        data.n, inst.w_lo, inst.w_hi, settings.bandwidth_constant)

    design = basis.evaluate(data.z, data.w, data.x)
    target = continuous_moment_target(
        basis, data.x, c_index, inst.w_lo, inst.w_hi, a, b, h,
        order=settings.quadrature_order)
    if treatment is None:
        response = data.treatment_mask(treated)
    else:
        rho = rho or OutcomeTransform()
        if not rho.bounded:
            if settings.y_lower is None or settings.y_upper is None:
                raise ModelError(
                    'Outcome threshold functionals need a bounded outcome '
                    'transform; set y_lower and y_upper')
            rho = rho.clipped(settings.y_lower, settings.y_upper)
        t = model.treatments.index(treatment)
        response = rho(data.y) * data.treatment_mask(t)
        if t == untreated:
            target = -target

    plan = fold_plan or make_folds(data.n, settings.folds, settings.seed)
    scores, fits = cross_fit_scores(
        design, response[:, np.newaxis], target[:, np.newaxis, :],
        data.omega, plan, settings)
    name = name or (f'p_K{c}' if treatment is None else f'y{treatment}_K{c}')
    return finish_estimate(
        name, scores, data.omega, folds=plan.folds, seed=settings.seed,
        fold_plan=plan, nuisance=fits, extras={'bandwidth': h})
