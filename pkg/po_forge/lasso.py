"""Lasso
=========

Weighted l1-penalized fits by cyclic coordinate descent on the weighted Gram
matrix.

Both fits share the form ``1/2 b'G b - c'b + alpha/2 * sum_j s_j |b_j|``,
where ``G = sum_i w_i b_i b_i'`` is the weighted Gram matrix and ``s_j`` is
the root weighted mean square of column j (columns are penalized as if
standardized to unit second moment, coefficients stay on the original
scale):

* :func:`fit_lasso` minimizes ``sum_i w_i (y_i - b_i'beta)^2 +
  alpha * sum_j s_j |beta_j|``, i.e. ``c = sum_i w_i y_i b_i``.
* :func:`fit_riesz` minimizes ``sum_i w_i (1/2 (b_i'gamma)^2 - M_i'gamma) +
  alpha/2 * sum_j s_j |gamma_j|``, i.e. ``c = sum_i w_i M_i``.

With this convention a Riesz fit equals the Lasso fit of the synthetic
response of :func:`riesz_as_lasso` at the same ``alpha``.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from sklearn.model_selection import KFold

from po_forge.base import ModelError, DataError, IllConditionedError

__all__ = (
    'TOL_CD', 'MAX_SWEEPS', 'TOL_KKT', 'MAX_CONDITION', 'LOO_MAX_N',
    'LassoFit', 'soft_threshold', 'fit_lasso', 'fit_riesz', 'riesz_as_lasso',
    'penalty_grid', 'cross_validate_penalty', 'cv_losses', 'kkt_violation')

logger = logging.getLogger(__name__)

TOL_CD = 1e-8
"""Coordinate descent stops when no coefficient moves by more than this in a
full sweep.
"""

MAX_SWEEPS = 10000

TOL_KKT = 1e-6

MAX_CONDITION = 1e8
"""Largest Gram condition number accepted by :func:`riesz_as_lasso`.
"""

LOO_MAX_N = 2000
"""Leave-one-out cross-validation is only run up to this sample size.
"""


@dataclass(frozen=True)
class LassoFit:
    """A penalized fit.
    """

    coefficients: np.ndarray

    penalty: float

    iterations: int

    converged: bool

    objective: float
    '''The final value of the declared objective of the fit.
    '''

    objective_trace: Tuple[float, ...] = ()
    '''Objective after every full sweep, starting at the initial point.
    '''

    def predict(self, design) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.coefficients


def soft_threshold(v, a):
    """``sign(v) * max(|v| - a, 0)``, elementwise for arrays.
    """
    if np.any(np.asarray(a) < 0):
        raise ValueError(f'Threshold must be nonnegative, got {a}')
    if np.ndim(v) == 0 and np.ndim(a) == 0:
        if v > a:
            return float(v - a)
        if v < -a:
            return float(v + a)
        return 0.
    return np.sign(v) * np.maximum(np.abs(v) - a, 0.)


def _check_design(design, weights) -> Tuple[np.ndarray, np.ndarray]:
    design = np.asarray(design, dtype=float)
    if design.ndim != 2:
        raise ModelError(f'Design must be a matrix, got shape {design.shape}')
    n = design.shape[0]
    if weights is None:
        weights = np.full(n, 1. / n) if n else np.zeros(0)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.shape[0] != n:
        raise ModelError(
            f'{weights.shape[0]} weights given for {n} design rows')
    if not np.all(np.isfinite(design)) or not np.all(np.isfinite(weights)):
        raise DataError('Design and weights must be finite')
    if np.any(weights < 0):
        raise DataError('Weights must be nonnegative')
    if not weights.sum() > 0:
        raise DataError('All weights are zero')
    return design, weights


def _check_rows(values, n: int, what: str, ndim: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if ndim == 1:
        values = values.reshape(-1)
    if values.shape[0] != n or values.ndim != ndim:
        raise ModelError(f'{what} of shape {values.shape} does not match {n} '
                         f'design rows')
    if not np.all(np.isfinite(values)):
        raise DataError(f'{what} must be finite')
    return values


class _Quadratic:
    """``1/2 b'G b - c'b + alpha/2 * sum_j s_j |b_j|`` built from data.
    """

    def __init__(self, design, weights, response=None, targets=None):
        design, weights = _check_design(design, weights)
        n, p = design.shape
        weighted = design * weights[:, np.newaxis]
        self.gram = weighted.T @ design
        self.scale = np.sqrt(np.maximum(np.diag(self.gram), 0) / weights.sum())
        self.n = n
        self.p = p
        self.constant = 0.
        if response is not None:
            response = _check_rows(response, n, 'Response', 1)
            self.linear = weighted.T @ response
            self.constant = float(weights @ response ** 2)
            self.regression = True
        elif targets is not None:
            targets = _check_rows(targets, n, 'Targets', 2)
            if targets.shape[1] != p:
                raise ModelError(
                    f'Targets have {targets.shape[1]} columns, design has '
                    f'{p}')
            self.linear = weights @ targets
            self.regression = False
        else:
            raise ModelError('Either a response or Riesz targets are needed')

    def half(self, beta: np.ndarray, alpha: float) -> float:
        return float(
            0.5 * beta @ self.gram @ beta - self.linear @ beta +
            0.5 * alpha * np.sum(self.scale * np.abs(beta)))

    def declared(self, beta: np.ndarray, alpha: float) -> float:
        if self.regression:
            return 2 * self.half(beta, alpha) + self.constant
        return self.half(beta, alpha)

    def alpha_max(self) -> float:
        active = self.scale > 0
        if not np.any(active):
            return 0.
        return float(np.max(
            2 * np.abs(self.linear[active]) / self.scale[active]))

    def solve(self, alpha: float, tol_cd: float = TOL_CD,
              max_sweeps: int = MAX_SWEEPS,
              beta0: Optional[np.ndarray] = None) -> LassoFit:
        if alpha < 0 or not np.isfinite(alpha):
            raise ModelError(f'Penalty must be nonnegative, got {alpha}')
        active = np.flatnonzero(self.scale > 0)
        if alpha == 0:
            return self._solve_unpenalized(active)

        gram = self.gram
        diag = np.diag(gram)
        thresholds = 0.5 * alpha * self.scale
        beta = np.zeros(self.p)
        if beta0 is not None:
            beta[active] = np.asarray(beta0, dtype=float)[active]
        grad = gram @ beta - self.linear

        trace = [self.declared(beta, alpha)]
        converged = False
        sweeps = 0
        for sweeps in range(1, max_sweeps + 1):
            max_change = 0.
            for j in active:
                old = beta[j]
                r = diag[j] * old - grad[j]
                t = thresholds[j]
                if r > t:
                    new = (r - t) / diag[j]
                elif r < -t:
                    new = (r + t) / diag[j]
                else:
                    new = 0.
                delta = new - old
                if delta:
                    grad += gram[:, j] * delta
                    beta[j] = new
                    change = abs(delta)
                    if change > max_change:
                        max_change = change
            trace.append(self.declared(beta, alpha))
            if max_change < tol_cd:
                converged = True
                break

        if not converged:
            logger.warning(
                'Coordinate descent did not converge in %d sweeps at '
                'alpha=%g', max_sweeps, alpha)
        return LassoFit(
            coefficients=beta, penalty=float(alpha), iterations=sweeps,
            converged=converged, objective=trace[-1],
            objective_trace=tuple(trace))

    def _solve_unpenalized(self, active: np.ndarray) -> LassoFit:
        if self.p >= self.n:
            raise ModelError(
                f'An unpenalized fit needs fewer columns ({self.p}) than '
                f'observations ({self.n})')
        beta = np.zeros(self.p)
        if active.size:
            beta[active] = scipy.linalg.lstsq(
                self.gram[np.ix_(active, active)], self.linear[active])[0]
        objective = self.declared(beta, 0.)
        return LassoFit(
            coefficients=beta, penalty=0., iterations=0, converged=True,
            objective=objective, objective_trace=(objective, ))

    def kkt(self, beta: np.ndarray, alpha: float) -> float:
        grad = self.gram @ beta - self.linear
        bound = 0.5 * alpha * self.scale
        zero = beta == 0
        violation = np.where(
            zero, np.maximum(np.abs(grad) - bound, 0.),
            np.abs(grad + bound * np.sign(beta)))
        # columns that are zero on the weighted sample carry no condition
        violation[self.scale == 0] = 0.
        return float(violation.max()) if violation.size else 0.


def fit_lasso(
        design, response, weights=None, alpha: float = 0.,
        tol_cd: float = TOL_CD, max_sweeps: int = MAX_SWEEPS,
        beta0=None) -> LassoFit:
    """Weighted Lasso regression of ``response`` on ``design``.

    :param weights: Nonnegative observation weights, uniform ``1/n`` when
        None. They are not renormalized, so scaling the weights and
        ``alpha`` together leaves the coefficients unchanged.
    :param beta0: Optional warm start.
    """
    problem = _Quadratic(design, weights, response=response)
    return problem.solve(alpha, tol_cd, max_sweeps, beta0)


def fit_riesz(
        design, targets, weights=None, alpha: float = 0.,
        tol_cd: float = TOL_CD, max_sweeps: int = MAX_SWEEPS,
        beta0=None) -> LassoFit:
    """Penalized Riesz representer fit with per-row linear targets
    ``targets[i] = M(X_i)``.
    """
    problem = _Quadratic(design, weights, targets=targets)
    return problem.solve(alpha, tol_cd, max_sweeps, beta0)


def riesz_as_lasso(design, targets, weights=None) -> np.ndarray:
    """Returns the synthetic response ``b_i' G^-1 m`` whose Lasso fit equals
    the Riesz fit of ``targets``.

    Raises :class:`IllConditionedError` when ``p >= n`` or the weighted Gram
    matrix is singular or has condition number at least
    :data:`MAX_CONDITION`.
    """
    problem = _Quadratic(design, weights, targets=targets)
    if problem.p >= problem.n:
        raise IllConditionedError(
            f'The Gram matrix of {problem.p} columns and {problem.n} rows is '
            f'singular')
    condition = np.linalg.cond(problem.gram)
    if not np.isfinite(condition) or condition >= MAX_CONDITION:
        raise IllConditionedError(
            f'The Gram matrix condition number {condition:.3g} is too large')
    coef = scipy.linalg.solve(problem.gram, problem.linear, assume_a='sym')
    return np.asarray(design, dtype=float) @ coef


def penalty_grid(
        design, response=None, weights=None, targets=None, size: int = 50,
        ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced decreasing penalties from the smallest penalty that zeroes
    every coefficient down to ``ratio`` times it.

    When the gradient at zero vanishes, the grid starts at 1.
    """
    if size < 1:
        raise ModelError(f'Penalty grid needs at least one point, got {size}')
    if not 0 < ratio <= 1:
        raise ModelError(f'Grid ratio must be in (0, 1], got {ratio}')
    problem = _Quadratic(design, weights, response=response, targets=targets)
    alpha_max = problem.alpha_max() or 1.
    if size == 1:
        return np.array([alpha_max])
    return alpha_max * np.logspace(0, np.log10(ratio), size)


def _splits(n: int, folds: int, seed: int, leave_one_out: bool):
    if leave_one_out:
        if n <= LOO_MAX_N:
            return [(np.delete(np.arange(n), i), np.array([i]))
                    for i in range(n)]
        logger.warning(
            'Leave-one-out is limited to n <= %d, using %d folds for n=%d',
            LOO_MAX_N, folds, n)
    if folds < 2:
        raise ModelError(f'Cross-validation needs at least 2 folds, got '
                         f'{folds}')
    if folds > n:
        raise ModelError(f'Cannot split {n} observations into {folds} folds')
    return list(KFold(
        n_splits=folds, shuffle=True, random_state=seed).split(np.arange(n)))


def cv_losses(
        design, response=None, weights=None, grid=None, folds: int = 10,
        targets=None, seed: int = 0, leave_one_out: bool = False,
        tol_cd: float = TOL_CD, max_sweeps: int = MAX_SWEEPS
) -> Tuple[np.ndarray, np.ndarray]:
    """Returns the decreasing penalty grid and the summed out-of-fold weighted
    loss of every penalty on it.

    The loss is the squared error for a response and the Riesz loss
    ``1/2 (b'gamma)^2 - M'gamma`` for targets.
    """
    design, weights = _check_design(design, weights)
    n = design.shape[0]
    if response is not None:
        response = _check_rows(response, n, 'Response', 1)
    elif targets is not None:
        targets = _check_rows(targets, n, 'Targets', 2)
    if grid is None:
        grid = penalty_grid(design, response, weights, targets)
    grid = np.sort(np.asarray(grid, dtype=float).reshape(-1))[::-1]
    if not grid.size:
        raise ModelError('The penalty grid is empty')

    losses = np.zeros(grid.shape[0])
    for train, test in _splits(n, folds, seed, leave_one_out):
        if not weights[train].sum() > 0 or not weights[test].sum() > 0:
            raise DataError('A cross-validation fold has zero total weight')
        problem = _Quadratic(
            design[train], weights[train],
            response=None if response is None else response[train],
            targets=None if targets is None else targets[train])
        beta = None
        for k, alpha in enumerate(grid):
            fit = problem.solve(alpha, tol_cd, max_sweeps, beta)
            beta = fit.coefficients
            fitted = design[test] @ beta
            if response is not None:
                loss = (response[test] - fitted) ** 2
            else:
                loss = 0.5 * fitted ** 2 - targets[test] @ beta
            losses[k] += float(weights[test] @ loss)
    return grid, losses


def cross_validate_penalty(
        design, response=None, weights=None, grid=None, folds: int = 10,
        targets=None, seed: int = 0, leave_one_out: bool = False,
        tol_cd: float = TOL_CD, max_sweeps: int = MAX_SWEEPS) -> float:
    """Returns the penalty with the smallest out-of-fold loss, preferring the
    larger penalty among ties. See :func:`cv_losses`.
    """
    grid, losses = cv_losses(
        design, response, weights, grid, folds, targets, seed,
        leave_one_out, tol_cd, max_sweeps)
    if grid.shape[0] == 1:
        return float(grid[0])
    return float(grid[int(np.flatnonzero(losses <= losses.min())[0])])


def kkt_violation(
        fit: LassoFit, design, response=None, weights=None,
        targets=None) -> float:
    """Largest violation of the stationarity conditions of ``fit`` in the
    shared half form (zero at an exact minimizer).
    """
    problem = _Quadratic(design, weights, response=response, targets=targets)
    return problem.kkt(np.asarray(fit.coefficients, dtype=float), fit.penalty)
