"""Estimation
==============

Cross-fitted double-robust estimators of identified type and outcome
functionals.

For fold ``k`` the nuisances are fitted on the observations outside ``I_k``
over the shared basis ``b(Z, X)``:

* ``beta_m``, the Lasso regression of the response of component ``m``
  (``1{T = t_m}`` for type functionals, ``rho(Y) 1{T = t}`` for outcome
  functionals) on ``b``;
* ``gamma_m``, the Riesz representer of the moment target ``M_m(X)`` of
  :func:`~po_forge.identify.moment_target`.

Each observation of ``I_k`` then gets the score
``sum_m b'gamma_m (response_m - b'beta_m) + M_m(X)'beta_m`` and the estimate
is the weighted mean of the scores. The influence values are the scores
minus the estimate.

The survey-weighted no-split estimator, the mediation scores, quantile
treatment effects and the continuous-instrument estimator live in the
submodules.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Dict, Sequence, Union

import numpy as np
from sklearn.model_selection import KFold

from po_forge.base import ForgeBase, ModelError, DataError, \
    IdentificationError, IllConditionedError
from po_forge.model import ModelSpec, BasisSpec, FunctionalSpec, \
    OutcomeTransform, OUTCOME_FUNCTIONAL, TYPE_FUNCTIONAL, DERIVED_FUNCTIONAL
from po_forge.identify import IdentificationSolution, moment_target, \
    solve_functional
from po_forge.lasso import LassoFit, fit_lasso, fit_riesz, riesz_as_lasso, \
    penalty_grid, cross_validate_penalty
from po_forge.inference import analytic_se, multiplier_bootstrap, \
    delta_method
from po_forge.utils import rng_stream

__all__ = (
    'Dataset', 'FoldPlan', 'NuisanceFits', 'EstimateResult',
    'EstimatorSettings', 'NuisanceOverride', 'make_folds', 'fit_nuisance',
    'cross_fit_scores', 'finish_estimate', 'outcome_transform',
    'estimate_type_functional', 'estimate_outcome_functional',
    'estimate_functional', 'population_dr_moment', 'type_covariate_means',
    'task_seed', 'fit_components', 'apply_override', 'component_scores',
    'check_identified', 'bounded_functionals', 'estimate_named')

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Observed data with treatments and instruments as dense indices.

    In continuous-pair mode ``z`` indexes the binary component ``C`` and
    ``w`` holds the continuous component.
    """

    y: np.ndarray

    t: np.ndarray

    z: np.ndarray

    x: np.ndarray
    '''``n x m`` covariates (``m`` may be zero).
    '''

    omega: np.ndarray
    '''Survey weights, normalized to sum to one.
    '''

    treatments: Tuple[str, ...] = ()

    instruments: Tuple[str, ...] = ()

    w: Optional[np.ndarray] = None

    diagnostics: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return self.x.shape[1]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.omega == self.omega[0]))

    @classmethod
    def from_arrays(
            cls, y, t, z, x=None, omega=None, w=None,
            treatments: Sequence[str] = (), instruments: Sequence[str] = (),
            diagnostics: Sequence[str] = ()) -> 'Dataset':
        """Builds a data set from index arrays, checking shapes and
        finiteness and normalizing ``omega``.
        """
        y = np.asarray(y, dtype=float).reshape(-1)
        n = y.shape[0]
        if n < 1:
            raise DataError('The data set has no observations')
        t = np.asarray(t, dtype=int).reshape(-1)
        z = np.asarray(z, dtype=int).reshape(-1)
        x = np.zeros((n, 0)) if x is None else np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1)
        omega = np.ones(n) if omega is None else np.asarray(
            omega, dtype=float).reshape(-1)
        for name, arr in (('t', t), ('z', z), ('x', x), ('omega', omega)):
            if arr.shape[0] != n:
                raise DataError(
                    f'Column {name} has {arr.shape[0]} rows, y has {n}')
        if w is not None:
            w = np.asarray(w, dtype=float).reshape(-1)
            if w.shape[0] != n or not np.all(np.isfinite(w)):
                raise DataError('Column w must have n finite entries')
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and
                np.all(np.isfinite(omega))):
            raise DataError('The data set has non-finite entries')
        if np.any(omega < 0) or not omega.sum() > 0:
            raise DataError('Survey weights must be nonnegative and not all '
                            'zero')
        if treatments and (t.min() < 0 or t.max() >= len(treatments)):
            raise DataError('Treatment index out of range')
        if instruments and (z.min() < 0 or z.max() >= len(instruments)):
            raise DataError('Instrument index out of range')
        return cls(
            y=y, t=t, z=z, x=x, omega=omega / omega.sum(),
            treatments=tuple(treatments), instruments=tuple(instruments),
            w=w, diagnostics=tuple(diagnostics))

    @classmethod
    def from_labels(cls, model: ModelSpec, y, t, z, x=None, omega=None,
                    w=None) -> 'Dataset':
        """Builds a data set from treatment and instrument labels, raising a
        :class:`~po_forge.base.DataError` naming the first bad row.
        """
        treatments = model.treatments.labels
        instruments = model.instruments.values
        t_index = {label: i for i, label in enumerate(treatments)}
        z_index = {label: i for i, label in enumerate(instruments)}
        ti, zi = [], []
        for row, (t_val, z_val) in enumerate(zip(t, z)):
            t_val, z_val = str(t_val), str(z_val)
            if t_val not in t_index:
                raise DataError(
                    f'Row {row}: unknown treatment "{t_val}", expected one '
                    f'of {list(treatments)}')
            if z_val not in z_index:
                raise DataError(
                    f'Row {row}: unknown instrument value "{z_val}", '
                    f'expected one of {list(instruments)}')
            ti.append(t_index[t_val])
            zi.append(z_index[z_val])
        return cls.from_arrays(
            y, ti, zi, x, omega, w, treatments=treatments,
            instruments=instruments)

    def subset(self, index) -> 'Dataset':
        index = np.asarray(index)
        return Dataset.from_arrays(
            self.y[index], self.t[index], self.z[index], self.x[index],
            self.omega[index], None if self.w is None else self.w[index],
            self.treatments, self.instruments, self.diagnostics)

    def with_weights(self, omega) -> 'Dataset':
        return Dataset.from_arrays(
            self.y, self.t, self.z, self.x, omega, self.w, self.treatments,
            self.instruments, self.diagnostics)

    def treatment_mask(self, index: int) -> np.ndarray:
        return (self.t == index).astype(float)


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every observation to one of ``folds`` folds.
    """

    assignment: np.ndarray

    folds: int

    seed: int = 0

    def test(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def train(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.folds)

    def fingerprint(self) -> Tuple[int, bytes]:
        """Equal for plans that split the observations identically.
        """
        return self.folds, np.asarray(self.assignment, np.int64).tobytes()


def make_folds(n: int, K: int, seed: int = 0) -> FoldPlan:
    """Uniform random partition of ``n`` observations into ``K`` folds whose
    sizes differ by at most one, deterministic in ``seed``.
    """
    if K < 2:
        raise ModelError(f'Cross-fitting needs K >= 2 folds, got {K}')
    if K > n:
        raise ModelError(f'Cannot split {n} observations into {K} folds')
    assignment = np.empty(n, dtype=int)
    splitter = KFold(n_splits=K, shuffle=True, random_state=seed)
    for k, (_, test) in enumerate(splitter.split(np.arange(n))):
        assignment[test] = k
    return FoldPlan(assignment=assignment, folds=K, seed=seed)


class EstimatorSettings(ForgeBase):
    """Estimator, penalty, trimming, bootstrap and smoothing settings.
    """

    _config_props_ = (
        'folds', 'penalty', 'cv_folds', 'leave_one_out', 'grid_size',
        'grid_ratio', 'riesz_route', 'u_min', 'p_min', 'seed', 'tol_cd',
        'max_sweeps', 'bootstrap', 'weight_law', 'level', 'bandwidth',
        'bandwidth_constant', 'quadrature_order', 'y_lower', 'y_upper')

    folds: int = 5
    '''Number of cross-fitting folds ``K``.
    '''

    penalty: Union[str, float] = 'cv'
    '''``'cv'`` to select every penalty by cross-validation, or a fixed
    penalty used for all nuisance fits.
    '''

    cv_folds: int = 10

    leave_one_out: bool = False
    '''Use leave-one-out cross-validation (only for ``n <= 2000``).
    '''

    grid_size: int = 50

    grid_ratio: float = 1e-4

    riesz_route: str = 'direct'
    '''``'direct'`` fits the Riesz loss, ``'lasso'`` fits the equivalent
    Lasso of the synthetic response and falls back to ``'direct'`` when the
    Gram matrix is ill-conditioned.
    '''

    u_min: float = 0.01
    '''Floor of the mediation denominator ``u(X)``.
    '''

    p_min: float = 0.005
    '''Smallest type or group probability accepted as a denominator.
    '''

    seed: int = 0

    tol_cd: float = 1e-8

    max_sweeps: int = 10000

    bootstrap: int = 1000
    '''Number of multiplier bootstrap draws; zero disables the bootstrap.
    '''

    weight_law: str = 'normal'

    level: float = 0.95

    bandwidth: Optional[float] = None
    '''Smoothing bandwidth of the continuous instrument, None for
    ``bandwidth_constant * n^(-1/4) * (w_hi - w_lo) / 2``.
    '''

    bandwidth_constant: float = 1.

    quadrature_order: int = 16

    y_lower: Optional[float] = None
    '''Clipping bounds applied to identity outcome transforms.
    '''

    y_upper: Optional[float] = None

    def __init__(self, **kwargs):
        super().__init__(**{k: v for k, v in kwargs.items() if k == 'name'})
        for key, value in kwargs.items():
            if key != 'name':
                if key not in self._config_props_:
                    raise ModelError(f'Unknown estimator setting "{key}"')
                setattr(self, key, value)
        self.check()

    def check(self) -> None:
        """Raises :class:`~po_forge.base.ModelError` for settings outside
        their documented ranges.
        """
        if self.penalty != 'cv' and not (
                isinstance(self.penalty, (int, float)) and self.penalty >= 0):
            raise ModelError(
                f'penalty must be "cv" or a nonnegative number, got '
                f'{self.penalty!r}')
        if self.folds < 1 or self.cv_folds < 2:
            raise ModelError('folds must be >= 1 and cv_folds >= 2')
        if self.riesz_route not in ('direct', 'lasso'):
            raise ModelError(f'Unknown Riesz route "{self.riesz_route}"')
        if not 0 < self.level < 1:
            raise ModelError(f'level must be in (0, 1), got {self.level}')
        if self.bootstrap < 0:
            raise ModelError('bootstrap must be nonnegative')
        if self.u_min <= 0 or self.p_min < 0:
            raise ModelError('u_min must be positive and p_min nonnegative')
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ModelError(f'bandwidth must be positive, got '
                             f'{self.bandwidth}')

    def apply_settings(self, config) -> None:
        super().apply_settings(config)
        self.check()


@dataclass(frozen=True)
class NuisanceOverride:
    """Replaces fitted nuisance coefficients by fixed ones in every fold.

    Values broadcast to the ``components x p`` coefficient array, so ``0.``
    replaces a nuisance by zero.
    """

    beta: Optional[Union[float, np.ndarray]] = None

    gamma: Optional[Union[float, np.ndarray]] = None


@dataclass(frozen=True)
class NuisanceFits:
    """Per-fold coefficients, ``components x p`` each, and penalties.
    """

    beta: Tuple[np.ndarray, ...]

    gamma: Tuple[np.ndarray, ...]

    alpha_beta: Tuple[np.ndarray, ...]

    alpha_gamma: Tuple[np.ndarray, ...]

    def penalty_summary(self) -> Dict[str, list]:
        return {
            'beta': [a.tolist() for a in self.alpha_beta],
            'gamma': [a.tolist() for a in self.alpha_gamma]}


@dataclass(frozen=True)
class EstimateResult:
    """An estimate with its influence values.
    """

    name: str

    lambda_hat: float

    psi: np.ndarray
    '''Influence values, centered so that ``sum(weights * psi) = 0``.
    '''

    se: float

    weights: np.ndarray
    '''Estimation weights, summing to one.
    '''

    folds: int = 1

    seed: int = 0

    fold_plan: Optional[FoldPlan] = None

    nuisance: Optional[NuisanceFits] = None

    warnings: Tuple[str, ...] = ()

    extras: Dict[str, float] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.psi.shape[0]

    def renamed(self, name: str) -> 'EstimateResult':
        return replace(self, name=name)

    def to_dict(self) -> dict:
        data = {
            'name': self.name, 'estimate': self.lambda_hat, 'se': self.se,
            'n': self.n, 'folds': self.folds, 'seed': self.seed,
            'warnings': list(self.warnings)}
        if self.nuisance is not None:
            data['penalties'] = self.nuisance.penalty_summary()
        if self.extras:
            data['extras'] = dict(self.extras)
        return data


def task_seed(seed: int, *keys: int) -> int:
    """Integer seed of the sub-task ``keys`` of a run seeded with ``seed``.
    """
    return int(rng_stream(seed, *keys).integers(2 ** 31 - 1))


def fit_nuisance(
        design: np.ndarray, weights: np.ndarray, settings: EstimatorSettings,
        response=None, targets=None, seed: int = 0) -> LassoFit:
    """Fits a regression (``response``) or Riesz (``targets``) nuisance with
    the penalty policy of ``settings``.
    """
    alpha = settings.penalty
    if alpha == 'cv':
        n = design.shape[0]
        grid = penalty_grid(
            design, response, weights, targets, settings.grid_size,
            settings.grid_ratio)
        alpha = cross_validate_penalty(
            design, response, weights, grid, min(settings.cv_folds, n),
            targets, seed, settings.leave_one_out, settings.tol_cd,
            settings.max_sweeps)

    if response is not None:
        return fit_lasso(
            design, response, weights, alpha, settings.tol_cd,
            settings.max_sweeps)
    if settings.riesz_route == 'lasso':
        try:
            synthetic = riesz_as_lasso(design, targets, weights)
        except IllConditionedError as e:
            logger.warning('Falling back to the direct Riesz fit: %s', e)
        else:
            return fit_lasso(
                design, synthetic, weights, alpha, settings.tol_cd,
                settings.max_sweeps)
    return fit_riesz(
        design, targets, weights, alpha, settings.tol_cd, settings.max_sweeps)


def fit_components(
        design, weights, responses, targets, settings, seed, keys
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n_comp = responses.shape[1]
    p = design.shape[1]
    beta = np.zeros((n_comp, p))
    gamma = np.zeros((n_comp, p))
    alpha_beta = np.zeros(n_comp)
    alpha_gamma = np.zeros(n_comp)
    for g in range(n_comp):
        # a zero target contributes nothing to the score
        if not np.any(targets[:, g]):
            continue
        fit = fit_nuisance(
            design, weights, settings, response=responses[:, g],
            seed=task_seed(seed, *keys, g, 0))
        beta[g], alpha_beta[g] = fit.coefficients, fit.penalty
        fit = fit_nuisance(
            design, weights, settings, targets=targets[:, g],
            seed=task_seed(seed, *keys, g, 1))
        gamma[g], alpha_gamma[g] = fit.coefficients, fit.penalty
    return beta, gamma, alpha_beta, alpha_gamma


def apply_override(override, beta, gamma, targets):
    if override is None:
        return beta, gamma
    active = np.array([np.any(targets[:, g]) for g in range(beta.shape[0])])
    if override.beta is not None:
        beta = np.where(
            active[:, np.newaxis],
            np.broadcast_to(override.beta, beta.shape), beta)
    if override.gamma is not None:
        gamma = np.where(
            active[:, np.newaxis],
            np.broadcast_to(override.gamma, gamma.shape), gamma)
    return beta, gamma


def component_scores(design, responses, targets, beta, gamma) -> np.ndarray:
    fitted = design @ beta.T
    riesz = design @ gamma.T
    plug_in = np.einsum('igp,gp->ig', targets, beta)
    return np.sum(riesz * (responses - fitted) + plug_in, axis=1)


def cross_fit_scores(
        design: np.ndarray, responses: np.ndarray, targets: np.ndarray,
        weights: np.ndarray, plan: FoldPlan, settings: EstimatorSettings,
        override: NuisanceOverride = None) -> Tuple[np.ndarray, NuisanceFits]:
    """Cross-fitted double-robust scores.

    :param design: ``n x p`` basis.
    :param responses: ``n x G`` regression responses, one per component.
    :param targets: ``n x G x p`` Riesz moment targets.
    :param weights: Observation weights; each fold's training weights are
        renormalized to sum to one.
    """
    n = design.shape[0]
    scores = np.zeros(n)
    fits = ([], [], [], [])
    for k in range(plan.folds):
        train, test = plan.train(k), plan.test(k)
        w = weights[train]
        if not w.sum() > 0:
            raise DataError(f'Fold {k} has zero training weight')
        beta, gamma, a_beta, a_gamma = fit_components(
            design[train], w / w.sum(), responses[train], targets[train],
            settings, settings.seed, (k, ))
        beta, gamma = apply_override(override, beta, gamma, targets)
        scores[test] = component_scores(
            design[test], responses[test], targets[test], beta, gamma)
        for lst, item in zip(fits, (beta, gamma, a_beta, a_gamma)):
            lst.append(item)
    return scores, NuisanceFits(*(tuple(f) for f in fits))


def finish_estimate(
        name: str, scores: np.ndarray, weights: np.ndarray, **kwargs
) -> EstimateResult:
    """Builds the result of the weighted mean of ``scores``.
    """
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    lambda_hat = float(weights @ scores)
    psi = scores - lambda_hat
    se = analytic_se(psi, weights) if psi.shape[0] >= 2 else float('nan')
    return EstimateResult(
        name=name, lambda_hat=lambda_hat, psi=psi, se=se, weights=weights,
        **kwargs)


def check_identified(solution: IdentificationSolution, kind: str):
    if solution.kind != kind:
        raise ModelError(
            f'Expected a {kind} functional solution, got {solution.kind}')
    if not solution.identified:
        raise IdentificationError(
            functional=solution.name, residual=solution.residual)


def _plan(data: Dataset, settings: EstimatorSettings,
          fold_plan: Optional[FoldPlan]) -> FoldPlan:
    if fold_plan is not None:
        if fold_plan.assignment.shape[0] != data.n:
            raise ModelError('The fold plan does not match the data set')
        return fold_plan
    return make_folds(data.n, settings.folds, settings.seed)


def _zero_result(name, data, plan, settings) -> EstimateResult:
    return finish_estimate(
        name, np.zeros(data.n), data.omega, folds=plan.folds,
        seed=settings.seed, fold_plan=plan)


def estimate_type_functional(
        data: Dataset, model: ModelSpec, solution: IdentificationSolution,
        basis: Optional[BasisSpec] = None,
        settings: Optional[EstimatorSettings] = None,
        fold_plan: Optional[FoldPlan] = None,
        override: Optional[NuisanceOverride] = None) -> EstimateResult:
    """Cross-fitted estimate of an identified type functional.
    """
    settings = settings or EstimatorSettings()
    check_identified(solution, TYPE_FUNCTIONAL)
    basis = basis or model.basis(data.m)
    plan = _plan(data, settings, fold_plan)
    name = solution.name
    if solution.is_zero():
        return _zero_result(name, data, plan, settings)

    design = basis.evaluate(data.z, data.x)
    responses = np.stack(
        [data.treatment_mask(m) for m in range(model.treatments.d)], axis=1)
    targets = moment_target(solution, basis, data.x)
    scores, fits = cross_fit_scores(
        design, responses, targets, data.omega, plan, settings, override)
    return finish_estimate(
        name, scores, data.omega, folds=plan.folds, seed=settings.seed,
        fold_plan=plan, nuisance=fits)


def outcome_transform(
        solution_or_functional, settings: EstimatorSettings
) -> OutcomeTransform:
    """The bounded outcome transform of a functional: identity transforms
    are clipped to ``[y_lower, y_upper]``.
    """
    functional = getattr(solution_or_functional, 'functional',
                         solution_or_functional)
    rho = functional.rho if functional is not None else OutcomeTransform()
    if rho.bounded:
        return rho
    if settings.y_lower is None or settings.y_upper is None:
        name = functional.name if functional is not None else ''
        raise ModelError(
            f'Outcome functional "{name}" needs a bounded outcome transform; '
            f'set y_lower and y_upper to clip identity outcomes')
    return rho.clipped(settings.y_lower, settings.y_upper)


def estimate_outcome_functional(
        data: Dataset, model: ModelSpec, solution: IdentificationSolution,
        basis: Optional[BasisSpec] = None,
        settings: Optional[EstimatorSettings] = None,
        fold_plan: Optional[FoldPlan] = None,
        override: Optional[NuisanceOverride] = None,
        rho: Optional[OutcomeTransform] = None) -> EstimateResult:
    """Cross-fitted estimate of an identified outcome functional
    ``E[rho(Y*(t)) ell(T*)]``. The regression response is
    ``rho(Y) 1{T = t}``.
    """
    settings = settings or EstimatorSettings()
    check_identified(solution, OUTCOME_FUNCTIONAL)
    if rho is None:
        rho = outcome_transform(solution, settings)
    elif not rho.bounded:
        raise ModelError('The outcome transform must be bounded')
    basis = basis or model.basis(data.m)
    plan = _plan(data, settings, fold_plan)
    name = solution.name
    if solution.is_zero():
        return _zero_result(name, data, plan, settings)

    design = basis.evaluate(data.z, data.x)
    t = model.treatments.index(solution.target_treatment)
    responses = (rho(data.y) * data.treatment_mask(t))[:, np.newaxis]
    targets = moment_target(solution, basis, data.x)[:, np.newaxis, :]
    scores, fits = cross_fit_scores(
        design, responses, targets, data.omega, plan, settings, override)
    return finish_estimate(
        name, scores, data.omega, folds=plan.folds, seed=settings.seed,
        fold_plan=plan, nuisance=fits)


def estimate_functional(
        data: Dataset, model: ModelSpec, functional: FunctionalSpec,
        settings: Optional[EstimatorSettings] = None,
        fold_plan: Optional[FoldPlan] = None,
        override: Optional[NuisanceOverride] = None) -> EstimateResult:
    """Solves and estimates a type or outcome functional of ``model``.
    """
    solution = solve_functional(model, functional)
    if functional.kind == TYPE_FUNCTIONAL:
        return estimate_type_functional(
            data, model, solution, None, settings, fold_plan, override)
    return estimate_outcome_functional(
        data, model, solution, None, settings, fold_plan, override)


def bounded_functionals(
        functionals: Sequence[FunctionalSpec], settings: EstimatorSettings
) -> Tuple[FunctionalSpec, ...]:
    """Replaces the identity transform of outcome functionals by its clipped
    version when ``settings`` has clipping bounds.
    """
    if settings.y_lower is None or settings.y_upper is None:
        return tuple(functionals)
    return tuple(
        replace(f, rho=f.rho.clipped(settings.y_lower, settings.y_upper))
        if f.kind == OUTCOME_FUNCTIONAL else f for f in functionals)


def estimate_named(
        data: Dataset, model: ModelSpec, name: str,
        settings: Optional[EstimatorSettings] = None,
        fold_plan: Optional[FoldPlan] = None,
        override: Optional[NuisanceOverride] = None, mediation: bool = False,
        cache: Optional[Dict[str, EstimateResult]] = None):
    """Estimates functional ``name`` of ``model``.

    Derived functionals are linearized from the estimates of their base
    components, which all share one fold plan and are stored in ``cache``.
    With ``mediation``, ``y00_CN`` and ``y11_CA`` use the mediation scores.
    With ``settings.folds == 1`` and no fold plan, base components use the
    survey-weighted no-split estimator.

    :return: An :class:`EstimateResult`, or a
        :class:`~po_forge.inference.DeltaEstimate` for derived functionals.
    """
    from po_forge.estimate.mediation import mediation_cn, mediation_ca
    from po_forge.estimate.weighted import estimate_weighted_no_split
    from po_forge.inference import linearize
    settings = settings or EstimatorSettings()
    no_split = settings.folds == 1 and fold_plan is None
    plan = None if no_split else _plan(data, settings, fold_plan)
    cache = {} if cache is None else cache
    registry = {f.name: f for f in model.functionals}
    scores = {'y00_CN': mediation_cn, 'y11_CA': mediation_ca}

    def collect(key):
        if key in cache:
            return
        functional = registry.get(key)
        if functional is None:
            raise ModelError(
                f'Model "{model.name}" has no functional "{key}"')
        if functional.kind == DERIVED_FUNCTIONAL:
            for component in functional.combine.components:
                collect(component)
        elif mediation and key in scores:
            rho = functional.rho if functional.rho.bounded else None
            cache[key] = scores[key](
                data, settings=settings, fold_plan=plan, rho=rho)
        elif no_split:
            cache[key] = estimate_weighted_no_split(
                data, model, solve_functional(model, functional),
                settings=settings, override=override)
        else:
            cache[key] = estimate_functional(
                data, model, functional, settings, plan, override)

    collect(name)
    if name in cache:
        return cache[name]
    return linearize(name, registry, cache, settings.p_min)


def population_dr_moment(
        population, solution: IdentificationSolution, a: np.ndarray
) -> Tuple[float, float]:
    """Evaluates both sides of the finite-population double-robustness
    identity of a type functional.

    :param population: An enumerated population (see
        :func:`po_forge.simulate.enumerate_population`) with per-cell
        ``mass``, ``x_cell``, ``z``, ``t`` and ``pz`` (``P(Z = z_j | X)`` of
        the cell's covariate value).
    :param a: Arbitrary ``n_x_cells x q x d`` function ``a(t, z, x)`` indexed
        as ``a[x_cell, j, m]``.
    :return: ``E[sum_t kappa (1{T=t} - a)] + E_X[sum_t sum_j s_jt a]`` and
        ``E[sum_t kappa 1{T=t}]``.
    """
    blocks = solution.blocks
    q, d = blocks.shape
    mass = np.asarray(population.mass, dtype=float)
    z = np.asarray(population.z, dtype=int)
    t = np.asarray(population.t, dtype=int)
    x_cell = np.asarray(population.x_cell, dtype=int)
    pz = np.asarray(population.pz, dtype=float)
    rows = np.arange(mass.shape[0])

    # kappa(t_m, Z, X) for every treatment m at the cell's own Z
    kappa = blocks[z] / pz[rows, z][:, np.newaxis]
    indicator = np.zeros((mass.shape[0], d))
    indicator[rows, t] = 1.
    a_cells = a[x_cell, z]
    residual_term = mass @ np.sum(kappa * (indicator - a_cells), axis=1)
    plug_in = mass @ np.einsum('jm,ijm->i', blocks, a[x_cell])
    target = mass @ np.sum(kappa * indicator, axis=1)
    return float(residual_term + plug_in), float(target)


def type_covariate_means(
        data: Dataset, model: ModelSpec, type_label: str,
        covariate_indices: Optional[Sequence[int]] = None,
        settings: Optional[EstimatorSettings] = None,
        fold_plan: Optional[FoldPlan] = None) -> Dict[str, object]:
    """Estimates ``E[X_j | T* = type_label]`` for every requested covariate
    as the ratio of ``E[X_j 1{T* = type_label}]`` over the type probability.

    Returns a dict mapping ``x<j>`` to the
    :class:`~po_forge.inference.DeltaEstimate` of the mean, with a bootstrap
    interval when ``settings.bootstrap`` is positive.
    """
    settings = settings or EstimatorSettings()
    plan = _plan(data, settings, fold_plan)
    if covariate_indices is None:
        covariate_indices = range(data.m)
    model.support.index(type_label)

    prob_name = f'p_{type_label}'
    results = {prob_name: estimate_functional(
        data, model, FunctionalSpec.indicator(prob_name, [type_label]),
        settings, plan)}
    registry = {}
    for j in covariate_indices:
        num = f'x{j}_{type_label}'
        results[num] = estimate_functional(
            data, model, FunctionalSpec.indicator(
                num, [type_label], covariate_index=j), settings, plan)
        registry[f'x{j}'] = FunctionalSpec.derived(
            f'x{j}', 'ratio', [num, prob_name])

    draws = None
    if settings.bootstrap:
        draws = multiplier_bootstrap(
            list(results.values()), settings.bootstrap, settings.weight_law,
            settings.seed)
    return {
        name: delta_method(
            name, registry, results, draws, settings.level, settings.p_min)
        for name in registry}
