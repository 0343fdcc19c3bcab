"""Monte Carlo study
=====================

A study draws ``reps`` data sets from a simulation specification, estimates
every target on each of them and summarizes bias, Monte Carlo spread,
standard error accuracy and interval coverage against the oracle values.

Replicates run in worker threads through :func:`trio.to_thread.run_sync`,
at most ``threads`` at a time. Replicate ``i`` is seeded with
``task_seed(seed, i)`` and its results are stored at index ``i``, so the
summary does not depend on ``threads`` or on the order in which replicates
finish.

The study is a :class:`~kivy.event.EventDispatcher`; the loggers of
:mod:`po_forge.data_logger` can bind to its events.
"""
import copy
import logging
from dataclasses import dataclass
from typing import List, Tuple, Dict, Optional, Callable, Sequence, Union

import numpy as np
import trio
from scipy.stats import norm

from kivy.properties import BooleanProperty, NumericProperty
from kivy.event import EventDispatcher

from po_forge.base import ForgeBase, ForgeError, ModelError
from po_forge.estimate import Dataset, EstimatorSettings, EstimateResult, \
    NuisanceOverride, task_seed, estimate_named, bounded_functionals
from po_forge.inference import DeltaEstimate, multiplier_bootstrap, \
    bootstrap_ci, delta_method
from po_forge.simulate import DgpSpec, oracle_value

__all__ = (
    'StudyTarget', 'ReplicateRecord', 'TargetSummary', 'StudySummary',
    'MonteCarloStudy', 'functional_targets', 'threshold_target',
    'monte_carlo', 'summary_table', 'INTERVALS')

logger = logging.getLogger(__name__)

INTERVALS = ('analytic', 'bootstrap')


@dataclass(frozen=True)
class StudyTarget:
    """A quantity estimated in every replicate.

    Either ``functional`` names a functional of the specification's model
    (derived ones are estimated from their components with the delta
    method), or ``estimator`` maps a data set and settings to an estimate.
    """

    name: str

    truth: float

    functional: Optional[str] = None

    estimator: Optional[Callable[[Dataset, EstimatorSettings],
                                 EstimateResult]] = None

    override: Optional[NuisanceOverride] = None
    '''Fixed nuisances, to check how the estimator fails when they are
    wrong.
    '''

    mediation: bool = False
    '''Estimate ``y00_CN`` and ``y11_CA`` with the mediation scores.
    '''


@dataclass(frozen=True)
class ReplicateRecord:

    index: int

    seed: int

    estimates: Tuple[float, ...]

    ses: Tuple[float, ...]

    covered: Tuple[float, ...]
    '''1 or 0 per target, NaN when the target failed in this replicate.
    '''

    errors: Tuple[str, ...] = ()


@dataclass(frozen=True)
class TargetSummary:

    name: str

    truth: float

    mean: float

    bias: float

    mc_sd: float

    mc_se: float
    '''Monte Carlo standard error of the mean estimate, ``mc_sd / sqrt(R)``.
    '''

    mean_se: float

    coverage: float

    failures: int = 0

    @property
    def se_ratio(self) -> float:
        return self.mean_se / self.mc_sd if self.mc_sd else float('nan')

    def to_dict(self) -> dict:
        return {
            'name': self.name, 'truth': self.truth, 'mean': self.mean,
            'bias': self.bias, 'mc_sd': self.mc_sd, 'mc_se': self.mc_se,
            'mean_se': self.mean_se, 'se_ratio': self.se_ratio,
            'coverage': self.coverage, 'failures': self.failures}


@dataclass(frozen=True)
class StudySummary:

    targets: Tuple[TargetSummary, ...]

    reps: int

    n: int

    seed: int

    level: float

    interval: str

    def target(self, name: str) -> TargetSummary:
        for t in self.targets:
            if t.name == name:
                return t
        raise ModelError(f'The study has no target "{name}"')

    def to_dict(self) -> dict:
        return {
            'reps': self.reps, 'n': self.n, 'seed': self.seed,
            'level': self.level, 'interval': self.interval,
            'targets': [t.to_dict() for t in self.targets]}


def functional_targets(
        spec: DgpSpec, names: Sequence[str],
        settings: Optional[EstimatorSettings] = None,
        override: Optional[NuisanceOverride] = None, mediation: bool = False,
        suffix: str = '') -> List[StudyTarget]:
    """Targets for functionals of the specification's model, with oracle
    truths computed under the same outcome clipping as the estimates.
    """
    settings = settings or EstimatorSettings()
    functionals = bounded_functionals(spec.model.functionals, settings)
    registry = {f.name: f for f in functionals}
    targets = []
    for name in names:
        if name not in registry:
            raise ModelError(
                f'Model "{spec.model.name}" has no functional "{name}"')
        targets.append(StudyTarget(
            name=name + suffix,
            truth=oracle_value(spec, registry[name], functionals),
            functional=name, override=override, mediation=mediation))
    return targets


def threshold_target(dgp, a: float, b: float, c: str = '1',
                     treatment: Optional[str] = None) -> StudyTarget:
    """Target ``P(a <= K_c* <= b)`` (or its outcome version) of a
    :class:`~po_forge.simulate.continuous.PartialMonotonicityDgp`.
    """
    from po_forge.estimate.continuous import estimate_threshold_functional
    if c != '1':
        raise ModelError('Oracle values are only available for K_1*')
    if treatment is None:
        truth = dgp.threshold_probability(a, b)
    else:
        truth = dgp.threshold_outcome(a, b, treatment)

    def estimator(data, settings):
        return estimate_threshold_functional(
            data, dgp.model, c, a, b, treatment=treatment, settings=settings)

    name = f'p_K{c}' if treatment is None else f'y{treatment}_K{c}'
    return StudyTarget(name=name, truth=truth, estimator=estimator)


class MonteCarloStudy(EventDispatcher, ForgeBase):
    """Repeated simulation and estimation of a list of targets.
    """

    __events__ = (
        'on_study_start', 'on_replicate_start', 'on_replicate_end',
        'on_study_end')

    _config_props_ = ('reps', 'n', 'seed', 'threads', 'level', 'interval')

    def __init__(
            self, dgp=None, targets: Sequence[StudyTarget] = (),
            settings: Optional[EstimatorSettings] = None, reps=100, n=2000,
            seed=0, threads=1, level=0.95, interval='analytic', **kwargs):
        super().__init__(**kwargs)
        self.dgp = dgp
        self.targets = list(targets)
        self.settings = settings or EstimatorSettings()
        self.reps = reps
        self.n = n
        self.seed = seed
        self.threads = threads
        self.level = level
        self.interval = interval
        self.records = []
        self.last_record = None
        self.summary = None

    def check(self) -> None:
        if self.dgp is None or not self.targets:
            raise ModelError('A study needs a specification and targets')
        if self.reps < 2:
            raise ModelError(f'A study needs reps >= 2, got {self.reps}')
        if self.threads < 1:
            raise ModelError(f'threads must be positive, got {self.threads}')
        if self.interval not in INTERVALS:
            raise ModelError(f'Unknown interval "{self.interval}", expected '
                             f'one of {INTERVALS}')
        if self.interval == 'bootstrap' and not self.settings.bootstrap:
            raise ModelError('Bootstrap intervals need settings.bootstrap > 0')
        if not 0 < self.level < 1:
            raise ModelError(f'level must be in (0, 1), got {self.level}')

    def _estimate(self, target: StudyTarget, data: Dataset,
                  settings: EstimatorSettings
                  ) -> Tuple[float, float, Optional[float]]:
        """Returns the estimate, its standard error and the half-width of its
        interval, None for the analytic interval.
        """
        components = {}
        if target.estimator is not None:
            result = target.estimator(data, settings)
            components[result.name] = result
            registry = {}
        else:
            model = self.dgp.model
            functionals = bounded_functionals(model.functionals, settings)
            registry = {f.name: f for f in functionals}
            result = estimate_named(
                data, model.with_functionals(functionals),
                target.functional, settings, override=target.override,
                mediation=target.mediation, cache=components)

        if self.interval == 'analytic':
            return result.lambda_hat, result.se, None
        draws = multiplier_bootstrap(
            list(components.values()), settings.bootstrap,
            settings.weight_law, settings.seed)
        if isinstance(result, DeltaEstimate):
            ci = delta_method(
                result.name, registry, components, draws, self.level,
                settings.p_min).ci
        else:
            ci = bootstrap_ci(
                draws.column(result.name), result.lambda_hat, self.level)
        return result.lambda_hat, result.se, ci.half_width

    def run_replicate(self, index: int) -> ReplicateRecord:
        """Generates and estimates replicate ``index``. Thread safe.
        """
        seed = task_seed(self.seed, index)
        data, _ = self.dgp.generate(self.n, seed)
        settings = copy.copy(self.settings)
        settings.seed = seed
        z = norm.ppf((1 + self.level) / 2)

        estimates, ses, covered, errors = [], [], [], []
        for target in self.targets:
            try:
                value, se, half = self._estimate(target, data, settings)
            except ForgeError as e:
                msg = f'replicate {index}, {target.name}: {e}'
                logger.warning(msg)
                errors.append(msg)
                estimates.append(np.nan)
                ses.append(np.nan)
                covered.append(np.nan)
                continue
            if half is None:
                half = z * se
            estimates.append(value)
            ses.append(se)
            covered.append(float(abs(value - target.truth) <= half))
        return ReplicateRecord(
            index=index, seed=seed, estimates=tuple(estimates),
            ses=tuple(ses), covered=tuple(covered), errors=tuple(errors))

    async def _run_one(self, index: int, records: list,
                       limiter: trio.CapacityLimiter):
        async with limiter:
            self.dispatch('on_replicate_start', self, index)
            record = await trio.to_thread.run_sync(self.run_replicate, index)
            records[index] = record
            self.last_record = record
            self.completed += 1
            self.dispatch('on_replicate_end', self, index)

    async def run_study(self) -> StudySummary:
        """Runs all the replicates and returns the summary.
        """
        self.check()
        records: List[Optional[ReplicateRecord]] = [None] * self.reps
        limiter = trio.CapacityLimiter(self.threads)
        self.completed = 0
        self.active = True
        try:
            self.dispatch('on_study_start', self)
            async with trio.open_nursery() as nursery:
                for i in range(self.reps):
                    nursery.start_soon(self._run_one, i, records, limiter)
        finally:
            self.active = False

        self.records = records
        self.summary = self.summarize(records)
        self.dispatch('on_study_end', self)
        return self.summary

    def summarize(self, records: Sequence[ReplicateRecord]) -> StudySummary:
        estimates = np.array([r.estimates for r in records], dtype=float)
        ses = np.array([r.ses for r in records], dtype=float)
        covered = np.array([r.covered for r in records], dtype=float)
        rows = []
        for g, target in enumerate(self.targets):
            ok = np.isfinite(estimates[:, g])
            values = estimates[ok, g]
            count = values.shape[0]
            if count:
                mean = float(values.mean())
                mc_sd = float(values.std(ddof=1)) if count > 1 else \
                    float('nan')
                mean_se = float(ses[ok, g].mean())
                coverage = float(covered[ok, g].mean())
            else:
                mean = mc_sd = mean_se = coverage = float('nan')
            rows.append(TargetSummary(
                name=target.name, truth=float(target.truth), mean=mean,
                bias=mean - target.truth, mc_sd=mc_sd,
                mc_se=mc_sd / np.sqrt(count) if count else float('nan'),
                mean_se=mean_se, coverage=coverage,
                failures=int((~ok).sum())))
        return StudySummary(
            targets=tuple(rows), reps=len(records), n=self.n, seed=self.seed,
            level=self.level, interval=self.interval)

    def on_study_start(self, *largs):
        pass

    def on_replicate_start(self, obj, index, *largs):
        pass

    def on_replicate_end(self, obj, index, *largs):
        pass

    def on_study_end(self, *largs):
        pass

    def __repr__(self):
        active = 'active' if self.active else 'inactive'
        name = self.name or 'unnamed'
        cls = self.__class__
        cls_name = cls.__module__ + '.' + cls.__qualname__
        return f'<{cls_name} name="{name}": {self.completed}/{self.reps} ' \
               f'{active} at 0x{id(self):016X}>'

    dgp: Union[DgpSpec, object] = None
    '''The simulation specification; anything with a
    ``generate(n, seed) -> (Dataset, truth)`` method.
    '''

    targets: List[StudyTarget] = []

    settings: EstimatorSettings = None

    reps: int = 100

    n: int = 2000
    '''Observations per replicate.
    '''

    seed: int = 0

    threads: int = 1
    '''Replicates run at the same time. Changes wall time only.
    '''

    level: float = 0.95

    interval: str = 'analytic'
    '''``'analytic'`` for the normal interval from the analytic standard
    error, ``'bootstrap'`` for the multiplier bootstrap interval.
    '''

    records: List[ReplicateRecord] = []

    last_record: Optional[ReplicateRecord] = None

    summary: Optional[StudySummary] = None

    completed: int = NumericProperty(0)
    '''Number of finished replicates.
    '''

    active: bool = BooleanProperty(False)


def monte_carlo(
        dgp, targets: Sequence[StudyTarget], reps: int = 100, n: int = 2000,
        settings: Optional[EstimatorSettings] = None, seed: int = 0,
        threads: int = 1, level: float = 0.95, interval: str = 'analytic',
        loggers: Sequence = ()) -> StudySummary:
    """Runs a :class:`MonteCarloStudy` to completion with :func:`trio.run`.

    ``loggers`` are :class:`~po_forge.data_logger.StudyLogger` instances
    that get the study's events and progress.
    """
    study = MonteCarloStudy(
        dgp=dgp, targets=targets, settings=settings, reps=reps, n=n,
        seed=seed, threads=threads, level=level, interval=interval,
        name='monte_carlo')
    for item in loggers:
        item.add_study(study)
    return trio.run(study.run_study)


def summary_table(summary: StudySummary) -> Dict[str, List[float]]:
    """The summary as columns, one entry per target.
    """
    columns = ('name', 'truth', 'bias', 'mc_sd', 'mc_se', 'mean_se',
               'coverage')
    rows = [t.to_dict() for t in summary.targets]
    return {c: [row[c] for row in rows] for c in columns}
