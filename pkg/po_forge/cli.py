"""Command line
================

The ``po-forge`` command with the sub-commands ``identify``, ``estimate`` and
``simulate``. Every command writes a JSON report (schema
:data:`~po_forge.REPORT_SCHEMA`) and exits with a nonzero code when it hits
an error. Warnings logged while a command runs are mirrored into its report.

A run is configured with a JSON (or YAML) file whose keys are the
:attr:`RunConfig._config_props_`; the command line flags override them::

    {
        "model": "preset:late3",
        "functionals": ["p_complier", "late"],
        "settings": {"folds": 5, "bootstrap": 1000, "y_lower": -10,
                     "y_upper": 10},
        "out": "report.json"
    }

Data files are UTF-8 CSV files with a header row and the columns ``y``,
``t``, ``z`` (or ``c`` and ``w`` for a continuous-pair instrument), the
covariates ``x1, ..., xm`` and an optional ``weight``.
"""
import argparse
import csv
import json
import logging
import math
import re
import sys
from dataclasses import replace
from functools import partial
from typing import Optional, List, Dict, Sequence, Any

import numpy as np
import trio

from po_forge import REPORT_SCHEMA, __version__
from po_forge.base import ForgeBase, ForgeError, ModelError, DataError
from po_forge.model import ModelSpec, DERIVED_FUNCTIONAL, load_model, \
    loads_structured, validate_model
from po_forge.identify import identification_report
from po_forge.estimate import Dataset, EstimatorSettings, EstimateResult, \
    make_folds, estimate_named, bounded_functionals
from po_forge.estimate.mediation import derived_mediation_effects, \
    MEDIATION_EFFECTS
from po_forge.estimate.qte import QteArm, estimate_qte
from po_forge.estimate.continuous import estimate_threshold_functional
from po_forge.inference import multiplier_bootstrap, bootstrap_ci, \
    delta_method, write_draws_csv
from po_forge.simulate import DgpSpec, load_dgp
from po_forge.simulate.continuous import PartialMonotonicityDgp
from po_forge.simulate.study import MonteCarloStudy, StudyTarget, \
    functional_targets, threshold_target
from po_forge.data_logger import StudyCSVLogger, StudyProgressLogger
from po_forge.utils import resolve_seed

__all__ = (
    'RunConfig', 'load_dataset', 'write_dataset', 'load_run_config',
    'load_simulation', 'cmd_identify', 'cmd_estimate', 'cmd_simulate',
    'main', 'run', 'write_report', 'ReportEncoder', 'MEDIATION_TARGETS')

logger = logging.getLogger(__name__)

MEDIATION_TARGETS = ('y00_CN', 'y11_CA')
"""Outcome functionals estimated with the mediation scores.
"""

_COVARIATE = re.compile(r'^x(\d+)$')


class RunConfig(ForgeBase):
    """Configuration of one command line run.
    """

    _config_props_ = (
        'model', 'data', 'simulation', 'functionals', 'settings', 'out',
        'draws_out', 'seed', 'threads', 'derived', 'monte_carlo', 'qte',
        'threshold', 'mediation', 'n', 'log_csv')

    model: Optional[str] = None
    '''Model file or ``preset:<name>``.
    '''

    data: Optional[str] = None
    '''Input CSV of ``estimate``, output CSV of ``simulate``.
    '''

    simulation: Optional[str] = None
    '''Simulation specification file or ``preset:<name>``.
    '''

    functionals: Optional[List[str]] = None
    '''Functionals to identify or estimate; None for all of the model's.
    '''

    settings: Dict[str, Any] = {}
    '''Config of the :class:`~po_forge.estimate.EstimatorSettings`.
    '''

    out: Optional[str] = None

    draws_out: Optional[str] = None
    '''CSV file receiving the bootstrap draws.
    '''

    seed: Optional[int] = None

    threads: int = 1

    derived: bool = True
    '''Whether to report the mediation effects (CDE0, CDE1, CTE, LATE and the
    implied LATE) when ``mediation`` is set.
    '''

    monte_carlo: Optional[Dict[str, Any]] = None
    '''``reps``, ``targets``, ``interval``, ``level``, ``rigged`` and
    ``threshold`` of a Monte Carlo study run by ``simulate``.
    '''

    qte: Optional[Dict[str, Any]] = None
    '''``treated`` and ``control`` (each ``{treatment, types}``), ``y_grid``
    (a list, or ``{"num": k}`` for ``k`` sample quantiles) and ``taus``.
    '''

    threshold: Optional[List[Dict[str, Any]]] = None
    '''Threshold functionals ``{c, a, b, treatment}`` of a continuous-pair
    model.
    '''

    mediation: bool = False
    '''Estimate ``y00_CN`` and ``y11_CA`` with the mediation scores.
    '''

    n: int = 2000
    '''Observations generated by ``simulate``.
    '''

    log_csv: Optional[str] = None
    '''CSV file receiving the events of a Monte Carlo study.
    '''

    def __init__(self, **kwargs):
        super().__init__(**{k: v for k, v in kwargs.items() if k == 'name'})
        self.settings = {}
        for key, value in kwargs.items():
            if key != 'name':
                if key not in self._config_props_:
                    raise ModelError(f'Unknown run setting "{key}"')
                setattr(self, key, value)

    def estimator_settings(self) -> EstimatorSettings:
        settings = EstimatorSettings.from_config(dict(self.settings or {}))
        settings.seed = resolve_seed(self.seed, settings.seed)
        return settings


def load_run_config(filename: Optional[str], **overrides) -> RunConfig:
    """Reads a config file (if any) and applies the non-None overrides.
    """
    config = {}
    if filename:
        with open(filename, encoding='utf-8') as fh:
            config = loads_structured(fh.read()) or {}
    config.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_config(config)


class _WarningCollector(logging.Handler):

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages = []

    def emit(self, record):
        msg = record.getMessage()
        if msg not in self.messages:
            self.messages.append(msg)


def _plain(value):
    """JSON-ready copy with arrays as lists and non-finite floats as None.
    """
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.integer, )):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _float_text(value: float) -> str:
    if not math.isfinite(value):
        raise ValueError(f'Out of range float value: {value!r}')
    text = format(value, '.17g')
    if not any(c in text for c in '.e'):
        text += '.0'
    return text


class ReportEncoder(json.JSONEncoder):
    """Encodes floats with 17 significant digits.
    """

    def iterencode(self, o, _one_shot=False):
        markers = {} if self.check_circular else None
        return json.encoder._make_iterencode(
            markers, self.default,
            json.encoder.encode_basestring_ascii if self.ensure_ascii
            else json.encoder.encode_basestring,
            self.indent, _float_text, self.key_separator,
            self.item_separator, self.sort_keys, self.skipkeys, _one_shot)(o, 0)


def write_report(filename: Optional[str], report: dict) -> None:
    """Writes the report. Floats are serialized with 17 significant digits
    and non-finite values as ``null``.
    """
    text = json.dumps(_plain(report), indent=2, cls=ReportEncoder)
    if filename:
        with open(filename, 'w', encoding='utf-8') as fh:
            fh.write(text + '\n')
    else:
        print(text)


def _parse_float(value: str) -> Optional[float]:
    try:
        result = float(value)
    except (TypeError, ValueError):
        return None
    return result if math.isfinite(result) else None


def load_dataset(filename: str, model: ModelSpec,
                 weight_column: str = 'weight') -> Dataset:
    """Reads a data set for ``model``.

    Rows with a missing or non-numeric cell are dropped and counted in the
    diagnostics. An unknown treatment or instrument label raises a
    :class:`~po_forge.base.DataError` naming the row.
    """
    continuous = not model.is_discrete
    with open(filename, newline='', encoding='utf-8') as fh:
        reader = csv.DictReader(fh)
        columns = reader.fieldnames or []
        required = ['y', 't'] + (['c', 'w'] if continuous else ['z'])
        missing = [c for c in required if c not in columns]
        if missing:
            raise DataError(f'{filename} is missing the columns {missing}')
        covariates = sorted(
            (c for c in columns if _COVARIATE.match(c)),
            key=lambda c: int(_COVARIATE.match(c).group(1)))
        has_weight = weight_column in columns
        z_column = 'c' if continuous else 'z'

        t_index = {v: i for i, v in enumerate(model.treatments.labels)}
        z_index = {v: i for i, v in enumerate(model.instruments.values)}
        rows = {'y': [], 't': [], 'z': [], 'x': [], 'w': [], 'weight': []}
        dropped = 0
        for row_number, row in enumerate(reader, start=1):
            t_label = (row.get('t') or '').strip()
            z_label = (row.get(z_column) or '').strip()
            numbers = [_parse_float(row.get(c)) for c in
                       ['y'] + covariates + (['w'] if continuous else []) +
                       ([weight_column] if has_weight else [])]
            if not t_label or not z_label or any(
                    v is None for v in numbers):
                dropped += 1
                continue
            if t_label not in t_index:
                raise DataError(
                    f'Row {row_number}: unknown treatment "{t_label}", '
                    f'expected one of {list(model.treatments.labels)}')
            if z_label not in z_index:
                raise DataError(
                    f'Row {row_number}: unknown instrument value '
                    f'"{z_label}", expected one of '
                    f'{list(model.instruments.values)}')
            numbers = iter(numbers)
            rows['y'].append(next(numbers))
            rows['x'].append([next(numbers) for _ in covariates])
            if continuous:
                rows['w'].append(next(numbers))
            if has_weight:
                rows['weight'].append(next(numbers))
            rows['t'].append(t_index[t_label])
            rows['z'].append(z_index[z_label])

    diagnostics = []
    if dropped:
        msg = (f'Dropped {dropped} rows of {filename} with missing or '
               f'non-numeric cells')
        logger.warning(msg)
        diagnostics.append(msg)
    if not rows['y']:
        raise DataError(f'{filename} has no usable rows')
    n = len(rows['y'])
    return Dataset.from_arrays(
        rows['y'], rows['t'], rows['z'],
        np.array(rows['x'], dtype=float).reshape(n, len(covariates)),
        rows['weight'] if has_weight else None,
        rows['w'] if continuous else None,
        treatments=model.treatments.labels,
        instruments=model.instruments.values, diagnostics=diagnostics)


def write_dataset(filename: str, data: Dataset,
                  weights: Optional[np.ndarray] = None) -> None:
    """Writes a data set in the schema read by :func:`load_dataset`.
    """
    continuous = data.w is not None
    header = ['y', 't'] + (['c', 'w'] if continuous else ['z']) + \
        [f'x{j + 1}' for j in range(data.m)]
    if weights is not None:
        header.append('weight')
    with open(filename, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(data.y[i])), data.treatments[data.t[i]],
                   data.instruments[data.z[i]]]
            if continuous:
                row.append(repr(float(data.w[i])))
            row.extend(repr(float(v)) for v in data.x[i])
            if weights is not None:
                row.append(repr(float(weights[i])))
            writer.writerow(row)


def load_simulation(name: str, seed: Optional[int] = None):
    """Loads a simulation specification; ``preset:pmono`` is the partial
    monotonicity design of the continuous instrument.
    """
    if name == 'preset:pmono':
        return PartialMonotonicityDgp(seed=seed or 0)
    spec = load_dgp(name)
    return spec if seed is None else replace(spec, seed=seed)


def _base_components(registry, names: Sequence[str]) -> List[str]:
    out = []

    def visit(name):
        functional = registry.get(name)
        if functional is None:
            raise ModelError(f'Unknown functional "{name}"')
        if functional.kind == DERIVED_FUNCTIONAL:
            for component in functional.combine.components:
                visit(component)
        elif name not in out:
            out.append(name)

    for name in names:
        visit(name)
    return out


def _estimable_names(model: ModelSpec, mediation: bool) -> List[str]:
    """Every functional of the model whose base components are identified
    (or estimated with the mediation scores).
    """
    report = identification_report(model)
    identified = {v.name for v in report.verdicts if v.identified}
    registry = {f.name: f for f in model.functionals}
    names = []
    for f in model.functionals:
        bases = _base_components(registry, [f.name])
        if all(b in identified or (mediation and b in MEDIATION_TARGETS)
               for b in bases):
            names.append(f.name)
        else:
            logger.warning(
                'Skipping "%s", it is not identified by the model', f.name)
    return names


async def _estimate_bases(
        data: Dataset, model: ModelSpec, names: Sequence[str],
        settings: EstimatorSettings, plan, threads: int, mediation: bool
) -> Dict[str, EstimateResult]:
    limiter = trio.CapacityLimiter(threads)
    results, errors = {}, {}

    async def one(name):
        try:
            results[name] = await trio.to_thread.run_sync(
                partial(estimate_named, data, model, name, settings, plan,
                        mediation=mediation), limiter=limiter)
        except ForgeError as e:
            errors[name] = e

    async with trio.open_nursery() as nursery:
        for name in names:
            nursery.start_soon(one, name)
    for name in names:
        if name in errors:
            raise errors[name]
    return {name: results[name] for name in names}


def _result_row(result: EstimateResult, settings: EstimatorSettings,
                ci=None) -> dict:
    row = result.to_dict()
    row['bootstrap'] = settings.bootstrap
    row['weight_law'] = settings.weight_law
    if ci is not None:
        row['ci'] = ci.to_dict()
    return row


def _qte_grid(spec, data: Dataset) -> np.ndarray:
    if isinstance(spec, dict):
        num = int(spec.get('num', 50))
        grid = np.quantile(data.y, np.linspace(0.01, 0.99, num))
        return np.unique(grid)
    return np.asarray(spec, dtype=float)


def _qte_arm(spec: dict) -> QteArm:
    return QteArm(treatment=str(spec['treatment']),
                  types=tuple(str(t) for t in spec['types']),
                  name=str(spec.get('name', '')))


def cmd_identify(config: RunConfig) -> dict:
    """Identification report of the configured functionals.
    """
    model = load_model(config.model)
    diagnostics = validate_model(model)
    report = {'schema': REPORT_SCHEMA, 'command': 'identify',
              'model': model.name}
    if diagnostics or config.functionals == []:
        report['diagnostics'] = diagnostics
        report['verdicts'] = []
        if diagnostics:
            report['error'] = 'invalid model'
        return report

    names = config.functionals
    functionals = None if names is None else [
        model.functional(name) for name in names]
    result = identification_report(model, functionals)
    report.update(result.to_dict())
    report['efficient'] = result.efficient
    report['schema'] = REPORT_SCHEMA
    report['command'] = 'identify'
    return report


def cmd_estimate(config: RunConfig) -> dict:
    """Estimates, intervals and derived effects of the configured
    functionals.
    """
    if not config.model or not config.data:
        raise ModelError('estimate needs a model and a data file')
    model = load_model(config.model)
    diagnostics = validate_model(model)
    if diagnostics:
        raise ModelError('Invalid model: ' + '; '.join(diagnostics))
    settings = config.estimator_settings()
    data = load_dataset(config.data, model)
    model = model.with_functionals(
        bounded_functionals(model.functionals, settings))
    report = {
        'schema': REPORT_SCHEMA, 'command': 'estimate', 'model': model.name,
        'n': data.n, 'seed': settings.seed, 'folds': settings.folds,
        'bootstrap': settings.bootstrap, 'settings': settings.get_config(),
        'diagnostics': list(data.diagnostics)}

    if not model.is_discrete:
        report['estimates'] = _estimate_thresholds(config, model, data,
                                                   settings)
        return report

    registry = {f.name: f for f in model.functionals}
    names = config.functionals
    if names is None:
        names = _estimable_names(model, config.mediation)
    bases = _base_components(registry, names)
    if config.mediation and config.derived:
        bases += [b for b in _base_components(registry, MEDIATION_EFFECTS)
                  if b not in bases]
    plan = make_folds(data.n, settings.folds, settings.seed) \
        if settings.folds >= 2 else None
    results = trio.run(
        _estimate_bases, data, model, bases, settings, plan,
        max(1, config.threads), config.mediation)

    draws = None
    if settings.bootstrap:
        draws = multiplier_bootstrap(
            list(results.values()), settings.bootstrap, settings.weight_law,
            settings.seed)
        if config.draws_out:
            write_draws_csv(config.draws_out, draws)

    rows = []
    for name in names:
        if registry[name].kind == DERIVED_FUNCTIONAL:
            estimate = delta_method(
                name, registry, results, draws, settings.level,
                settings.p_min)
            row = estimate.to_dict()
            row.update(n=data.n, folds=settings.folds, seed=settings.seed,
                       bootstrap=settings.bootstrap)
        else:
            ci = None if draws is None else bootstrap_ci(
                draws.column(name), results[name].lambda_hat, settings.level)
            row = _result_row(results[name], settings, ci)
        rows.append(row)
    report['estimates'] = rows

    if config.mediation and config.derived:
        effects = derived_mediation_effects(
            results, draws, settings.level, settings.p_min)
        report['mediation'] = [e.to_dict() for e in effects.values()]

    if config.qte:
        qte = config.qte
        result = estimate_qte(
            data, model, _qte_arm(qte['treated']), _qte_arm(qte['control']),
            _qte_grid(qte.get('y_grid', {'num': 50}), data),
            qte.get('taus', [0.1, 0.25, 0.5, 0.75, 0.9]), settings, plan)
        report['qte'] = result.to_dict()
    return report


def _estimate_thresholds(config: RunConfig, model: ModelSpec, data: Dataset,
                         settings: EstimatorSettings) -> List[dict]:
    if not config.threshold:
        raise ModelError(
            'A continuous-pair model needs "threshold" functionals')
    plan = make_folds(data.n, settings.folds, settings.seed)
    rows = []
    for item in config.threshold:
        result = estimate_threshold_functional(
            data, model, str(item.get('c', '1')), float(item['a']),
            float(item['b']), treatment=item.get('treatment'),
            settings=settings, fold_plan=plan, name=item.get('name', ''))
        ci = None
        if settings.bootstrap:
            draws = multiplier_bootstrap(
                [result], settings.bootstrap, settings.weight_law,
                settings.seed)
            ci = bootstrap_ci(
                draws.column(result.name), result.lambda_hat, settings.level)
        rows.append(_result_row(result, settings, ci))
    return rows


def _study_targets(config: RunConfig, dgp, settings: EstimatorSettings
                   ) -> List[StudyTarget]:
    mc = config.monte_carlo or {}
    if isinstance(dgp, PartialMonotonicityDgp):
        items = mc.get('threshold') or config.threshold or []
        if not items:
            raise ModelError('The study needs "threshold" targets')
        return [threshold_target(
            dgp, float(item['a']), float(item['b']),
            str(item.get('c', '1')), item.get('treatment'))
            for item in items]

    mediation = bool(mc.get('mediation', config.mediation))
    names = mc.get('targets') or config.functionals
    if not names:
        names = _estimable_names(dgp.model, mediation)
    targets = functional_targets(dgp, names, settings, mediation=mediation)
    if mc.get('rigged'):
        from po_forge.estimate import NuisanceOverride
        targets += functional_targets(
            dgp, names, settings, override=NuisanceOverride(
                beta=0., gamma=0.), suffix='_rigged')
    return targets


def cmd_simulate(config: RunConfig) -> dict:
    """Generates a data set and/or runs a Monte Carlo study.
    """
    if not config.simulation:
        raise ModelError('simulate needs a simulation specification')
    if not config.data and not config.monte_carlo:
        raise ModelError(
            'simulate needs a data file to write or a monte_carlo study')
    seed = resolve_seed(config.seed)
    dgp = load_simulation(config.simulation, seed)
    report = {'schema': REPORT_SCHEMA, 'command': 'simulate',
              'simulation': getattr(dgp, 'name', ''), 'seed': seed}

    if config.data:
        data, truth = dgp.generate(config.n, seed)
        weights = None
        if isinstance(dgp, DgpSpec) and dgp.weighted:
            weights = np.array(
                [dgp.cells[c].survey_weight for c in truth.cells])
        write_dataset(config.data, data, weights)
        report['data'] = {'file': config.data, 'n': data.n}

    if config.monte_carlo:
        mc = config.monte_carlo
        settings = config.estimator_settings()
        study = MonteCarloStudy(
            dgp=dgp, targets=_study_targets(config, dgp, settings),
            settings=settings, reps=int(mc.get('reps', 100)),
            n=int(mc.get('n', config.n)), seed=seed,
            threads=max(1, config.threads),
            level=float(mc.get('level', settings.level)),
            interval=mc.get('interval', 'analytic'), name='simulate')
        StudyProgressLogger().add_study(study)
        if config.log_csv:
            with StudyCSVLogger(config.log_csv) as csv_logger:
                csv_logger.add_study(study)
                summary = trio.run(study.run_study)
        else:
            summary = trio.run(study.run_study)
        report['monte_carlo'] = summary.to_dict()
    return report


COMMANDS = {
    'identify': cmd_identify, 'estimate': cmd_estimate,
    'simulate': cmd_simulate}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='po-forge',
        description='Identification and estimation of functionals of '
                    'discrete-instrument potential outcome models.')
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('command', choices=sorted(COMMANDS))
    parser.add_argument('--model', type=str, default=None)
    parser.add_argument('--data', type=str, default=None)
    parser.add_argument('--simulation', type=str, default=None)
    parser.add_argument('--config', type=str, default=None)
    parser.add_argument('--out', type=str, default=None)
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--threads', type=int, default=None)
    parser.add_argument('--n', type=int, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs a command and returns its exit code.
    """
    args = _parser().parse_args(argv)
    collector = _WarningCollector()
    package_logger = logging.getLogger('po_forge')
    package_logger.addHandler(collector)
    out = args.out
    try:
        try:
            config = load_run_config(
                args.config, model=args.model, data=args.data,
                simulation=args.simulation, out=args.out, seed=args.seed,
                threads=args.threads, n=args.n)
            out = config.out
            report = COMMANDS[args.command](config)
        except (ForgeError, OSError) as e:
            logger.error('%s failed: %s', args.command, e)
            report = {'schema': REPORT_SCHEMA, 'command': args.command,
                      'error': str(e)}
        report['warnings'] = list(collector.messages)
        write_report(out, report)
    finally:
        package_logger.removeHandler(collector)
    return 1 if 'error' in report else 0


def run():
    sys.exit(main())
