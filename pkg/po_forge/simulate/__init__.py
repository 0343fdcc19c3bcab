"""Simulation
==============

Synthetic data sets that follow the observational data contract exactly,
and the exact values of any functional under the law that generated them.

Covariates live in finitely many cells. Within a cell the response types
and the potential outcomes are drawn independently of the instrument, the
instrument is drawn from the cell's instrument probabilities, and the
observed treatment and outcome are the type's treatment at the drawn
instrument and the matching potential outcome. Every expectation is then a
finite sum over cells and types, with Gaussian (mixture) outcome
expectations in closed form, so oracles are exact.

Survey weights are attached per cell. The target population of a weighted
specification has cell masses proportional to ``probability * weight``, and
the oracles are computed under it.

The preset designs are conventions of this package, chosen so the nuisances
are exactly linear in the covariates; they do not reproduce any published
design.
"""
import json
from dataclasses import dataclass, field
from typing import Tuple, Optional, Dict, Mapping, Sequence, List

import numpy as np
from scipy.stats import norm

from po_forge.base import ModelError
from po_forge.model import ModelSpec, FunctionalSpec, OutcomeTransform, \
    TYPE_FUNCTIONAL, OUTCOME_FUNCTIONAL, DERIVED_FUNCTIONAL, ell_vector, \
    validate_model, preset_models, model_to_dict, model_from_dict, \
    loads_structured, load_model
from po_forge.identify import IdentificationSolution
from po_forge.estimate import Dataset
from po_forge.utils import rng_stream

__all__ = (
    'MIN_INSTRUMENT_PROBABILITY', 'OutcomeLaw', 'CovariateCell', 'DgpSpec',
    'TruthRecord', 'Population', 'validate_dgp', 'generate_data',
    'oracle_value', 'oracle_values', 'outcome_expectations',
    'enumerate_population', 'kappa_population_moment', 'late3_dgp',
    'mto_eimc_dgp', 'headstart_dgp', 'dgp_presets', 'dgp_to_dict',
    'dgp_from_dict', 'load_dgp', 'dump_dgp')

MIN_INSTRUMENT_PROBABILITY = 1e-3
"""Smallest accepted ``P(Z = z | X)`` of a cell.
"""


def _gaussian_expectation(
        rho: OutcomeTransform, mean: float, sd: float) -> float:
    if rho.kind == 'identity':
        return mean
    if rho.kind == 'indicator':
        if sd == 0:
            return float(mean <= rho.threshold)
        return float(norm.cdf((rho.threshold - mean) / sd))
    if rho.kind == 'clipped':
        lower, upper = rho.lower, rho.upper
        if sd == 0:
            return float(np.clip(mean, lower, upper))
        a = (lower - mean) / sd
        b = (upper - mean) / sd
        return float(
            lower * norm.cdf(a) + upper * norm.sf(b) +
            mean * (norm.cdf(b) - norm.cdf(a)) +
            sd * (norm.pdf(a) - norm.pdf(b)))
    raise ModelError(f'Unknown outcome transform "{rho.kind}"')


@dataclass(frozen=True)
class OutcomeLaw:
    """A finite Gaussian mixture whose component means are shifted by a
    per-cell offset.
    """

    means: Tuple[float, ...] = (0., )

    sds: Tuple[float, ...] = (1., )

    weights: Tuple[float, ...] = (1., )

    cell_shifts: Tuple[float, ...] = ()
    '''Offset added to every component mean in each cell; empty is zero.
    '''

    @classmethod
    def gaussian(cls, mean: float, sd: float = 1.,
                 cell_shifts: Sequence[float] = ()) -> 'OutcomeLaw':
        return cls(means=(float(mean), ), sds=(float(sd), ),
                   cell_shifts=tuple(cell_shifts))

    def shift(self, cell: int) -> float:
        return self.cell_shifts[cell] if self.cell_shifts else 0.

    def expectation(self, rho: OutcomeTransform, cell: int) -> float:
        """``E[rho(Y)]`` in ``cell``.
        """
        shift = self.shift(cell)
        return float(sum(
            w * _gaussian_expectation(rho, mu + shift, sd)
            for w, mu, sd in zip(self.weights, self.means, self.sds)))

    def sample(self, rng: np.random.Generator, cells: np.ndarray
               ) -> np.ndarray:
        n = cells.shape[0]
        component = rng.choice(len(self.weights), size=n, p=self.weights)
        shifts = np.asarray(self.cell_shifts, dtype=float)
        mean = np.asarray(self.means)[component]
        if shifts.size:
            mean = mean + shifts[cells]
        return mean + np.asarray(self.sds)[component] * \
            rng.standard_normal(n)

    def diagnostics(self, n_cells: int) -> List[str]:
        errors = []
        if not (len(self.means) == len(self.sds) == len(self.weights)) or \
                not self.means:
            errors.append('means, sds and weights must have one entry per '
                          'mixture component')
        elif np.any(np.asarray(self.sds) < 0) or \
                np.any(np.asarray(self.weights) < 0) or \
                abs(sum(self.weights) - 1) > 1e-9:
            errors.append('sds must be nonnegative and weights a '
                          'probability vector')
        if self.cell_shifts and len(self.cell_shifts) != n_cells:
            errors.append(f'{len(self.cell_shifts)} cell shifts given for '
                          f'{n_cells} cells')
        return errors


@dataclass(frozen=True)
class CovariateCell:
    """A covariate cell.
    """

    probability: float
    '''Sampling probability of the cell.
    '''

    covariates: Tuple[float, ...] = ()
    '''Covariate values of the cell; ``X`` is this plus ``noise`` times
    standard normal draws that no law depends on.
    '''

    instrument_probabilities: Tuple[float, ...] = ()
    '''``P(Z = z_j | X)`` in the cell; empty is uniform.
    '''

    type_probabilities: Optional[Tuple[float, ...]] = None
    '''Type probabilities in the cell, None for the specification's.
    '''

    survey_weight: float = 1.

    noise: float = 0.


@dataclass(frozen=True)
class DgpSpec:
    """A fully specified structural law over a discrete-instrument model.
    """

    model: ModelSpec

    cells: Tuple[CovariateCell, ...] = (CovariateCell(probability=1.), )

    outcomes: Tuple[Tuple[Tuple[str, str], OutcomeLaw], ...] = ()
    '''Outcome laws of ``Y*(t)`` keyed by ``(type label, treatment)``.
    Missing pairs use :attr:`default_outcome`.
    '''

    default_outcome: OutcomeLaw = field(default_factory=OutcomeLaw)

    type_probabilities: Optional[Tuple[float, ...]] = None
    '''Type probabilities shared by all cells, falling back to the model's
    support probabilities.
    '''

    seed: int = 0

    name: str = ''

    @property
    def m(self) -> int:
        return len(self.cells[0].covariates) if self.cells else 0

    @property
    def weighted(self) -> bool:
        return any(c.survey_weight != 1 for c in self.cells)

    def outcome_law(self, type_label: str, treatment: str) -> OutcomeLaw:
        for key, law in self.outcomes:
            if key == (type_label, treatment):
                return law
        return self.default_outcome

    def base_type_probabilities(self) -> Optional[np.ndarray]:
        probs = self.type_probabilities
        if probs is None:
            probs = self.model.support.probabilities
        return None if probs is None else np.asarray(probs, dtype=float)

    def cell_type_probabilities(self) -> np.ndarray:
        """``n_cells x r`` type probabilities.
        """
        base = self.base_type_probabilities()
        rows = []
        for cell in self.cells:
            probs = cell.type_probabilities
            if probs is None:
                if base is None:
                    raise ModelError(
                        f'No type probabilities for the types of model '
                        f'"{self.model.name}"')
                probs = base
            rows.append(np.asarray(probs, dtype=float))
        return np.array(rows)

    def instrument_table(self) -> np.ndarray:
        """``n_cells x q`` instrument probabilities.
        """
        q = self.model.instruments.q
        return np.array([
            np.asarray(c.instrument_probabilities, dtype=float)
            if c.instrument_probabilities else np.full(q, 1. / q)
            for c in self.cells])

    def cell_probabilities(self) -> np.ndarray:
        return np.array([c.probability for c in self.cells], dtype=float)

    def target_masses(self) -> np.ndarray:
        """Cell masses of the target population, proportional to the
        sampling probability times the survey weight.
        """
        mass = self.cell_probabilities() * np.array(
            [c.survey_weight for c in self.cells], dtype=float)
        return mass / mass.sum()

    def covariate_table(self) -> np.ndarray:
        return np.array(
            [c.covariates for c in self.cells], dtype=float).reshape(
                len(self.cells), self.m)

    def generate(self, n: int, seed: Optional[int] = None
                 ) -> Tuple[Dataset, 'TruthRecord']:
        return generate_data(self, n, seed)


@dataclass(frozen=True)
class TruthRecord:
    """The hidden draws behind a generated data set, for audits only.
    """

    types: np.ndarray

    potential: np.ndarray
    '''``n x d`` potential outcomes, column ``m`` is ``Y*(t_m)``.
    '''

    cells: np.ndarray


def validate_dgp(spec: DgpSpec) -> List[str]:
    """Returns one diagnostic per violated invariant; empty iff valid.
    """
    errors = list(validate_model(spec.model))
    add = errors.append
    model = spec.model
    if not model.is_discrete:
        add('Simulation specifications need a discrete instrument')
        return errors
    if not spec.cells:
        add('At least one covariate cell is needed')
        return errors

    probs = spec.cell_probabilities()
    if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
        add('Cell probabilities must be nonnegative and sum to 1')
    r, q = model.support.r, model.instruments.q
    base = spec.base_type_probabilities()
    for k, cell in enumerate(spec.cells):
        if len(cell.covariates) != spec.m:
            add(f'Cell {k} has {len(cell.covariates)} covariates, expected '
                f'{spec.m}')
        if cell.survey_weight <= 0 or cell.noise < 0:
            add(f'Cell {k} needs a positive survey weight and nonnegative '
                f'noise')
        pz = cell.instrument_probabilities
        if pz:
            pz = np.asarray(pz, dtype=float)
            if pz.shape != (q, ) or abs(pz.sum() - 1) > 1e-9:
                add(f'Cell {k} needs {q} instrument probabilities summing '
                    f'to 1')
            elif pz.min() < MIN_INSTRUMENT_PROBABILITY:
                add(f'Cell {k} has an instrument probability below '
                    f'{MIN_INSTRUMENT_PROBABILITY}')
        types = cell.type_probabilities
        if types is None:
            types = base
        if types is None:
            add(f'Cell {k} has no type probabilities')
        else:
            types = np.asarray(types, dtype=float)
            if types.shape != (r, ) or np.any(types < 0) or \
                    abs(types.sum() - 1) > 1e-9:
                add(f'Cell {k} needs {r} type probabilities summing to 1')

    labels = set(model.support.labels)
    treatments = set(model.treatments.labels)
    for (label, t), law in spec.outcomes:
        if label not in labels or t not in treatments:
            add(f'Outcome law for unknown pair ({label}, {t})')
        errors.extend(
            f'Outcome law ({label}, {t}): {e}'
            for e in law.diagnostics(len(spec.cells)))
    errors.extend(
        f'Default outcome law: {e}'
        for e in spec.default_outcome.diagnostics(len(spec.cells)))
    return errors


def _check(spec: DgpSpec):
    errors = validate_dgp(spec)
    if errors:
        raise ModelError(
            f'Invalid simulation specification "{spec.name}": '
            + '; '.join(errors))


def _categorical(rng: np.random.Generator, table: np.ndarray) -> np.ndarray:
    """One draw per row of the row-stochastic ``table``.
    """
    u = rng.random(table.shape[0])
    drawn = (u[:, np.newaxis] >= np.cumsum(table, axis=1)).sum(axis=1)
    return np.minimum(drawn, table.shape[1] - 1)


def generate_data(spec: DgpSpec, n: int, seed: Optional[int] = None
                  ) -> Tuple[Dataset, TruthRecord]:
    """Draws ``n`` observations, deterministic in ``seed`` (``spec.seed``
    when None).
    """
    _check(spec)
    if n < 1:
        raise ModelError(f'Cannot generate {n} observations')
    model = spec.model
    rng = rng_stream(spec.seed if seed is None else seed)
    treatments = model.treatments.labels
    types = model.support.types

    cells = rng.choice(
        len(spec.cells), size=n, p=spec.cell_probabilities())
    noise = np.array([c.noise for c in spec.cells])[cells]
    x = spec.covariate_table()[cells] + \
        noise[:, np.newaxis] * rng.standard_normal((n, spec.m))
    type_index = _categorical(rng, spec.cell_type_probabilities()[cells])
    z = _categorical(rng, spec.instrument_table()[cells])

    assignment = np.array(
        [[model.treatments.index(a) for a in rt.assignment] for rt in types],
        dtype=int)
    t = assignment[type_index, z]

    potential = np.zeros((n, len(treatments)))
    for i, rt in enumerate(types):
        rows = np.flatnonzero(type_index == i)
        for m, label in enumerate(treatments):
            potential[rows, m] = spec.outcome_law(rt.label, label).sample(
                rng, cells[rows])
    y = potential[np.arange(n), t]
    omega = np.array([c.survey_weight for c in spec.cells])[cells]

    data = Dataset.from_arrays(
        y, t, z, x, omega, treatments=treatments,
        instruments=model.instruments.values)
    return data, TruthRecord(types=type_index, potential=potential,
                             cells=cells)


def _registry(spec: DgpSpec, functionals) -> Dict[str, FunctionalSpec]:
    registry = {f.name: f for f in spec.model.functionals}
    registry.update({f.name: f for f in functionals})
    return registry


def _covariate_values(spec: DgpSpec, functional: FunctionalSpec
                      ) -> np.ndarray:
    if functional.covariate_index is None:
        return np.ones(len(spec.cells))
    if functional.covariate_index >= spec.m:
        raise ModelError(
            f'Functional "{functional.name}" uses covariate '
            f'{functional.covariate_index}, the specification has {spec.m}')
    return spec.covariate_table()[:, functional.covariate_index]


def outcome_expectations(spec: DgpSpec, treatment: str,
                         rho: OutcomeTransform) -> np.ndarray:
    """``n_cells x r`` table of ``E[rho(Y*(treatment)) | type, cell]``.
    """
    spec.model.treatments.index(treatment)
    return np.array([
        [spec.outcome_law(label, treatment).expectation(rho, k)
         for label in spec.model.support.labels]
        for k in range(len(spec.cells))])


def oracle_value(
        spec: DgpSpec, functional: FunctionalSpec,
        functionals: Sequence[FunctionalSpec] = (),
        rho: Optional[OutcomeTransform] = None) -> float:
    """The exact value of ``functional`` under the target population.

    Derived functionals are combined from their components, which are looked
    up in the model's functionals and ``functionals``. ``rho`` overrides the
    outcome transform of an outcome functional.
    """
    if functional.kind == DERIVED_FUNCTIONAL:
        registry = _registry(spec, functionals)
        values = {}

        def resolve(name):
            if name not in values:
                spec_f = registry.get(name)
                if spec_f is None:
                    raise ModelError(f'Unknown functional "{name}"')
                if spec_f.kind == DERIVED_FUNCTIONAL:
                    parts = {c: resolve(c) for c in spec_f.combine.components}
                    values[name] = spec_f.combine.evaluate_with_gradient(
                        parts)
                else:
                    values[name] = (
                        oracle_value(spec, spec_f), {name: 1.})
            return values[name]

        if functional.combine is None:
            raise ModelError(
                f'Derived functional "{functional.name}" has no combination')
        parts = {c: resolve(c) for c in functional.combine.components}
        return float(functional.combine.evaluate_with_gradient(parts)[0])

    _check(spec)
    masses = spec.target_masses()
    probs = spec.cell_type_probabilities()
    ell = ell_vector(spec.model, functional)
    cov = _covariate_values(spec, functional)
    if functional.kind == TYPE_FUNCTIONAL:
        return float(masses @ ((probs @ ell) * cov))
    if functional.kind == OUTCOME_FUNCTIONAL:
        if functional.target_treatment is None:
            raise ModelError(
                f'Outcome functional "{functional.name}" has no target '
                f'treatment')
        expect = outcome_expectations(
            spec, functional.target_treatment, rho or functional.rho)
        return float(masses @ (((probs * expect) @ ell) * cov))
    raise ModelError(f'Unknown functional kind "{functional.kind}"')


def oracle_values(spec: DgpSpec,
                  functionals: Optional[Sequence[FunctionalSpec]] = None
                  ) -> Dict[str, float]:
    """Oracle values of ``functionals``, by default all the functionals of
    the model.
    """
    if functionals is None:
        functionals = spec.model.functionals
    return {f.name: oracle_value(spec, f, functionals) for f in functionals}


@dataclass(frozen=True)
class Population:
    """The finite population of ``(cell, type, instrument)`` combinations
    with their masses under the target population.
    """

    mass: np.ndarray

    x_cell: np.ndarray

    type_index: np.ndarray

    z: np.ndarray

    t: np.ndarray

    pz: np.ndarray
    '''``N x q`` instrument probabilities of each row's cell.
    '''

    x: np.ndarray


def enumerate_population(spec: DgpSpec) -> Population:
    _check(spec)
    model = spec.model
    masses = spec.target_masses()
    probs = spec.cell_type_probabilities()
    pz = spec.instrument_table()
    covariates = spec.covariate_table()
    rows = {k: [] for k in ('mass', 'x_cell', 'type_index', 'z', 't')}
    for c in range(len(spec.cells)):
        for i, rt in enumerate(model.support.types):
            for j, label in enumerate(rt.assignment):
                rows['mass'].append(masses[c] * probs[c, i] * pz[c, j])
                rows['x_cell'].append(c)
                rows['type_index'].append(i)
                rows['z'].append(j)
                rows['t'].append(model.treatments.index(label))
    x_cell = np.array(rows['x_cell'], dtype=int)
    return Population(
        mass=np.array(rows['mass']), x_cell=x_cell,
        type_index=np.array(rows['type_index'], dtype=int),
        z=np.array(rows['z'], dtype=int), t=np.array(rows['t'], dtype=int),
        pz=pz[x_cell], x=covariates[x_cell])


def kappa_population_moment(
        spec: DgpSpec, solution: IdentificationSolution,
        rho: Optional[OutcomeTransform] = None) -> float:
    """``E[kappa(T, Z, X) * X_j]`` (type functionals) or
    ``E[kappa(T, Z, X) rho(Y) * X_j]`` (outcome functionals) summed exactly
    over the enumerated population.
    """
    population = enumerate_population(spec)
    blocks = solution.blocks
    rows = np.arange(population.mass.shape[0])
    inv_pz = 1. / population.pz[rows, population.z]
    functional = solution.functional
    cov = np.ones(len(spec.cells)) if functional is None else \
        _covariate_values(spec, functional)
    cov = cov[population.x_cell]

    if solution.kind == TYPE_FUNCTIONAL:
        kappa = blocks[population.z, population.t] * inv_pz
        return float(population.mass @ (kappa * cov))

    target = spec.model.treatments.index(solution.target_treatment)
    rho = rho or (functional.rho if functional is not None
                  else OutcomeTransform())
    expect = outcome_expectations(spec, solution.target_treatment, rho)
    outcome = expect[population.x_cell, population.type_index]
    kappa = blocks[population.z, 0] * inv_pz * (population.t == target)
    return float(population.mass @ (kappa * outcome * cov))


def _two_cells(pz0, pz1, weights=(1., 1.)) -> Tuple[CovariateCell, ...]:
    return (
        CovariateCell(probability=.5, covariates=(0., ),
                      instrument_probabilities=pz0,
                      survey_weight=weights[0]),
        CovariateCell(probability=.5, covariates=(1., ),
                      instrument_probabilities=pz1,
                      survey_weight=weights[1]))


def late3_dgp(weighted: bool = False, seed: int = 0) -> DgpSpec:
    """Binary LATE design with a complier share of one half. Outcomes shift
    by 0.5 in the second covariate cell; with ``weighted`` the second cell
    carries survey weight 3.
    """
    gauss = OutcomeLaw.gaussian
    shifts = (0., .5)
    return DgpSpec(
        model=preset_models()['late3'],
        cells=_two_cells((.5, .5), (.4, .6), (1., 3.) if weighted else
                         (1., 1.)),
        outcomes=(
            (('never', '0'), gauss(0., 1., shifts)),
            (('complier', '0'), gauss(.5, 1., shifts)),
            (('complier', '1'), gauss(1.5, 1., shifts)),
            (('always', '1'), gauss(2., 1., shifts)),
        ),
        seed=seed, name='late3-weighted' if weighted else 'late3')


def mto_eimc_dgp(seed: int = 0) -> DgpSpec:
    """Seven-type MTO design satisfying EIMC: ``Y*(0, 0)`` has the same law
    for the CN and CC types and ``Y*(1, 1)`` the same law for the CA and CC
    types, so the mediation targets are identified.
    """
    gauss = OutcomeLaw.gaussian
    shifts = (0., .3)
    y00_compliers = gauss(0., 1., shifts)
    y11_compliers = gauss(1., 1., shifts)
    return DgpSpec(
        model=preset_models()['mto7'],
        cells=_two_cells((.5, .5), (.45, .55)),
        outcomes=(
            (('NN', '00'), gauss(-.2, 1., shifts)),
            (('NA', '01'), gauss(.4, 1., shifts)),
            (('CN', '00'), y00_compliers),
            (('CN', '10'), gauss(.3, 1., shifts)),
            (('CC', '00'), y00_compliers),
            (('CC', '11'), y11_compliers),
            (('CA', '01'), gauss(.6, 1., shifts)),
            (('CA', '11'), y11_compliers),
            (('AN', '10'), gauss(.2, 1., shifts)),
            (('AA', '11'), gauss(.9, 1., shifts)),
        ),
        seed=seed, name='mto7')


def headstart_dgp(seed: int = 0) -> DgpSpec:
    gauss = OutcomeLaw.gaussian
    return DgpSpec(
        model=preset_models()['headstart5'],
        cells=_two_cells((.5, .5), (.35, .65)),
        type_probabilities=(.3, .2, .2, .1, .2),
        outcomes=(
            (('nh', 'n'), gauss(0., 1.)), (('nh', 'h'), gauss(.4, 1.)),
            (('ch', 'c'), gauss(.1, 1.)), (('ch', 'h'), gauss(.3, 1.)),
            (('nn', 'n'), gauss(-.1, 1.)), (('cc', 'c'), gauss(.2, 1.)),
            (('hh', 'h'), gauss(.5, 1.)),
        ),
        seed=seed, name='headstart5')


def dgp_presets() -> Dict[str, DgpSpec]:
    return {
        'late3': late3_dgp(), 'late3-weighted': late3_dgp(weighted=True),
        'mto7': mto_eimc_dgp(), 'headstart5': headstart_dgp()}


def _law_to_dict(law: OutcomeLaw) -> dict:
    return {'means': list(law.means), 'sds': list(law.sds),
            'weights': list(law.weights),
            'cell_shifts': list(law.cell_shifts)}


def _law_from_dict(data: Mapping) -> OutcomeLaw:
    allowed = ('means', 'sds', 'weights', 'cell_shifts', 'type',
               'treatment')
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ModelError(f'Unknown keys in outcome law: {unknown}')
    return OutcomeLaw(**{
        k: tuple(float(v) for v in data[k])
        for k in ('means', 'sds', 'weights', 'cell_shifts') if k in data})


def dgp_to_dict(spec: DgpSpec) -> dict:
    data = {
        'name': spec.name, 'seed': spec.seed,
        'model': model_to_dict(spec.model),
        'cells': [{
            'probability': c.probability, 'covariates': list(c.covariates),
            'instrument_probabilities': list(c.instrument_probabilities),
            'type_probabilities': None if c.type_probabilities is None
            else list(c.type_probabilities),
            'survey_weight': c.survey_weight, 'noise': c.noise}
            for c in spec.cells],
        'outcomes': [
            dict(type=label, treatment=t, **_law_to_dict(law))
            for (label, t), law in spec.outcomes],
        'default_outcome': _law_to_dict(spec.default_outcome),
    }
    if spec.type_probabilities is not None:
        data['type_probabilities'] = list(spec.type_probabilities)
    return data


def dgp_from_dict(data: Mapping) -> DgpSpec:
    """Builds a specification from its dict form. ``model`` is a model dict
    or a ``preset:<name>`` string.
    """
    allowed = ('name', 'seed', 'model', 'cells', 'outcomes',
               'default_outcome', 'type_probabilities')
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ModelError(f'Unknown keys in simulation specification: '
                         f'{unknown}')
    if 'model' not in data:
        raise ModelError('Simulation specification is missing "model"')
    model = data['model']
    model = load_model(model) if isinstance(model, str) else \
        model_from_dict(model)

    cells = []
    for item in data.get('cells', [{'probability': 1.}]):
        unknown = sorted(set(item) - {
            'probability', 'covariates', 'instrument_probabilities',
            'type_probabilities', 'survey_weight', 'noise'})
        if unknown:
            raise ModelError(f'Unknown keys in cell: {unknown}')
        types = item.get('type_probabilities')
        cells.append(CovariateCell(
            probability=float(item.get('probability', 1.)),
            covariates=tuple(float(v) for v in item.get('covariates', ())),
            instrument_probabilities=tuple(
                float(v) for v in item.get('instrument_probabilities', ())),
            type_probabilities=None if types is None else tuple(
                float(v) for v in types),
            survey_weight=float(item.get('survey_weight', 1.)),
            noise=float(item.get('noise', 0.))))

    outcomes = []
    for item in data.get('outcomes', ()):
        if 'type' not in item or 'treatment' not in item:
            raise ModelError('Outcome laws need "type" and "treatment"')
        outcomes.append(
            ((str(item['type']), str(item['treatment'])),
             _law_from_dict(item)))
    probs = data.get('type_probabilities')
    default = data.get('default_outcome')
    return DgpSpec(
        model=model, cells=tuple(cells), outcomes=tuple(outcomes),
        default_outcome=OutcomeLaw() if default is None else
        _law_from_dict(default),
        type_probabilities=None if probs is None else tuple(
            float(p) for p in probs),
        seed=int(data.get('seed', 0)), name=str(data.get('name', '')))


def load_dgp(filename: str) -> DgpSpec:
    """Loads a simulation specification file, or a preset when given
    ``preset:<name>``.
    """
    if filename.startswith('preset:'):
        name = filename[len('preset:'):]
        presets = dgp_presets()
        if name not in presets:
            raise ModelError(
                f'Unknown simulation preset "{name}", expected one of '
                f'{list(presets)}')
        return presets[name]
    with open(filename, encoding='utf-8') as fh:
        return dgp_from_dict(loads_structured(fh.read()))


def dump_dgp(filename: str, spec: DgpSpec) -> None:
    with open(filename, 'w', encoding='utf-8') as fh:
        json.dump(dgp_to_dict(spec), fh, indent=2)
        fh.write('\n')
