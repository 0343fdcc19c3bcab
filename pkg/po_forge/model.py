"""Model
=========

A model declares the treatments, the instrument values, the admissible
response types (the support restriction), the base measure over instrument
values and the target functionals. All identification logic consumes the
finite response matrices built here.

A response type maps every instrument value to the treatment it induces. For
example, in the binary LATE model the complier type is ``('0', '1')``: it
takes treatment ``'0'`` when the instrument is ``'0'`` and treatment ``'1'``
when it is ``'1'``.

Model files are JSON objects::

    {
        "name": "late3",
        "treatments": ["0", "1"],
        "instruments": ["0", "1"],
        "types": [{"name": "never", "assignment": ["0", "0"]},
                  ["0", "1"], ["1", "1"]],
        "type_probabilities": [0.25, 0.5, 0.25],
        "mu": [0.5, 0.5],
        "functionals": [
            {"name": "p_complier", "kind": "type", "ell": {"0/1": 1}}]
    }

A type given as a bare list is named by joining its assignment with ``/``.
Unknown keys are rejected at every level.
"""
import json
from dataclasses import dataclass, field
from typing import Tuple, Optional, Dict, List, Mapping, Sequence, Any

import numpy as np
from tree_config.utils import yaml_loads

from po_forge.base import ModelError, UnsupportedModeError, PositivityError

__all__ = (
    'TYPE_FUNCTIONAL', 'OUTCOME_FUNCTIONAL', 'DERIVED_FUNCTIONAL', 'DISCRETE',
    'CONTINUOUS_PAIR', 'TreatmentSpace', 'InstrumentSpace', 'ResponseType',
    'SupportRestriction', 'BaseMeasure', 'OutcomeTransform', 'Combination',
    'FunctionalSpec', 'BasisSpec', 'ModelSpec', 'validate_model',
    'response_matrix_types', 'response_matrix_outcome', 'ell_vector',
    'covariate_multiplier', 'preset_models', 'type_indicator_functionals',
    'mto_mediation_functionals', 'model_to_dict', 'model_from_dict',
    'load_model', 'dump_model', 'loads_structured')

TYPE_FUNCTIONAL = 'type'
OUTCOME_FUNCTIONAL = 'outcome'
DERIVED_FUNCTIONAL = 'derived'
FUNCTIONAL_KINDS = (TYPE_FUNCTIONAL, OUTCOME_FUNCTIONAL, DERIVED_FUNCTIONAL)

DISCRETE = 'discrete'
CONTINUOUS_PAIR = 'continuous-pair'

RHO_KINDS = ('identity', 'clipped', 'indicator')
COMBINE_OPS = ('ratio', 'difference', 'affine')


@dataclass(frozen=True)
class TreatmentSpace:
    """The ordered, finite set of treatment labels.
    """

    labels: Tuple[str, ...]

    @property
    def d(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ModelError(
                f'Unknown treatment "{label}", expected one of '
                f'{list(self.labels)}') from None


@dataclass(frozen=True)
class InstrumentSpace:
    """The ordered instrument values.

    In ``continuous-pair`` mode the values are those of the binary component
    ``C`` and ``[w_lo, w_hi]`` is the support of the continuous component
    ``W``.
    """

    values: Tuple[str, ...]

    mode: str = DISCRETE

    w_lo: float = 0.

    w_hi: float = 1.

    @property
    def q(self) -> int:
        return len(self.values)

    def index(self, value: str) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise ModelError(
                f'Unknown instrument value "{value}", expected one of '
                f'{list(self.values)}') from None


@dataclass(frozen=True)
class ResponseType:
    """A map from instrument values to treatments; ``assignment[j]`` is the
    treatment induced by the j-th instrument value.
    """

    assignment: Tuple[str, ...]

    name: str = ''

    @property
    def label(self) -> str:
        return self.name or '/'.join(self.assignment)


@dataclass(frozen=True)
class SupportRestriction:
    """The admissible response types. ``probabilities`` are only used by the
    simulator.
    """

    types: Tuple[ResponseType, ...]

    probabilities: Optional[Tuple[float, ...]] = None

    @property
    def r(self) -> int:
        return len(self.types)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(t.label for t in self.types)

    def index(self, label: str) -> int:
        labels = self.labels
        if label not in labels:
            raise ModelError(
                f'Unknown response type "{label}", expected one of '
                f'{list(labels)}')
        return labels.index(label)


@dataclass(frozen=True)
class BaseMeasure:
    """Weights of the base measure over instrument values, constant in X.
    """

    weights: Tuple[float, ...]

    @classmethod
    def uniform(cls, q: int) -> 'BaseMeasure':
        return cls(weights=tuple([1. / q] * q))


@dataclass(frozen=True)
class OutcomeTransform:
    """The outcome transform ``rho``.

    ``identity`` is unbounded; ``clipped`` clips to ``[lower, upper]``;
    ``indicator`` is ``1{Y <= threshold}``.
    """

    kind: str = 'identity'

    lower: Optional[float] = None

    upper: Optional[float] = None

    threshold: Optional[float] = None

    @property
    def bounded(self) -> bool:
        return self.kind in ('clipped', 'indicator')

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == 'identity':
            return y.copy()
        if self.kind == 'clipped':
            return np.clip(y, self.lower, self.upper)
        if self.kind == 'indicator':
            return (y <= self.threshold).astype(float)
        raise ModelError(f'Unknown outcome transform "{self.kind}"')

    def clipped(self, lower: float, upper: float) -> 'OutcomeTransform':
        """Returns the bounded version of an identity transform, or self.
        """
        if self.kind != 'identity':
            return self
        return OutcomeTransform(kind='clipped', lower=lower, upper=upper)

    @classmethod
    def indicator(cls, threshold: float) -> 'OutcomeTransform':
        return cls(kind='indicator', threshold=float(threshold))


@dataclass(frozen=True)
class Combination:
    """A differentiable combination of named component functionals.

    ``ratio`` is ``a / b``, ``difference`` is ``a - b`` and ``affine`` is
    ``constant + sum(c_k * a_k)``. Components may themselves be derived
    functionals, giving compositions.
    """

    op: str

    components: Tuple[str, ...]

    coefficients: Tuple[float, ...] = ()

    constant: float = 0.

    def evaluate_with_gradient(
            self, values: Mapping[str, Tuple[float, Dict[str, float]]],
            p_min: float = 0.) -> Tuple[float, Dict[str, float]]:
        """Evaluates the combination given ``(value, gradient)`` pairs of the
        components, where each gradient is taken with respect to the base
        (non-derived) functionals. Returns the same pair for the combination.
        """
        comps = [values[name] for name in self.components]
        if self.op == 'ratio':
            (num, g_num), (den, g_den) = comps
            if abs(den) < p_min or den == 0:
                raise PositivityError(
                    f'Ratio denominator "{self.components[1]}" is {den:.4g}, '
                    f'below the minimum {p_min}')
            value = num / den
            grad = _add_grads(
                (1. / den, g_num), (-num / den ** 2, g_den))
            return value, grad
        if self.op == 'difference':
            (a, g_a), (b, g_b) = comps
            return a - b, _add_grads((1., g_a), (-1., g_b))

        if self.op == 'affine':
            coefficients = self.coefficients or (1., ) * len(comps)
            value = self.constant + sum(
                c * v for c, (v, _) in zip(coefficients, comps))
            grad = _add_grads(*[(c, g) for c, (_, g) in zip(
                coefficients, comps)])
            return value, grad
        raise ModelError(f'Unknown combination "{self.op}"')


def _add_grads(*scaled: Tuple[float, Dict[str, float]]) -> Dict[str, float]:
    grad = {}
    for scale, g in scaled:
        for name, value in g.items():
            grad[name] = grad.get(name, 0.) + scale * value
    return grad


@dataclass(frozen=True)
class FunctionalSpec:
    """A target functional.

    Type functionals are ``E[ell(T*) * X_j]`` (``X_j`` only when
    ``covariate_index`` is set); outcome functionals are
    ``E[rho(Y*(t)) * ell(T*) * X_j]`` with ``t = target_treatment``; derived
    functionals combine previously declared functionals.
    """

    name: str

    kind: str = TYPE_FUNCTIONAL

    ell: Tuple[Tuple[str, float], ...] = ()
    '''Pairs of (response type label, value); missing types are zero.
    '''

    covariate_index: Optional[int] = None

    rho: OutcomeTransform = field(default_factory=OutcomeTransform)

    target_treatment: Optional[str] = None

    combine: Optional[Combination] = None

    @classmethod
    def indicator(
            cls, name: str, types: Sequence[str], kind: str = TYPE_FUNCTIONAL,
            **kwargs) -> 'FunctionalSpec':
        """Functional whose ``ell`` is the indicator of the given types.
        """
        return cls(
            name=name, kind=kind, ell=tuple((t, 1.) for t in types),
            **kwargs)

    @classmethod
    def derived(cls, name: str, op: str, components: Sequence[str],
                coefficients: Sequence[float] = (),
                constant: float = 0.) -> 'FunctionalSpec':
        return cls(
            name=name, kind=DERIVED_FUNCTIONAL, combine=Combination(
                op=op, components=tuple(components),
                coefficients=tuple(coefficients), constant=constant))

    @property
    def ell_table(self) -> Dict[str, float]:
        table = {}
        for key, value in self.ell:
            table[key] = table.get(key, 0.) + float(value)
        return table


@dataclass(frozen=True)
class BasisSpec:
    """The discrete-mode basis ``b(Z, X)``: for each instrument value the
    indicator ``1{Z = z_j}`` interacted with ``[1, X_1, ..., X_m]``.

    Column ``j * (m + 1) + k`` is ``1{Z = z_j}`` times the k-th entry of
    ``[1, X]``.
    """

    q: int

    n_covariates: int

    @property
    def p(self) -> int:
        return self.q * (self.n_covariates + 1)

    def _covariate_block(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1) if self.n_covariates else x.reshape(-1, 0)
        if x.shape[1] != self.n_covariates:
            raise ModelError(
                f'Basis expects {self.n_covariates} covariates, got '
                f'{x.shape[1]}')
        return np.hstack([np.ones((x.shape[0], 1)), x])

    def evaluate(self, z, x) -> np.ndarray:
        """Returns the ``n x p`` basis at instrument indices ``z`` (integer
        array) and covariate rows ``x``.
        """
        cov = self._covariate_block(x)
        z = np.asarray(z, dtype=int).reshape(-1)
        n, k = cov.shape
        if z.shape[0] != n:
            raise ModelError('Instrument and covariate rows do not match')
        out = np.zeros((n, self.p))
        for j in range(self.q):
            rows = z == j
            out[rows, j * k:(j + 1) * k] = cov[rows]
        return out

    def evaluate_at(self, j: int, x) -> np.ndarray:
        """Returns ``b(z_j, x_i)`` for every covariate row.
        """
        cov = self._covariate_block(x)
        k = cov.shape[1]
        out = np.zeros((cov.shape[0], self.p))
        out[:, j * k:(j + 1) * k] = cov
        return out


@dataclass(frozen=True)
class ModelSpec:
    """A complete model declaration.
    """

    treatments: TreatmentSpace

    instruments: InstrumentSpace

    support: SupportRestriction

    mu: Optional[BaseMeasure] = None

    functionals: Tuple[FunctionalSpec, ...] = ()

    name: str = ''

    @property
    def base_measure(self) -> BaseMeasure:
        return self.mu or BaseMeasure.uniform(self.instruments.q)

    @property
    def is_discrete(self) -> bool:
        return self.instruments.mode == DISCRETE

    def functional(self, name: str) -> FunctionalSpec:
        for f in self.functionals:
            if f.name == name:
                return f
        raise ModelError(f'Model "{self.name}" has no functional "{name}"')

    def with_functionals(
            self, functionals: Sequence[FunctionalSpec]) -> 'ModelSpec':
        return ModelSpec(
            treatments=self.treatments, instruments=self.instruments,
            support=self.support, mu=self.mu, functionals=tuple(functionals),
            name=self.name)

    def basis(self, n_covariates: int) -> BasisSpec:
        return BasisSpec(q=self.instruments.q, n_covariates=n_covariates)


def validate_model(model: ModelSpec) -> List[str]:
    """Returns one diagnostic per violated invariant; empty iff valid.
    """
    diagnostics = []
    add = diagnostics.append
    labels = model.treatments.labels
    values = model.instruments.values
    inst = model.instruments

    if len(labels) < 2:
        add(f'Need at least 2 treatments, got {len(labels)}')
    if len(set(labels)) != len(labels):
        add(f'Treatment labels are not unique: {list(labels)}')
    if len(values) < 1:
        add('Need at least one instrument value')
    if len(set(values)) != len(values):
        add(f'Instrument values are not unique: {list(values)}')
    if inst.mode not in (DISCRETE, CONTINUOUS_PAIR):
        add(f'Unknown instrument mode "{inst.mode}"')
    elif inst.mode == CONTINUOUS_PAIR and not inst.w_lo < inst.w_hi:
        add(f'Continuous instrument needs w_lo < w_hi, got '
            f'[{inst.w_lo}, {inst.w_hi}]')

    types = model.support.types
    if not types and inst.mode == DISCRETE:
        add('The support restriction has no response types')
    if len({t.assignment for t in types}) != len(types):
        add('Response types are not pairwise distinct')
    if len({t.label for t in types}) != len(types):
        add('Response type names are not unique')
    label_set = set(labels)
    for t in types:
        if len(t.assignment) != len(values):
            add(f'Type "{t.label}" has {len(t.assignment)} entries, '
                f'expected {len(values)}')
        unknown = [a for a in t.assignment if a not in label_set]
        if unknown:
            add(f'Type "{t.label}" uses unknown treatments {unknown}')

    probs = model.support.probabilities
    if probs is not None:
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (len(types), ):
            add(f'{probs.size} type probabilities given for '
                f'{len(types)} types')
        elif np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
            add('Type probabilities must be nonnegative and sum to 1')

    if model.mu is not None:
        weights = np.asarray(model.mu.weights, dtype=float)
        if weights.shape != (len(values), ):
            add(f'{weights.size} base measure weights given for '
                f'{len(values)} instrument values')
        elif np.any(weights <= 0) or abs(weights.sum() - 1) > 1e-9:
            add('Base measure weights must be strictly positive and sum to '
                '1')

    type_labels = {t.label for t in types}
    declared = set()
    for f in model.functionals:
        if f.name in declared:
            add(f'Functional "{f.name}" is declared twice')
        if f.kind not in FUNCTIONAL_KINDS:
            add(f'Functional "{f.name}" has unknown kind "{f.kind}"')
        unknown = [k for k, _ in f.ell if k not in type_labels]
        if unknown:
            add(f'Functional "{f.name}" refers to unknown types {unknown}')
        if f.covariate_index is not None and f.covariate_index < 0:
            add(f'Functional "{f.name}" has a negative covariate index')
        if f.rho.kind not in RHO_KINDS:
            add(f'Functional "{f.name}" has unknown rho "{f.rho.kind}"')
        elif f.rho.kind == 'clipped' and not (
                f.rho.lower is not None and f.rho.upper is not None and
                f.rho.lower < f.rho.upper):
            add(f'Functional "{f.name}" needs clipping bounds lower < upper')
        elif f.rho.kind == 'indicator' and f.rho.threshold is None:
            add(f'Functional "{f.name}" needs an indicator threshold')

        if f.kind == OUTCOME_FUNCTIONAL:
            if f.target_treatment is None:
                add(f'Outcome functional "{f.name}" has no target treatment')
            elif f.target_treatment not in label_set:
                add(f'Outcome functional "{f.name}" targets unknown '
                    f'treatment "{f.target_treatment}"')
        elif f.kind == DERIVED_FUNCTIONAL:
            if f.combine is None:
                add(f'Derived functional "{f.name}" has no combination')
            else:
                missing = [c for c in f.combine.components
                           if c not in declared]
                if missing:
                    add(f'Derived functional "{f.name}" refers to '
                        f'undeclared components {missing}')
                if f.combine.op not in COMBINE_OPS:
                    add(f'Derived functional "{f.name}" has unknown '
                        f'combination "{f.combine.op}"')
                elif f.combine.op in ('ratio', 'difference') and \
                        len(f.combine.components) != 2:
                    add(f'Derived functional "{f.name}" needs exactly two '
                        f'components')
                elif f.combine.op == 'affine' and f.combine.coefficients \
                        and len(f.combine.coefficients) != len(
                            f.combine.components):
                    add(f'Derived functional "{f.name}" has mismatched '
                        f'coefficients')
        declared.add(f.name)
    return diagnostics


def _require_discrete(model: ModelSpec):
    if not model.is_discrete:
        raise UnsupportedModeError(
            f'Response matrices need a discrete instrument, model '
            f'"{model.name}" is in "{model.instruments.mode}" mode')


def response_matrix_types(model: ModelSpec) -> np.ndarray:
    """Returns the ``r x (q * d)`` matrix whose row ``i`` concatenates, for
    every instrument value ``z_j``, the treatment indicators of ``t_i*(z_j)``.
    """
    _require_discrete(model)
    d = model.treatments.d
    q = model.instruments.q
    omega = np.zeros((model.support.r, q * d))
    for i, t in enumerate(model.support.types):
        for j, label in enumerate(t.assignment):
            omega[i, j * d + model.treatments.index(label)] = 1.
    return omega


def response_matrix_outcome(model: ModelSpec, t: str) -> np.ndarray:
    """Returns the ``r x q`` matrix with entries ``1{t_i*(z_j) = t}``.
    """
    _require_discrete(model)
    model.treatments.index(t)
    omega = np.zeros((model.support.r, model.instruments.q))
    for i, rt in enumerate(model.support.types):
        for j, label in enumerate(rt.assignment):
            omega[i, j] = float(label == t)
    return omega


def ell_vector(model: ModelSpec, functional: FunctionalSpec) -> np.ndarray:
    """Returns ``ell`` as a length-r array in the order of the types.
    """
    ell = np.zeros(model.support.r)
    for label, value in functional.ell_table.items():
        ell[model.support.index(label)] = value
    return ell


def covariate_multiplier(functional: FunctionalSpec, x) -> np.ndarray:
    """Returns the per-row multiplier ``X_j`` of the functional (ones when it
    has no covariate index).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if functional.covariate_index is None:
        return np.ones(n)
    if x.ndim != 2 or functional.covariate_index >= x.shape[1]:
        raise ModelError(
            f'Functional "{functional.name}" uses covariate '
            f'{functional.covariate_index}, but only '
            f'{x.shape[1] if x.ndim == 2 else 0} covariates exist')
    return x[:, functional.covariate_index].copy()


MTO_TYPES = (
    ('NN', ('00', '00')), ('NA', ('01', '01')), ('CN', ('00', '10')),
    ('CC', ('00', '11')), ('CA', ('01', '11')), ('AN', ('10', '10')),
    ('AA', ('11', '11')))
'''The seven MTO response types as (name, (T*(0), T*(1))) with treatments
labelled ``DM`` (relocation, mental health).
'''

MTO_PROBABILITIES = (0.258, 0.253, 0.194, 0.065, 0.203, 0.014, 0.013)
'''Published point estimates of the MTO type probabilities.
'''


def type_indicator_functionals(
        support: SupportRestriction) -> Tuple[FunctionalSpec, ...]:
    """One ``p_<type>`` type functional per response type.
    """
    return tuple(
        FunctionalSpec.indicator(f'p_{label}', [label])
        for label in support.labels)


def _preset(name, treatments, instruments, types, probabilities,
            functionals=()) -> ModelSpec:
    support = SupportRestriction(
        types=tuple(ResponseType(assignment=a, name=n) for n, a in types),
        probabilities=probabilities)
    return ModelSpec(
        treatments=TreatmentSpace(labels=treatments),
        instruments=InstrumentSpace(values=instruments),
        support=support,
        functionals=type_indicator_functionals(support) + tuple(functionals),
        name=name)


def mto_mediation_functionals() -> Tuple[FunctionalSpec, ...]:
    """The outcome components and derived effects of the MTO mediation
    analysis.

    ``y00_CN`` and ``y11_CA`` are not identified by the support restriction
    alone; they are estimated with the mediation scores when EIMC is assumed.
    """
    def outcome(name, t, types):
        return FunctionalSpec.indicator(
            name, types, kind=OUTCOME_FUNCTIONAL, target_treatment=t)

    derived = FunctionalSpec.derived
    return (
        outcome('y00_NN', '00', ['NN']),
        outcome('y00_CNCC', '00', ['CN', 'CC']),
        outcome('y01_NA', '01', ['NA']),
        outcome('y01_CA', '01', ['CA']),
        outcome('y10_CN', '10', ['CN']),
        outcome('y10_AN', '10', ['AN']),
        outcome('y11_CCCA', '11', ['CC', 'CA']),
        outcome('y11_AA', '11', ['AA']),
        outcome('y00_CN', '00', ['CN']),
        outcome('y11_CA', '11', ['CA']),
        derived('cde0', 'ratio', ['cde0_num', 'p_CN']),
        derived('cde1', 'ratio', ['cde1_num', 'p_CA']),
        derived('cte', 'ratio', ['cte_num', 'p_CC']),
        derived('late', 'ratio', ['late_num', 'p_compliers']),
    )


def _mto_numerators() -> Tuple[FunctionalSpec, ...]:
    derived = FunctionalSpec.derived
    return (
        derived('cde0_num', 'difference', ['y10_CN', 'y00_CN']),
        derived('cde1_num', 'difference', ['y11_CA', 'y01_CA']),
        derived('cte_num', 'affine',
                ['y11_CCCA', 'y11_CA', 'y00_CNCC', 'y00_CN'],
                [1., -1., -1., 1.]),
        derived('late_num', 'affine',
                ['y10_CN', 'y11_CCCA', 'y00_CNCC', 'y01_CA'],
                [1., 1., -1., -1.]),
        derived('p_compliers', 'affine', ['p_CN', 'p_CC', 'p_CA']),
    )


def _mto_registry() -> Tuple[FunctionalSpec, ...]:
    components = mto_mediation_functionals()
    outcomes = components[:10]
    effects = components[10:]
    return outcomes + _mto_numerators() + effects


def preset_models() -> Dict[str, ModelSpec]:
    """Returns the named preset models ``mto7``, ``headstart5``, ``late3``
    and the continuous-instrument ``pmono``.
    """
    late = _preset(
        'late3', ('0', '1'), ('0', '1'),
        (('never', ('0', '0')), ('complier', ('0', '1')),
         ('always', ('1', '1'))),
        (0.25, 0.5, 0.25),
        (
            FunctionalSpec.indicator(
                'y1_complier', ['complier'], kind=OUTCOME_FUNCTIONAL,
                target_treatment='1'),
            FunctionalSpec.indicator(
                'y0_complier', ['complier'], kind=OUTCOME_FUNCTIONAL,
                target_treatment='0'),
            FunctionalSpec.derived(
                'late_num', 'difference', ['y1_complier', 'y0_complier']),
            FunctionalSpec.derived(
                'late', 'ratio', ['late_num', 'p_complier']),
        ))
    headstart = _preset(
        'headstart5', ('n', 'c', 'h'), ('0', '1'),
        (('nh', ('n', 'h')), ('ch', ('c', 'h')), ('nn', ('n', 'n')),
         ('cc', ('c', 'c')), ('hh', ('h', 'h'))),
        None)
    mto = _preset(
        'mto7', ('00', '01', '10', '11'), ('0', '1'), MTO_TYPES,
        MTO_PROBABILITIES, _mto_registry())
    # binary C with a continuous W on [0, 1]; no finite type list
    pmono = ModelSpec(
        treatments=TreatmentSpace(labels=('0', '1')),
        instruments=InstrumentSpace(
            values=('0', '1'), mode=CONTINUOUS_PAIR, w_lo=0., w_hi=1.),
        support=SupportRestriction(types=()), name='pmono')
    return {'mto7': mto, 'headstart5': headstart, 'late3': late,
            'pmono': pmono}


def _check_keys(data: Mapping, allowed: Sequence[str], where: str):
    if not isinstance(data, Mapping):
        raise ModelError(f'{where} must be an object')
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ModelError(f'Unknown keys in {where}: {unknown}')


def _plain(value):
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def loads_structured(text: str) -> Any:
    """Parses JSON (or YAML) text into plain dicts and lists.
    """
    return _plain(yaml_loads(text))


def _functional_to_dict(f: FunctionalSpec) -> dict:
    data = {'name': f.name, 'kind': f.kind}
    if f.ell:
        data['ell'] = f.ell_table
    if f.covariate_index is not None:
        data['covariate_index'] = f.covariate_index
    if f.rho != OutcomeTransform():
        data['rho'] = {
            k: v for k, v in (
                ('kind', f.rho.kind), ('lower', f.rho.lower),
                ('upper', f.rho.upper), ('threshold', f.rho.threshold))
            if v is not None}
    if f.target_treatment is not None:
        data['target_treatment'] = f.target_treatment
    if f.combine is not None:
        data['combine'] = {
            'op': f.combine.op, 'components': list(f.combine.components),
            'coefficients': list(f.combine.coefficients),
            'constant': f.combine.constant}
    return data


def _functional_from_dict(data: Mapping) -> FunctionalSpec:
    _check_keys(
        data, ('name', 'kind', 'ell', 'covariate_index', 'rho',
               'target_treatment', 'combine'), 'functional')
    if 'name' not in data:
        raise ModelError('Functional without a name')
    where = f'functional "{data["name"]}"'
    rho = OutcomeTransform()
    if 'rho' in data:
        _check_keys(
            data['rho'], ('kind', 'lower', 'upper', 'threshold'),
            f'rho of {where}')
        rho = OutcomeTransform(**data['rho'])
    combine = None
    if data.get('combine') is not None:
        _check_keys(
            data['combine'], ('op', 'components', 'coefficients', 'constant'),
            f'combine of {where}')
        c = data['combine']
        combine = Combination(
            op=c['op'], components=tuple(c.get('components', ())),
            coefficients=tuple(float(v) for v in c.get('coefficients', ())),
            constant=float(c.get('constant', 0.)))
    ell = data.get('ell', {})
    if not isinstance(ell, Mapping):
        raise ModelError(f'ell of {where} must map type names to values')
    return FunctionalSpec(
        name=data['name'], kind=data.get('kind', TYPE_FUNCTIONAL),
        ell=tuple((str(k), float(v)) for k, v in ell.items()),
        covariate_index=data.get('covariate_index'), rho=rho,
        target_treatment=data.get('target_treatment'), combine=combine)


def model_to_dict(model: ModelSpec) -> dict:
    """Converts a model to its JSON-ready dict.
    """
    inst = model.instruments
    if inst.mode == DISCRETE:
        instruments = list(inst.values)
    else:
        instruments = {
            'values': list(inst.values), 'mode': inst.mode,
            'w_lo': inst.w_lo, 'w_hi': inst.w_hi}
    data = {
        'name': model.name,
        'treatments': list(model.treatments.labels),
        'instruments': instruments,
        'types': [
            {'name': t.name, 'assignment': list(t.assignment)}
            if t.name else list(t.assignment)
            for t in model.support.types],
    }
    if model.support.probabilities is not None:
        data['type_probabilities'] = list(model.support.probabilities)
    if model.mu is not None:
        data['mu'] = list(model.mu.weights)
    data['functionals'] = [_functional_to_dict(f) for f in model.functionals]
    return data


def model_from_dict(data: Mapping) -> ModelSpec:
    """Builds a model from its dict form, rejecting unknown keys.
    """
    _check_keys(
        data, ('name', 'treatments', 'instruments', 'types',
               'type_probabilities', 'mu', 'functionals'), 'model')
    for key in ('treatments', 'instruments'):
        if key not in data:
            raise ModelError(f'Model is missing "{key}"')

    inst = data['instruments']
    if isinstance(inst, Mapping):
        _check_keys(inst, ('values', 'mode', 'w_lo', 'w_hi'), 'instruments')
        instruments = InstrumentSpace(
            values=tuple(str(v) for v in inst.get('values', ())),
            mode=inst.get('mode', DISCRETE),
            w_lo=float(inst.get('w_lo', 0.)),
            w_hi=float(inst.get('w_hi', 1.)))
    else:
        instruments = InstrumentSpace(values=tuple(str(v) for v in inst))

    types = []
    for item in data.get('types', ()):
        if isinstance(item, Mapping):
            _check_keys(item, ('name', 'assignment'), 'type')
            types.append(ResponseType(
                assignment=tuple(str(a) for a in item['assignment']),
                name=str(item.get('name', ''))))
        else:
            types.append(ResponseType(assignment=tuple(str(a) for a in item)))

    probs = data.get('type_probabilities')
    mu = data.get('mu')
    return ModelSpec(
        treatments=TreatmentSpace(
            labels=tuple(str(t) for t in data['treatments'])),
        instruments=instruments,
        support=SupportRestriction(
            types=tuple(types),
            probabilities=None if probs is None else tuple(
                float(p) for p in probs)),
        mu=None if mu is None else BaseMeasure(
            weights=tuple(float(w) for w in mu)),
        functionals=tuple(
            _functional_from_dict(f) for f in data.get('functionals', ())),
        name=str(data.get('name', '')))


def load_model(filename: str) -> ModelSpec:
    """Loads a model file, or a preset when given ``preset:<name>``.
    """
    if filename.startswith('preset:'):
        name = filename[len('preset:'):]
        presets = preset_models()
        if name not in presets:
            raise ModelError(
                f'Unknown preset "{name}", expected one of {list(presets)}')
        return presets[name]
    with open(filename, encoding='utf-8') as fh:
        return model_from_dict(loads_structured(fh.read()))


def dump_model(filename: str, model: ModelSpec) -> None:
    with open(filename, 'w', encoding='utf-8') as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write('\n')
