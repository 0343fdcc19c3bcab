"""Identification
==================

Decides identifiability of declared functionals by minimum-norm least
squares on the response matrices of :mod:`po_forge.model`, and builds the
identifying weights and the moment targets consumed by the estimators.

A type functional with table ``ell`` is identified when ``Omega s = ell`` is
solvable, with ``Omega`` from :func:`~po_forge.model.response_matrix_types`.
The solution ``s`` is then split into one block per instrument value and
``kappa(t_m, z_j, X) = s[j * d + m] / P(Z = z_j | X)``.
"""
from dataclasses import dataclass, field
from typing import Optional, Dict, List, Sequence

import numpy as np

from po_forge.base import ModelError, PositivityError, UnsupportedModeError
from po_forge.model import ModelSpec, FunctionalSpec, BasisSpec, \
    TYPE_FUNCTIONAL, OUTCOME_FUNCTIONAL, DERIVED_FUNCTIONAL, \
    response_matrix_types, response_matrix_outcome, ell_vector, \
    covariate_multiplier, validate_model

__all__ = (
    'TOL_ID', 'TOL_RANK', 'IdentificationSolution', 'FunctionalVerdict',
    'IdentificationReport', 'solve_type_functional',
    'solve_outcome_functional', 'solve_functional', 'kappa_weights',
    'observed_kappa', 'moment_target', 'check_rank_condition',
    'check_nullspace_condition', 'identification_report', 'matrix_rank')

TOL_ID = 1e-8
"""Relative residual below which a functional is identified.
"""

TOL_RANK = 1e-10
"""Singular values below ``TOL_RANK * sigma_max`` are treated as zero.
"""


@dataclass(frozen=True)
class IdentificationSolution:
    """The minimum-norm solution of an identification system.
    """

    s: np.ndarray
    '''Length ``q * d`` for type functionals (block j holds the treatments of
    instrument value j), length ``q`` for outcome functionals.
    '''

    residual: float

    identified: bool

    kind: str = TYPE_FUNCTIONAL

    target_treatment: Optional[str] = None

    n_treatments: int = 0

    n_instruments: int = 0

    functional: Optional[FunctionalSpec] = None
    '''The functional that was solved, when known. Its covariate index scales
    the moment targets.
    '''

    @property
    def name(self) -> str:
        return self.functional.name if self.functional is not None else ''

    @property
    def blocks(self) -> np.ndarray:
        """``s`` as a ``q x d`` array for type functionals, ``q x 1`` for
        outcome functionals.
        """
        return self.s.reshape(self.n_instruments, -1)

    def is_zero(self) -> bool:
        return not np.any(self.s)


def _solve(omega: np.ndarray, ell) -> tuple:
    omega = np.asarray(omega, dtype=float)
    ell = np.asarray(ell, dtype=float).reshape(-1)
    if omega.ndim != 2 or omega.shape[0] != ell.shape[0]:
        raise ModelError(
            f'Response matrix of shape {omega.shape} does not match ell of '
            f'length {ell.shape[0]}')
    s = np.linalg.lstsq(omega, ell, rcond=TOL_RANK)[0]
    residual = float(np.linalg.norm(omega @ s - ell))
    identified = residual <= TOL_ID * max(1., float(np.linalg.norm(ell)))
    return s, residual, identified


def solve_type_functional(
        omega: np.ndarray, ell, n_treatments: int = 0,
        functional: FunctionalSpec = None) -> IdentificationSolution:
    """Solves ``Omega s = ell`` for a type functional.

    :param omega: The ``r x (q * d)`` matrix of
        :func:`~po_forge.model.response_matrix_types`.
    :param ell: Length-r values of ``ell`` over the response types.
    :param n_treatments: ``d``. When zero, ``q`` is taken as 1.
    """
    s, residual, identified = _solve(omega, ell)
    d = n_treatments or s.shape[0]
    if s.shape[0] % d:
        raise ModelError(
            f'{s.shape[0]} response matrix columns are not a multiple of '
            f'{d} treatments')
    return IdentificationSolution(
        s=s, residual=residual, identified=identified, kind=TYPE_FUNCTIONAL,
        n_treatments=d, n_instruments=s.shape[0] // d, functional=functional)


def solve_outcome_functional(
        omega_t: np.ndarray, ell, target_treatment: Optional[str] = None,
        functional: FunctionalSpec = None) -> IdentificationSolution:
    """Solves ``Omega_t s = ell`` for an outcome functional at treatment
    ``target_treatment``.
    """
    s, residual, identified = _solve(omega_t, ell)
    return IdentificationSolution(
        s=s, residual=residual, identified=identified,
        kind=OUTCOME_FUNCTIONAL, target_treatment=target_treatment,
        n_treatments=1, n_instruments=s.shape[0], functional=functional)


def solve_functional(
        model: ModelSpec, functional: FunctionalSpec
) -> IdentificationSolution:
    """Builds and solves the identification system of a type or outcome
    functional declared against ``model``.
    """
    ell = ell_vector(model, functional)
    if functional.kind == TYPE_FUNCTIONAL:
        return solve_type_functional(
            response_matrix_types(model), ell, model.treatments.d,
            functional=functional)
    if functional.kind == OUTCOME_FUNCTIONAL:
        if functional.target_treatment is None:
            raise ModelError(
                f'Outcome functional "{functional.name}" has no target '
                f'treatment')
        return solve_outcome_functional(
            response_matrix_outcome(model, functional.target_treatment), ell,
            functional.target_treatment, functional=functional)
    raise ModelError(
        f'"{functional.name}" is a {functional.kind} functional and has no '
        f'identification system of its own')


def _instrument_probabilities(pz_given_x, q: int) -> np.ndarray:
    pz = np.asarray(pz_given_x, dtype=float)
    if pz.ndim == 1:
        pz = pz.reshape(1, -1)
    if pz.shape[1] != q:
        raise ModelError(
            f'Expected {q} instrument probabilities per row, got '
            f'{pz.shape[1]}')
    if np.any(pz <= 0):
        raise PositivityError(
            f'Instrument probabilities must be positive, minimum is '
            f'{pz.min():.4g}')
    return pz


def kappa_weights(
        solution: IdentificationSolution, pz_given_x) -> np.ndarray:
    """Returns the identifying weights for every covariate row.

    :param pz_given_x: ``P(Z = z_j | X)`` as a length-q array or one row per
        observation (``n x q``).
    :return: ``n x q x d`` array ``kappa[i, j, m]`` for type functionals and
        ``n x q`` array ``kappa[i, j]`` (for the target treatment) for outcome
        functionals.
    """
    if not solution.identified:
        raise ModelError(
            f'Functional "{solution.name}" is not identified, it has no '
            f'weights')
    blocks = solution.blocks
    pz = _instrument_probabilities(pz_given_x, blocks.shape[0])
    kappa = blocks[np.newaxis, :, :] / pz[:, :, np.newaxis]
    if solution.kind == OUTCOME_FUNCTIONAL:
        return kappa[:, :, 0]
    return kappa


def observed_kappa(
        solution: IdentificationSolution, pz_given_x, t_index, z_index
) -> np.ndarray:
    """Evaluates ``kappa(T_i, Z_i, X_i)`` at the observed instrument indices.

    For type functionals ``t_index`` holds treatment indices. For outcome
    functionals it is the mask ``1{T_i = t}`` of the target treatment.
    """
    kappa = kappa_weights(solution, pz_given_x)
    z_index = np.asarray(z_index, dtype=int)
    n = z_index.shape[0]
    if kappa.shape[0] == 1:
        kappa = np.repeat(kappa, n, axis=0)
    rows = np.arange(n)
    if solution.kind == OUTCOME_FUNCTIONAL:
        return kappa[rows, z_index] * np.asarray(t_index, dtype=float)
    return kappa[rows, z_index, np.asarray(t_index, dtype=int)]


def moment_target(
        solution: IdentificationSolution, basis: BasisSpec, x) -> np.ndarray:
    """Returns the Riesz moment targets ``M(X_i) = sum_j s_j b(z_j, X_i)``.

    Type functionals get one target per treatment (``n x d x p``), outcome
    functionals a single one (``n x p``). The covariate multiplier of the
    solved functional, if any, scales every row.
    """
    x = np.asarray(x, dtype=float)
    blocks = solution.blocks
    q, d = blocks.shape
    if q != basis.q:
        raise ModelError(
            f'Solution has {q} instrument blocks, basis has {basis.q}')
    evaluated = [basis.evaluate_at(j, x) for j in range(q)]
    n = evaluated[0].shape[0]
    targets = np.zeros((n, d, basis.p))
    for j in range(q):
        targets += blocks[j][np.newaxis, :, np.newaxis] * \
            evaluated[j][:, np.newaxis, :]

    if solution.functional is not None:
        targets *= covariate_multiplier(
            solution.functional, x)[:, np.newaxis, np.newaxis]
    if solution.kind == OUTCOME_FUNCTIONAL:
        return targets[:, 0, :]
    return targets


def matrix_rank(matrix: np.ndarray) -> int:
    """Numerical rank with singular values below ``TOL_RANK * sigma_max``
    treated as zero.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not matrix.size:
        return 0
    sv = np.linalg.svd(matrix, compute_uv=False)
    if not sv.size or sv[0] == 0:
        return 0
    return int(np.sum(sv > TOL_RANK * sv[0]))


def check_rank_condition(model: ModelSpec) -> Dict[str, bool]:
    """For every treatment, whether ``response_matrix_outcome`` has full
    column rank ``q``.
    """
    q = model.instruments.q
    return {
        t: matrix_rank(response_matrix_outcome(model, t)) == q
        for t in model.treatments.labels}


def check_nullspace_condition(model: ModelSpec) -> bool:
    """Whether the null space of the type response matrix lies in the span
    of the vectors that are constant across treatments within each
    instrument block.
    """
    omega = response_matrix_types(model)
    d = model.treatments.d
    q = model.instruments.q
    _, sv, vt = np.linalg.svd(omega, full_matrices=True)
    rank = 0 if not sv.size or sv[0] == 0 else int(
        np.sum(sv > TOL_RANK * sv[0]))
    null = vt[rank:].T
    if not null.size:
        return True

    constant = np.zeros((q * d, q))
    for j in range(q):
        constant[j * d:(j + 1) * d, j] = 1.
    coef = np.linalg.lstsq(constant, null, rcond=None)[0]
    residual = np.linalg.norm(constant @ coef - null, axis=0)
    return bool(np.all(residual <= TOL_RANK * max(1., np.sqrt(q * d))))


@dataclass(frozen=True)
class FunctionalVerdict:
    """Identification verdict of one functional.
    """

    name: str

    kind: str

    identified: bool

    residual: float = 0.

    s: Optional[np.ndarray] = None

    target_treatment: Optional[str] = None

    components: tuple = ()

    def to_dict(self) -> dict:
        data = {
            'name': self.name, 'kind': self.kind,
            'identified': self.identified, 'residual': self.residual}
        if self.s is not None:
            data['s'] = [float(v) for v in self.s]
        if self.target_treatment is not None:
            data['target_treatment'] = self.target_treatment
        if self.components:
            data['components'] = list(self.components)
        return data


@dataclass(frozen=True)
class IdentificationReport:
    """Result of :func:`identification_report`.
    """

    model: str

    diagnostics: List[str] = field(default_factory=list)

    verdicts: List[FunctionalVerdict] = field(default_factory=list)

    rank_condition: Dict[str, bool] = field(default_factory=dict)

    nullspace_condition: Optional[bool] = None

    def verdict(self, name: str) -> FunctionalVerdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def efficient(self) -> Optional[bool]:
        if self.nullspace_condition is None:
            return None
        return self.nullspace_condition and all(self.rank_condition.values())

    def to_dict(self) -> dict:
        return {
            'model': self.model,
            'diagnostics': list(self.diagnostics),
            'functionals': [v.to_dict() for v in self.verdicts],
            'efficiency': {
                'rank_condition': dict(self.rank_condition),
                'nullspace_condition': self.nullspace_condition,
            },
        }


def identification_report(
        model: ModelSpec,
        functionals: Optional[Sequence[FunctionalSpec]] = None
) -> IdentificationReport:
    """Solves every functional and runs the efficiency checks.

    When ``functionals`` is None the model's own functionals are used. A
    derived functional is identified iff all its components are. Invalid
    models only get diagnostics.
    """
    diagnostics = validate_model(model)
    if diagnostics:
        return IdentificationReport(model=model.name, diagnostics=diagnostics)
    if not model.is_discrete:
        raise UnsupportedModeError(
            f'Identification reports need a discrete instrument, model '
            f'"{model.name}" is in "{model.instruments.mode}" mode')

    if functionals is None:
        functionals = model.functionals
    known = {f.name: f for f in model.functionals}
    known.update({f.name: f for f in functionals})

    verdicts = {}

    def resolve(f: FunctionalSpec) -> FunctionalVerdict:
        if f.name in verdicts:
            return verdicts[f.name]
        if f.kind == DERIVED_FUNCTIONAL:
            comps = f.combine.components if f.combine is not None else ()
            missing = [c for c in comps if c not in known]
            if missing:
                raise ModelError(
                    f'Derived functional "{f.name}" refers to unknown '
                    f'components {missing}')
            identified = all(resolve(known[c]).identified for c in comps)
            verdict = FunctionalVerdict(
                name=f.name, kind=f.kind, identified=identified,
                residual=float('nan'), components=tuple(comps))
        else:
            solution = solve_functional(model, f)
            verdict = FunctionalVerdict(
                name=f.name, kind=f.kind, identified=solution.identified,
                residual=solution.residual, s=solution.s,
                target_treatment=solution.target_treatment)
        verdicts[f.name] = verdict
        return verdict

    ordered = [resolve(f) for f in functionals]
    return IdentificationReport(
        model=model.name, diagnostics=[], verdicts=ordered,
        rank_condition=check_rank_condition(model),
        nullspace_condition=check_nullspace_condition(model))
