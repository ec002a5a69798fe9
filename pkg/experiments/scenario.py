"""
Scenario documents: one JSON file fully describes an experiment.

    {
      "name": "euclidean_circle_q0",
      "dimension": 2,
      "model": {"lagrangian": "...", "hamiltonian": "...", "box": [[lo, hi], ...], "radii": [0.1, 10]},
      "force": {"Q": ["0", "0"]}                      or {"acceleration": [...]}
      "connection": {"gamma": [[[...]]], "shift": [[[...]]]},
      "surface": {"chart": ["cos(y1)", "sin(y1)"], "box": [[lo, hi]], "base": [0.0], "nu0": 1.0},
      "run": {"t_end": 1.0, "h": 0.001, "points": 100, "seed": 7, ...},
      "assert": [{"quantity": "max_phi", "op": "<=", "value": 1e-6}]
    }

Every section except ``dimension`` and ``model`` is optional.
"""
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

from geometry.calculus import CotangentState, Domain, HamiltonianModel, LagrangianModel, TangentState
from geometry.dynamics import ForceField, NewtonianSystem
from geometry.exceptions import ExpressionParseError, GeometryError
from geometry.expressions import Expression
from geometry.hypersurface import Hypersurface
from geometry.tensorfields import ConnectionShift, ExtendedConnection

logger = logging.getLogger(__name__)

SECTIONS = ('name', 'description', 'dimension', 'model', 'force', 'connection', 'surface', 'run', 'assert')
OPERATORS = ('<=', '<', '>=', '>', '==')

RUN_DEFAULTS = {
    't_end': 1.0,
    'h': None,
    'points': 100,
    'seed': 0,
    'nodes': None,
    'delta': None,
    'samples': None,
    'shifts': 5,
    'shift_scale': 0.5,
    'horizon': None,
    'initial': None,
    'compare_representations': False,
}


# --- ERRORS ---

class ScenarioError(Exception):
    """Base class for problems with a scenario file."""


class ScenarioNotFound(ScenarioError):
    def __init__(self, path):
        super().__init__(f"Scenario file not found: {path}")
        self.path = path


class ScenarioParseError(ScenarioError):
    def __init__(self, message, line=None, column=None, field=None):
        location = []
        if field:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column}")
        suffix = f" at {', '.join(location)}" if location else ""
        super().__init__(f"{message}{suffix}")
        self.line = line
        self.column = column
        self.field = field


class ScenarioValidationError(ScenarioError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


# --- SECTIONS ---

@dataclass(frozen=True)
class Assertion:
    quantity: str
    op: str
    value: float

    def holds(self, observed):
        if observed is None:
            return False
        observed = float(observed)
        if self.op == '<=':
            return observed <= self.value
        if self.op == '<':
            return observed < self.value
        if self.op == '>=':
            return observed >= self.value
        if self.op == '>':
            return observed > self.value
        return observed == self.value

    def as_dict(self):
        return {'quantity': self.quantity, 'op': self.op, 'value': self.value}


@dataclass(frozen=True)
class SurfaceSpec:
    chart: list
    box: tuple
    base: Optional[tuple] = None
    nu0: float = 1.0
    constant_nu: bool = False


@dataclass
class Scenario:
    path: Path
    name: str
    dimension: int
    model: dict
    force: dict = field(default_factory=dict)
    connection: dict = field(default_factory=dict)
    surface: Optional[SurfaceSpec] = None
    run: dict = field(default_factory=lambda: dict(RUN_DEFAULTS))
    assertions: list = field(default_factory=list)
    description: str = ''

    # Objects are built once the document has validated.

    @cached_property
    def lagrangian(self):
        text = self.model.get('lagrangian')
        if text is None:
            return None
        return _build('model.lagrangian', lambda: LagrangianModel(self.dimension, Expression.parse(text), self.domain))

    @cached_property
    def hamiltonian(self):
        text = self.model.get('hamiltonian')
        if text is None:
            return HamiltonianModel.from_lagrangian(self.lagrangian)
        return _build('model.hamiltonian',
                      lambda: HamiltonianModel.from_expression(self.dimension, Expression.parse(text), self.lagrangian))

    @cached_property
    def domain(self):
        return Domain(self.model['box'], self.model.get('radii', (0.1, 10.0)))

    @cached_property
    def force_field(self):
        if 'acceleration' in self.force:
            if self.lagrangian is None:
                raise ScenarioValidationError('force.acceleration', "needs a Lagrangian in the model section")
            return _build('force.acceleration', lambda: ForceField.from_acceleration(
                [_parse_text('force.acceleration', e) for e in self.force['acceleration']],
                self.lagrangian, self.hamiltonian))
        if 'Q' in self.force:
            components = [_parse_text(f'force.Q[{i}]', e) for i, e in enumerate(self.force['Q'])]
            return _build('force.Q', lambda: ForceField(self.dimension, components))
        return ForceField.zero(self.dimension)

    @cached_property
    def system(self):
        return NewtonianSystem(self.hamiltonian, self.force_field)

    @cached_property
    def gamma(self):
        raw = self.connection.get('gamma')
        if raw is None:
            return ExtendedConnection.flat(self.dimension)
        return _build('connection.gamma', lambda: ExtendedConnection(self.dimension, _parse_nested('connection.gamma', raw)))

    @cached_property
    def shift(self):
        raw = self.connection.get('shift')
        if raw is None:
            return None
        return _build('connection.shift', lambda: ConnectionShift(self.dimension, _parse_nested('connection.shift', raw)))

    @cached_property
    def hypersurface(self):
        if self.surface is None:
            raise ScenarioValidationError('surface', "this subcommand needs a surface section")
        section = self.surface
        chart = [_parse_text(f'surface.chart[{i}]', e) for i, e in enumerate(section.chart)]
        return _build('surface', lambda: Hypersurface(self.dimension, chart, section.box, section.base))

    def initial_state(self):
        initial = self.run.get('initial')
        if initial is None:
            raise ScenarioValidationError('run.initial', "this subcommand needs an initial state")
        if 'p' in initial:
            return CotangentState(initial['x'], initial['p'])
        return TangentState(initial['x'], initial['v'])


def _parse_text(field_path, value):
    try:
        return Expression.parse(value).expr
    except ExpressionParseError as exc:
        raise ScenarioParseError(str(exc), column=exc.column, field=field_path) from exc


def _parse_nested(field_path, raw):
    if isinstance(raw, list):
        return [_parse_nested(f'{field_path}[{i}]', item) for i, item in enumerate(raw)]
    return _parse_text(field_path, raw)


def _build(field_path, factory):
    """Run a constructor, reporting library complaints against the scenario field."""
    try:
        return factory()
    except ExpressionParseError as exc:
        raise ScenarioParseError(str(exc), column=exc.column, field=field_path) from exc
    except (GeometryError, ValueError) as exc:
        raise ScenarioValidationError(field_path, str(exc)) from exc


# ==========================================
# VALIDATION
# ==========================================

def _require(document, key, kind, where):
    if key not in document:
        raise ScenarioValidationError(f'{where}{key}', "is required")
    value = document[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ScenarioValidationError(f'{where}{key}', f"must be {_kind_name(kind)}")
    return value


def _kind_name(kind):
    names = {dict: 'an object', list: 'a list', str: 'a string', int: 'an integer', bool: 'a boolean'}
    if isinstance(kind, tuple):
        return ' or '.join(names.get(k, k.__name__) for k in kind)
    return names.get(kind, kind.__name__)


def _box(value, field_path, length):
    if not isinstance(value, list) or len(value) != length:
        raise ScenarioValidationError(field_path, f"must list {length} intervals [lo, hi]")
    box = []
    for i, interval in enumerate(value):
        if (not isinstance(interval, list) or len(interval) != 2
                or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in interval)):
            raise ScenarioValidationError(f'{field_path}[{i}]', "must be a pair of numbers")
        lo, hi = float(interval[0]), float(interval[1])
        if hi <= lo:
            raise ScenarioValidationError(f'{field_path}[{i}]', "needs lo < hi")
        box.append((lo, hi))
    return tuple(box)


def _vector(value, field_path, length):
    if (not isinstance(value, list) or len(value) != length
            or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in value)):
        raise ScenarioValidationError(field_path, f"must be a list of {length} numbers")
    return [float(b) for b in value]


def _expressions(value, field_path, length):
    if not isinstance(value, list) or len(value) != length:
        raise ScenarioValidationError(field_path, f"must list {length} expressions")
    return value


def _cube(value, field_path, n):
    if not isinstance(value, list) or len(value) != n:
        raise ScenarioValidationError(field_path, f"must be a nested {n}x{n}x{n} list")
    for k, plane in enumerate(value):
        if not isinstance(plane, list) or len(plane) != n:
            raise ScenarioValidationError(f'{field_path}[{k}]', f"must be a {n}x{n} list")
        for i, row in enumerate(plane):
            if not isinstance(row, list) or len(row) != n:
                raise ScenarioValidationError(f'{field_path}[{k}][{i}]', f"must list {n} expressions")
    return value


def _validate(document, path):
    # 1. Top level
    unknown = sorted(set(document) - set(SECTIONS))
    if unknown:
        raise ScenarioValidationError(unknown[0], "is not a scenario section")
    name = document.get('name', path.stem)
    if not isinstance(name, str):
        raise ScenarioValidationError('name', "must be a string")
    n = _require(document, 'dimension', int, '')
    if n < 2:
        raise ScenarioValidationError('dimension', "must be at least 2")

    # 2. Model
    model = _require(document, 'model', dict, '')
    if 'lagrangian' not in model and 'hamiltonian' not in model:
        raise ScenarioValidationError('model', "needs a lagrangian or a hamiltonian expression")
    model = dict(model)
    model['box'] = _box(model.get('box', [[-1.0, 1.0]] * n), 'model.box', n)
    radii = model.get('radii', [0.1, 10.0])
    radii = _vector(radii, 'model.radii', 2)
    if not 0 <= radii[0] < radii[1]:
        raise ScenarioValidationError('model.radii', "needs 0 <= r_min < r_max")
    model['radii'] = tuple(radii)

    # 3. Force and connection
    force = document.get('force', {})
    if not isinstance(force, dict):
        raise ScenarioValidationError('force', "must be an object")
    if 'Q' in force and 'acceleration' in force:
        raise ScenarioValidationError('force', "give either Q or acceleration, not both")
    for key in ('Q', 'acceleration'):
        if key in force:
            _expressions(force[key], f'force.{key}', n)

    connection = document.get('connection', {})
    if not isinstance(connection, dict):
        raise ScenarioValidationError('connection', "must be an object")
    for key in ('gamma', 'shift'):
        if connection.get(key) is not None:
            _cube(connection[key], f'connection.{key}', n)

    # 4. Surface
    surface = None
    if 'surface' in document:
        raw = _require(document, 'surface', dict, '')
        chart = _expressions(_require(raw, 'chart', list, 'surface.'), 'surface.chart', n)
        box = _box(_require(raw, 'box', list, 'surface.'), 'surface.box', n - 1)
        base = raw.get('base')
        if base is not None:
            base = tuple(_vector(base, 'surface.base', n - 1))
            if any(not lo <= b <= hi for b, (lo, hi) in zip(base, box)):
                raise ScenarioValidationError('surface.base', "must lie inside the parameter box")
        nu0 = raw.get('nu0', 1.0)
        if not isinstance(nu0, (int, float)) or isinstance(nu0, bool) or nu0 == 0:
            raise ScenarioValidationError('surface.nu0', "must be a nonzero number")
        surface = SurfaceSpec(chart=chart, box=box, base=base, nu0=float(nu0),
                              constant_nu=bool(raw.get('constant_nu', False)))

    # 5. Run parameters
    run = dict(RUN_DEFAULTS)
    raw_run = document.get('run', {})
    if not isinstance(raw_run, dict):
        raise ScenarioValidationError('run', "must be an object")
    for key, value in raw_run.items():
        if key not in RUN_DEFAULTS:
            raise ScenarioValidationError(f'run.{key}', "is not a run parameter")
        run[key] = value
    if not isinstance(run['t_end'], (int, float)) or run['t_end'] == 0:
        raise ScenarioValidationError('run.t_end', "must be a nonzero number")
    if run['h'] is not None and (not isinstance(run['h'], (int, float)) or run['h'] <= 0):
        raise ScenarioValidationError('run.h', "must be a positive number")
    for key in ('points', 'shifts', 'nodes', 'samples'):
        value = run[key]
        if value is not None and (not isinstance(value, int) or isinstance(value, bool) or value < 1):
            raise ScenarioValidationError(f'run.{key}', "must be a positive integer")
    if run['nodes'] is not None and run['nodes'] < 2:
        raise ScenarioValidationError('run.nodes', "needs at least 2 nodes per axis")
    if not isinstance(run['seed'], int) or isinstance(run['seed'], bool) or not 0 <= run['seed'] < 2 ** 64:
        raise ScenarioValidationError('run.seed', "must be an unsigned 64-bit integer")
    if run['initial'] is not None:
        initial = run['initial']
        if not isinstance(initial, dict) or 'x' not in initial or ('p' in initial) == ('v' in initial):
            raise ScenarioValidationError('run.initial', "needs x and exactly one of p or v")
        fiber = 'p' if 'p' in initial else 'v'
        run['initial'] = {'x': _vector(initial['x'], 'run.initial.x', n),
                          fiber: _vector(initial[fiber], f'run.initial.{fiber}', n)}

    # 6. Assertions
    assertions = []
    raw_asserts = document.get('assert', [])
    if not isinstance(raw_asserts, list):
        raise ScenarioValidationError('assert', "must be a list")
    for i, item in enumerate(raw_asserts):
        where = f'assert[{i}]'
        if not isinstance(item, dict):
            raise ScenarioValidationError(where, "must be an object")
        quantity = _require(item, 'quantity', str, f'{where}.')
        op = _require(item, 'op', str, f'{where}.')
        if op not in OPERATORS:
            raise ScenarioValidationError(f'{where}.op', f"must be one of {', '.join(OPERATORS)}")
        value = _require(item, 'value', (int, float), f'{where}.')
        assertions.append(Assertion(quantity, op, float(value)))

    return Scenario(
        path=path, name=name, dimension=n, model=model, force=force, connection=connection,
        surface=surface, run=run, assertions=assertions, description=document.get('description', ''),
    )


def load_scenario(path):
    """Read, parse and validate a scenario; expressions are parsed eagerly."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioNotFound(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise ScenarioNotFound(path) from exc
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    if not isinstance(document, dict):
        raise ScenarioParseError("a scenario must be a JSON object", line=1, column=1)

    scenario = _validate(document, path)

    # Touch every expression so syntax errors surface before any numerics run.
    if scenario.lagrangian is not None:
        scenario.lagrangian.symbolic
    scenario.hamiltonian
    scenario.force_field
    scenario.gamma
    scenario.shift
    if scenario.surface is not None:
        scenario.hypersurface
    logger.debug("Loaded scenario %s from %s", scenario.name, path)
    return scenario
