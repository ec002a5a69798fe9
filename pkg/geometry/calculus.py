"""
Lagrangian and Hamiltonian models, the Legendre map and its inverse,
the scalar Ω and the vertical metrics.

Conventions
    L_vx[i][k] = ∂²L/∂v^i∂x^k
    H_xp[r][q] = ∂²H/∂x^r∂p_q
    third derivatives: L_vvv[i][j][k], L_vvx[i][j][k] = ∂³L/∂v^i∂v^j∂x^k,
    L_vxx[i][j][k] = ∂³L/∂v^i∂x^j∂x^k
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .conf import lab_setting
from .exceptions import (
    DegenerateOmega,
    NonConvergence,
    NumericFailure,
    SingularJacobian,
    UnknownSymbol,
)
from .expressions import CompiledArray, Coordinates, Expression, derivative_array

logger = logging.getLogger(__name__)


def _as_vector(values, name):
    array = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} has non-finite entries: {array}")
    return array


# ==========================================
# STATES
# ==========================================

@dataclass(frozen=True, eq=False)
class TangentState:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'x', _as_vector(self.x, 'x'))
        object.__setattr__(self, 'v', _as_vector(self.v, 'v'))
        if self.x.shape[0] < 2 or self.x.shape != self.v.shape:
            raise ValueError(f"inconsistent tangent state shapes {self.x.shape}, {self.v.shape}")

    @property
    def fiber(self):
        return self.v


@dataclass(frozen=True, eq=False)
class CotangentState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'x', _as_vector(self.x, 'x'))
        object.__setattr__(self, 'p', _as_vector(self.p, 'p'))
        if self.x.shape[0] < 2 or self.x.shape != self.p.shape:
            raise ValueError(f"inconsistent cotangent state shapes {self.x.shape}, {self.p.shape}")

    @property
    def fiber(self):
        return self.p


@dataclass(frozen=True)
class Domain:
    """A box in x and a radial range for fiber samples."""
    box: tuple
    radii: tuple = (0.1, 10.0)

    @property
    def n(self):
        return len(self.box)

    def sample_x(self, rng):
        low = np.array([lo for lo, _ in self.box], dtype=float)
        high = np.array([hi for _, hi in self.box], dtype=float)
        return rng.uniform(low, high)

    def sample_fiber(self, rng):
        direction = rng.standard_normal(self.n)
        direction /= np.linalg.norm(direction)
        return rng.uniform(self.radii[0], self.radii[1]) * direction

    def sample_tangent(self, rng, count):
        return [TangentState(self.sample_x(rng), self.sample_fiber(rng)) for _ in range(count)]

    def sample_cotangent(self, rng, count):
        return [CotangentState(self.sample_x(rng), self.sample_fiber(rng)) for _ in range(count)]


def _require_symbols(expression, allowed, what):
    names = {s.name for s in allowed}
    for name in expression.symbol_names:
        if name not in names:
            raise UnknownSymbol(f"{what} uses symbol '{name}' outside {sorted(names)}", symbol=name)


# ==========================================
# LAGRANGIAN
# ==========================================

@dataclass(frozen=True)
class LagrangianJet:
    value: float
    L_x: np.ndarray
    L_v: np.ndarray
    L_xx: Optional[np.ndarray] = None
    L_vx: Optional[np.ndarray] = None
    L_vv: Optional[np.ndarray] = None
    L_vvv: Optional[np.ndarray] = None
    L_vvx: Optional[np.ndarray] = None
    L_vxx: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LagrangianModel:
    n: int
    lagrangian: Expression
    domain: Optional[Domain] = None

    def __post_init__(self):
        if isinstance(self.lagrangian, str):
            object.__setattr__(self, 'lagrangian', Expression.parse(self.lagrangian))
        _require_symbols(self.lagrangian, self.coords.x + self.coords.v, 'Lagrangian')

    @cached_property
    def coords(self):
        return Coordinates(self.n)

    # --- symbolic partials ---

    @cached_property
    def symbolic(self):
        x, v = self.coords.x, self.coords.v
        L = self.lagrangian.expr
        L_v = derivative_array(L, v)
        L_x = derivative_array(L, x)
        L_vv = derivative_array(L_v, v)
        L_vx = derivative_array(L_v, x)
        return {
            'L': L, 'L_x': L_x, 'L_v': L_v,
            'L_xx': derivative_array(L_x, x), 'L_vx': L_vx, 'L_vv': L_vv,
            'L_vvv': derivative_array(L_vv, v), 'L_vvx': derivative_array(L_vv, x),
            'L_vxx': derivative_array(L_vx, x),
        }

    @cached_property
    def _compiled(self):
        groups = (self.coords.x, self.coords.v)
        return {name: CompiledArray(value, groups) for name, value in self.symbolic.items()}

    def partial(self, name, x, v):
        return self._compiled[name](x, v)

    def momentum(self, x, v):
        return self._compiled['L_v'](x, v)

    def jet(self, q, order=2):
        names = ['L', 'L_x', 'L_v']
        if order >= 2:
            names += ['L_xx', 'L_vx', 'L_vv']
        if order >= 3:
            names += ['L_vvv', 'L_vvx', 'L_vxx']
        values = {name: self.partial(name, q.x, q.v) for name in names}
        values['value'] = float(values.pop('L'))
        return LagrangianJet(**values)

    @cached_property
    def momentum_substitution(self):
        """Map p_i -> ∂L/∂v^i, used to compose momentum fields with λ."""
        return dict(zip(self.coords.p, self.symbolic['L_v']))


# ==========================================
# HAMILTONIAN
# ==========================================

@dataclass(frozen=True)
class HamiltonianJet:
    value: float
    velocity: Optional[np.ndarray] = None
    H_x: Optional[np.ndarray] = None
    H_p: Optional[np.ndarray] = None
    H_xx: Optional[np.ndarray] = None
    H_xp: Optional[np.ndarray] = None
    H_pp: Optional[np.ndarray] = None


@dataclass(frozen=True)
class HamiltonianModel:
    """
    H(x, p), either derived from a Lagrangian through the inverse Legendre
    map or given as an expression. A given expression takes precedence.
    """
    n: int
    lagrangian: Optional[LagrangianModel] = None
    expression: Optional[Expression] = None

    def __post_init__(self):
        if self.lagrangian is None and self.expression is None:
            raise ValueError("a Hamiltonian needs a Lagrangian or an expression")
        if isinstance(self.expression, str):
            object.__setattr__(self, 'expression', Expression.parse(self.expression))
        if self.expression is not None:
            _require_symbols(self.expression, self.coords.x + self.coords.p, 'Hamiltonian')

    @classmethod
    def from_lagrangian(cls, lagrangian):
        return cls(n=lagrangian.n, lagrangian=lagrangian)

    @classmethod
    def from_expression(cls, n, expression, lagrangian=None):
        return cls(n=n, lagrangian=lagrangian, expression=expression)

    @property
    def source(self):
        return 'expression' if self.expression is not None else 'lagrangian'

    @cached_property
    def coords(self):
        return Coordinates(self.n)

    @cached_property
    def symbolic(self):
        if self.expression is None:
            return None
        x, p = self.coords.x, self.coords.p
        H = self.expression.expr
        H_x = derivative_array(H, x)
        H_p = derivative_array(H, p)
        return {
            'H': H, 'H_x': H_x, 'H_p': H_p,
            'H_xx': derivative_array(H_x, x),
            'H_xp': derivative_array(H_x, p),
            'H_pp': derivative_array(H_p, p),
        }

    @cached_property
    def _compiled(self):
        groups = (self.coords.x, self.coords.p)
        return {name: CompiledArray(value, groups) for name, value in self.symbolic.items()}

    @cached_property
    def velocity_substitution(self):
        """Map v^i -> ∂H/∂p_i; only available for expression Hamiltonians."""
        if self.expression is None:
            return None
        return dict(zip(self.coords.v, self.symbolic['H_p']))

    def evaluate(self, c, order=1):
        if self.expression is not None:
            return self._evaluate_expression(c, order)
        return self._evaluate_derived(c, order)

    def _evaluate_expression(self, c, order):
        get = lambda name: self._compiled[name](c.x, c.p)
        if order == 0:
            return HamiltonianJet(value=float(get('H')))
        H_p = get('H_p')
        values = dict(value=float(get('H')), velocity=H_p, H_x=get('H_x'), H_p=H_p)
        if order >= 2:
            values.update(H_xx=get('H_xx'), H_xp=get('H_xp'), H_pp=get('H_pp'))
        return HamiltonianJet(**values)

    def _evaluate_derived(self, c, order):
        q = inverse_legendre(self.lagrangian, c)
        jet = self.lagrangian.jet(q, order=2 if order >= 2 else 1)
        # H = Σ v ∂L/∂v − L with ∂H/∂p = v and ∂H/∂x = −∂L/∂x.
        value = float(q.v @ jet.L_v - jet.value)
        if order == 0:
            return HamiltonianJet(value=value)
        values = dict(value=value, velocity=q.v, H_x=-jet.L_x, H_p=q.v)
        if order >= 2:
            g_inv = invert_metric(jet.L_vv)
            dv_dx = -g_inv @ jet.L_vx
            values.update(
                H_pp=g_inv,
                H_xp=dv_dx.T,
                H_xx=-jet.L_xx - jet.L_vx.T @ dv_dx,
            )
        return HamiltonianJet(**values)


def hamiltonian_eval(H, c, order=1):
    """Value of H at c and its partials up to ``order`` (0, 1 or 2)."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    return H.evaluate(c, order)


def velocity_of(H, c):
    """The tangent state paired with c: v = ∂H/∂p."""
    return TangentState(c.x, H.evaluate(c, order=1).H_p)


# ==========================================
# LEGENDRE MAP
# ==========================================

@dataclass(frozen=True)
class VerticalMetric:
    g: np.ndarray
    g_inv: np.ndarray

    @property
    def duality_error(self):
        return float(np.max(np.abs(self.g @ self.g_inv - np.eye(self.g.shape[0]))))


@dataclass(frozen=True)
class InverseLegendreResult:
    state: TangentState
    iterations: int
    residual: float


def invert_metric(g):
    if abs(np.linalg.det(g)) < lab_setting('SINGULAR_TOL'):
        raise SingularJacobian("vertical metric g is singular", det=float(np.linalg.det(g)))
    return np.linalg.inv(g)


def omega_v(L, q):
    return float(q.v @ L.momentum(q.x, q.v))


def legendre(L, q):
    return CotangentState(q.x, L.momentum(q.x, q.v))


def mu_map(L, q):
    omega = omega_v(L, q)
    if abs(omega) < lab_setting('SINGULAR_TOL'):
        raise DegenerateOmega("Ω vanishes, the map μ is undefined", quantity='Ω', omega=omega)
    return q.v / omega


def vertical_metrics(L, q):
    g = L.partial('L_vv', q.x, q.v)
    return VerticalMetric(g=g, g_inv=invert_metric(g))


def _initial_velocity(L, x, p):
    # Quadratic estimate from g at v = 0 when it is usable.
    direction = p
    g0 = L.partial('L_vv', x, np.zeros_like(p))
    if np.all(np.isfinite(g0)) and abs(np.linalg.det(g0)) > lab_setting('SINGULAR_TOL'):
        direction = np.linalg.solve(g0, p)

    target = float(p @ direction)

    def gap(scale):
        return float(L.momentum(x, scale * direction) @ direction) - target

    scale, current = 1.0, gap(1.0)
    if current == 0.0 or not np.isfinite(current):
        return direction
    factor = 0.5 if current > 0 else 2.0
    for _ in range(60):
        trial = scale * factor
        value = gap(trial)
        if not np.isfinite(value):
            break
        if np.sign(value) != np.sign(current):
            best = trial if abs(value) < abs(current) else scale
            return best * direction
        scale, current = trial, value
    return direction


def newton_inverse(L, c):
    """Newton iteration on F(v) = ∂L/∂v(x, v) − p with Jacobian g, damped by halving."""
    x, p = c.x, c.p
    tol = lab_setting('NEWTON_TOL') * max(1.0, float(np.max(np.abs(p))))
    max_iter = lab_setting('NEWTON_MAX_ITER')
    singular = lab_setting('SINGULAR_TOL')

    v = _initial_velocity(L, x, p)
    F = L.momentum(x, v) - p
    residual = float(np.max(np.abs(F)))

    for iteration in range(max_iter + 1):
        if residual <= tol:
            return InverseLegendreResult(TangentState(x, v), iteration, residual)
        if iteration == max_iter:
            break
        g = L.partial('L_vv', x, v)
        det = np.linalg.det(g)
        if abs(det) < singular:
            raise SingularJacobian("vertical metric g is singular during Legendre inversion",
                                   det=float(det), iteration=iteration)
        step = np.linalg.solve(g, F)

        scale = 1.0
        while True:
            trial = v - scale * step
            F_trial = L.momentum(x, trial) - p
            trial_residual = float(np.max(np.abs(F_trial)))
            if trial_residual < residual or scale < 1.0 / 1024:
                break
            scale /= 2
        if scale < 1.0:
            logger.debug("Legendre Newton damped to %g at iteration %d", scale, iteration)
        v, F, residual = trial, F_trial, trial_residual

    raise NonConvergence(
        f"inverse Legendre did not converge in {max_iter} iterations",
        residual=residual, p=p.tolist(),
    )


def inverse_legendre(L, c):
    return newton_inverse(L, c).state


def omega_p(H, c):
    jet = H.evaluate(c, order=1)
    return float(c.p @ jet.H_p)


# ==========================================
# REGULARITY
# ==========================================

@dataclass
class RegularityReport:
    samples: int
    min_omega: float = np.inf
    min_abs_det_g: float = np.inf
    max_roundtrip_error: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return (
            self.min_omega > 0
            and self.min_abs_det_g > 1e-10
            and self.max_roundtrip_error <= 1e-8
        )

    def as_dict(self):
        return {
            'samples': self.samples,
            'min_omega': self.min_omega,
            'min_abs_det_g': self.min_abs_det_g,
            'max_roundtrip_error': self.max_roundtrip_error,
            'passed': self.passed,
            'failures': list(self.failures),
        }


def check_regularity(L, domain, count, rng):
    """Sample the domain and report Ω, det g and the Legendre roundtrip error."""
    report = RegularityReport(samples=count)
    for index, q in enumerate(domain.sample_tangent(rng, count)):
        report.min_omega = min(report.min_omega, omega_v(L, q))
        det = abs(float(np.linalg.det(L.partial('L_vv', q.x, q.v))))
        report.min_abs_det_g = min(report.min_abs_det_g, det)
        try:
            back = inverse_legendre(L, legendre(L, q))
            error = float(np.max(np.abs(back.v - q.v)))
        except NumericFailure as exc:
            report.failures.append({'sample': index, 'error': type(exc).__name__, 'message': str(exc)})
            error = np.inf
        report.max_roundtrip_error = max(report.max_roundtrip_error, error)
    logger.info(
        "Regularity over %d samples: min Ω=%.3e, min |det g|=%.3e, roundtrip=%.3e",
        count, report.min_omega, report.min_abs_det_g, report.max_roundtrip_error,
    )
    return report


def legendre_consistency(H, points):
    """Max discrepancy of H and ∂H/∂p between the expression and derived paths."""
    if H.expression is None or H.lagrangian is None:
        raise ValueError("consistency needs both a Lagrangian and a Hamiltonian expression")
    derived = HamiltonianModel.from_lagrangian(H.lagrangian)
    worst = 0.0
    for c in points:
        a = H.evaluate(c, order=1)
        b = derived.evaluate(c, order=1)
        worst = max(worst, abs(a.value - b.value), float(np.max(np.abs(a.H_p - b.H_p))))
    return worst


# ==========================================
# DERIVATIVE VALIDATION
# ==========================================

def _central_difference(func, point, step):
    columns = []
    for k in range(point.shape[0]):
        shift = np.zeros_like(point)
        shift[k] = step
        columns.append((np.asarray(func(point + shift)) - np.asarray(func(point - shift))) / (2 * step))
    return np.stack(columns, axis=-1)


def _relative_gap(exact, approx):
    scale = max(1.0, float(np.max(np.abs(exact))))
    return float(np.max(np.abs(exact - approx))) / scale


@dataclass(frozen=True)
class DerivativeCheck:
    worst_gap: float
    rtol: float

    @property
    def passed(self):
        return self.worst_gap <= self.rtol


def derivative_check(L, points, rtol=None):
    """
    Largest relative gap between the symbolic partials of L and central
    differences of one order lower, over the given tangent points, judged
    against ``rtol`` (``DERIVATIVE_RTOL`` by default).
    """
    step = lab_setting('DERIVATIVE_STEP')
    rtol = lab_setting('DERIVATIVE_RTOL') if rtol is None else rtol
    worst = 0.0
    for q in points:
        x, v = q.x, q.v
        gaps = (
            _relative_gap(L.partial('L_x', x, v), _central_difference(lambda z: L.partial('L', z, v), x, step)),
            _relative_gap(L.partial('L_v', x, v), _central_difference(lambda z: L.partial('L', x, z), v, step)),
            _relative_gap(L.partial('L_vv', x, v), _central_difference(lambda z: L.momentum(x, z), v, step)),
            _relative_gap(L.partial('L_vx', x, v), _central_difference(lambda z: L.momentum(z, v), x, step)),
        )
        worst = max(worst, *gaps)
    check = DerivativeCheck(worst_gap=worst, rtol=rtol)
    if not check.passed:
        logger.warning("Symbolic derivatives of L disagree with central differences: gap %.3e > %.1e", worst, rtol)
    logger.debug("Derivative check over %d points: worst relative gap %.3e", len(points), worst)
    return check
