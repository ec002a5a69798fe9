"""
Newtonian dynamical systems in relative form and their trajectories.

Momentum representation:   ẋ = ∂H/∂p / Ω,   ṗ = −∂H/∂x / Ω + Q(x, p)
Velocity representation:   ẋ = v / Ω,       d/dt(∂L/∂v) − ∂L/∂x / Ω = Q(x, λ(v))

The force Q is authored in momentum representation; velocity runs read it
through λ pointwise.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy

from .calculus import CotangentState, TangentState, invert_metric
from .conf import lab_setting
from .exceptions import DegenerateOmega, GeometryError, NumericFailure
from .expressions import CompiledArray, Coordinates, derivative_array
from .tensorfields import MOMENTUM, VELOCITY, _sympify_nested

logger = logging.getLogger(__name__)


# ==========================================
# FORCE FIELDS
# ==========================================

@dataclass(frozen=True)
class ForceField:
    n: int
    components: object = None

    def __post_init__(self):
        components = self.components
        if components is None:
            components = sympy.Array([0] * self.n)
        elif not isinstance(components, sympy.NDimArray):
            components = _sympify_nested(list(components))
        if components.shape != (self.n,):
            raise ValueError(f"force needs {self.n} components, got shape {components.shape}")
        allowed = set(self.coords.x + self.coords.p)
        for entry in components:
            stray = sympy.sympify(entry).free_symbols - allowed
            if stray:
                names = sorted(s.name for s in stray)
                raise ValueError(f"force components may only use x and p symbols, found {names}")
        object.__setattr__(self, 'components', components)

    @classmethod
    def zero(cls, n):
        return cls(n)

    @classmethod
    def from_acceleration(cls, acceleration, lagrangian, hamiltonian):
        """
        Q from a velocity-representation acceleration field Ψ(x, v) with v̇ = Ψ:

            Q_i∘λ = Σ g_ij Ψ^j − ∂L/∂x^i / Ω + Σ ∂²L/∂v^i∂x^j v^j / Ω

        then carried to momentum representation through v = ∂H/∂p.
        """
        if hamiltonian.velocity_substitution is None:
            raise ValueError("converting an acceleration field needs a Hamiltonian expression")
        n = lagrangian.n
        psi = _sympify_nested(list(acceleration))
        sym = lagrangian.symbolic
        v = lagrangian.coords.v
        omega = sum(vi * sym['L_v'][i] for i, vi in enumerate(v))
        nested = []
        for i in range(n):
            entry = sum(sym['L_vv'][i, j] * psi[j] for j in range(n))
            entry += (-sym['L_x'][i] + sum(sym['L_vx'][i, j] * v[j] for j in range(n))) / omega
            nested.append(sympy.sympify(entry).xreplace(hamiltonian.velocity_substitution))
        return cls(n, sympy.Array(nested))

    @cached_property
    def coords(self):
        return Coordinates(self.n)

    @cached_property
    def is_zero(self):
        return all(entry == 0 for entry in self.components)

    @cached_property
    def _compiled(self):
        groups = (self.coords.x, self.coords.p)
        return (
            CompiledArray(self.components, groups),
            CompiledArray(derivative_array(self.components, self.coords.x), groups),
            CompiledArray(derivative_array(self.components, self.coords.p), groups),
        )

    def evaluate(self, x, p):
        if self.is_zero:
            return np.zeros(self.n)
        return self._compiled[0](x, p)

    def jet(self, x, p):
        """Q, Q_x[s][r] = ∂Q_s/∂x^r and Q_p[s][q] = ∂Q_s/∂p_q."""
        if self.is_zero:
            return np.zeros(self.n), np.zeros((self.n, self.n)), np.zeros((self.n, self.n))
        return tuple(compiled(x, p) for compiled in self._compiled)


@dataclass(frozen=True)
class NewtonianSystem:
    H: object
    Q: ForceField

    def __post_init__(self):
        if self.H.n != self.Q.n:
            raise ValueError("Hamiltonian and force have different dimensions")

    @property
    def n(self):
        return self.H.n

    @property
    def L(self):
        return self.H.lagrangian


# ==========================================
# RIGHT-HAND SIDES
# ==========================================

def _check_omega(omega):
    if abs(omega) < lab_setting('SINGULAR_TOL'):
        raise DegenerateOmega("Ω vanishes", quantity='Ω', omega=omega)


def rhs_p(system, c):
    jet = system.H.evaluate(c, order=1)
    omega = float(c.p @ jet.H_p)
    _check_omega(omega)
    dx = jet.H_p / omega
    dp = -jet.H_x / omega + system.Q.evaluate(c.x, c.p)
    return dx, dp


def rhs_v(system, q):
    L = system.L
    if L is None:
        raise ValueError("velocity representation needs a Lagrangian")
    jet = L.jet(q, order=2)
    omega = float(q.v @ jet.L_v)
    _check_omega(omega)
    dx = q.v / omega
    rhs = jet.L_x / omega + system.Q.evaluate(q.x, jet.L_v) - jet.L_vx @ dx
    g_inv = invert_metric(jet.L_vv)
    return dx, g_inv @ rhs


# ==========================================
# TRAJECTORIES
# ==========================================

@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    fiber: np.ndarray
    representation: str
    h: float

    @property
    def n(self):
        return self.x.shape[1]

    def __len__(self):
        return self.t.shape[0]

    def state(self, k):
        if self.representation == MOMENTUM:
            return CotangentState(self.x[k], self.fiber[k])
        return TangentState(self.x[k], self.fiber[k])

    @property
    def states(self):
        return [self.state(k) for k in range(len(self))]

    @property
    def p(self):
        if self.representation != MOMENTUM:
            raise ValueError("trajectory is in velocity representation")
        return self.fiber

    @property
    def header(self):
        prefix = 'p' if self.representation == MOMENTUM else 'v'
        return (['t'] + [f'x{i}' for i in range(1, self.n + 1)]
                + [f'{prefix}{i}' for i in range(1, self.n + 1)])

    def to_rows(self):
        return [[float(t)] + x.tolist() + f.tolist() for t, x, f in zip(self.t, self.x, self.fiber)]

    def energy_drift(self, H):
        """max_t |H(t) − H(0)|; velocity runs are read through λ."""
        values = []
        for k in range(len(self)):
            if self.representation == MOMENTUM:
                c = CotangentState(self.x[k], self.fiber[k])
            else:
                c = CotangentState(self.x[k], H.lagrangian.momentum(self.x[k], self.fiber[k]))
            values.append(H.evaluate(c, order=0).value)
        values = np.asarray(values)
        return float(np.max(np.abs(values - values[0])))


def _rk4_step(rhs, x, f, h):
    k1 = rhs(x, f)
    k2 = rhs(x + 0.5 * h * k1[0], f + 0.5 * h * k1[1])
    k3 = rhs(x + 0.5 * h * k2[0], f + 0.5 * h * k2[1])
    k4 = rhs(x + h * k3[0], f + h * k3[1])
    x_next = x + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    f_next = f + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return x_next, f_next


def integrate(system, init, t_end, h=None):
    """
    Classical fixed-step RK4 from t = 0 to ``t_end``.

    The step count is round(|t_end| / h); a negative ``t_end`` integrates
    backwards in time.
    """
    h = lab_setting('TIME_STEP') if h is None else float(h)
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    if t_end == 0:
        raise ValueError("t_end must be nonzero")
    steps = max(1, int(round(abs(t_end) / h)))
    signed_h = t_end / steps

    if isinstance(init, CotangentState):
        representation = MOMENTUM
        fiber0 = init.p

        def rhs(x, p):
            return rhs_p(system, CotangentState(x, p))
    else:
        representation = VELOCITY
        fiber0 = init.v

        def rhs(x, v):
            return rhs_v(system, TangentState(x, v))

    t = np.arange(steps + 1) * signed_h
    xs = np.empty((steps + 1, system.n))
    fs = np.empty((steps + 1, system.n))
    xs[0], fs[0] = init.x, fiber0

    logger.debug("Integrating %s representation: %d steps of %g", representation, steps, signed_h)
    for k in range(steps):
        try:
            xs[k + 1], fs[k + 1] = _rk4_step(rhs, xs[k], fs[k], signed_h)
        except GeometryError as exc:
            raise exc.with_context(time=float(t[k]))
        except ValueError as exc:
            # Non-finite state from a blow-up.
            raise NumericFailure(f"integration produced a non-finite state: {exc}", time=float(t[k])) from exc

    return Trajectory(t=t, x=xs, fiber=fs, representation=representation, h=signed_h)
