"""
Extended tensor fields, extended connections and their gradients.

Index layout
    - tensor components: one axis per index, in the order recorded by the
      field's ``kinds`` string ('u' upper, 'l' lower); gradients append their
      new index last.
    - Γ^k_ij stored [k][i][j]; Γ jets carry the derivative index last.
    - P^r_s stored [r][s].
    - D^{kr}_{ij} stored [k][r][i][j]; R̃^k_{rij} stored [k][r][i][j].

The horizontal gradient has a single implementation,
``horizontal_gradient_at``, which works on numpy arrays of floats (numeric
jets) and on numpy object arrays of sympy expressions (symbolic fields).
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy

from .calculus import CotangentState, inverse_legendre
from .conf import lab_setting
from .exceptions import (
    DegenerateOmega,
    InsufficientSamples,
    RepresentationMismatch,
    ZeroMomentum,
)
from .expressions import CompiledArray, Coordinates, Expression, derivative_array

logger = logging.getLogger(__name__)

MOMENTUM = 'momentum'
VELOCITY = 'velocity'
REPRESENTATIONS = (MOMENTUM, VELOCITY)


# ==========================================
# HELPERS
# ==========================================

def _to_object(components):
    if isinstance(components, sympy.Expr):
        array = np.empty((), dtype=object)
        array[()] = components
        return array
    return np.array(components.tolist(), dtype=object)


def _from_object(array):
    if array.ndim == 0:
        return sympy.sympify(array[()])
    return sympy.Array(array.tolist())


def _sympify_nested(raw):
    """Nested lists of expression strings/numbers -> sympy Array."""
    def convert(item):
        if isinstance(item, (list, tuple)):
            return [convert(entry) for entry in item]
        if isinstance(item, Expression):
            return item.expr
        if isinstance(item, sympy.Basic):
            return item
        return Expression.parse(item).expr
    converted = convert(raw)
    if not isinstance(converted, list):
        return converted
    return sympy.Array(converted)


def _map_components(components, func):
    if isinstance(components, sympy.Expr):
        return func(components)
    return components.applyfunc(func)


def horizontal_gradient_at(value, d_x, d_fiber, gamma, fiber, kinds, representation):
    """
    Horizontal gradient of a field from its components and first partials.

    momentum:  ∂X/∂x^q + Σ p_a Γ^a_qb ∂X/∂p_b + Σ_upper Γ^i_qa X^a − Σ_lower Γ^b_qj X_b
    velocity:  ∂X/∂x^q − Σ v^a Γ^b_qa ∂X/∂v^b + the same connection terms,
               with Γ already composed with λ.

    ``d_x`` and ``d_fiber`` carry the derivative index last; so does the result.
    """
    if representation == MOMENTUM:
        pg = np.tensordot(fiber, gamma, axes=([0], [0]))             # [q, b]
        result = d_x + np.tensordot(d_fiber, pg, axes=([-1], [1]))
    else:
        gv = np.tensordot(gamma, fiber, axes=([2], [0]))             # [b, q]
        result = d_x - np.tensordot(d_fiber, gv, axes=([-1], [0]))

    for pos, kind in enumerate(kinds):
        if kind == 'u':
            term = np.tensordot(value, gamma, axes=([pos], [2]))    # rest + [i, q]
            result = result + np.moveaxis(term, -2, pos)
        else:
            term = np.tensordot(value, gamma, axes=([pos], [0]))    # rest + [q, j]
            result = result - np.moveaxis(term, -1, pos)
    return result


# ==========================================
# FIELDS
# ==========================================

@dataclass(frozen=True)
class FieldJet:
    """Numeric value of a field at a point together with its first partials."""
    value: np.ndarray
    d_x: np.ndarray
    d_fiber: np.ndarray
    kinds: str


@dataclass(frozen=True)
class ExtendedTensorField:
    n: int
    components: object
    kinds: str = ''
    representation: str = MOMENTUM

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation '{self.representation}'")
        if set(self.kinds) - {'u', 'l'}:
            raise ValueError(f"index kinds must be 'u' or 'l', got '{self.kinds}'")
        components = self.components
        if not isinstance(components, (sympy.Expr, sympy.NDimArray)):
            components = _sympify_nested(components)
            object.__setattr__(self, 'components', components)
        shape = () if isinstance(components, sympy.Expr) else components.shape
        if shape != (self.n,) * len(self.kinds):
            raise ValueError(f"components of shape {shape} do not match valence '{self.kinds}'")

    @classmethod
    def scalar(cls, n, text, representation=MOMENTUM):
        return cls(n, Expression.parse(text).expr, '', representation)

    @property
    def valence(self):
        return self.kinds.count('u'), self.kinds.count('l')

    @cached_property
    def coords(self):
        return Coordinates(self.n)

    @property
    def fiber_symbols(self):
        return self.coords.fiber(self.representation)

    @cached_property
    def _compiled(self):
        groups = (self.coords.x, self.fiber_symbols)
        return (
            CompiledArray(self.components, groups),
            CompiledArray(derivative_array(self.components, self.coords.x), groups),
            CompiledArray(derivative_array(self.components, self.fiber_symbols), groups),
        )

    def evaluate(self, x, fiber):
        return self._compiled[0](x, fiber)

    def jet(self, x, fiber):
        value, d_x, d_fiber = (compiled(x, fiber) for compiled in self._compiled)
        return FieldJet(value, d_x, d_fiber, self.kinds)


@dataclass(frozen=True)
class ComposedTensorField:
    """A velocity-representation field read in momentum representation through λ⁻¹."""
    field: ExtendedTensorField
    lagrangian: object

    representation = MOMENTUM

    @property
    def n(self):
        return self.field.n

    @property
    def kinds(self):
        return self.field.kinds

    def evaluate(self, x, p):
        q = inverse_legendre(self.lagrangian, CotangentState(x, p))
        return self.field.evaluate(q.x, q.v)


def vertical_gradient(f):
    """Fiber partials; adds an upper index in momentum and a lower one in velocity representation."""
    kind = 'u' if f.representation == MOMENTUM else 'l'
    components = derivative_array(f.components, f.fiber_symbols)
    return ExtendedTensorField(f.n, components, f.kinds + kind, f.representation)


def horizontal_gradient(f, gamma):
    if f.representation != gamma.representation:
        raise RepresentationMismatch(
            f"field is in {f.representation} representation, connection in {gamma.representation}")
    result = horizontal_gradient_at(
        _to_object(f.components),
        _to_object(derivative_array(f.components, f.coords.x)),
        _to_object(derivative_array(f.components, f.fiber_symbols)),
        _to_object(gamma.components),
        np.array(f.fiber_symbols, dtype=object),
        f.kinds,
        f.representation,
    )
    return ExtendedTensorField(f.n, _from_object(result), f.kinds + 'l', f.representation)


def convert_representation(f, lagrangian, hamiltonian=None):
    """
    X∘λ for momentum fields, X∘λ⁻¹ for velocity fields.

    The inverse composition is symbolic when an expression Hamiltonian
    supplies v = ∂H/∂p; otherwise it is evaluated pointwise through the
    inverse Legendre map.
    """
    if f.representation == MOMENTUM:
        substitution = lagrangian.momentum_substitution
        components = _map_components(f.components, lambda e: e.xreplace(substitution))
        return ExtendedTensorField(f.n, components, f.kinds, VELOCITY)

    if hamiltonian is not None and hamiltonian.velocity_substitution is not None:
        substitution = hamiltonian.velocity_substitution
        components = _map_components(f.components, lambda e: e.xreplace(substitution))
        return ExtendedTensorField(f.n, components, f.kinds, MOMENTUM)
    return ComposedTensorField(f, lagrangian)


# ==========================================
# CONNECTIONS
# ==========================================

def _symmetric_components(n, raw, what):
    if raw is None:
        return sympy.MutableDenseNDimArray.zeros(n, n, n).as_immutable()
    components = raw if isinstance(raw, sympy.NDimArray) else _sympify_nested(raw)
    if components.shape != (n, n, n):
        raise ValueError(f"{what} must have shape {(n, n, n)}, got {components.shape}")
    for k in range(n):
        for i in range(n):
            for j in range(i + 1, n):
                if sympy.expand(components[k, i, j] - components[k, j, i]) != 0:
                    raise ValueError(f"{what} is not symmetric in its lower indices at [{k}][{i}][{j}]")
    return components


@dataclass(frozen=True)
class ConnectionShift:
    """A symmetric T^k_ij added to a connection."""
    n: int
    components: object = None

    def __post_init__(self):
        object.__setattr__(self, 'components', _symmetric_components(self.n, self.components, 'connection shift'))

    @classmethod
    def random(cls, n, rng, scale=0.5):
        """Random polynomial shift, affine in x and p, symmetric in the lower indices."""
        coords = Coordinates(n)
        variables = coords.x + coords.p
        nested = [[[0] * n for _ in range(n)] for _ in range(n)]
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    coefficients = np.round(scale * rng.standard_normal(len(variables) + 1), 6)
                    entry = sympy.Float(coefficients[0]) + sum(
                        sympy.Float(c) * s for c, s in zip(coefficients[1:], variables))
                    nested[k][i][j] = nested[k][j][i] = entry
        return cls(n, sympy.Array(nested))


@dataclass(frozen=True)
class ExtendedConnection:
    n: int
    components: object = None
    representation: str = MOMENTUM

    def __post_init__(self):
        object.__setattr__(self, 'components', _symmetric_components(self.n, self.components, 'connection'))

    @classmethod
    def flat(cls, n):
        return cls(n)

    @property
    def symmetric(self):
        return True

    @cached_property
    def coords(self):
        return Coordinates(self.n)

    @property
    def fiber_symbols(self):
        return self.coords.fiber(self.representation)

    @cached_property
    def is_flat(self):
        return all(entry == 0 for entry in sympy.flatten(self.components))

    def shifted(self, shift):
        if shift.n != self.n:
            raise ValueError("connection shift has the wrong dimension")
        return ExtendedConnection(self.n, self.components + shift.components, self.representation)

    def in_velocity(self, lagrangian):
        """Γ∘λ, for horizontal gradients in velocity representation."""
        if self.representation == VELOCITY:
            return self
        substitution = lagrangian.momentum_substitution
        return ExtendedConnection(
            self.n, self.components.applyfunc(lambda e: e.xreplace(substitution)), VELOCITY)

    @cached_property
    def _compiled(self):
        groups = (self.coords.x, self.fiber_symbols)
        return (
            CompiledArray(self.components, groups),
            CompiledArray(derivative_array(self.components, self.coords.x), groups),
            CompiledArray(derivative_array(self.components, self.fiber_symbols), groups),
        )

    def values(self, x, fiber):
        if self.is_flat:
            return np.zeros((self.n,) * 3)
        return self._compiled[0](x, fiber)

    def jet(self, x, fiber):
        """Γ, ∂Γ/∂x and ∂Γ/∂(fiber) at a point, derivative index last."""
        if self.is_flat:
            zeros = np.zeros((self.n,) * 4)
            return np.zeros((self.n,) * 3), zeros, zeros.copy()
        return tuple(compiled(x, fiber) for compiled in self._compiled)


# ==========================================
# PROJECTOR AND CURVATURE
# ==========================================

@dataclass(frozen=True)
class Projector:
    P: np.ndarray

    def apply_vector(self, X):
        return self.P @ X

    def apply_covector(self, w):
        return w @ self.P

    @property
    def idempotency_error(self):
        return float(np.max(np.abs(self.P @ self.P - self.P)))


def _momentum_guard(p, omega):
    if not np.any(p):
        raise ZeroMomentum("momentum covector vanishes", quantity='p')
    if abs(omega) < lab_setting('SINGULAR_TOL'):
        raise DegenerateOmega("Ω vanishes at this point", quantity='Ω', omega=omega)


def projector(H, c):
    """P^r_s = δ^r_s − p_s ∇̃^r H / Ω."""
    jet = H.evaluate(c, order=1)
    omega = float(c.p @ jet.H_p)
    _momentum_guard(c.p, omega)
    return Projector(np.eye(len(c.p)) - np.outer(jet.H_p, c.p) / omega)


@dataclass(frozen=True)
class CurvaturePair:
    D: np.ndarray
    R: np.ndarray


def curvature_tensors(gamma, c):
    G, G_x, G_p = gamma.jet(c.x, c.p)
    p = c.p
    D = -np.transpose(G_p, (0, 3, 1, 2))

    pg = np.einsum('a,ami->mi', p, G)
    R = (
        np.einsum('kjri->krij', G_x)
        - np.einsum('kirj->krij', G_x)
        + np.einsum('kim,mjr->krij', G, G)
        - np.einsum('kjm,mir->krij', G, G)
        + np.einsum('mi,kjrm->krij', pg, G_p)
        - np.einsum('mj,kirm->krij', pg, G_p)
    )
    return CurvaturePair(D=D, R=R)


# ==========================================
# GRADIENT JETS OF H
# ==========================================

def hamiltonian_gradient_jets(jet, gamma_jet, p):
    """
    Numeric jets of ∇̃H (one upper index) and ∇H (one lower index).

    ``jet`` must carry second partials; ``gamma_jet`` is (Γ, ∂Γ/∂x, ∂Γ/∂p).
    """
    G, G_x, G_p = gamma_jet
    pgG = np.einsum('a,ajb->jb', p, G)
    vertical = FieldJet(jet.H_p, jet.H_xp.T, jet.H_pp, 'u')
    horizontal = FieldJet(
        value=jet.H_x + pgG @ jet.H_p,
        d_x=jet.H_xx + np.einsum('a,ajbi,b->ji', p, G_x, jet.H_p) + pgG @ jet.H_xp.T,
        d_fiber=(
            jet.H_xp
            + np.einsum('cjb,b->jc', G, jet.H_p)
            + np.einsum('a,ajbc,b->jc', p, G_p, jet.H_p)
            + pgG @ jet.H_pp
        ),
        kinds='l',
    )
    return vertical, horizontal


def gradient_of_jet(field_jet, G, p):
    return horizontal_gradient_at(field_jet.value, field_jet.d_x, field_jet.d_fiber, G, p, field_jet.kinds, MOMENTUM)


def commutator_residual(H, gamma, c):
    """
    Residuals of the commutator identities

        [∇_i, ∇_j] H − Σ p_k R̃^k_{sij} ∇̃^s H
        [∇_i, ∇̃^j] H − Σ p_k D^{kj}_{is} ∇̃^s H

    both indexed [i][j].
    """
    jet = H.evaluate(c, order=2)
    gamma_jet = gamma.jet(c.x, c.p)
    G = gamma_jet[0]
    vertical, horizontal = hamiltonian_gradient_jets(jet, gamma_jet, c.p)
    curvature = curvature_tensors(gamma, c)

    second = gradient_of_jet(horizontal, G, c.p)        # [j, i] = ∇_i ∇_j H
    spatial = second.T - second
    spatial -= np.einsum('k,ksij,s->ij', c.p, curvature.R, jet.H_p)

    mixed_h = gradient_of_jet(vertical, G, c.p)         # [j, i] = ∇_i ∇̃^j H
    mixed = mixed_h.T - horizontal.d_fiber              # d_fiber[i, j] = ∇̃^j ∇_i H
    mixed -= np.einsum('k,kjis,s->ij', c.p, curvature.D, jet.H_p)
    return spatial, mixed


# ==========================================
# CONCORDANCE
# ==========================================

def concordance_residual(L, gamma, q):
    """C_qs = ∇_q ∇̃_s L in velocity representation, indexed [q][s]."""
    jet = L.jet(q, order=2)
    G = gamma.values(q.x, jet.L_v) if gamma.representation == MOMENTUM else gamma.values(q.x, q.v)
    result = horizontal_gradient_at(jet.L_v, jet.L_vx, jet.L_vv, G, q.v, 'l', VELOCITY)
    return result.T


def concordance_residual_momentum(H, gamma, c):
    """∇_q ∇̃^s H, indexed [q][s]; equals −Σ_k g^{sk} C_qk at the paired point."""
    jet = H.evaluate(c, order=2)
    G = gamma.values(c.x, c.p)
    vertical = FieldJet(jet.H_p, jet.H_xp.T, jet.H_pp, 'u')
    return gradient_of_jet(vertical, G, c.p).T


def representation_defect(X, L, gamma, q):
    """
    ∇_q(X∘λ) − (∇_q X)∘λ − Σ_s C_qs ∇̃^s X∘λ for a momentum field X.

    Vanishes for every connection; with a concordant one the middle
    difference vanishes by itself.
    """
    c = CotangentState(q.x, L.momentum(q.x, q.v))
    pulled = horizontal_gradient(convert_representation(X, L), gamma.in_velocity(L)).evaluate(q.x, q.v)
    pushed = horizontal_gradient(X, gamma).evaluate(c.x, c.p)
    vertical = vertical_gradient(X).evaluate(c.x, c.p)
    C = concordance_residual(L, gamma, q)
    return pulled - pushed - np.tensordot(vertical, C, axes=([-1], [1]))


# ==========================================
# ALONG CURVES
# ==========================================

def covariant_time_derivative(times, base, fiber, series, gamma, kinds):
    """
    ∇_t X along a lifted curve: dX/dt plus the connection terms evaluated on
    the lift (x(t), fiber(t)). Time derivatives by second-order differences.
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    if times.shape[0] < 3:
        raise InsufficientSamples(f"need at least 3 samples, got {times.shape[0]}")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ValueError("covariant time derivative needs a uniform parameter grid")
    h = steps[0]

    dX = np.gradient(series, h, axis=0, edge_order=2)
    dx = np.gradient(np.asarray(base, dtype=float), h, axis=0, edge_order=2)
    result = dX.copy()
    for k in range(times.shape[0]):
        G = gamma.values(base[k], fiber[k])
        X = series[k]
        for pos, kind in enumerate(kinds):
            if kind == 'u':
                A = np.einsum('m,ima->ia', dx[k], G)
                result[k] += np.moveaxis(np.tensordot(X, A, axes=([pos], [1])), -1, pos)
            else:
                B = np.einsum('m,bmj->bj', dx[k], G)
                result[k] -= np.moveaxis(np.tensordot(X, B, axes=([pos], [0])), -1, pos)
    return result
