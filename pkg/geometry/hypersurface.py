"""
Parametric hypersurfaces and their shifts along trajectories.

A hypersurface is a chart map x(y) with m = n − 1 parameters over a box.
Its normal covector is the cofactor vector of the tangent frame, scaled to
unit Euclidean length with one global sign fixed at the base point. The
initial momentum of the shift is p = ν(y) n(y), where ν solves

    ∂ν/∂y^i = −(ν²/Ω) Σ_s ∂n_s/∂y^i ∂H/∂p_s − ν Σ_s (∂H/∂x^s / Ω − Q_s) τ^s_i

evaluated at p = ν n. All derivatives in y are central differences with
step SURFACE_FD_STEP.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import sympy

from .calculus import CotangentState
from .conf import lab_setting
from .dynamics import integrate
from .exceptions import (
    DegenerateOmega,
    DimensionTooSmall,
    GeometryError,
    RankDeficient,
    VanishingNu,
    ZeroMomentum,
    ZeroNu,
)
from .expressions import CompiledArray, Coordinates, derivative_array
from .tensorfields import _sympify_nested, projector

logger = logging.getLogger(__name__)

ORIENTATION_TOL = 1e-12


# ==========================================
# SURFACES
# ==========================================

@dataclass(frozen=True)
class Hypersurface:
    n: int
    chart: object
    box: tuple
    base: Optional[tuple] = None

    def __post_init__(self):
        chart = self.chart
        if not isinstance(chart, sympy.NDimArray):
            chart = _sympify_nested(list(chart))
        if chart.shape != (self.n,):
            raise ValueError(f"chart map needs {self.n} components, got shape {chart.shape}")
        allowed = set(self.coords.y)
        for entry in chart:
            stray = sympy.sympify(entry).free_symbols - allowed
            if stray:
                names = sorted(s.name for s in stray)
                raise ValueError(f"chart map may only use {sorted(s.name for s in allowed)}, found {names}")
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(box) != self.m:
            raise ValueError(f"parameter box needs {self.m} intervals, got {len(box)}")
        if any(hi <= lo for lo, hi in box):
            raise ValueError(f"parameter box has an empty interval: {box}")
        base = self.base
        if base is None:
            base = tuple(0.5 * (lo + hi) for lo, hi in box)
        base = tuple(float(b) for b in base)
        if len(base) != self.m:
            raise ValueError(f"base point needs {self.m} parameters, got {len(base)}")
        object.__setattr__(self, 'chart', chart)
        object.__setattr__(self, 'box', box)
        object.__setattr__(self, 'base', base)

    @property
    def m(self):
        return self.n - 1

    @cached_property
    def coords(self):
        return Coordinates(self.n)

    @cached_property
    def _compiled(self):
        groups = (self.coords.y,)
        return (
            CompiledArray(self.chart, groups),
            CompiledArray(derivative_array(self.chart, self.coords.y), groups),
        )

    def point(self, y):
        return self._compiled[0](y)

    def frame(self, y):
        """τ^s_i = ∂x^s/∂y^i, stored [s][i]."""
        return self._compiled[1](y)

    def axes(self, samples):
        return tuple(np.linspace(lo, hi, samples) for lo, hi in self.box)

    @cached_property
    def orientation(self):
        raw = _cofactor_normal(tangent_frame(self, self.base))
        leading = next((value for value in raw if abs(value) > ORIENTATION_TOL), 1.0)
        return 1.0 if leading > 0 else -1.0


def tangent_frame(S, y):
    frame = S.frame(np.asarray(y, dtype=float))
    if np.linalg.matrix_rank(frame) < S.m:
        raise RankDeficient("tangent frame is rank deficient", y=list(np.atleast_1d(y)))
    return frame


def _cofactor_normal(frame):
    n = frame.shape[0]
    normal = np.empty(n)
    for s in range(n):
        minor = np.delete(frame, s, axis=0)
        normal[s] = (-1) ** s * np.linalg.det(minor)
    return normal


def normal_covector(S, y):
    raw = _cofactor_normal(tangent_frame(S, y))
    norm = np.linalg.norm(raw)
    if norm < ORIENTATION_TOL:
        raise RankDeficient("normal covector vanishes", y=list(np.atleast_1d(y)))
    return S.orientation * raw / norm


def normal_derivatives(S, y, delta=None):
    """∂n_s/∂y^i by central differences, stored [i][s]."""
    delta = lab_setting('SURFACE_FD_STEP') if delta is None else delta
    y = np.asarray(y, dtype=float)
    result = np.empty((S.m, S.n))
    for i in range(S.m):
        step = np.zeros(S.m)
        step[i] = delta
        result[i] = (normal_covector(S, y + step) - normal_covector(S, y - step)) / (2 * delta)
    return result


# ==========================================
# THE ν SYSTEM
# ==========================================

def nu_rhs(S, system, nu, y, delta=None):
    """Right-hand sides ψ_i(ν, y) of the Pfaff system for ν."""
    y = np.asarray(y, dtype=float)
    normal = normal_covector(S, y)
    frame = tangent_frame(S, y)
    c = CotangentState(S.point(y), nu * normal)
    jet = system.H.evaluate(c, order=1)
    omega = float(c.p @ jet.H_p)
    if abs(omega) < lab_setting('SINGULAR_TOL'):
        raise DegenerateOmega("Ω vanishes on the initial surface", y=y.tolist(), nu=nu)
    Q = system.Q.evaluate(c.x, c.p)
    dn = normal_derivatives(S, y, delta)
    return -(nu ** 2 / omega) * (dn @ jet.H_p) - nu * ((jet.H_x / omega - Q) @ frame)


def _nu_step(S, system, nu, y, axis, h):
    def psi(value, point):
        return nu_rhs(S, system, value, point)[axis]

    step = np.zeros(S.m)
    step[axis] = h
    k1 = psi(nu, y)
    k2 = psi(nu + 0.5 * h * k1, y + 0.5 * step)
    k3 = psi(nu + 0.5 * h * k2, y + 0.5 * step)
    k4 = psi(nu + h * k3, y + step)
    result = nu + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if abs(result) < lab_setting('VANISHING_NU') or not np.isfinite(result):
        raise VanishingNu("ν vanished while integrating", y=(y + step).tolist())
    return result


@dataclass(frozen=True, eq=False)
class NuField:
    surface: Hypersurface
    system: object
    axes: tuple
    values: np.ndarray
    base_index: tuple
    nu0: float
    path_discrepancy: Optional[float] = None
    constant: bool = False

    @classmethod
    def constant_field(cls, surface, nu):
        if nu == 0:
            raise ZeroNu("ν must be nonzero")
        axes = tuple(np.array([b]) for b in surface.base)
        return cls(surface, None, axes, np.full((1,) * surface.m, float(nu)),
                   (0,) * surface.m, float(nu), 0.0, constant=True)

    @property
    def y0(self):
        return tuple(float(axis[index]) for axis, index in zip(self.axes, self.base_index))

    def at(self, y):
        """ν at any parameter point: one RK4 step per axis from the nearest node."""
        if self.constant:
            return self.nu0
        y = np.asarray(y, dtype=float)
        index = tuple(int(np.argmin(np.abs(axis - value))) for axis, value in zip(self.axes, y))
        nu = float(self.values[index])
        current = np.array([axis[i] for axis, i in zip(self.axes, index)])
        for axis in range(self.surface.m):
            h = y[axis] - current[axis]
            if h != 0.0:
                nu = _nu_step(self.surface, self.system, nu, current, axis, h)
                current[axis] = y[axis]
        return nu

    def stats(self):
        return {
            'nu0': self.nu0,
            'min': float(np.min(self.values)),
            'max': float(np.max(self.values)),
            'min_abs': float(np.min(np.abs(self.values))),
            'path_discrepancy': self.path_discrepancy,
        }


def _snap_base(axes, base):
    return tuple(int(np.argmin(np.abs(axis - b))) for axis, b in zip(axes, base))


def _integrate_line(S, system, axes, values, start, axis):
    line = axes[axis]
    y = np.array([a[i] for a, i in zip(axes, start)])
    for direction in (1, -1):
        index = list(start)
        point = y.copy()
        nu = values[start]
        while 0 <= index[axis] + direction < len(line):
            target = line[index[axis] + direction]
            try:
                nu = _nu_step(S, system, nu, point, axis, target - point[axis])
            except GeometryError as exc:
                raise exc.with_context(node=tuple(index))
            index[axis] += direction
            point[axis] = target
            values[tuple(index)] = nu


def _sweep(S, system, axes, base_index, nu0, order):
    shape = tuple(len(axis) for axis in axes)
    values = np.full(shape, np.nan)
    values[base_index] = nu0
    for axis in order:
        others = [k for k in range(len(shape)) if k != axis]
        for idx in np.ndindex(*[shape[k] for k in others]):
            start = list(base_index)
            for k, i in zip(others, idx):
                start[k] = i
            start = tuple(start)
            if np.isnan(values[start]):
                continue
            _integrate_line(S, system, axes, values, start, axis)
    return values


def solve_nu_curve(S, system, nu0, samples=None):
    """ν along a curve (n = 2) by RK4 over the parameter grid, both ways from the base node."""
    if S.n != 2:
        raise ValueError("solve_nu_curve is for curves in the plane; use solve_nu_grid")
    if nu0 == 0:
        raise ZeroNu("ν₀ must be nonzero")
    samples = samples or lab_setting('GRID_SAMPLES')
    axes = S.axes(samples)
    base_index = _snap_base(axes, S.base)
    values = _sweep(S, system, axes, base_index, float(nu0), order=(0,))
    logger.debug("ν curve solved on %d samples, range [%g, %g]", samples, values.min(), values.max())
    return NuField(S, system, axes, values, base_index, float(nu0))


def solve_nu_grid(S, system, nu0, y0=None, samples=None):
    """
    ν on the parameter grid for m ≥ 2, integrated axis by axis from the base
    node in the order y¹, y², …; the reversed order is integrated too and
    the largest difference is kept as the path discrepancy.
    """
    if S.m < 2:
        raise DimensionTooSmall("solve_nu_grid needs at least two parameters", m=S.m)
    if nu0 == 0:
        raise ZeroNu("ν₀ must be nonzero")
    samples = samples or lab_setting('GRID_SAMPLES')
    axes = S.axes(samples)
    base_index = _snap_base(axes, S.base if y0 is None else y0)
    order = tuple(range(S.m))
    forward = _sweep(S, system, axes, base_index, float(nu0), order)
    backward = _sweep(S, system, axes, base_index, float(nu0), order[::-1])
    discrepancy = float(np.max(np.abs(forward - backward)))
    logger.info("ν grid solved on %s nodes, path discrepancy %.3e", forward.shape, discrepancy)
    return NuField(S, system, axes, forward, base_index, float(nu0), discrepancy)


def pfaff_compatibility_residual(S, system, nu_field, y, delta=None):
    """θ_ij − θ_ji with θ_ij = ∂ψ_i/∂y^j + ∂ψ_i/∂ν ψ_j."""
    if S.m == 1:
        return np.zeros((0, 0))
    delta = lab_setting('SURFACE_FD_STEP') if delta is None else delta
    y = np.asarray(y, dtype=float)
    nu = nu_field.at(y)
    psi = nu_rhs(S, system, nu, y, delta)

    d_nu = delta * max(1.0, abs(nu))
    dpsi_dnu = (nu_rhs(S, system, nu + d_nu, y, delta) - nu_rhs(S, system, nu - d_nu, y, delta)) / (2 * d_nu)
    theta = np.outer(dpsi_dnu, psi)
    for j in range(S.m):
        step = np.zeros(S.m)
        step[j] = delta
        theta[:, j] += (nu_rhs(S, system, nu, y + step, delta) - nu_rhs(S, system, nu, y - step, delta)) / (2 * delta)
    return theta - theta.T


def deviation_rate_at_surface(S, system, nu_field, y, delta=None):
    """φ̇_i at t = 0; it vanishes wherever ν solves its Pfaff system."""
    delta = lab_setting('SURFACE_FD_STEP') if delta is None else delta
    y = np.asarray(y, dtype=float)
    nu = nu_field.at(y)
    if nu == 0:
        raise ZeroNu("ν vanishes at this point", y=y.tolist())
    grad = np.empty(S.m)
    for i in range(S.m):
        step = np.zeros(S.m)
        step[i] = delta
        grad[i] = (nu_field.at(y + step) - nu_field.at(y - step)) / (2 * delta)
    return (nu_rhs(S, system, nu, y, delta) - grad) / nu


# ==========================================
# SHIFTS
# ==========================================

@dataclass(frozen=True, eq=False)
class DeviationSeries:
    t: np.ndarray
    phi: np.ndarray

    @property
    def max_abs(self):
        return float(np.max(np.abs(self.phi))) if self.phi.size else 0.0


@dataclass(frozen=True, eq=False)
class ShiftFamily:
    t: np.ndarray
    nodes: np.ndarray
    nu: np.ndarray
    x: np.ndarray
    p: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    delta: float
    h: float

    @property
    def deviations(self):
        return [DeviationSeries(self.t, self.phi[k]) for k in range(self.nodes.shape[0])]

    @property
    def max_phi(self):
        return float(np.max(np.abs(self.phi))) if self.phi.size else 0.0

    def max_phi_until(self, t_limit):
        mask = np.abs(self.t) <= abs(t_limit) + 1e-12
        return float(np.max(np.abs(self.phi[:, mask, :])))

    @property
    def header(self):
        n, m = self.x.shape[2], self.phi.shape[2]
        return (['t', 'node'] + [f'y{i}' for i in range(1, m + 1)]
                + [f'x{i}' for i in range(1, n + 1)] + [f'p{i}' for i in range(1, n + 1)]
                + [f'phi{i}' for i in range(1, m + 1)])

    def to_rows(self):
        rows = []
        for node, y in enumerate(self.nodes):
            for k, t in enumerate(self.t):
                rows.append([float(t), node] + y.tolist() + self.x[node, k].tolist()
                            + self.p[node, k].tolist() + self.phi[node, k].tolist())
        return rows


def _launch(S, system, nu_field, y, t_end, h):
    nu = nu_field.at(y)
    c = CotangentState(S.point(y), nu * normal_covector(S, y))
    return nu, integrate(system, c, t_end, h)


def shift_nodes(S, nodes=None):
    nodes = nodes or lab_setting('SHIFT_NODES')
    axes = S.axes(nodes)
    return np.array([[axis[i] for axis, i in zip(axes, idx)] for idx in np.ndindex(*(nodes,) * S.m)])


def run_shift(S, system, nu_field, t_end, h=None, nodes=None, delta=None):
    """
    Shift S along the trajectories started at p = ν n.

    Each node is flanked by trajectories at y ± δ e_i; τ_i(t) is their
    central difference and φ_i(t) = Σ_s p_s(t) τ^s_i(t).
    """
    delta = lab_setting('SURFACE_FD_STEP') if delta is None else delta
    grid = shift_nodes(S, nodes)
    xs, ps, taus, nus = [], [], [], []
    t = None
    for index, y in enumerate(grid):
        try:
            nu, centre = _launch(S, system, nu_field, y, t_end, h)
            tau = np.empty(centre.x.shape + (S.m,))
            for i in range(S.m):
                step = np.zeros(S.m)
                step[i] = delta
                _, plus = _launch(S, system, nu_field, y + step, t_end, h)
                _, minus = _launch(S, system, nu_field, y - step, t_end, h)
                tau[:, :, i] = (plus.x - minus.x) / (2 * delta)
        except GeometryError as exc:
            raise exc.with_context(node=index, y=y.tolist())
        t = centre.t
        xs.append(centre.x)
        ps.append(centre.p)
        taus.append(tau)
        nus.append(nu)

    x, p, tau = np.array(xs), np.array(ps), np.array(taus)
    phi = np.einsum('nks,nksi->nki', p, tau)
    family = ShiftFamily(t=t, nodes=grid, nu=np.array(nus), x=x, p=p, tau=tau, phi=phi,
                         delta=delta, h=float(t[1] - t[0]))
    logger.info("Shift over %d nodes: max |φ| = %.3e", grid.shape[0], family.max_phi)
    return family


# ==========================================
# SECOND FUNDAMENTAL FORM
# ==========================================

@dataclass(frozen=True, eq=False)
class SecondFundamentalForm:
    b: np.ndarray
    beta: np.ndarray
    frame: np.ndarray

    @property
    def symmetry_defect(self):
        return float(np.max(np.abs(self.b - self.b.T)))

    def __call__(self, X, Y):
        return float(X @ self.b @ Y)


def second_fundamental_form(S, system, nu_field, gamma, y, delta=None):
    """
    b = −P*∘f∘P with f(τ) = ∇_τ p along the lift p = ν n, and β_ij = b(τ_i, τ_j).
    """
    delta = lab_setting('SURFACE_FD_STEP') if delta is None else delta
    y = np.asarray(y, dtype=float)
    frame = tangent_frame(S, y)
    p = nu_field.at(y) * normal_covector(S, y)
    c = CotangentState(S.point(y), p)

    dp = np.empty((S.n, S.m))
    for i in range(S.m):
        step = np.zeros(S.m)
        step[i] = delta
        plus = nu_field.at(y + step) * normal_covector(S, y + step)
        minus = nu_field.at(y - step) * normal_covector(S, y - step)
        dp[:, i] = (plus - minus) / (2 * delta)

    G = gamma.values(c.x, c.p)
    xi = dp - np.einsum('a,asr,si->ri', p, G, frame)
    f_map = xi @ np.linalg.pinv(frame)
    P = projector(system.H, c).P
    b = -P.T @ f_map @ P
    beta = frame.T @ b @ frame
    return SecondFundamentalForm(b=b, beta=beta, frame=frame)


def surface_with_prescribed_form(x0, p, beta, nu0, box=None):
    """
    A graph surface through x0, tangent there to the null space of p, whose
    second fundamental form at x0 is β:

        x(y) = x0 + Σ y^i e_i + z(y) e_n,    z = (1/(2ν₀)) Σ β_ij y^i y^j

    e_1..e_m span the null space of p; ⟨p|e_n⟩ = ν₀.
    """
    p = np.asarray(p, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = p.shape[0]
    m = n - 1
    if not np.any(p):
        raise ZeroMomentum("momentum covector vanishes")
    if nu0 == 0:
        raise ZeroNu("ν₀ must be nonzero")
    if beta.shape != (m, m) or not np.allclose(beta, beta.T, atol=1e-12):
        raise ValueError("β must be a symmetric (n−1)×(n−1) matrix")

    _, _, vt = np.linalg.svd(p.reshape(1, -1))
    tangents = vt[1:]
    transversal = nu0 * p / float(p @ p)

    y = Coordinates(n).y
    z = sum(sympy.Float(beta[i, j]) * y[i] * y[j] for i in range(m) for j in range(m)) / (2 * sympy.Float(nu0))
    chart = []
    for s in range(n):
        entry = sympy.Float(x0[s]) + sum(sympy.Float(tangents[i, s]) * y[i] for i in range(m))
        chart.append(entry + sympy.Float(transversal[s]) * z)
    box = box or ((-0.5, 0.5),) * m
    return Hypersurface(n, sympy.Array(chart), box, base=(0.0,) * m)
