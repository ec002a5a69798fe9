"""
Normality residuals, deviation-equation coefficients and variational
integration for Newtonian systems in momentum form.

Notation at a point (x, p):
    Ω = Σ p_s ∂H/∂p_s,  F^s = ∇̃^s H / Ω,  G_s = ∇_s H / Ω − Q_s
    P^r_s = δ^r_s − p_s F^r,  |p|² = Σ p_a g^{ab} p_b,  p^q = Σ g^{qk} p_k

Storage: ∇_s Q_r as [r][s], ∇̃^q Q_s as [s][q], ∇_r ∇̃^q H as [q][r],
∇_r ∇_s H as [s][r], ∇̃^r ∇_s H as [s][r].
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .calculus import CotangentState, TangentState, invert_metric
from .conf import lab_setting
from .dynamics import integrate, rhs_v
from .exceptions import (
    DegenerateOmega,
    DimensionTooSmall,
    InsufficientSamples,
    ZeroMomentum,
)
from .hypersurface import normal_covector, second_fundamental_form, tangent_frame
from .tensorfields import (
    MOMENTUM,
    VELOCITY,
    curvature_tensors,
    gradient_of_jet,
    hamiltonian_gradient_jets,
    horizontal_gradient_at,
)

logger = logging.getLogger(__name__)


# ==========================================
# POINT DATA
# ==========================================

class PointJets:
    """Everything the residual formulas need at one cotangent point."""

    def __init__(self, system, gamma, c):
        self.c = c
        p = self.p = c.p
        if not np.any(p):
            raise ZeroMomentum("momentum covector vanishes", quantity='p')
        jet = self.jet = system.H.evaluate(c, order=2)
        omega = self.omega = float(p @ jet.H_p)
        if abs(omega) < lab_setting('SINGULAR_TOL'):
            raise DegenerateOmega("Ω vanishes at this point", quantity='Ω', omega=omega)

        self.gamma = gamma
        gamma_jet = self.gamma_jet = gamma.jet(c.x, p)
        G = self.G = gamma_jet[0]
        self.Q, self.Q_x, self.Q_p = system.Q.jet(c.x, p)

        vertical, horizontal = hamiltonian_gradient_jets(jet, gamma_jet, p)
        self.grad_H = horizontal.value
        self.hess_H = gradient_of_jet(horizontal, G, p)           # [s][r] = ∇_r ∇_s H
        self.vgrad_grad_H = horizontal.d_fiber                    # [s][r] = ∇̃^r ∇_s H
        self.grad_vgrad_H = gradient_of_jet(vertical, G, p)       # [q][r] = ∇_r ∇̃^q H

        self.vgrad_omega = jet.H_p + jet.H_pp @ p
        omega_x = jet.H_xp @ p
        pgG = np.einsum('a,ajb->jb', p, G)
        self.grad_omega = omega_x + pgG @ self.vgrad_omega

        self.grad_Q = horizontal_gradient_at(self.Q, self.Q_x, self.Q_p, G, p, 'l', MOMENTUM)

        self.P = np.eye(p.shape[0]) - np.outer(jet.H_p, p) / omega
        self.p_up = jet.H_pp @ p
        self.p_norm2 = float(p @ self.p_up)

    @property
    def n(self):
        return self.p.shape[0]

    @cached_property
    def F(self):
        return self.jet.H_p / self.omega

    @cached_property
    def Gvec(self):
        return self.grad_H / self.omega - self.Q

    @cached_property
    def W(self):
        """W^r = Σ_s (∇̃^s H / Ω)(∇̃^r Q_s + ∇̃^r Ω Q_s / Ω)."""
        inner = self.Q_p + np.outer(self.Q, self.vgrad_omega) / self.omega
        return self.F @ inner

    @cached_property
    def curvature(self):
        return curvature_tensors(self.gamma, self.c)


# ==========================================
# WEAK NORMALITY
# ==========================================

@dataclass(frozen=True, eq=False)
class WeakResiduals:
    weakA: np.ndarray
    weakB: np.ndarray
    weak_b_printed: np.ndarray

    @property
    def printed_agreement(self):
        return float(np.max(np.abs(self.weakB - self.weak_b_printed)))


@dataclass(frozen=True, eq=False)
class DeviationODECoeffs:
    alpha: np.ndarray
    beta_cov: np.ndarray
    eta: np.ndarray
    sigma: float
    A: float
    Bcoef: float


def _coefficients(data):
    omega, H_p, Q = data.omega, data.jet.H_p, data.Q
    K = (float(data.grad_omega @ H_p) / omega ** 3
         + float(data.vgrad_omega @ (-data.grad_H / omega + Q)) / omega ** 2)
    alpha = K * H_p - data.W
    beta_cov = (
        K * data.grad_H
        + (data.grad_Q @ H_p - H_p @ data.grad_Q - data.grad_omega * float(Q @ H_p) / omega) / omega
        - data.Q_p @ data.Gvec
    )
    p_alpha = float(data.p @ alpha)
    eta = beta_cov - p_alpha * data.Gvec
    sigma = float(H_p @ eta) / omega
    return DeviationODECoeffs(alpha=alpha, beta_cov=beta_cov, eta=eta, sigma=sigma, A=-p_alpha, Bcoef=sigma)


def deviation_coefficients(system, gamma, c):
    return _coefficients(PointJets(system, gamma, c))


def _weak_b_printed(data):
    omega, Q, F, Gvec = data.omega, data.Q, data.F, data.Gvec
    ratio = data.grad_omega / omega
    # group[r][s]: ∇_s Q_r + (∇_s Ω/Ω) Q_r − ∇_r Q_s + (∇_r Ω/Ω) Q_s
    group = data.grad_Q + np.outer(Q, ratio) - data.grad_Q.T + np.outer(ratio, Q)
    term = group @ F
    term += Gvec * float(data.p @ data.W)
    term -= (data.Q_p + np.outer(Q, data.vgrad_omega) / omega) @ Gvec
    return term @ data.P


def _weak(data, coefficients):
    weakA = data.P @ data.W
    weakB = coefficients.eta @ data.P
    return WeakResiduals(weakA=weakA, weakB=weakB, weak_b_printed=_weak_b_printed(data))


def weak_residuals(system, gamma, c):
    """Left-hand sides of the two weak normality equations, both indexed by q."""
    data = PointJets(system, gamma, c)
    return _weak(data, _coefficients(data))


# ==========================================
# ADDITIONAL NORMALITY
# ==========================================

@dataclass(frozen=True, eq=False)
class OperatorB:
    B: np.ndarray
    lambda_B: float

    def apply(self, X):
        return self.B @ X


def _additional(data):
    if data.n < 3:
        raise DimensionTooSmall("additional normality equations need n ≥ 3", n=data.n)
    omega, Q, P = data.omega, data.Q, data.P
    grad_H = data.grad_H

    # M[r][s], the bracket of the symmetric additional equation before projection
    M = (
        data.p_norm2 * np.outer(grad_H, Q) / omega ** 2
        - np.outer(data.p @ data.grad_vgrad_H, Q) / omega
        - data.grad_Q.T
        + np.outer(grad_H, data.Q_p @ data.p) / omega
        + np.outer(grad_H, Q) / omega
        + np.outer(data.Q_p @ data.p, Q)
    )
    add_sym = np.einsum('si,rs,rj->ij', P, M - M.T, P)

    N = np.outer(data.p_up, Q) / omega + data.Q_p.T
    B = P @ N @ P
    lambda_B = float(np.trace(B)) / (data.n - 1)
    return add_sym, OperatorB(B=B, lambda_B=lambda_B), B - lambda_B * P


def additional_residuals(system, gamma, c):
    """(addSym, operator B with λ_B, addProj = B − λ_B P)."""
    return _additional(PointJets(system, gamma, c))


# ==========================================
# REPORTS
# ==========================================

def _norm(value):
    if value is None:
        return None
    if not np.size(value):
        return 0.0
    return float(np.max(np.abs(value)))


@dataclass(frozen=True, eq=False)
class PointResiduals:
    x: np.ndarray
    p: np.ndarray
    weakA: np.ndarray
    weakB: np.ndarray
    weak_b_printed: np.ndarray
    addSym: Optional[np.ndarray] = None
    addProj: Optional[np.ndarray] = None
    lambda_B: Optional[float] = None

    def norms(self):
        return {
            'weakA': _norm(self.weakA),
            'weakB': _norm(self.weakB),
            'weakB_printed': _norm(self.weak_b_printed),
            'addSym': _norm(self.addSym),
            'addProj': _norm(self.addProj),
        }

    def as_dict(self):
        as_list = lambda value: None if value is None else np.asarray(value).tolist()
        return {
            'x': self.x.tolist(),
            'p': self.p.tolist(),
            'weakA': as_list(self.weakA),
            'weakB': as_list(self.weakB),
            'weakB_printed': as_list(self.weak_b_printed),
            'addSym': as_list(self.addSym),
            'addProj': as_list(self.addProj),
            'lambda_B': self.lambda_B,
            'norms': self.norms(),
        }


@dataclass
class ResidualReport:
    points: list = field(default_factory=list)

    def max_norms(self):
        keys = ('weakA', 'weakB', 'weakB_printed', 'addSym', 'addProj')
        result = {}
        for key in keys:
            values = [point.norms()[key] for point in self.points]
            values = [value for value in values if value is not None]
            result[key] = max(values) if values else None
        return result

    @property
    def header(self):
        return ['point', 'weakA', 'weakB', 'addSym', 'addProj']

    def to_rows(self):
        """One row of residual norms per point. addSym and addProj are blank when n < 3."""
        rows = []
        for index, point in enumerate(self.points):
            norms = point.norms()
            rows.append([index] + ['' if norms[key] is None else norms[key] for key in self.header[1:]])
        return rows

    def as_dict(self):
        return {'points': [point.as_dict() for point in self.points], 'max': self.max_norms()}


def point_residuals(system, gamma, c):
    data = PointJets(system, gamma, c)
    weak = _weak(data, _coefficients(data))
    add_sym = add_proj = lambda_B = None
    if data.n >= 3:
        add_sym, op_B, add_proj = _additional(data)
        lambda_B = op_B.lambda_B
    return PointResiduals(
        x=c.x, p=c.p, weakA=weak.weakA, weakB=weak.weakB, weak_b_printed=weak.weak_b_printed,
        addSym=add_sym, addProj=add_proj, lambda_B=lambda_B,
    )


def sample_residual_report(system, gamma, points):
    report = ResidualReport([point_residuals(system, gamma, c) for c in points])
    logger.info("Residuals over %d points: %s", len(report.points), report.max_norms())
    return report


def connection_invariance_check(system, gamma, shift, points):
    """Residual differences under Γ → Γ + T, with the weakA and addProj magnitudes alongside.

    weakA and addProj never see Γ. weakB and addSym keep their values only
    where weakA and addProj vanish.
    """
    shifted = gamma.shifted(shift)
    diffs = {'weakA': 0.0, 'weakB': 0.0, 'weakB_printed': 0.0, 'addProj': 0.0, 'addSym': 0.0}
    max_weak_a = max_add_proj = 0.0
    for c in points:
        before = point_residuals(system, gamma, c)
        after = point_residuals(system, shifted, c)
        pairs = {
            'weakA': (before.weakA, after.weakA),
            'weakB': (before.weakB, after.weakB),
            'weakB_printed': (before.weak_b_printed, after.weak_b_printed),
            'addProj': (before.addProj, after.addProj),
            'addSym': (before.addSym, after.addSym),
        }
        for key, (a, b) in pairs.items():
            if a is not None:
                diffs[key] = max(diffs[key], float(np.max(np.abs(a - b))))
        max_weak_a = max(max_weak_a, _norm(before.weakA))
        if before.addProj is not None:
            max_add_proj = max(max_add_proj, _norm(before.addProj))
    report = {
        'points': len(points),
        'max_difference': diffs,
        'max_weakA': max_weak_a,
        'max_addProj': max_add_proj,
    }
    logger.info("Connection invariance over %d points: %s", len(points), diffs)
    return report


def b_symmetry_of_B(S, system, nu_field, gamma, y):
    """max |b(τ_i, Bτ_j) − b(Bτ_i, τ_j)| over the tangent frame."""
    form = second_fundamental_form(S, system, nu_field, gamma, y)
    frame = tangent_frame(S, y)
    c = CotangentState(S.point(np.asarray(y, dtype=float)), nu_field.at(y) * normal_covector(S, y))
    _, op_B, _ = additional_residuals(system, gamma, c)
    moved = op_B.B @ frame
    return float(np.max(np.abs(frame.T @ form.b @ moved - moved.T @ form.b @ frame)))


# ==========================================
# VARIATIONS
# ==========================================

@dataclass(frozen=True, eq=False)
class VariationState:
    """τ together with ξ_s = ∇_τ p_s (momentum) or θ^i = ∂v^i/∂y (velocity)."""
    tau: np.ndarray
    xi: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, 'tau', np.asarray(self.tau, dtype=float))
        if (self.xi is None) == (self.theta is None):
            raise ValueError("a variation carries exactly one of ξ and θ")
        if self.xi is not None:
            object.__setattr__(self, 'xi', np.asarray(self.xi, dtype=float))
        else:
            object.__setattr__(self, 'theta', np.asarray(self.theta, dtype=float))

    @property
    def representation(self):
        return MOMENTUM if self.xi is not None else VELOCITY

    @property
    def companion(self):
        return self.xi if self.xi is not None else self.theta


@dataclass(frozen=True, eq=False)
class VariationSeries:
    t: np.ndarray
    tau: np.ndarray
    companion: np.ndarray
    representation: str

    def state(self, k):
        if self.representation == MOMENTUM:
            return VariationState(self.tau[k], xi=self.companion[k])
        return VariationState(self.tau[k], theta=self.companion[k])

    @property
    def xi(self):
        return self.companion if self.representation == MOMENTUM else None

    @property
    def theta(self):
        return self.companion if self.representation == VELOCITY else None


def momentum_variation_matrix(system, gamma, c):
    """d/dt [τ; ξ] = A [τ; ξ] with ordinary time derivatives of the components."""
    data = PointJets(system, gamma, c)
    omega, H_p, G, p = data.omega, data.jet.H_p, data.G, data.p
    u = data.F
    Gvec = data.Gvec
    curvature = data.curvature
    D, R = curvature.D, curvature.R

    # ∇_r F^s and ∇̃^r F^s, stored [s][r]
    grad_F = data.grad_vgrad_H / omega - np.outer(H_p, data.grad_omega) / omega ** 2
    vgrad_F = data.jet.H_pp / omega - np.outer(H_p, data.vgrad_omega) / omega ** 2
    # ∇_r G_s and ∇̃^r G_s, stored [s][r]
    grad_G = data.hess_H / omega - np.outer(data.grad_H, data.grad_omega) / omega ** 2 - data.grad_Q
    vgrad_G = data.vgrad_grad_H / omega - np.outer(data.grad_H, data.vgrad_omega) / omega ** 2 - data.Q_p

    u_gamma = np.einsum('m,smr->sr', u, G)                  # Σ_m u^m Γ^s_mr
    n = data.n
    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = grad_F - u_gamma
    A[:n, n:] = vgrad_F
    A[n:, :n] = (
        -grad_G
        - np.einsum('m,mqrs,q->sr', p, D, Gvec)
        - np.einsum('q,m,msqr->sr', u, p, R)
    )
    A[n:, n:] = -vgrad_G - np.einsum('q,m,mrqs->sr', u, p, D) + u_gamma.T
    return A


def velocity_variation_matrix(system, q):
    """d/dt [τ; θ] = A [τ; θ] from the linearized relative Lagrange equations."""
    L = system.L
    jet = L.jet(q, order=3)
    v = q.v
    n = v.shape[0]
    omega = float(v @ jet.L_v)
    if abs(omega) < lab_setting('SINGULAR_TOL'):
        raise DegenerateOmega("Ω vanishes", quantity='Ω', omega=omega)
    g = jet.L_vv
    g_inv = invert_metric(g)
    xdot, vdot = rhs_v(system, q)
    _, Q_x, Q_p = system.Q.jet(q.x, jet.L_v)

    omega_v = jet.L_v + g @ v
    omega_x = v @ jet.L_vx
    # τ̇ = T_tau τ + T_theta θ
    T_tau = -np.outer(v, omega_x) / omega ** 2
    T_theta = np.eye(n) / omega - np.outer(v, omega_v) / omega ** 2

    rhs_tau = (
        Q_x + Q_p @ jet.L_vx
        + jet.L_xx / omega
        - np.outer(jet.L_x, omega_x) / omega ** 2
        - np.einsum('ijk,j->ik', jet.L_vvx, vdot)
        - np.einsum('ijk,j->ik', jet.L_vxx, xdot)
    )
    rhs_theta = (
        Q_p @ g
        + jet.L_vx.T / omega
        - np.outer(jet.L_x, omega_v) / omega ** 2
        - np.einsum('ijk,j->ik', jet.L_vvv, vdot)
        - np.einsum('ikj,j->ik', jet.L_vvx, xdot)
    )
    rhs_tau -= jet.L_vx @ T_tau
    rhs_theta -= jet.L_vx @ T_theta

    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = T_tau
    A[:n, n:] = T_theta
    A[n:, :n] = g_inv @ rhs_tau
    A[n:, n:] = g_inv @ rhs_theta
    return A


def integrate_variation(system, gamma, base, init, rep=None):
    """
    RK4 for the linear variational system along a stored base trajectory;
    substeps use the coefficient matrix interpolated linearly between nodes.
    """
    rep = rep or base.representation
    if rep != base.representation or init.representation != rep:
        raise ValueError(f"variation in {init.representation} representation does not match a "
                         f"{base.representation} base trajectory")
    K = len(base)
    if K < 2:
        raise InsufficientSamples("base trajectory needs at least two samples")

    if rep == MOMENTUM:
        matrices = [momentum_variation_matrix(system, gamma, base.state(k)) for k in range(K)]
    else:
        matrices = [velocity_variation_matrix(system, base.state(k)) for k in range(K)]

    n = base.n
    states = np.empty((K, 2 * n))
    states[0] = np.concatenate([init.tau, init.companion])
    h = base.h
    for k in range(K - 1):
        A0, A1 = matrices[k], matrices[k + 1]
        Am = 0.5 * (A0 + A1)
        z = states[k]
        k1 = A0 @ z
        k2 = Am @ (z + 0.5 * h * k1)
        k3 = Am @ (z + 0.5 * h * k2)
        k4 = A1 @ (z + h * k3)
        states[k + 1] = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return VariationSeries(t=base.t.copy(), tau=states[:, :n], companion=states[:, n:], representation=rep)


def covariant_variation_at(gamma, c, tau, dp):
    G = gamma.values(c.x, c.p)
    return dp - np.einsum('a,asr,s->r', c.p, G, tau)


def variation_from_neighbours(system, gamma, init_state, variation, t_end, h=None, delta=1e-4):
    """
    The same variation recovered from two neighbouring trajectories started
    at the initial state displaced by ±δ along it.
    """
    if variation.representation == MOMENTUM:
        G0 = gamma.values(init_state.x, init_state.p)
        dp0 = variation.xi + np.einsum('a,asr,s->r', init_state.p, G0, variation.tau)
        plus = CotangentState(init_state.x + delta * variation.tau, init_state.p + delta * dp0)
        minus = CotangentState(init_state.x - delta * variation.tau, init_state.p - delta * dp0)
    else:
        plus = TangentState(init_state.x + delta * variation.tau, init_state.v + delta * variation.theta)
        minus = TangentState(init_state.x - delta * variation.tau, init_state.v - delta * variation.theta)

    upper = integrate(system, plus, t_end, h)
    lower = integrate(system, minus, t_end, h)
    tau = (upper.x - lower.x) / (2 * delta)
    d_fiber = (upper.fiber - lower.fiber) / (2 * delta)
    if variation.representation == VELOCITY:
        return VariationSeries(upper.t, tau, d_fiber, VELOCITY)
    centre = 0.5 * (upper.fiber + lower.fiber)
    xs = 0.5 * (upper.x + lower.x)
    xi = np.array([
        covariant_variation_at(gamma, CotangentState(xs[k], centre[k]), tau[k], d_fiber[k])
        for k in range(len(upper))
    ])
    return VariationSeries(upper.t, tau, xi, MOMENTUM)


# ==========================================
# DEVIATION ODE
# ==========================================

@dataclass(frozen=True, eq=False)
class DeviationProfile:
    t: np.ndarray
    phi: np.ndarray
    phi_dot: np.ndarray
    phi_ddot: np.ndarray
    A: np.ndarray
    Bcoef: np.ndarray

    @property
    def residual(self):
        defect = self.phi_ddot - self.A * self.phi_dot - self.Bcoef * self.phi
        scale = max(1.0, float(np.max(np.abs(self.phi_ddot))))
        return float(np.max(np.abs(defect))) / scale


def _momentum_view(system, gamma, base, variations):
    """Base states and (τ, ξ) in momentum representation."""
    if base.representation == MOMENTUM:
        return base.states, variations.tau, variations.xi
    L = system.L
    states, xis = [], []
    for k in range(len(base)):
        q = base.state(k)
        jet = L.jet(q, order=2)
        c = CotangentState(q.x, jet.L_v)
        dp = jet.L_vx @ variations.tau[k] + jet.L_vv @ variations.theta[k]
        states.append(c)
        xis.append(covariant_variation_at(gamma, c, variations.tau[k], dp))
    return states, variations.tau, np.array(xis)


def deviation_profile(system, gamma, base, variations):
    states, taus, xis = _momentum_view(system, gamma, base, variations)
    K = len(states)
    phi, phi_dot, phi_ddot = np.empty(K), np.empty(K), np.empty(K)
    A, Bcoef = np.empty(K), np.empty(K)
    for k, c in enumerate(states):
        data = PointJets(system, gamma, c)
        coefficients = _coefficients(data)
        tau, xi = taus[k], xis[k]
        phi[k] = float(c.p @ tau)
        phi_dot[k] = -float(data.F @ xi) - float(data.Gvec @ tau)
        phi_ddot[k] = float(coefficients.alpha @ xi) + float(coefficients.beta_cov @ tau)
        A[k], Bcoef[k] = coefficients.A, coefficients.Bcoef
    return DeviationProfile(t=base.t, phi=phi, phi_dot=phi_dot, phi_ddot=phi_ddot, A=A, Bcoef=Bcoef)


def deviation_ode_residual(system, gamma, base, variations):
    """max_t |φ̈ − A φ̇ − B φ| relative to max(1, max |φ̈|)."""
    return deviation_profile(system, gamma, base, variations).residual
