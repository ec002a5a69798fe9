"""
Subcommand orchestration: each handler turns a validated scenario into
named quantities, a details document and optional CSV tables.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from geometry.calculus import (
    CotangentState,
    check_regularity,
    derivative_check,
    inverse_legendre,
    legendre,
    legendre_consistency,
    omega_v,
)
from geometry.dynamics import integrate
from geometry.hypersurface import (
    NuField,
    deviation_rate_at_surface,
    pfaff_compatibility_residual,
    run_shift,
    second_fundamental_form,
    solve_nu_curve,
    solve_nu_grid,
)
from geometry.normality import b_symmetry_of_B, connection_invariance_check, sample_residual_report
from geometry.tensorfields import ConnectionShift, commutator_residual, projector

from .scenario import Assertion, ScenarioValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3
EXIT_TOLERANCE = 4


@dataclass
class RunResult:
    scenario: str
    subcommand: str
    seed: int
    quantities: dict
    details: dict
    checks: list
    tables: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(check['passed'] is not False for check in self.checks)

    @property
    def exit_code(self):
        return EXIT_OK if self.passed else EXIT_TOLERANCE

    def summary(self):
        return {
            'scenario': self.scenario,
            'subcommand': self.subcommand,
            'seed': self.seed,
            'quantities': self.quantities,
            'details': self.details,
            'checks': self.checks,
            'passed': self.passed,
        }


def _max(values):
    values = [v for v in values if v is not None]
    return max(values) if values else None


def _require_lagrangian(scenario, subcommand):
    if scenario.lagrangian is None:
        raise ScenarioValidationError('model.lagrangian', f"{subcommand} needs a Lagrangian")
    return scenario.lagrangian


def _nu_field(scenario):
    S, run = scenario.hypersurface, scenario.run
    section = scenario.surface
    if section.constant_nu:
        return NuField.constant_field(S, section.nu0)
    if S.m == 1:
        return solve_nu_curve(S, scenario.system, section.nu0, samples=run['samples'])
    return solve_nu_grid(S, scenario.system, section.nu0, samples=run['samples'])


def _compatibility(S, system, nu_field, y, delta):
    return float(np.max(np.abs(pfaff_compatibility_residual(S, system, nu_field, y, delta)), initial=0.0))


def _parameter_samples(S, rng, count):
    low = np.array([lo for lo, _ in S.box])
    high = np.array([hi for _, hi in S.box])
    return [rng.uniform(low, high) for _ in range(count)]


# ==========================================
# HANDLERS
# ==========================================

def run_check_regularity(scenario, rng):
    L = _require_lagrangian(scenario, 'check-regularity')
    report = check_regularity(L, scenario.domain, scenario.run['points'], rng)
    quantities = {
        'min_omega': report.min_omega,
        'min_abs_det_g': report.min_abs_det_g,
        'max_roundtrip_error': report.max_roundtrip_error,
        'regular': 1.0 if report.passed else 0.0,
    }
    if scenario.hamiltonian.expression is not None:
        points = scenario.domain.sample_cotangent(rng, scenario.run['points'])
        quantities['legendre_consistency'] = legendre_consistency(scenario.hamiltonian, points)
    derivatives = derivative_check(L, scenario.domain.sample_tangent(rng, scenario.run['points']))
    quantities['derivative_gap'] = derivatives.worst_gap
    implicit = [('regular', '==', 1.0), ('derivative_gap', '<=', derivatives.rtol)]
    return quantities, {'regularity': report.as_dict()}, {}, implicit


def run_simulate(scenario, rng):
    system, run = scenario.system, scenario.run
    init = scenario.initial_state()
    trajectory = integrate(system, init, run['t_end'], run['h'])
    quantities = {
        'energy_drift': trajectory.energy_drift(system.H),
        'steps': len(trajectory) - 1,
    }
    details = {
        'representation': trajectory.representation,
        'h': trajectory.h,
        'final': {'t': trajectory.t[-1], 'x': trajectory.x[-1], 'fiber': trajectory.fiber[-1]},
    }

    if run['compare_representations']:
        L = _require_lagrangian(scenario, 'compare_representations')
        if isinstance(init, CotangentState):
            momentum_run = trajectory
            velocity_run = integrate(system, inverse_legendre(L, init), run['t_end'], run['h'])
        else:
            velocity_run = trajectory
            momentum_run = integrate(system, legendre(L, init), run['t_end'], run['h'])
        paired_p = np.array([L.momentum(x, v) for x, v in zip(velocity_run.x, velocity_run.fiber)])
        quantities['representation_gap'] = float(max(
            np.max(np.abs(velocity_run.x - momentum_run.x)),
            np.max(np.abs(paired_p - momentum_run.p)),
        ))

    tables = {'trajectory.csv': (trajectory.header, trajectory.to_rows())}
    return quantities, details, tables, []


def run_shift_family(scenario, rng):
    run = scenario.run
    nu_field = _nu_field(scenario)
    family = run_shift(scenario.hypersurface, scenario.system, nu_field, run['t_end'],
                       h=run['h'], nodes=run['nodes'], delta=run['delta'])
    compatibility = [_compatibility(scenario.hypersurface, scenario.system, nu_field, y, run['delta'])
                     for y in family.nodes]
    quantities = {
        'max_phi': family.max_phi,
        'nu_path_discrepancy': nu_field.path_discrepancy,
        'max_compatibility': _max(compatibility),
    }
    if run['horizon'] is not None:
        quantities['max_phi_horizon'] = family.max_phi_until(run['horizon'])
    details = {
        'nodes': family.nodes.shape[0],
        'time_steps': family.t.shape[0],
        'delta': family.delta,
        'h': family.h,
        'nu': nu_field.stats(),
        'max_phi_per_node': [series.max_abs for series in family.deviations],
    }
    return quantities, details, {'shift.csv': (family.header, family.to_rows())}, []


def run_residuals(scenario, rng):
    points = scenario.domain.sample_cotangent(rng, scenario.run['points'])
    report = sample_residual_report(scenario.system, scenario.gamma, points)
    quantities = dict(report.max_norms())
    quantities['printed_agreement'] = _max(
        float(np.max(np.abs(point.weakB - point.weak_b_printed))) for point in report.points)
    return quantities, report.as_dict(), {'residuals.csv': (report.header, report.to_rows())}, []


def run_invariance(scenario, rng):
    n, run = scenario.dimension, scenario.run
    points = scenario.domain.sample_cotangent(rng, run['points'])
    shifts = [scenario.shift] if scenario.shift is not None else []
    shifts += [ConnectionShift.random(n, rng, run['shift_scale']) for _ in range(run['shifts'])]

    per_shift = [connection_invariance_check(scenario.system, scenario.gamma, shift, points) for shift in shifts]
    quantities = {
        'max_weakA': _max(report['max_weakA'] for report in per_shift),
        'max_addProj': _max(report['max_addProj'] for report in per_shift),
    }
    for key in ('weakA', 'weakB', 'weakB_printed', 'addProj', 'addSym'):
        quantities[f'diff_{key}'] = _max(report['max_difference'][key] for report in per_shift)
    return quantities, {'shifts': per_shift}, {}, []


def run_identities(scenario, rng):
    H, gamma, run = scenario.hamiltonian, scenario.gamma, scenario.run
    points = scenario.domain.sample_cotangent(rng, run['points'])
    spatial, mixed, idempotency = [], [], []
    for c in points:
        a, b = commutator_residual(H, gamma, c)
        spatial.append(float(np.max(np.abs(a))))
        mixed.append(float(np.max(np.abs(b))))
        idempotency.append(projector(H, c).idempotency_error)
    quantities = {
        'commutator_spatial': _max(spatial),
        'commutator_mixed': _max(mixed),
        'projector_idempotency': _max(idempotency),
    }
    implicit = []

    L = scenario.lagrangian
    if L is not None:
        tangents = scenario.domain.sample_tangent(rng, run['points'])
        derivatives = derivative_check(L, tangents)
        quantities['derivative_gap'] = derivatives.worst_gap
        implicit.append(('derivative_gap', '<=', derivatives.rtol))
        roundtrip, duality, omega_gap = [], [], []
        for q in tangents:
            c = legendre(L, q)
            back = inverse_legendre(L, c)
            roundtrip.append(float(np.max(np.abs(back.v - q.v))))
            g = L.partial('L_vv', q.x, q.v)
            H_pp = H.evaluate(c, order=2).H_pp
            duality.append(float(np.max(np.abs(g @ H_pp - np.eye(scenario.dimension)))))
        for c in points:
            omega = omega_v(L, inverse_legendre(L, c))
            omega_gap.append(abs(float(c.p @ H.evaluate(c, order=1).H_p) / omega - 1.0))
        quantities.update(
            roundtrip_error=_max(roundtrip),
            metric_duality=_max(duality),
            omega_identity=_max(omega_gap),
        )
        if H.expression is not None:
            quantities['legendre_consistency'] = legendre_consistency(H, points)
    return quantities, {'points': len(points)}, {}, implicit


def run_nu(scenario, rng):
    S, system, gamma, run = scenario.hypersurface, scenario.system, scenario.gamma, scenario.run
    nu_field = _nu_field(scenario)
    samples = _parameter_samples(S, rng, run['points'])
    theta, rate, symmetry, b_of_B = [], [], [], []
    for y in samples:
        theta.append(_compatibility(S, system, nu_field, y, run['delta']))
        rate.append(float(np.max(np.abs(deviation_rate_at_surface(S, system, nu_field, y, run['delta'])))))
        symmetry.append(second_fundamental_form(S, system, nu_field, gamma, y, run['delta']).symmetry_defect)
        if scenario.dimension >= 3:
            b_of_B.append(b_symmetry_of_B(S, system, nu_field, gamma, y))
    stats = nu_field.stats()
    quantities = {
        'nu_path_discrepancy': stats['path_discrepancy'],
        'nu_min_abs': stats['min_abs'],
        'theta_residual': _max(theta),
        'deviation_rate': _max(rate),
        'b_symmetry_defect': _max(symmetry),
        'b_B_symmetry': _max(b_of_B),
    }

    header = [f'y{i}' for i in range(1, S.m + 1)] + ['nu']
    rows = [[float(axis[k]) for axis, k in zip(nu_field.axes, index)] + [float(nu_field.values[index])]
            for index in np.ndindex(*nu_field.values.shape)]
    details = {'nu': stats, 'samples': [y.tolist() for y in samples]}
    return quantities, details, {'nu.csv': (header, rows)}, []


SUBCOMMANDS = {
    'check-regularity': run_check_regularity,
    'simulate': run_simulate,
    'shift': run_shift_family,
    'residuals': run_residuals,
    'invariance': run_invariance,
    'identities': run_identities,
    'nu': run_nu,
}


# ==========================================
# ORCHESTRATION
# ==========================================

def _check(quantity, op, value, quantities):
    assertion = Assertion(quantity, op, value)
    entry = assertion.as_dict()
    if quantity not in quantities:
        entry.update(observed=None, passed=None, note='not produced by this subcommand')
    else:
        observed = quantities[quantity]
        entry.update(observed=observed, passed=assertion.holds(observed))
        if observed is None:
            entry['note'] = 'not available for this scenario'
    return entry


def run_scenario(scenario, subcommand, seed=None):
    """
    Run one subcommand. Library errors propagate to the caller; the result
    carries the quantities and the outcome of every asserted tolerance.
    """
    if subcommand not in SUBCOMMANDS:
        raise ScenarioValidationError('subcommand', f"unknown subcommand '{subcommand}'")
    seed = scenario.run['seed'] if seed is None else seed
    rng = np.random.default_rng(seed)

    logger.info("Running %s on scenario %s (seed %d)", subcommand, scenario.name, seed)
    quantities, details, tables, implicit = SUBCOMMANDS[subcommand](scenario, rng)

    checks = [_check(quantity, op, value, quantities) for quantity, op, value in implicit]
    checks += [_check(a.quantity, a.op, a.value, quantities) for a in scenario.assertions]
    result = RunResult(
        scenario=scenario.name, subcommand=subcommand, seed=seed, quantities=quantities,
        details=details, checks=checks, tables=tables,
    )
    failed = [check['quantity'] for check in checks if check['passed'] is False]
    if failed:
        logger.info("Tolerance checks failed: %s", ', '.join(failed))
    return result
