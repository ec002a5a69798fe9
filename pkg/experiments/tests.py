import csv
import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from experiments.models import ExperimentRun
from experiments.reports import dumps, to_jsonable
from experiments.runner import run_scenario
from experiments.scenario import (
    ScenarioNotFound,
    ScenarioParseError,
    ScenarioValidationError,
    load_scenario,
)

SCENARIOS = Path(__file__).resolve().parent / 'scenarios'

FREE_CIRCLE = {
    "name": "free_circle",
    "dimension": 2,
    "model": {"hamiltonian": "(p1^2 + p2^2) / 2", "box": [[-2, 2], [-2, 2]]},
    "surface": {"chart": ["cos(y1)", "sin(y1)"], "box": [[-1.0, 1.0]], "base": [0.0], "nu0": 1.0},
    "run": {"t_end": 0.5, "h": 0.01, "nodes": 3, "samples": 11},
    "assert": [{"quantity": "max_phi", "op": "<=", "value": 1e-6}],
}

CURL_3 = {
    "name": "curl_3",
    "dimension": 3,
    "model": {"hamiltonian": "(p1^2 + p2^2 + p3^2) / 2", "box": [[-1, 1]] * 3, "radii": [0.5, 2.0]},
    "force": {"Q": ["x2", "0", "0"]},
    "run": {"points": 5, "seed": 3},
    "assert": [{"quantity": "weakB", "op": "<=", "value": 1e-9}],
}

QUARTIC_SMALL = {
    "name": "quartic_small",
    "dimension": 2,
    "model": {"lagrangian": "(v1^2 + v2^2)^2 / 4", "box": [[-1, 1], [-1, 1]], "radii": [0.5, 2.0]},
    "run": {"points": 5},
}


class ScenarioFileMixin:

    def setUp(self):
        super().setUp()
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()
        super().tearDown()

    def scenario_file(self, document, name='scenario.json'):
        path = self.root / name
        if isinstance(document, str):
            path.write_text(document, encoding='utf-8')
        else:
            path.write_text(json.dumps(document), encoding='utf-8')
        return path

    def nslab(self, subcommand, path, *args):
        out = StringIO()
        call_command('nslab', subcommand, '--scenario', str(path), *args, stdout=out)
        return out.getvalue()

    def nslab_exit_code(self, subcommand, path, *args):
        try:
            self.nslab(subcommand, path, *args)
        except CommandError as exc:
            return exc.returncode, str(exc)
        return 0, ''


class ScenarioLoadingTests(ScenarioFileMixin, SimpleTestCase):

    def test_bundled_scenarios_load(self):
        for path in sorted(SCENARIOS.glob('*.json')):
            with self.subTest(path.name):
                self.assertEqual(load_scenario(path).name, path.stem)

    def test_defaults(self):
        scenario = load_scenario(self.scenario_file(CURL_3))
        self.assertEqual(scenario.run['points'], 5)
        self.assertEqual(scenario.run['shifts'], 5)
        self.assertIsNone(scenario.surface)
        self.assertTrue(scenario.gamma.is_flat)

    def test_missing_file(self):
        with self.assertRaises(ScenarioNotFound):
            load_scenario(self.root / 'absent.json')

    def test_json_syntax_error_has_location(self):
        with self.assertRaises(ScenarioParseError) as ctx:
            load_scenario(self.scenario_file('{\n  "name": "broken",\n  "dimension": \n}'))
        self.assertEqual(ctx.exception.line, 4)
        self.assertIn('line 4', str(ctx.exception))

    def test_malformed_expression_names_field(self):
        document = dict(CURL_3, model=dict(CURL_3['model'], hamiltonian="(p1^2 + p2^2"))
        with self.assertRaises(ScenarioParseError) as ctx:
            load_scenario(self.scenario_file(document))
        self.assertEqual(ctx.exception.field, 'model.hamiltonian')

    def test_validation_errors(self):
        cases = {
            'dimension': dict(CURL_3, dimension=1),
            'run.h': dict(CURL_3, run={"h": -0.1}),
            'run.bogus': dict(CURL_3, run={"bogus": 1}),
            'assert[0].op': dict(CURL_3, **{"assert": [{"quantity": "weakB", "op": "~", "value": 1}]}),
            'extra': dict(CURL_3, extra={}),
            'force': dict(CURL_3, force={"Q": ["0", "0", "0"], "acceleration": ["0", "0", "0"]}),
        }
        for field, document in cases.items():
            with self.subTest(field):
                with self.assertRaises(ScenarioValidationError) as ctx:
                    load_scenario(self.scenario_file(document))
                self.assertEqual(ctx.exception.field, field)

    def test_force_with_stray_symbol(self):
        document = dict(CURL_3, force={"Q": ["y1", "0", "0"]})
        with self.assertRaises(ScenarioValidationError):
            load_scenario(self.scenario_file(document))


class RunnerTests(ScenarioFileMixin, SimpleTestCase):

    def test_unproduced_quantity_is_reported_not_failed(self):
        document = dict(CURL_3, **{"assert": [{"quantity": "max_phi", "op": "<=", "value": 1.0}]})
        result = run_scenario(load_scenario(self.scenario_file(document)), 'residuals')
        self.assertTrue(result.passed)
        self.assertIsNone(result.checks[0]['passed'])
        self.assertEqual(result.checks[0]['note'], 'not produced by this subcommand')

    def test_seed_override(self):
        scenario = load_scenario(self.scenario_file(CURL_3))
        first = run_scenario(scenario, 'residuals')
        second = run_scenario(scenario, 'residuals', seed=4)
        self.assertEqual(first.seed, 3)
        self.assertEqual(second.seed, 4)
        self.assertNotEqual(first.details['points'][0]['x'], second.details['points'][0]['x'])

    def test_check_regularity_adds_implicit_assertion(self):
        result = run_scenario(load_scenario(self.scenario_file(QUARTIC_SMALL)), 'check-regularity')
        self.assertEqual([check['quantity'] for check in result.checks], ['regular', 'derivative_gap'])
        self.assertTrue(result.passed)

    def test_derivative_tolerance_decides_identities(self):
        path = self.scenario_file(QUARTIC_SMALL)
        result = run_scenario(load_scenario(path), 'identities')
        self.assertEqual(result.checks[0]['quantity'], 'derivative_gap')
        self.assertTrue(result.passed)
        with self.settings(NSLAB={'DERIVATIVE_RTOL': 0.0}):
            result = run_scenario(load_scenario(path), 'identities')
        self.assertFalse(result.checks[0]['passed'])
        self.assertEqual(result.exit_code, 4)

    def test_shift_reports_compatibility(self):
        document = json.loads((SCENARIOS / 'sphere_cp.json').read_text(encoding='utf-8'))
        document['run'].update(t_end=0.05, h=0.01)
        document['force'] = {'Q': ['x2', '0', '0']}
        curl = run_scenario(load_scenario(self.scenario_file(document)), 'shift')
        self.assertGreaterEqual(curl.quantities['max_compatibility'], 1e-3)
        document['force'] = {'Q': ['0.1*p1', '0.1*p2', '0.1*p3']}
        normal = run_scenario(load_scenario(self.scenario_file(document)), 'shift')
        self.assertLessEqual(normal.quantities['max_compatibility'], 1e-6)

    def test_non_finite_values_become_null(self):
        self.assertEqual(json.loads(dumps({'a': float('nan'), 'b': [float('inf'), 1.5]})), {'a': None, 'b': [None, 1.5]})
        self.assertEqual(to_jsonable({1: (2, 3)}), {'1': [2, 3]})


class NslabCommandTests(ScenarioFileMixin, TestCase):

    def test_normal_shift_passes(self):
        out_dir = self.root / 'out'
        output = self.nslab('shift', self.scenario_file(FREE_CIRCLE), '--out', str(out_dir))
        self.assertIn('passed', output)

        summary = json.loads((out_dir / 'summary.json').read_text(encoding='utf-8'))
        self.assertTrue(summary['passed'])
        self.assertLessEqual(summary['quantities']['max_phi'], 1e-6)
        self.assertEqual(summary['quantities']['max_compatibility'], 0.0)
        with open(out_dir / 'shift.csv', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        self.assertEqual(len(rows) - 1, 3 * 51)

        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'passed')
        self.assertEqual(run.exit_code, 0)
        self.assertEqual(run.scenario_name, 'free_circle')
        self.assertNotIn('details', run.summary)

    def test_curl_force_fails_tolerance(self):
        out_dir = self.root / 'out'
        code, message = self.nslab_exit_code('residuals', self.scenario_file(CURL_3), '--out', str(out_dir))
        self.assertEqual(code, 4)
        summary = json.loads((out_dir / 'summary.json').read_text(encoding='utf-8'))
        self.assertFalse(summary['passed'])
        self.assertFalse(summary['checks'][0]['passed'])
        self.assertEqual(ExperimentRun.objects.get().status, 'tolerance_failed')

        with open(out_dir / 'residuals.csv', encoding='utf-8') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['point', 'weakA', 'weakB', 'addSym', 'addProj'])
        self.assertEqual([row[0] for row in rows[1:]], ['0', '1', '2', '3', '4'])
        self.assertGreaterEqual(max(float(row[2]) for row in rows[1:]), 1e-3)

    def test_bundled_curl_scenario(self):
        code, _ = self.nslab_exit_code('residuals', SCENARIOS / 'euclidean_qcurl.json', '--out', str(self.root))
        self.assertEqual(code, 4)

    def test_invalid_scenario(self):
        code, message = self.nslab_exit_code('residuals', self.scenario_file(dict(CURL_3, dimension=1)))
        self.assertEqual(code, 2)
        self.assertIn('dimension', message)
        self.assertEqual(ExperimentRun.objects.get().status, 'invalid')

    def test_malformed_expression_reports_location(self):
        document = dict(CURL_3, force={"Q": ["x2 +* 1", "0", "0"]})
        code, message = self.nslab_exit_code('residuals', self.scenario_file(document))
        self.assertEqual(code, 2)
        self.assertIn('force.Q[0]', message)

    def test_missing_surface(self):
        code, message = self.nslab_exit_code('shift', self.scenario_file(CURL_3))
        self.assertEqual(code, 2)
        self.assertIn('surface', message)

    def test_numeric_failure(self):
        document = {
            "name": "at_rest",
            "dimension": 2,
            "model": {"hamiltonian": "(p1^2 + p2^2) / 2", "box": [[-1, 1], [-1, 1]]},
            "run": {"t_end": 0.1, "h": 0.01, "initial": {"x": [0, 0], "p": [0, 0]}},
        }
        code, _ = self.nslab_exit_code('simulate', self.scenario_file(document), '--out', str(self.root / 'out'))
        self.assertEqual(code, 3)
        self.assertEqual(ExperimentRun.objects.get().status, 'numeric_failed')

    def test_outputs_are_reproducible(self):
        path = self.scenario_file(CURL_3)
        first, second = self.root / 'first', self.root / 'second'
        self.nslab_exit_code('residuals', path, '--out', str(first), '--seed', '9')
        self.nslab_exit_code('residuals', path, '--out', str(second), '--seed', '9')
        self.assertEqual((first / 'summary.json').read_bytes(), (second / 'summary.json').read_bytes())

        summary = json.loads((first / 'summary.json').read_text(encoding='utf-8'))
        self.assertEqual(summary['seed'], 9)
        self.assertEqual(len(summary['details']['points']), 5)
        self.assertEqual(len(summary['details']['points'][0]['x']), 3)
        self.assertIn('p', summary['details']['points'][0])

    def test_recording_can_be_switched_off(self):
        with self.settings(NSLAB={'RECORD_RUNS': False}):
            self.nslab('shift', self.scenario_file(FREE_CIRCLE), '--out', str(self.root / 'out'))
        self.assertFalse(ExperimentRun.objects.exists())

    def test_run_ledger_statistics(self):
        self.nslab('shift', self.scenario_file(FREE_CIRCLE), '--out', str(self.root / 'a'))
        self.nslab_exit_code('residuals', self.scenario_file(CURL_3), '--out', str(self.root / 'b'))

        out = StringIO()
        call_command('nslab_runs', stdout=out)
        output = out.getvalue()
        self.assertIn('Total runs:        2', output)
        self.assertIn('shift:', output)
        self.assertIn('1 runs did not pass', output)

        out = StringIO()
        call_command('nslab_runs', '--subcommand', 'shift', stdout=out)
        self.assertIn('Total runs:        1', out.getvalue())
