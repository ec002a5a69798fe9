import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from django.utils import timezone

from experiments.models import ExperimentRun
from experiments.reports import ReportError, emit_report, to_jsonable
from experiments.runner import (
    EXIT_INVALID,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_TOLERANCE,
    SUBCOMMANDS,
    run_scenario,
)
from experiments.scenario import ScenarioError, load_scenario
from geometry.conf import lab_setting
from geometry.exceptions import GeometryError, NumericFailure

logger = logging.getLogger('experiments')

STATUS_BY_EXIT = {
    EXIT_OK: 'passed',
    EXIT_INVALID: 'invalid',
    EXIT_NUMERIC: 'numeric_failed',
    EXIT_TOLERANCE: 'tolerance_failed',
}


class Command(BaseCommand):
    help = "Runs a normal-shift scenario and writes its CSV and JSON artifacts"

    def add_arguments(self, parser):
        parser.add_argument('subcommand', choices=sorted(SUBCOMMANDS))
        parser.add_argument('--scenario', required=True, help="Path to the scenario JSON file")
        parser.add_argument('--out', help="Output directory (default: results/<scenario>/<subcommand>)")
        parser.add_argument('--seed', type=int, help="Overrides run.seed of the scenario")

    def handle(self, *args, **kwargs):
        subcommand = kwargs['subcommand']
        scenario_path = kwargs['scenario']
        seed = kwargs.get('seed')
        if seed is not None and not 0 <= seed < 2 ** 64:
            raise CommandError("--seed must be an unsigned 64-bit integer", returncode=EXIT_INVALID)

        started_at = timezone.now()
        ledger = {'scenario_path': str(scenario_path), 'subcommand': subcommand, 'seed': seed}

        # 1. Load and validate
        try:
            scenario = load_scenario(scenario_path)
        except ScenarioError as exc:
            self._record(ledger, started_at, EXIT_INVALID, {'error': str(exc)})
            raise CommandError(f"Invalid scenario: {exc}", returncode=EXIT_INVALID)

        ledger['scenario_name'] = scenario.name
        ledger['seed'] = scenario.run['seed'] if seed is None else seed
        out_dir = Path(kwargs.get('out') or Path('results') / scenario.name / subcommand)
        ledger['output_dir'] = str(out_dir)
        self.stdout.write(self.style.NOTICE(f"Running {subcommand} on {scenario.name} (seed {ledger['seed']})..."))

        # 2. Run
        try:
            result = run_scenario(scenario, subcommand, seed=seed)
        except ScenarioError as exc:
            self._record(ledger, started_at, EXIT_INVALID, {'error': str(exc)})
            raise CommandError(f"Invalid scenario: {exc}", returncode=EXIT_INVALID)
        except NumericFailure as exc:
            self._record(ledger, started_at, EXIT_NUMERIC, {'error': type(exc).__name__, 'message': str(exc)})
            raise CommandError(f"Numeric failure ({type(exc).__name__}): {exc}", returncode=EXIT_NUMERIC)
        except GeometryError as exc:
            # Dimension or representation misuse is a property of the scenario.
            self._record(ledger, started_at, EXIT_INVALID, {'error': type(exc).__name__, 'message': str(exc)})
            raise CommandError(f"Invalid scenario ({type(exc).__name__}): {exc}", returncode=EXIT_INVALID)

        # 3. Emit
        summary = result.summary()
        try:
            written = emit_report(out_dir, summary, result.tables)
        except ReportError as exc:
            self._record(ledger, started_at, EXIT_NUMERIC, {'error': str(exc)})
            raise CommandError(str(exc), returncode=EXIT_NUMERIC)
        for path in written:
            self.stdout.write(f"  wrote {path}")

        for check in result.checks:
            line = f"  {check['quantity']} {check['op']} {check['value']:g}: observed {check['observed']}"
            if check['passed'] is None:
                self.stdout.write(self.style.WARNING(f"{line} (skipped)"))
            elif check['passed']:
                self.stdout.write(self.style.SUCCESS(f"{line} ok"))
            else:
                self.stdout.write(self.style.ERROR(f"{line} FAILED"))

        self._record(ledger, started_at, result.exit_code, summary)
        if result.exit_code != EXIT_OK:
            raise CommandError("One or more asserted tolerances failed", returncode=result.exit_code)
        self.stdout.write(self.style.SUCCESS(f"✅ {subcommand} passed for {scenario.name}"))

    def _record(self, ledger, started_at, exit_code, summary):
        if not lab_setting('RECORD_RUNS'):
            return
        try:
            ExperimentRun.objects.create(
                scenario_name=ledger.get('scenario_name', ''),
                scenario_path=ledger['scenario_path'],
                subcommand=ledger['subcommand'],
                seed=ledger.get('seed'),
                status=STATUS_BY_EXIT[exit_code],
                exit_code=exit_code,
                summary=_ledger_summary(summary),
                output_dir=ledger.get('output_dir', ''),
                started_at=started_at,
                finished_at=timezone.now(),
            )
        except DatabaseError as exc:
            logger.warning("Run ledger unavailable, run not recorded: %s", exc)
            self.stdout.write(self.style.WARNING("⚠️  Run ledger unavailable (did you run migrate?); run not recorded."))


def _ledger_summary(summary):
    """The ledger keeps quantities and checks; per-point details stay in the artifacts."""
    kept = {key: value for key, value in summary.items() if key != 'details'}
    return to_jsonable(kept)
