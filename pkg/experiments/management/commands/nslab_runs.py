from django.core.management.base import BaseCommand
from django.db.models import Count

from experiments.models import ExperimentRun


class Command(BaseCommand):
    help = "Displays statistics about recorded nslab runs"

    def add_arguments(self, parser):
        parser.add_argument('--subcommand', help="Only count runs of this subcommand")
        parser.add_argument('--recent', type=int, default=10, help="How many recent runs to list")

    def handle(self, *args, **kwargs):
        runs = ExperimentRun.objects.all()
        if kwargs.get('subcommand'):
            runs = runs.filter(subcommand=kwargs['subcommand'])
        total = runs.count()

        self.stdout.write(self.style.SUCCESS('--- NSLAB RUN LEDGER ---'))
        self.stdout.write(f'Total runs:        {total}')

        by_status = dict(runs.order_by().values_list('status').annotate(count=Count('id')))
        for status, label in ExperimentRun.STATUS_CHOICES:
            self.stdout.write(f'{label + ":":<19}{by_status.get(status, 0)}')

        self.stdout.write('-- per subcommand --')
        for row in runs.values('subcommand').annotate(count=Count('id')).order_by('subcommand'):
            self.stdout.write(f"{row['subcommand'] + ':':<19}{row['count']}")

        recent = list(runs[:kwargs['recent']])
        if recent:
            self.stdout.write('-- most recent --')
            for run in recent:
                self.stdout.write(f'{run.started_at:%Y-%m-%d %H:%M:%S}  {run}')
        self.stdout.write('------------------------')

        failed = by_status.get('tolerance_failed', 0) + by_status.get('numeric_failed', 0)
        if failed:
            self.stdout.write(self.style.WARNING(f'⚠️  Warning: {failed} runs did not pass.'))
