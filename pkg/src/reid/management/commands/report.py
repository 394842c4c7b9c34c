"""
Django management command to render a run report.
"""
from reid.reports import render_report

from ._base import ReidCommand


class Command(ReidCommand):
    help = 'Render loss/validation tables and plots from a run directory'
    uses_config = False

    def add_command_arguments(self, parser):
        parser.add_argument('--run', required=True, help='Run directory holding metrics.jsonl')
        parser.add_argument('--no-plots', action='store_true', help='Write tables only')

    def run(self, **options):
        written = render_report(options['run'], options.get('out'), plots=not options['no_plots'])
        self.stdout.write(written['text'].read_text(encoding='utf-8'))
        for name, path in written.items():
            self.stdout.write(self.style.SUCCESS(f"{name}: {path}"))
