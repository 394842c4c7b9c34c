"""
Django management command to print parameter counts.
"""
import json

from reid.checkpoint import model_from_checkpoint
from reid.model import param_report, render_param_table
from reid.trainer import build_model

from ._base import ReidCommand

MARS_TRAIN_IDENTITIES = 625


class Command(ReidCommand):
    help = 'Print total and trainable parameter counts of the configured (or checkpointed) model'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', help='Count the parameters of this checkpoint instead')
        parser.add_argument('--classes', type=int, default=MARS_TRAIN_IDENTITIES,
                            help='Classifier size when building from the config (default: 625)')
        parser.add_argument('--json', action='store_true', help='Print the report as JSON')

    def run(self, **options):
        if options.get('checkpoint'):
            model = model_from_checkpoint(options['checkpoint'])
        else:
            model = build_model(self.load_config(options), options['classes'])
        report = param_report(model)
        if options['json']:
            self.stdout.write(json.dumps(report, indent=2))
        else:
            self.stdout.write(render_param_table(report))
