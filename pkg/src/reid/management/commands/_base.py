"""
Shared plumbing for the toolkit's management commands.
"""
import json

from django.core.management.base import BaseCommand, CommandError

from shared.exceptions import ReIDError
from reid.config import RunConfig, load_run_config
from reid.logger import log_error, log_info


class ReidCommand(BaseCommand):
    """Base command: common run-config flags and error translation.

    Toolkit errors become ``CommandError`` (exit status 1); argparse
    problems exit with status 2 on their own.
    """

    requires_system_checks = []
    uses_config = True

    def add_arguments(self, parser):
        if self.uses_config:
            parser.add_argument('--config', help='Run configuration file (JSON)')
            parser.add_argument(
                '--set',
                dest='overrides',
                action='append',
                default=[],
                metavar='KEY=VALUE',
                help='Override a configuration value by dotted key, e.g. --set batch.C=6',
            )
            parser.add_argument('--deterministic', action='store_true',
                                help='Deterministic kernels and seeding')
        parser.add_argument('--seed', type=int, help='Global random seed')
        parser.add_argument('--out', help='Output directory')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def load_config(self, options) -> RunConfig:
        """Build the run configuration from --config, --set and the shared flags."""
        overrides = list(options.get('overrides') or [])
        if options.get('seed') is not None:
            overrides.append(f"seed={options['seed']}")
        if options.get('deterministic'):
            overrides.append('deterministic=true')
        if options.get('out'):
            overrides.append(f"out_dir={json.dumps(options['out'])}")
        return load_run_config(options.get('config'), overrides)

    def handle(self, *args, **options):
        """Run the verb, turning toolkit errors into CommandError."""
        verb = self.__module__.rsplit('.', 1)[-1]
        log_info(f"Command '{verb}' started", {
            key: options.get(key) for key in ('config', 'overrides', 'seed', 'out') if options.get(key)
        })
        try:
            self.run(**options)
        except ReIDError as exc:
            log_error(f"Command '{verb}' failed", exception=exc)
            raise CommandError(str(exc)) from exc

    def run(self, **options):
        raise NotImplementedError('subclasses of ReidCommand must provide a run() method')
