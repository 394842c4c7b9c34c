"""
Django management command to train a model.
"""
from reid.trainer import train

from ._base import ReidCommand


class Command(ReidCommand):
    help = 'Train a video re-identification model from a run configuration'

    def add_command_arguments(self, parser):
        parser.add_argument('--resume', help='Continue from a checkpoint written by a previous run')

    def run(self, **options):
        config = self.load_config(options)
        self.stdout.write(f"Training into {config.run_dir} ...")
        state = train(config, resume_from=options.get('resume'))
        self.stdout.write(self.style.SUCCESS(
            f"Finished {state.epoch} epochs ({state.total_steps} updates), best rank-1 {state.best_rank1:.4f}"
        ))
