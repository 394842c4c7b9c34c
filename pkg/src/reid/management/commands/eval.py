"""
Django management command to evaluate a checkpoint.
"""
from pathlib import Path

from reid.checkpoint import model_from_checkpoint
from reid.evalkit import run_protocol
from reid.trainer import prepare_index, resolve_device

from ._base import ReidCommand


class Command(ReidCommand):
    help = 'Evaluate a checkpoint with the dataset protocol and write an evaluation report'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Checkpoint file to evaluate')

    def run(self, **options):
        config = self.load_config(options)
        checkpoint = Path(options['checkpoint'])
        device = resolve_device(config.device)
        model = model_from_checkpoint(checkpoint, config.head.eval_feature).to(device)
        index = prepare_index(config)

        report = run_protocol(index, model, config.eval, config.transform, device)
        out_dir = Path(options['out']) if options.get('out') else checkpoint.parent
        path = report.to_json(out_dir / f"eval_T{config.eval.clip_len}.json")

        self.stdout.write(report.render_table())
        self.stdout.write(self.style.SUCCESS(f"Report written to {path}"))
