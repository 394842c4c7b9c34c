"""
Django management command to dump video features.
"""
from pathlib import Path

from reid.checkpoint import model_from_checkpoint
from reid.datasets import SPLITS
from reid.evalkit import extract_features, save_features
from reid.trainer import prepare_index, resolve_device

from ._base import ReidCommand


class Command(ReidCommand):
    help = 'Extract video-level features for one or all splits (.npy matrix + .jsonl sidecar)'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True, help='Checkpoint file to extract with')
        parser.add_argument('--split', choices=SPLITS + ('all',), default='all',
                            help='Split to extract (default: all)')

    def run(self, **options):
        config = self.load_config(options)
        checkpoint = Path(options['checkpoint'])
        device = resolve_device(config.device)
        model = model_from_checkpoint(checkpoint, config.head.eval_feature).to(device)
        index = prepare_index(config)
        out_dir = Path(options['out']) if options.get('out') else checkpoint.parent

        splits = SPLITS if options['split'] == 'all' else (options['split'],)
        for split in splits:
            records = index.split(split)
            if not records:
                self.stdout.write(f"Split '{split}' is empty, skipped")
                continue
            features = extract_features(records, model, config.eval.clip_len, config.transform, device)
            matrix_path, sidecar_path = save_features(out_dir / f"features_{split}", features)
            self.stdout.write(self.style.SUCCESS(
                f"{split}: {len(features)} features -> {matrix_path}, {sidecar_path}"
            ))
