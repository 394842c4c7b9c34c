"""
Django management command to write a synthetic dataset.
"""
from django.conf import settings

from reid.datasets import generate_synthetic

from ._base import ReidCommand


class Command(ReidCommand):
    help = 'Generate a synthetic tracklet dataset (layout: synthetic)'
    uses_config = False

    def add_command_arguments(self, parser):
        parser.add_argument('--ids', type=int, default=8, help='Number of identities')
        parser.add_argument('--cams', type=int, default=2, help='Cameras per identity')
        parser.add_argument('--tracklets', type=int, default=1, help='Tracklets per identity and camera')
        parser.add_argument('--frames', type=int, default=16, help='Frames per tracklet')
        parser.add_argument('--height', type=int, default=64, help='Frame height in pixels')
        parser.add_argument('--width', type=int, default=32, help='Frame width in pixels')

    def run(self, **options):
        root = options.get('out') or str(settings.REID_DATA_ROOT / 'synthetic')
        seed = options['seed'] if options.get('seed') is not None else 0
        generate_synthetic(
            root,
            num_ids=options['ids'],
            cams=options['cams'],
            tracklets_per=options['tracklets'],
            frames_per=options['frames'],
            image_size=(options['height'], options['width']),
            rng=seed,
        )
        count = options['ids'] * options['cams'] * options['tracklets']
        self.stdout.write(self.style.SUCCESS(
            f"Wrote {count} tracklets ({count * options['frames']} images) to {root}"
        ))
