"""
Base test utilities for all test files.
"""
import shutil
import tempfile
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from reid.config import run_config_from_dict
from reid.datasets import generate_synthetic
from reid.model import FrameEncoderSpec, HeadSpec, VideoReIDNet


class BaseTestCase:
    """Base test case with common utilities."""

    def _make_tempdir(self) -> Path:
        """Create a temporary directory removed after the test."""
        path = Path(tempfile.mkdtemp(prefix='reid-test-'))
        self.addCleanup(shutil.rmtree, path, ignore_errors=True)
        return path

    def _synthetic_root(self, num_ids=8, cams=2, tracklets=1, frames=8, size=(32, 16), seed=0) -> Path:
        """Write a small synthetic dataset and return its root."""
        root = self._make_tempdir() / 'synthetic'
        generate_synthetic(root, num_ids=num_ids, cams=cams, tracklets_per=tracklets,
                           frames_per=frames, image_size=size, rng=seed)
        return root

    def _frames(self, count=4, size=(40, 20), seed=0):
        """Random RGB frames as PIL images; size is (height, width)."""
        rng = np.random.default_rng(seed)
        return [
            Image.fromarray(rng.integers(0, 256, size=(size[0], size[1], 3), dtype=np.uint8))
            for _ in range(count)
        ]

    def _tiny_model(self, num_classes=8, embed_dim=16, reduce_dim=8, temporal_kernel=3,
                    last_stride=1, bnneck_before_dml=True, seed=0) -> VideoReIDNet:
        """Tiny-encoder network for fast tests."""
        torch.manual_seed(seed)
        return VideoReIDNet(
            FrameEncoderSpec(name='tiny', embed_dim=embed_dim, last_stride=last_stride),
            HeadSpec(num_classes=num_classes, attn_reduce_dim=reduce_dim,
                     bnneck_before_dml=bnneck_before_dml, temporal_kernel=temporal_kernel),
        )

    def _desk_config_dict(self, root, out_dir, **sections):
        """Desk-scale run configuration on a synthetic dataset."""
        data = {
            'dataset': {'root': str(root), 'layout': 'synthetic'},
            'batch': {'C': 2, 'K': 4},
            'clip_len': 4,
            'transform': {'target_size': [32, 16], 'pad': 2},
            'encoder': {'name': 'tiny', 'embed_dim': 32, 'last_stride': 1},
            'head': {'attn_reduce_dim': 16},
            'loss': {'epsilon': 0.0},
            'schedule': {'base_lr': 0.003, 'warmup_epochs': 1, 'decay_epochs': [], 'total_epochs': 30},
            'validate_every': 30,
            'deterministic': True,
            'device': 'cpu',
            'num_workers': 0,
            'out_dir': str(out_dir),
        }
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return data

    def _desk_config(self, root, out_dir, **sections):
        return run_config_from_dict(self._desk_config_dict(root, out_dir, **sections))
