"""
Checkpoint files.

A checkpoint is a ``torch.save`` mapping:

    format_version   int, bumped on incompatible layout changes
    encoder_spec     FrameEncoderSpec fields
    head_spec        HeadSpec fields
    epoch            last completed epoch (1-indexed, 0 before training)
    model_state      module state_dict
    optimizer_state  optimizer state_dict or None
    center_bank      CenterBank.state_dict() or None
    rng_state        {'numpy': bit generator state, 'torch': CPU RNG state}
    history          list of metric records written so far
    config           effective run configuration (plain dict)
"""

import os
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Union

import torch

from shared.exceptions import CheckpointError
from .logger import log_error, log_info
from .model import FrameEncoderSpec, HeadSpec, VideoReIDNet

FORMAT_VERSION = 1


def save_checkpoint(path: Union[str, Path], model: VideoReIDNet, epoch: int, optimizer=None,
                    center_bank=None, rng_state: Optional[Dict[str, Any]] = None,
                    history: Optional[list] = None, config: Optional[Dict[str, Any]] = None) -> Path:
    """Write model weights, specs and optional training state to ``path``."""
    path = Path(path)
    payload = {
        'format_version': FORMAT_VERSION,
        'encoder_spec': asdict(model.encoder_spec),
        'head_spec': asdict(model.head_spec),
        'epoch': int(epoch),
        'model_state': model.state_dict(),
        'optimizer_state': optimizer.state_dict() if optimizer is not None else None,
        'center_bank': center_bank.state_dict() if center_bank is not None else None,
        'rng_state': rng_state,
        'history': list(history or []),
        'config': config,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        partial = path.with_name(path.name + '.partial')
        torch.save(payload, partial)
        os.replace(partial, path)
    except OSError as exc:
        log_error("Checkpoint write failed", exception=exc, extra_data={'path': str(path)})
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a checkpoint payload, checking it is a toolkit file of the current format."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location='cpu')
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or 'model_state' not in payload:
        raise CheckpointError(f"{path} is not a toolkit checkpoint")
    version = payload.get('format_version')
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path} has format version {version}, expected {FORMAT_VERSION}")
    return payload


def model_from_checkpoint(path: Union[str, Path], eval_feature: Optional[str] = None) -> VideoReIDNet:
    """Rebuild the network a checkpoint was written from and load its weights.

    ``eval_feature`` replaces the stored choice of evaluation feature.
    """
    payload = load_checkpoint(path)
    encoder_spec = FrameEncoderSpec(**{**payload['encoder_spec'], 'pretrained_source': None})
    head_spec = dict(payload['head_spec'])
    if eval_feature is not None:
        head_spec['eval_feature'] = eval_feature
    model = VideoReIDNet(encoder_spec, HeadSpec(**head_spec))
    model.load_state_dict(payload['model_state'])
    log_info("Model restored from checkpoint", {'path': str(path), 'epoch': payload['epoch']})
    return model
