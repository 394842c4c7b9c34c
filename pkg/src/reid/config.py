"""
Run configuration.

A run is described by one JSON document shared by every command. Loading
merges the file over DEFAULT_CONFIG, applies dotted ``key=value``
overrides, validates the result with ``RunConfigSerializer`` and builds the
frozen dataclasses the library consumes. Unknown keys are rejected at every
stage.
"""

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from django.conf import settings

from shared.exceptions import ConfigurationError
from shared.utils import write_json
from .datasets import BatchSpec
from .evalkit import ProtocolConfig
from .losses import LossWeights, RllConfig, margin_for_layout
from .model import FrameEncoderSpec, HeadSpec
from .optim import ScheduleConfig
from .serializers import RunConfigSerializer
from .transforms import IMAGENET_MEAN, IMAGENET_STD, ReaConfig, TransformConfig

DEFAULT_CONFIG: Dict[str, Any] = {
    'dataset': {
        'root': None,
        'layout': 'synthetic',
        'split_id': 0,
        'num_splits': 10,
        'split_seed': 0,
        'verify_images': True,
    },
    'batch': {'C': 8, 'K': 4},
    'clip_len': 4,
    'transform': {
        'target_size': [244, 112],
        'pad': 10,
        'flip_prob': 0.5,
        'mean': list(IMAGENET_MEAN),
        'std': list(IMAGENET_STD),
        'rea': {'probability': 0.5, 'area_range': [0.02, 0.4], 'aspect_r1': 0.3, 'fill': 'random'},
    },
    'encoder': {'name': 'residual50-ibn', 'embed_dim': 2048, 'last_stride': 1, 'pretrained_source': None},
    'head': {
        'attn_reduce_dim': 256,
        'bnneck_before_dml': True,
        'eval_feature': 'post_bn',
        'spatial_kernel': 3,
        'temporal_kernel': 3,
    },
    'loss': {'beta': 0.00005, 'epsilon': 0.1, 'center_lr': 0.5, 'negate_erase_attention': False},
    'rll': {'alpha': 2.0, 'margin': None, 'lam': 1.0, 'temperature': 0.0},
    'schedule': {
        'base_lr': 0.00035,
        'warmup_epochs': 10,
        'decay_epochs': [40, 70],
        'total_epochs': 120,
        'decay_factor': 0.1,
        'weight_decay': 0.0,
    },
    'eval': {'kind': 'auto', 'num_splits': 10, 'clip_len': None, 'ranks': [1, 5, 10, 20], 'metric': 'euclidean'},
    'seed': 0,
    'deterministic': False,
    'validate_every': 10,
    'init_from': None,
    'init_strict': False,
    'out_dir': None,
    'device': None,
    'num_workers': None,
}


@dataclass(frozen=True)
class DatasetSpec:
    root: str
    layout: str = 'synthetic'
    split_id: int = 0
    num_splits: int = 10
    split_seed: int = 0
    verify_images: bool = True


@dataclass(frozen=True)
class HeadConfig:
    """Head options; the class count comes from the training split."""
    attn_reduce_dim: int = 256
    bnneck_before_dml: bool = True
    eval_feature: str = 'post_bn'
    spatial_kernel: int = 3
    temporal_kernel: int = 3

    def spec(self, num_classes: int) -> HeadSpec:
        return HeadSpec(num_classes, self.attn_reduce_dim, self.bnneck_before_dml, self.eval_feature,
                        self.spatial_kernel, self.temporal_kernel)


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec
    batch: BatchSpec = field(default_factory=BatchSpec)
    clip_len: int = 4
    transform: TransformConfig = field(default_factory=TransformConfig)
    encoder: FrameEncoderSpec = field(default_factory=FrameEncoderSpec)
    head: HeadConfig = field(default_factory=HeadConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    center_lr: float = 0.5
    rll: RllConfig = field(default_factory=RllConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    eval: ProtocolConfig = field(default_factory=ProtocolConfig)
    seed: int = 0
    deterministic: bool = False
    validate_every: int = 10
    init_from: Optional[str] = None
    init_strict: bool = False
    out_dir: str = 'runs/default'
    device: str = 'cpu'
    num_workers: int = 0
    effective: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.clip_len < 1:
            raise ConfigurationError(f"clip_len must be >= 1, got {self.clip_len}")
        if self.validate_every < 1:
            raise ConfigurationError(f"validate_every must be >= 1, got {self.validate_every}")

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir)

    def echo(self, run_dir: Optional[Union[str, Path]] = None) -> Path:
        """Write the effective configuration to ``<run>/config.json``."""
        return write_json(Path(run_dir or self.run_dir) / 'config.json', self.effective)


# ---------------------------------------------------------------------------
# Documents and overrides
# ---------------------------------------------------------------------------

def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse a JSON config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return data


def parse_override(item: str) -> Tuple[List[str], Any]:
    """Split ``a.b=value``; the value is read as JSON, falling back to a plain string."""
    key, sep, raw = item.partition('=')
    if not sep or not key.strip():
        raise ConfigurationError(f"override '{item}' must look like key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split('.'), value


def _check_keys(data: Dict[str, Any], schema: Dict[str, Any], prefix: str = '') -> None:
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if key not in schema:
            raise ConfigurationError(f"unknown configuration key '{dotted}'")
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"configuration key '{dotted}' must be an object")
            _check_keys(value, schema[key], dotted + '.')


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply dotted ``key=value`` overrides to a copy of ``data``."""
    data = copy.deepcopy(data)
    for item in overrides:
        keys, value = parse_override(item)
        schema, target = DEFAULT_CONFIG, data
        for depth, key in enumerate(keys):
            dotted = '.'.join(keys[:depth + 1])
            if not isinstance(schema, dict) or key not in schema:
                raise ConfigurationError(f"unknown configuration key '{dotted}'")
            if depth == len(keys) - 1:
                if isinstance(schema[key], dict):
                    if not isinstance(value, dict):
                        raise ConfigurationError(f"configuration key '{dotted}' must be an object")
                    _check_keys(value, schema[key], dotted + '.')
                    target[key] = _merge(target.get(key, {}), value)
                else:
                    target[key] = value
            else:
                schema = schema[key]
                target = target.setdefault(key, {})
    return data


def _flatten_errors(errors, prefix: str = '') -> List[str]:
    messages = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            name = prefix if key == 'non_field_errors' else f"{prefix}{key}"
            messages.extend(_flatten_errors(value, (name + '.') if name else ''))
    elif isinstance(errors, list):
        for value in errors:
            if isinstance(value, (dict, list)):
                messages.extend(_flatten_errors(value, prefix))
            else:
                messages.append(f"{prefix.rstrip('.') or 'config'}: {value}")
    else:
        messages.append(f"{prefix.rstrip('.') or 'config'}: {errors}")
    return messages


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------

def build_run_config(data: Dict[str, Any]) -> RunConfig:
    """Validate a full document (defaults already merged) and build the RunConfig."""
    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigurationError('invalid configuration: ' + '; '.join(_flatten_errors(serializer.errors)))
    values = _plain(serializer.validated_data)

    dataset = values['dataset']
    if dataset['root'] is None:
        dataset['root'] = str(Path(settings.REID_DATA_ROOT) / dataset['layout'])
    if values['rll']['margin'] is None:
        values['rll']['margin'] = margin_for_layout(dataset['layout'])
    if values['eval']['clip_len'] is None:
        values['eval']['clip_len'] = values['clip_len']
    if values['out_dir'] is None:
        values['out_dir'] = str(Path(settings.REID_RUNS_DIR) / f"{dataset['layout']}-seed{values['seed']}")
    if values['device'] is None:
        values['device'] = settings.REID_DEVICE
    if values['num_workers'] is None:
        values['num_workers'] = settings.REID_NUM_WORKERS

    transform = dict(values['transform'])
    transform['rea'] = ReaConfig(**transform['rea'])
    loss = dict(values['loss'])
    center_lr = loss.pop('center_lr')

    return RunConfig(
        dataset=DatasetSpec(**dataset),
        batch=BatchSpec(**values['batch']),
        clip_len=values['clip_len'],
        transform=TransformConfig(**transform),
        encoder=FrameEncoderSpec(**values['encoder']),
        head=HeadConfig(**values['head']),
        loss=LossWeights(**loss),
        center_lr=center_lr,
        rll=RllConfig(**values['rll']),
        schedule=ScheduleConfig(**values['schedule']),
        eval=ProtocolConfig(**values['eval']),
        seed=values['seed'],
        deterministic=values['deterministic'],
        validate_every=values['validate_every'],
        init_from=values['init_from'],
        init_strict=values['init_strict'],
        out_dir=values['out_dir'],
        device=values['device'],
        num_workers=values['num_workers'],
        effective=values,
    )


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Defaults <- config file <- overrides, validated."""
    data: Dict[str, Any] = {}
    if path is not None:
        data = read_config_file(path)
        _check_keys(data, DEFAULT_CONFIG)
    data = apply_overrides(_merge(DEFAULT_CONFIG, data), overrides)
    return build_run_config(data)


def run_config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Validate a (partial) config dictionary and build a RunConfig."""
    _check_keys(data, DEFAULT_CONFIG)
    return build_run_config(_merge(DEFAULT_CONFIG, data))
