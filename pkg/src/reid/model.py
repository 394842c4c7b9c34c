"""
Video re-identification network.

frames (B, T, 3, H, W)
  -> frame encoder, per frame, feature maps (B, T, D, h, w)
  -> global average pooling -> frame features f (B, T, D)
  -> temporal attention scores a (B, T) from the feature maps
  -> clip feature F = (1/T) * sum_t a_t * f_t           (pre-BN)
  -> BNNeck                                               (post-BN)
  -> bias-free linear classifier                          (logits)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from shared.exceptions import CheckpointError, ConfigurationError, NumericError, ValidationError
from .logger import log_info, log_warning

ENCODERS = ('residual50-ibn', 'residual50', 'tiny')
EVAL_FEATURES = ('post_bn', 'pre_bn')
RESIDUAL_EMBED_DIM = 2048


@dataclass(frozen=True)
class FrameEncoderSpec:
    name: str = 'residual50-ibn'
    embed_dim: int = RESIDUAL_EMBED_DIM
    last_stride: int = 1
    # a weight file path, or 'imagenet' for torchvision weights (residual50 only)
    pretrained_source: Optional[str] = None

    def __post_init__(self):
        if self.name not in ENCODERS:
            raise ConfigurationError(f"unknown encoder '{self.name}', expected one of {ENCODERS}")
        if self.embed_dim <= 0:
            raise ConfigurationError(f"embed_dim must be > 0, got {self.embed_dim}")
        if self.last_stride not in (1, 2):
            raise ConfigurationError(f"last_stride must be 1 or 2, got {self.last_stride}")
        if self.name != 'tiny' and self.embed_dim != RESIDUAL_EMBED_DIM:
            raise ConfigurationError(
                f"encoder '{self.name}' produces {RESIDUAL_EMBED_DIM} channels, got embed_dim={self.embed_dim}"
            )


@dataclass(frozen=True)
class HeadSpec:
    num_classes: int
    attn_reduce_dim: int = 256
    bnneck_before_dml: bool = True
    eval_feature: str = 'post_bn'
    spatial_kernel: int = 3
    temporal_kernel: int = 3

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.attn_reduce_dim <= 0:
            raise ConfigurationError(f"attn_reduce_dim must be > 0, got {self.attn_reduce_dim}")
        if self.eval_feature not in EVAL_FEATURES:
            raise ConfigurationError(f"eval_feature must be one of {EVAL_FEATURES}")
        for name in ('spatial_kernel', 'temporal_kernel'):
            kernel = getattr(self, name)
            if kernel < 1 or kernel % 2 == 0:
                raise ConfigurationError(f"{name} must be a positive odd integer, got {kernel}")


@dataclass
class ClipFeature:
    """Outputs of one forward pass over a batch of clips."""

    pre_bn: torch.Tensor
    post_bn: torch.Tensor
    logits: torch.Tensor
    attention: torch.Tensor
    dml_feature: torch.Tensor
    frame_features: Optional[torch.Tensor] = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------

class TinyEncoder(nn.Module):
    """Three conv-BN-ReLU blocks; for desk-scale runs and tests."""

    def __init__(self, embed_dim: int = 64, last_stride: int = 1):
        super().__init__()
        self.out_channels = embed_dim
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(16),
            nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(32),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, embed_dim, 3, stride=last_stride, padding=1, bias=False),
            nn.BatchNorm2d(embed_dim),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)


class IBN(nn.Module):
    """Instance norm on the first half of the channels, batch norm on the rest."""

    def __init__(self, planes: int, ratio: float = 0.5):
        super().__init__()
        self.half = int(planes * ratio)
        self.IN = nn.InstanceNorm2d(self.half, affine=True)
        self.BN = nn.BatchNorm2d(planes - self.half)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        first, second = torch.split(x, [self.half, x.size(1) - self.half], dim=1)
        return torch.cat([self.IN(first.contiguous()), self.BN(second.contiguous())], dim=1)


class ResidualEncoder(nn.Module):
    """ResNet-50 trunk without pooling/fc, optionally with IBN-a stages."""

    def __init__(self, ibn: bool = True, last_stride: int = 1, imagenet: bool = False):
        super().__init__()
        from torchvision.models import ResNet50_Weights, resnet50

        resnet = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1 if imagenet else None)
        if last_stride == 1:
            resnet.layer4[0].conv2.stride = (1, 1)
            resnet.layer4[0].downsample[0].stride = (1, 1)
        if ibn:
            for layer in (resnet.layer1, resnet.layer2, resnet.layer3):
                for block in layer:
                    block.bn1 = IBN(block.bn1.num_features)
        self.out_channels = RESIDUAL_EMBED_DIM
        self.backbone = nn.Sequential(
            resnet.conv1, resnet.bn1, resnet.relu, resnet.maxpool,
            resnet.layer1, resnet.layer2, resnet.layer3, resnet.layer4,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)


def build_encoder(spec: FrameEncoderSpec) -> nn.Module:
    """Frame encoder for a spec, with pretrained weights loaded when named."""
    imagenet = spec.pretrained_source == 'imagenet'
    if imagenet and spec.name != 'residual50':
        raise ConfigurationError(
            f"torchvision ImageNet weights exist only for residual50, not '{spec.name}'; pass a weight file"
        )
    if spec.name == 'tiny':
        encoder = TinyEncoder(spec.embed_dim, spec.last_stride)
    else:
        encoder = ResidualEncoder(ibn=spec.name == 'residual50-ibn', last_stride=spec.last_stride,
                                  imagenet=imagenet)
    if spec.pretrained_source and not imagenet:
        load_pretrained_encoder(encoder, spec.pretrained_source)
    return encoder


# ---------------------------------------------------------------------------
# Weight loading
# ---------------------------------------------------------------------------

@dataclass
class MatchReport:
    loaded: List[str] = field(default_factory=list)
    missing: List[str] = field(default_factory=list)
    shape_mismatch: List[str] = field(default_factory=list)
    unexpected: List[str] = field(default_factory=list)

    @property
    def skipped(self) -> List[str]:
        return self.missing + self.shape_mismatch

    def as_dict(self) -> Dict[str, object]:
        return {
            'loaded': len(self.loaded), 'missing': self.missing,
            'shape_mismatch': self.shape_mismatch, 'unexpected': self.unexpected,
        }


def load_matching_state(module: nn.Module, state_dict: Dict[str, torch.Tensor],
                        strict: bool = False) -> MatchReport:
    """Copy every tensor whose name and shape match; strict mode rejects any difference."""
    own = module.state_dict()
    report = MatchReport()
    for name, tensor in own.items():
        if name not in state_dict:
            report.missing.append(name)
        elif tuple(state_dict[name].shape) != tuple(tensor.shape):
            report.shape_mismatch.append(name)
        else:
            report.loaded.append(name)
    report.unexpected = [name for name in state_dict if name not in own]

    if strict and (report.skipped or report.unexpected):
        raise CheckpointError(
            f"strict load failed: missing={report.missing} shape_mismatch={report.shape_mismatch} "
            f"unexpected={report.unexpected}"
        )
    module.load_state_dict({name: state_dict[name] for name in report.loaded}, strict=False)
    return report


def load_pretrained_encoder(encoder: nn.Module, path: str) -> MatchReport:
    """Copy encoder weights from a file into ``encoder``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"pretrained weight file not found: {path}")
    state = torch.load(path, map_location='cpu')
    if isinstance(state, dict) and 'state_dict' in state:
        state = state['state_dict']
    # accept full-model checkpoints as well as bare encoder weights
    if any(key.startswith('encoder.') for key in state):
        state = {key[len('encoder.'):]: value for key, value in state.items() if key.startswith('encoder.')}
    report = load_matching_state(encoder, state)
    if report.skipped:
        log_warning("Pretrained encoder weights partially applied", {'path': str(path), **report.as_dict()})
    else:
        log_info("Pretrained encoder weights loaded", {'path': str(path), 'tensors': len(report.loaded)})
    return report


# ---------------------------------------------------------------------------
# Temporal attention
# ---------------------------------------------------------------------------

class TemporalAttention(nn.Module):
    """Per-frame attention logits: spatial conv (D -> r), spatial mean, temporal conv (r -> 1)."""

    def __init__(self, in_dim: int, reduce_dim: int = 256, spatial_kernel: int = 3, temporal_kernel: int = 3):
        super().__init__()
        self.in_dim = in_dim
        self.spatial = nn.Conv2d(in_dim, reduce_dim, spatial_kernel, padding=spatial_kernel // 2)
        self.temporal = nn.Conv1d(reduce_dim, 1, temporal_kernel, padding=temporal_kernel // 2)

    def logits(self, maps: torch.Tensor) -> torch.Tensor:
        if maps.dim() == 3:
            maps = maps[..., None, None]
        if maps.dim() != 5 or maps.size(2) != self.in_dim:
            raise ValidationError(
                f"attention expects (B, T, {self.in_dim}[, h, w]) input, got {tuple(maps.shape)}"
            )
        B, T, D, h, w = maps.shape
        x = F.relu(self.spatial(maps.reshape(B * T, D, h, w)))
        x = x.mean(dim=(2, 3)).view(B, T, -1).transpose(1, 2)
        return self.temporal(x).squeeze(1)

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.logits(maps), dim=1)


def aggregate_clip(frame_feats: torch.Tensor, scores: torch.Tensor) -> torch.Tensor:
    """F = (1/T) * sum_t a_t * f_t, scores and 1/T both applied."""
    T = frame_feats.size(1)
    return (scores.unsqueeze(-1) * frame_feats).sum(dim=1) / T


def temporal_attention(frame_feats: torch.Tensor, attention: TemporalAttention,
                       maps: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Clip features (B, D) and attention scores (B, T) from frame features (B, T, D).

    ``maps`` are the per-frame feature maps the scores are computed from;
    without them the frame features act as 1x1 maps.
    """
    if frame_feats.dim() != 3 or frame_feats.size(1) < 1:
        raise ValidationError(f"frame features must be (B, T>=1, D), got {tuple(frame_feats.shape)}")
    if not torch.isfinite(frame_feats).all():
        raise NumericError("non-finite frame features passed to temporal attention")
    scores = attention(frame_feats if maps is None else maps)
    return aggregate_clip(frame_feats, scores), scores


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

def _encoder_maps(frames: torch.Tensor, encoder: nn.Module) -> torch.Tensor:
    if frames.dim() != 5 or frames.size(2) != 3:
        raise ValidationError(f"frame batch must be (B, T, 3, H, W), got {tuple(frames.shape)}")
    B, T = frames.shape[:2]
    maps = encoder(frames.reshape(B * T, *frames.shape[2:]))
    return maps.view(B, T, *maps.shape[1:])


def encode_frames(frames: torch.Tensor, encoder: nn.Module) -> torch.Tensor:
    """Per-frame global-average-pooled embeddings, (B, T, D)."""
    return _encoder_maps(frames, encoder).mean(dim=(3, 4))


def bnneck_and_classify(pre_bn: torch.Tensor, head: 'VideoReIDNet') -> Tuple[torch.Tensor, torch.Tensor]:
    """Post-BN features and bias-free classifier logits."""
    expected = head.bnneck.num_features
    if pre_bn.dim() != 2 or pre_bn.size(1) != expected:
        raise ValidationError(f"BNNeck expects (B, {expected}) features, got {tuple(pre_bn.shape)}")
    post_bn = head.bnneck(pre_bn)
    return post_bn, head.classifier(post_bn)


class VideoReIDNet(nn.Module):

    def __init__(self, encoder_spec: FrameEncoderSpec, head_spec: HeadSpec):
        super().__init__()
        self.encoder_spec = encoder_spec
        self.head_spec = head_spec
        self.encoder = build_encoder(encoder_spec)
        dim = self.encoder.out_channels
        self.attention = TemporalAttention(
            dim, head_spec.attn_reduce_dim, head_spec.spatial_kernel, head_spec.temporal_kernel,
        )
        self.bnneck = nn.BatchNorm1d(dim)
        self.bnneck.bias.requires_grad_(False)
        nn.init.constant_(self.bnneck.weight, 1.0)
        nn.init.constant_(self.bnneck.bias, 0.0)
        self.classifier = nn.Linear(dim, head_spec.num_classes, bias=False)
        self.reset_classifier()

    @property
    def embed_dim(self) -> int:
        return self.encoder.out_channels

    def reset_classifier(self, num_classes: Optional[int] = None) -> None:
        """Replace the classifier with a fresh one, optionally resized."""
        if num_classes is not None and num_classes != self.classifier.out_features:
            self.classifier = nn.Linear(self.embed_dim, num_classes, bias=False).to(self.bnneck.weight.device)
            self.head_spec = replace(self.head_spec, num_classes=num_classes)
        nn.init.kaiming_normal_(self.classifier.weight, a=0, mode='fan_in')

    def forward(self, frames: torch.Tensor) -> ClipFeature:
        maps = _encoder_maps(frames, self.encoder)
        frame_feats = maps.mean(dim=(3, 4))
        pre_bn, scores = temporal_attention(frame_feats, self.attention, maps)
        post_bn, logits = bnneck_and_classify(pre_bn, self)
        dml_feature = post_bn if self.head_spec.bnneck_before_dml else pre_bn
        return ClipFeature(pre_bn, post_bn, logits, scores, dml_feature, frame_feats)

    @torch.no_grad()
    def embed(self, frames: torch.Tensor) -> torch.Tensor:
        """Evaluation feature of each clip in the batch."""
        output = self(frames)
        return output.post_bn if self.head_spec.eval_feature == 'post_bn' else output.pre_bn


def param_report(model: nn.Module) -> Dict[str, object]:
    """Exact parameter counts, overall and per top-level submodule."""
    rows = []
    for name, child in model.named_children():
        params = list(child.parameters())
        rows.append({
            'module': name,
            'total': sum(p.numel() for p in params),
            'trainable': sum(p.numel() for p in params if p.requires_grad),
        })
    params = list(model.parameters())
    return {
        'total_params': sum(p.numel() for p in params),
        'trainable_params': sum(p.numel() for p in params if p.requires_grad),
        'modules': rows,
    }


def render_param_table(report: Dict[str, object]) -> str:
    """Text table for a ``param_report`` result."""
    lines = [f"{'module':<16}{'total':>14}{'trainable':>14}"]
    for row in report['modules']:
        lines.append(f"{row['module']:<16}{row['total']:>14,}{row['trainable']:>14,}")
    lines.append(f"{'all':<16}{report['total_params']:>14,}{report['trainable_params']:>14,}")
    return '\n'.join(lines)
