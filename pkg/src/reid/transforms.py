"""
Per-frame preprocessing and augmentation for clips.

Training pipeline, applied to every frame of a clip:
resize -> zero pad -> random crop -> horizontal flip -> normalize -> random erasing.
Evaluation pipeline: resize -> normalize.

Geometry (crop offsets, flips) and erasing draw from two generators derived
from the caller's generator, so switching erasing on or off leaves the
geometry of a seeded clip unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torchvision.transforms.functional as TF
from PIL import Image
from torchvision.transforms import InterpolationMode

from shared.exceptions import ConfigurationError, ValidationError
from shared.utils import make_rng

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
REA_FILLS = ('random', 'mean')
MAX_ERASE_ATTEMPTS = 100


@dataclass(frozen=True)
class ReaConfig:
    probability: float = 0.5
    area_range: Tuple[float, float] = (0.02, 0.4)
    aspect_r1: float = 0.3
    fill: str = 'random'

    def __post_init__(self):
        object.__setattr__(self, 'area_range', tuple(float(v) for v in self.area_range))
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigurationError(f"rea.probability must be in [0, 1], got {self.probability}")
        s_l, s_h = self.area_range
        if not 0.0 < s_l <= s_h < 1.0:
            raise ConfigurationError(f"rea.area_range must satisfy 0 < s_l <= s_h < 1, got {self.area_range}")
        if not 0.0 < self.aspect_r1 <= 1.0:
            raise ConfigurationError(f"rea.aspect_r1 must be in (0, 1], got {self.aspect_r1}")
        if self.fill not in REA_FILLS:
            raise ConfigurationError(f"rea.fill must be one of {REA_FILLS}, got '{self.fill}'")

    @property
    def aspect_range(self) -> Tuple[float, float]:
        return (self.aspect_r1, 1.0 / self.aspect_r1)


@dataclass(frozen=True)
class TransformConfig:
    # 244 x 112 is taken literally; 256 x 128 and 224 x 112 are the common alternatives
    target_size: Tuple[int, int] = (244, 112)
    pad: int = 10
    flip_prob: float = 0.5
    mean: Tuple[float, float, float] = IMAGENET_MEAN
    std: Tuple[float, float, float] = IMAGENET_STD
    rea: ReaConfig = field(default_factory=ReaConfig)
    train: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'target_size', tuple(int(v) for v in self.target_size))
        object.__setattr__(self, 'mean', tuple(float(v) for v in self.mean))
        object.__setattr__(self, 'std', tuple(float(v) for v in self.std))
        if len(self.target_size) != 2 or min(self.target_size) < 1:
            raise ConfigurationError(f"target_size must be two positive ints, got {self.target_size}")
        if self.pad < 0:
            raise ConfigurationError(f"pad must be >= 0, got {self.pad}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigurationError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigurationError("mean and std must have three channel values")
        if any(s <= 0 for s in self.std):
            raise ConfigurationError(f"std components must be > 0, got {self.std}")

    def for_eval(self) -> 'TransformConfig':
        """Same settings with augmentation off."""
        return replace(self, train=False)


def _check_frame(image) -> None:
    if not isinstance(image, Image.Image):
        raise ValidationError(f"expected a decoded PIL image, got {type(image).__name__}")
    if image.mode != 'RGB':
        raise ValidationError(f"expected an RGB frame, got mode '{image.mode}'")
    if image.width == 0 or image.height == 0:
        raise ValidationError(f"zero-sized frame {image.size}")


def _stats(cfg: TransformConfig, like: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    mean = torch.tensor(cfg.mean, dtype=like.dtype).view(-1, 1, 1)
    std = torch.tensor(cfg.std, dtype=like.dtype).view(-1, 1, 1)
    return mean, std


def normalize(pixels: torch.Tensor, cfg: TransformConfig) -> torch.Tensor:
    """Channel-wise (x - mean) / std on (..., 3, H, W) tensors in [0, 1]."""
    mean, std = _stats(cfg, pixels)
    return (pixels - mean) / std


def denormalize(frames: torch.Tensor, cfg: TransformConfig) -> torch.Tensor:
    mean, std = _stats(cfg, frames)
    return frames * std + mean


def random_erasing(frame: torch.Tensor, rea: ReaConfig, rng) -> Tuple[torch.Tensor, bool]:
    """Erase one random rectangle of a normalized (3, H, W) frame.

    Returns the frame (a new tensor when erased) and whether a rectangle was
    applied. The coin is always drawn, then up to 100 rectangle proposals.
    """
    rng = make_rng(rng)
    if rng.random() >= rea.probability:
        return frame, False

    _, height, width = frame.shape
    area = height * width
    s_l, s_h = rea.area_range
    r_lo, r_hi = rea.aspect_range
    for _ in range(MAX_ERASE_ATTEMPTS):
        target_area = rng.uniform(s_l, s_h) * area
        aspect = rng.uniform(r_lo, r_hi)
        h = int(round(math.sqrt(target_area * aspect)))
        w = int(round(math.sqrt(target_area / aspect)))
        if 1 <= h < height and 1 <= w < width:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            erased = frame.clone()
            if rea.fill == 'random':
                patch = rng.standard_normal((frame.shape[0], h, w))
                erased[:, top:top + h, left:left + w] = torch.from_numpy(patch).to(frame.dtype)
            else:
                # zero in normalized space is the channel mean
                erased[:, top:top + h, left:left + w] = 0.0
            return erased, True
    return frame, False


def _child(rng: np.random.Generator) -> np.random.Generator:
    return np.random.default_rng(int(rng.integers(0, 2 ** 63 - 1)))


def preprocess_clip(images: Sequence[Image.Image], cfg: TransformConfig,
                    rng=None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Turn T decoded frames into a (T, 3, H, W) tensor plus per-frame erase labels.

    Erase labels are a float tensor of shape (T,) holding 1.0 exactly for
    frames that received an erase rectangle; always zero when ``cfg.train``
    is false.
    """
    if len(images) == 0:
        raise ValidationError("clip has no frames")
    for image in images:
        _check_frame(image)

    height, width = cfg.target_size
    rng = make_rng(rng)
    geometry_rng = _child(rng)
    erase_rng = _child(rng)

    frames: List[torch.Tensor] = []
    labels: List[float] = []
    for image in images:
        pixels = TF.to_tensor(TF.resize(image, [height, width], interpolation=InterpolationMode.BILINEAR))
        if cfg.train:
            if cfg.pad > 0:
                pixels = TF.pad(pixels, [cfg.pad], fill=0.0)
            top = int(geometry_rng.integers(0, 2 * cfg.pad + 1))
            left = int(geometry_rng.integers(0, 2 * cfg.pad + 1))
            pixels = TF.crop(pixels, top, left, height, width)
            if geometry_rng.random() < cfg.flip_prob:
                pixels = TF.hflip(pixels)
        frame = normalize(pixels, cfg)
        erased = False
        if cfg.train:
            frame, erased = random_erasing(frame, cfg.rea, erase_rng)
        frames.append(frame)
        labels.append(1.0 if erased else 0.0)

    return torch.stack(frames), torch.tensor(labels, dtype=torch.float32)
