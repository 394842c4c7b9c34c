"""
Learning-rate schedule and optimizer construction.

With base_lr = 3.5e-4, warmup 10 and decay at 40 / 70 (epochs are 1-indexed):

    E <= 10        3.5e-5 * E / 10
    10 < E <= 40   3.5e-4
    40 < E <= 70   3.5e-5
    70 < E         3.5e-6

The warmup branch peaks at base_lr * factor, so the jump to base_lr happens
at E = warmup + 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Tuple

import torch
import torch.nn as nn

from shared.exceptions import ConfigurationError, ValidationError


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 0.00035
    warmup_epochs: int = 10
    decay_epochs: Tuple[int, ...] = (40, 70)
    total_epochs: int = 120
    decay_factor: float = 0.1
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'decay_epochs', tuple(int(e) for e in self.decay_epochs))
        if self.base_lr <= 0 or self.decay_factor <= 0:
            raise ConfigurationError("base_lr and decay_factor must be positive")
        if self.warmup_epochs < 0:
            raise ConfigurationError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        boundaries = (self.warmup_epochs,) + self.decay_epochs
        if any(b <= a for a, b in zip(boundaries, boundaries[1:])):
            raise ConfigurationError(
                f"warmup and decay epochs must be strictly increasing, got {boundaries}"
            )
        if self.total_epochs < 1:
            raise ConfigurationError(f"total_epochs must be >= 1, got {self.total_epochs}")


def lr_at_epoch(epoch: int, cfg: ScheduleConfig) -> float:
    """Rate for 1-based ``epoch``: warmup ramps to base_lr * decay_factor, then base_lr decays at each boundary."""
    if not 1 <= epoch <= cfg.total_epochs:
        raise ValidationError(f"epoch {epoch} outside 1..{cfg.total_epochs}")
    if epoch <= cfg.warmup_epochs:
        return cfg.base_lr * cfg.decay_factor * epoch / cfg.warmup_epochs
    passed = sum(1 for boundary in cfg.decay_epochs if epoch > boundary)
    return cfg.base_lr * cfg.decay_factor ** passed


def lr_table(cfg: ScheduleConfig) -> List[float]:
    """Rates for every epoch of the schedule."""
    return [lr_at_epoch(epoch, cfg) for epoch in range(1, cfg.total_epochs + 1)]


def trainable_parameters(model: nn.Module) -> Iterable[nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def build_optimizer(model: nn.Module, cfg: ScheduleConfig) -> torch.optim.Adam:
    """Adam over the model's trainable parameters at the epoch-1 rate.

    Class centers live outside the module and never reach the optimizer.
    """
    return torch.optim.Adam(trainable_parameters(model), lr=lr_at_epoch(1, cfg),
                            weight_decay=cfg.weight_decay)


def apply_epoch_lr(optimizer: torch.optim.Optimizer, epoch: int, cfg: ScheduleConfig) -> float:
    """Set the epoch's rate on every parameter group and return it."""
    lr = lr_at_epoch(epoch, cfg)
    for group in optimizer.param_groups:
        group['lr'] = lr
    return lr
