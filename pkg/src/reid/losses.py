"""
Training losses.

    total = id + rll + beta * center + erase_attn

id          cross entropy against label-smoothed targets
rll         ranked list loss over non-trivial positives and negatives
center      half squared distance to class centers (centers held constant)
erase_attn  attention mass placed on erased frames, scaled by 1/T
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import torch
import torch.nn.functional as F

from shared.exceptions import ConfigurationError, NumericError, ValidationError

# positive/negative gap per dataset layout
MARGIN_PRESETS = {'mars': 1.3, 'ilids-vid': 1.3, 'prid2011': 0.04}
LOSS_COMPONENTS = ('id', 'rll', 'center', 'erase_attn')


@dataclass(frozen=True)
class RllConfig:
    alpha: float = 2.0
    margin: float = 1.3
    lam: float = 1.0
    temperature: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError(f"rll.alpha must be > 0, got {self.alpha}")
        if not 0 < self.margin < self.alpha:
            raise ConfigurationError(f"rll.margin must lie in (0, alpha={self.alpha}), got {self.margin}")
        if self.lam < 0:
            raise ConfigurationError(f"rll.lam must be >= 0, got {self.lam}")
        if self.temperature < 0:
            raise ConfigurationError(f"rll.temperature must be >= 0, got {self.temperature}")


def margin_for_layout(layout: str, default: float = 1.3) -> float:
    """Ranked-list margin preset for a dataset layout."""
    return MARGIN_PRESETS.get(layout, default)


@dataclass(frozen=True)
class LossWeights:
    beta: float = 0.00005
    epsilon: float = 0.1
    # sign-flipped erasing-attention term: rewards attention on erased frames
    negate_erase_attention: bool = False

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigurationError(f"loss.beta must be >= 0, got {self.beta}")
        if not 0 <= self.epsilon < 1:
            raise ConfigurationError(f"loss.epsilon must be in [0, 1), got {self.epsilon}")


class CenterBank:
    """Per-class feature centers, updated outside the optimizer."""

    def __init__(self, num_classes: int, dim: int, learning_rate: float = 0.5, seed: int = 0,
                 centers: Optional[torch.Tensor] = None):
        if learning_rate < 0:
            raise ConfigurationError(f"center learning rate must be >= 0, got {learning_rate}")
        self.learning_rate = float(learning_rate)
        if centers is None:
            generator = torch.Generator().manual_seed(seed)
            centers = torch.randn(num_classes, dim, generator=generator)
        if centers.shape != (num_classes, dim):
            raise ValidationError(f"centers must have shape {(num_classes, dim)}, got {tuple(centers.shape)}")
        self.centers = centers.detach().clone()

    @property
    def num_classes(self) -> int:
        return self.centers.size(0)

    def to(self, device) -> 'CenterBank':
        self.centers = self.centers.to(device)
        return self

    def state_dict(self) -> Dict[str, object]:
        return {'centers': self.centers.detach().cpu().clone(), 'learning_rate': self.learning_rate}

    @classmethod
    def from_state_dict(cls, state: Mapping[str, object]) -> 'CenterBank':
        centers = state['centers']
        return cls(centers.size(0), centers.size(1), state['learning_rate'], centers=centers)

    def check_labels(self, labels: torch.Tensor) -> None:
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValidationError(
                f"label without a center row: labels span [{int(labels.min())}, {int(labels.max())}], "
                f"bank has {self.num_classes} rows"
            )


@dataclass
class LossBundle:
    total: torch.Tensor
    id: torch.Tensor
    rll: torch.Tensor
    center: torch.Tensor
    erase_attn: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {name: float(torch.as_tensor(getattr(self, name)).detach()) for name in ('total',) + LOSS_COMPONENTS}


def smoothed_targets(labels: torch.Tensor, num_classes: int, epsilon: float) -> torch.Tensor:
    """q_y = 1 - (N-1)/N * eps, every other class eps/N."""
    one_hot = F.one_hot(labels, num_classes).to(torch.get_default_dtype())
    return one_hot * (1.0 - epsilon) + epsilon / num_classes


def id_loss(logits: torch.Tensor, labels: torch.Tensor, epsilon: float = 0.1) -> torch.Tensor:
    """Cross entropy against label-smoothed targets, averaged over the batch."""
    num_classes = logits.size(1)
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes}), got [{int(labels.min())}, {int(labels.max())}]")
    targets = smoothed_targets(labels, num_classes, epsilon).to(logits.dtype)
    log_probs = F.log_softmax(logits, dim=1)
    return (-targets * log_probs).sum(dim=1).mean()


def pairwise_distances(features: torch.Tensor) -> torch.Tensor:
    """Euclidean distances, clamped away from zero so the sqrt stays differentiable."""
    diff = features.unsqueeze(1) - features.unsqueeze(0)
    return diff.pow(2).sum(dim=-1).clamp(min=1e-12).sqrt()


def mining_masks(dist: torch.Tensor, labels: torch.Tensor, cfg: RllConfig) -> Tuple[torch.Tensor, torch.Tensor]:
    """Non-trivial positives (d > alpha - m) and negatives (d < alpha) per anchor row."""
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    eye = torch.eye(labels.numel(), dtype=torch.bool, device=labels.device)
    hard_pos = same & ~eye & (dist > cfg.alpha - cfg.margin)
    hard_neg = ~same & (dist < cfg.alpha)
    return hard_pos, hard_neg


def rll_loss(features: torch.Tensor, labels: torch.Tensor, cfg: RllConfig) -> torch.Tensor:
    """Mean over anchors of the positive hinge plus lam times the weighted negative hinge."""
    if not torch.isfinite(features).all():
        raise NumericError("non-finite features passed to the ranked list loss")
    dist = pairwise_distances(features)
    hard_pos, hard_neg = mining_masks(dist, labels, cfg)
    positive_boundary = cfg.alpha - cfg.margin

    pos_terms = (dist - positive_boundary) * hard_pos
    pos_count = hard_pos.sum(dim=1).clamp(min=1)
    loss_pos = pos_terms.sum(dim=1) / pos_count

    weights = torch.exp(cfg.temperature * (cfg.alpha - dist)) * hard_neg
    weight_sum = weights.sum(dim=1).clamp(min=1e-12)
    loss_neg = ((cfg.alpha - dist) * weights).sum(dim=1) / weight_sum

    return (loss_pos + cfg.lam * loss_neg).mean()


def center_loss(features: torch.Tensor, labels: torch.Tensor, bank: CenterBank) -> torch.Tensor:
    """Half the summed squared distance of features to their class centers."""
    bank.check_labels(labels)
    centers = bank.centers.to(features.device)[labels].detach()
    return 0.5 * (features - centers).pow(2).sum()


@torch.no_grad()
def update_centers(bank: CenterBank, features: torch.Tensor, labels: torch.Tensor) -> CenterBank:
    """c <- c - lr * (c - mean of the class's batch features), present classes only."""
    bank.check_labels(labels)
    features = features.detach().to(bank.centers.device)
    labels = labels.to(bank.centers.device)
    for label in torch.unique(labels):
        batch_mean = features[labels == label].mean(dim=0)
        row = bank.centers[label]
        bank.centers[label] = row - bank.learning_rate * (row - batch_mean)
    return bank


def erase_attention_loss(scores: torch.Tensor, erase_labels: torch.Tensor, negate: bool = False) -> torch.Tensor:
    """Batch mean of (1/T) * sum_t label_t * a_t."""
    if scores.shape != erase_labels.shape or scores.dim() != 2:
        raise ValidationError(
            f"scores and erase labels must share a (B, T) shape, got {tuple(scores.shape)} and {tuple(erase_labels.shape)}"
        )
    T = scores.size(1)
    per_clip = (erase_labels.to(scores.dtype) * scores).sum(dim=1) / T
    loss = per_clip.mean()
    return -loss if negate else loss


def total_loss(components: Mapping[str, torch.Tensor], weights: LossWeights,
               step: Optional[int] = None) -> LossBundle:
    """Combine the four components; raises NumericError naming a non-finite one."""
    for name in LOSS_COMPONENTS:
        if name not in components:
            raise ValidationError(f"missing loss component '{name}'")
        if not torch.isfinite(torch.as_tensor(components[name])).all():
            where = f" at step {step}" if step is not None else ""
            raise NumericError(f"non-finite {name} loss{where}")
    total = components['id'] + components['rll'] + weights.beta * components['center'] + components['erase_attn']
    return LossBundle(total, components['id'], components['rll'], components['center'], components['erase_attn'])


class ReIDCriterion:
    """All four losses on one forward output."""

    def __init__(self, rll: RllConfig, weights: LossWeights, bank: CenterBank):
        self.rll = rll
        self.weights = weights
        self.bank = bank

    def __call__(self, output, labels: torch.Tensor, erase_labels: torch.Tensor,
                 step: Optional[int] = None) -> LossBundle:
        features = output.dml_feature
        components = {
            'id': id_loss(output.logits, labels, self.weights.epsilon),
            'rll': rll_loss(features, labels, self.rll),
            'center': center_loss(features, labels, self.bank),
            'erase_attn': erase_attention_loss(output.attention, erase_labels,
                                               self.weights.negate_erase_attention),
        }
        return total_loss(components, self.weights, step)

    def update_centers(self, output, labels: torch.Tensor) -> CenterBank:
        return update_centers(self.bank, output.dml_feature, labels)
