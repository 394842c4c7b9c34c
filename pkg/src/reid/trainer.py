"""
Training loop.

One epoch is one pass of the identity-balanced sampler: enough C x K batches
to visit every training identity at least once. Clip sampling and
augmentation randomness comes from per-clip seeds derived from
(seed, epoch, clip ordinal), so the number of loader workers never changes
what a batch contains.

Run directory:
    config.json     effective configuration
    metrics.jsonl   step / epoch / validation / run records
    last.pt         checkpoint after every epoch
    best.pt         checkpoint with the best validation rank-1
"""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
from torch.utils.data import DataLoader

from shared.exceptions import ConfigurationError, NumericError, ReIDError
from shared.utils import MetricsLogWriter, derive_seed, write_jsonl
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .datasets import ClipDataset, ClipRequest, PKBatchSampler, TrackletIndex, scan_dataset
from .evalkit import EvalReport, run_protocol
from .logger import log_error, log_info, log_success, log_warning
from .losses import CenterBank, ReIDCriterion
from .model import MatchReport, VideoReIDNet, load_matching_state
from .optim import apply_epoch_lr, build_optimizer

METRICS_FILE = 'metrics.jsonl'
LAST_CHECKPOINT = 'last.pt'
BEST_CHECKPOINT = 'best.pt'


@dataclass
class TrainState:
    epoch: int
    model: VideoReIDNet
    optimizer: torch.optim.Optimizer
    center_bank: CenterBank
    rng: np.random.Generator
    history: List[Dict[str, Any]] = field(default_factory=list)
    total_steps: int = 0
    best_rank1: float = -1.0
    run_dir: Optional[Path] = None

    def rng_state(self) -> Dict[str, Any]:
        return {'numpy': self.rng.bit_generator.state, 'torch': torch.get_rng_state()}

    def restore_rng(self, state: Dict[str, Any]) -> None:
        self.rng.bit_generator.state = state['numpy']
        torch.set_rng_state(state['torch'])

    def records(self, kind: str) -> List[Dict[str, Any]]:
        return [r for r in self.history if r['kind'] == kind]


def set_deterministic(enabled: bool, seed: int) -> None:
    """Seed torch and numpy and optionally force deterministic kernels."""
    torch.manual_seed(seed)
    if enabled:
        os.environ.setdefault('CUBLAS_WORKSPACE_CONFIG', ':4096:8')
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False
    else:
        torch.use_deterministic_algorithms(False)
        torch.backends.cudnn.benchmark = True


def resolve_device(name: str) -> torch.device:
    """The configured device, falling back to CPU when CUDA is unavailable."""
    device = torch.device(name)
    if device.type == 'cuda' and not torch.cuda.is_available():
        log_warning("CUDA requested but unavailable, training on CPU", {'device': name})
        return torch.device('cpu')
    return device


def prepare_index(config: RunConfig) -> TrackletIndex:
    """Scan the configured dataset."""
    ds = config.dataset
    return scan_dataset(ds.root, ds.layout, split_id=ds.split_id, num_splits=ds.num_splits,
                        seed=ds.split_seed, verify_images=ds.verify_images)


def build_model(config: RunConfig, num_classes: int) -> VideoReIDNet:
    """Network for the configured encoder and head."""
    return VideoReIDNet(config.encoder, config.head.spec(num_classes))


def load_checkpoint_weights(model: VideoReIDNet, path: Union[str, Path], strict: bool = False) -> MatchReport:
    """Load matching tensors from a checkpoint.

    Strict mode fails on any missing, unexpected or reshaped tensor. Lenient
    mode skips them; a classifier skipped for a different class count is
    reinitialized.
    """
    payload = load_checkpoint(path)
    report = load_matching_state(model, payload['model_state'], strict=strict)
    if any(name.startswith('classifier.') for name in report.shape_mismatch):
        model.reset_classifier()
        log_info("Classifier reinitialized for a different class count", {
            'path': str(path), 'num_classes': model.head_spec.num_classes,
        })
    if report.skipped or report.unexpected:
        log_warning("Checkpoint tensors skipped", {'path': str(path), **report.as_dict()})
    log_success("Checkpoint weights loaded", {'path': str(path), 'tensors': len(report.loaded)})
    return report


def init_from_checkpoint(model: VideoReIDNet, path: Union[str, Path], strict: bool = False) -> VideoReIDNet:
    """Initialize ``model`` from another run's weights."""
    load_checkpoint_weights(model, path, strict)
    return model


def epoch_requests(sampler: PKBatchSampler, label_map: Dict[int, int], seed: int, epoch: int) -> List[ClipRequest]:
    """Materialize one epoch of batches as seeded clip requests, batch after batch."""
    requests = []
    for batch in sampler:
        for record, person_id in batch:
            requests.append(ClipRequest(record, label_map[person_id], derive_seed(seed, epoch, len(requests))))
    return requests


class Trainer:
    """Owns the model, optimizer and center bank for one run."""

    def __init__(self, config: RunConfig, index: Optional[TrackletIndex] = None):
        self.config = config
        self.run_dir = config.run_dir
        set_deterministic(config.deterministic, config.seed)
        self.device = resolve_device(config.device)
        self.index = index if index is not None else prepare_index(config)
        self.label_map = self.index.train_label_map()
        num_classes = len(self.label_map)
        if num_classes < config.batch.C:
            raise ConfigurationError(
                f"training split has {num_classes} identities, batch needs C={config.batch.C}"
            )

        model = build_model(config, num_classes)
        if config.init_from:
            init_from_checkpoint(model, config.init_from, config.init_strict)
        model.to(self.device)
        self.state = TrainState(
            epoch=0,
            model=model,
            optimizer=build_optimizer(model, config.schedule),
            center_bank=CenterBank(num_classes, model.embed_dim, config.center_lr, seed=config.seed).to(self.device),
            rng=np.random.default_rng(config.seed),
            run_dir=self.run_dir,
        )
        self.criterion = ReIDCriterion(config.rll, config.loss, self.state.center_bank)
        self.sampler = PKBatchSampler(self.index, config.batch, self.state.rng)
        self.metrics = MetricsLogWriter(self.run_dir / METRICS_FILE)

    # -- persistence -------------------------------------------------------

    def _record(self, kind: str, **fields: Any) -> Dict[str, Any]:
        record = self.metrics.write(kind, **fields)
        entry = {k: v for k, v in record.items() if k != 'timestamp'}
        self.state.history.append(entry)
        return entry

    def _save(self, name: str) -> Path:
        state = self.state
        return save_checkpoint(
            self.run_dir / name, state.model, state.epoch, state.optimizer, state.center_bank,
            state.rng_state(), state.history, self.config.effective,
        )

    def resume(self, path: Union[str, Path]) -> TrainState:
        """Restore model, optimizer, centers, RNG and history from ``path``."""
        payload = load_checkpoint(path)
        state = self.state
        state.model.load_state_dict(payload['model_state'])
        if payload['optimizer_state'] is not None:
            state.optimizer.load_state_dict(payload['optimizer_state'])
        if payload['center_bank'] is not None:
            bank = CenterBank.from_state_dict(payload['center_bank']).to(self.device)
            state.center_bank.centers = bank.centers
            state.center_bank.learning_rate = bank.learning_rate
        if payload['rng_state'] is not None:
            state.restore_rng(payload['rng_state'])
        state.epoch = int(payload['epoch'])
        state.history = list(payload['history'])
        state.total_steps = max((r.get('step', 0) for r in state.history if r['kind'] == 'step'), default=0)
        state.best_rank1 = max((r['rank1'] for r in state.history if r['kind'] == 'validation'), default=-1.0)
        # the log restarts from what the checkpoint knew
        write_jsonl(self.metrics.path, state.history)
        log_info("Training resumed", {'path': str(path), 'epoch': state.epoch, 'steps': state.total_steps})
        return state

    # -- loop --------------------------------------------------------------

    def _loader(self, epoch: int) -> DataLoader:
        requests = epoch_requests(self.sampler, self.label_map, self.config.seed, epoch)
        dataset = ClipDataset(requests, self.config.transform, self.config.clip_len)
        return DataLoader(dataset, batch_size=self.config.batch.B, shuffle=False,
                          num_workers=self.config.num_workers, drop_last=False)

    def train_epoch(self, epoch: int) -> Dict[str, Any]:
        """One pass over the epoch's batches; returns the epoch's mean losses."""
        state, device = self.state, self.device
        lr = apply_epoch_lr(state.optimizer, epoch, self.config.schedule)
        state.model.train()
        sums: Dict[str, float] = defaultdict(float)
        batches = 0
        for frames, labels, erase_labels in self._loader(epoch):
            frames, labels, erase_labels = frames.to(device), labels.to(device), erase_labels.to(device)
            step = state.total_steps + 1
            output = state.model(frames)
            bundle = self.criterion(output, labels, erase_labels, step=step)
            state.optimizer.zero_grad(set_to_none=True)
            bundle.total.backward()
            state.optimizer.step()
            self.criterion.update_centers(output, labels)
            state.total_steps = step

            values = bundle.as_floats()
            self._record('step', epoch=epoch, step=step, lr=state.optimizer.param_groups[0]['lr'], **values)
            for name, value in values.items():
                sums[name] += value
            batches += 1

        means = {name: value / max(batches, 1) for name, value in sums.items()}
        summary = self._record('epoch', epoch=epoch, lr=lr, batches=batches, **means)
        log_info("Epoch finished", summary)
        return summary

    def validate(self, epoch: int) -> EvalReport:
        """Score the model and record the result."""
        only_split = self.index.split_id if self.index.splits else None
        report = run_protocol(self.index, self.state.model, self.config.eval, self.config.transform, self.device,
                              only_split=only_split)
        self._record('validation', epoch=epoch, rank1=report.rank1,
                     cmc={str(k): v for k, v in report.cmc.items()}, map=report.map_score)
        return report

    def fit(self) -> TrainState:
        """Train the remaining epochs, validating and checkpointing as configured."""
        config, state = self.config, self.state
        total = config.schedule.total_epochs
        log_info("Training started", {
            'run_dir': str(self.run_dir), 'layout': config.dataset.layout, 'classes': len(self.label_map),
            'batch': config.batch.B, 'epochs': total, 'start_epoch': state.epoch + 1,
        })
        try:
            for epoch in range(state.epoch + 1, total + 1):
                self.train_epoch(epoch)
                state.epoch = epoch
                if epoch % config.validate_every == 0 or epoch == total:
                    report = self.validate(epoch)
                    if report.rank1 > state.best_rank1:
                        state.best_rank1 = report.rank1
                        self._save(BEST_CHECKPOINT)
                self._save(LAST_CHECKPOINT)
        except NumericError as exc:
            log_error("Training aborted on a non-finite loss", exception=exc,
                      extra_data={'epoch': state.epoch + 1, 'step': state.total_steps + 1})
            raise
        except ReIDError as exc:
            log_error("Training failed", exception=exc, extra_data={'run_dir': str(self.run_dir)})
            raise

        self._record('run', epochs=state.epoch, total_steps=state.total_steps, best_rank1=state.best_rank1)
        log_success("Training finished", {
            'run_dir': str(self.run_dir), 'epochs': state.epoch, 'total_steps': state.total_steps,
            'best_rank1': state.best_rank1,
        })
        return state


def train(config: RunConfig, resume_from: Optional[Union[str, Path]] = None,
          index: Optional[TrackletIndex] = None) -> TrainState:
    """Run (or resume) a full training run and return the final state."""
    trainer = Trainer(config, index)
    config.echo(trainer.run_dir)
    if resume_from is not None:
        trainer.resume(resume_from)
    else:
        trainer.metrics.reset()
    return trainer.fit()
