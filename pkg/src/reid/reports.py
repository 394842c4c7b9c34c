"""
Static reports rendered from a run's metrics log.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from shared.exceptions import DatasetIOError, ValidationError
from shared.utils import read_jsonl
from .logger import log_success

LOSS_COLUMNS = ('total', 'id', 'rll', 'center', 'erase_attn')


def load_metrics(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Read a run's metrics log."""
    path = Path(path)
    if path.is_dir():
        path = path / 'metrics.jsonl'
    if not path.exists():
        raise DatasetIOError(f"metrics log not found: {path}")
    return read_jsonl(path)


def _of_kind(records: List[Dict[str, Any]], kind: str) -> List[Dict[str, Any]]:
    return [r for r in records if r.get('kind') == kind]


def epoch_table(records: List[Dict[str, Any]]) -> str:
    """Per-epoch loss table."""
    rows = _of_kind(records, 'epoch')
    header = f"{'epoch':>6}{'lr':>12}" + ''.join(f"{name:>12}" for name in LOSS_COLUMNS)
    lines = [header, '-' * len(header)]
    for row in rows:
        lines.append(f"{row['epoch']:>6}{row['lr']:>12.3e}" + ''.join(
            f"{row.get(name, float('nan')):>12.5f}" for name in LOSS_COLUMNS
        ))
    return '\n'.join(lines)


def validation_table(records: List[Dict[str, Any]]) -> str:
    """Per-validation rank-1 / mAP table."""
    rows = _of_kind(records, 'validation')
    if not rows:
        return 'no validation records'
    ranks = sorted(rows[0]['cmc'], key=int)
    header = f"{'epoch':>6}" + ''.join(f"{'R' + r:>10}" for r in ranks) + f"{'mAP':>10}"
    lines = [header, '-' * len(header)]
    for row in rows:
        lines.append(f"{row['epoch']:>6}" + ''.join(f"{row['cmc'][r] * 100:>9.2f}%" for r in ranks)
                     + f"{row['map'] * 100:>9.2f}%")
    return '\n'.join(lines)


def epochs_to_rank1(records: List[Dict[str, Any]], target: float = 1.0) -> Optional[int]:
    """First validated epoch reaching the target rank-1, or None."""
    for row in _of_kind(records, 'validation'):
        if row['rank1'] >= target:
            return int(row['epoch'])
    return None


def plot_losses(records: List[Dict[str, Any]], path: Union[str, Path]) -> Path:
    """Plot per-epoch losses to a PNG."""
    rows = _of_kind(records, 'epoch')
    if not rows:
        raise ValidationError("metrics log has no epoch records to plot")
    epochs = [r['epoch'] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 5))
    for name in LOSS_COLUMNS:
        ax.plot(epochs, [r[name] for r in rows], label=name)
    ax.set_xlabel('epoch')
    ax.set_ylabel('loss')
    ax.set_yscale('symlog', linthresh=1e-3)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_validation(records: List[Dict[str, Any]], path: Union[str, Path]) -> Path:
    """Plot validation rank-1 and mAP to a PNG."""
    rows = _of_kind(records, 'validation')
    epochs = [r['epoch'] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(epochs, [r['rank1'] for r in rows], marker='o', label='rank-1')
    ax.plot(epochs, [r['map'] for r in rows], marker='s', label='mAP')
    ax.set_xlabel('epoch')
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def render_report(run_dir: Union[str, Path], out_dir: Optional[Union[str, Path]] = None,
                  plots: bool = True) -> Dict[str, Path]:
    """Write report.txt and, when asked, losses.png / validation.png."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_metrics(run_dir)

    sections = ['Per-epoch losses', epoch_table(records), '', 'Validation', validation_table(records)]
    run = _of_kind(records, 'run')
    if run:
        sections += ['', f"Total updates: {run[-1]['total_steps']}, best rank-1: {run[-1]['best_rank1']:.4f}"]
    written = {'text': out_dir / 'report.txt'}
    written['text'].write_text('\n'.join(sections) + '\n', encoding='utf-8')

    if plots:
        written['losses'] = plot_losses(records, out_dir / 'losses.png')
        if _of_kind(records, 'validation'):
            written['validation'] = plot_validation(records, out_dir / 'validation.png')
    log_success("Report rendered", {'run_dir': str(run_dir), 'files': [str(p) for p in written.values()]})
    return written
