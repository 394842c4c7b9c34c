"""
Shared utilities used across the toolkit: structured JSON-lines records,
seed derivation and small filesystem helpers.
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
from django.core.serializers.json import DjangoJSONEncoder
from django.utils import timezone

PathLike = Union[str, Path]


def to_jsonable(value: Any) -> Any:
    """Convert numpy / torch scalars and containers into JSON-friendly values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    item = getattr(value, 'item', None)
    if callable(item) and getattr(value, 'ndim', None) == 0:
        return item()
    return value


def dumps_record(record: Dict[str, Any]) -> str:
    """Serialize one record as a single JSON line."""
    return json.dumps(to_jsonable(record), cls=DjangoJSONEncoder, sort_keys=True)


class MetricsLogWriter:
    """Append-only JSON-lines writer for per-step and per-validation records."""

    def __init__(self, path: PathLike, timestamps: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.timestamps = timestamps

    def reset(self) -> None:
        """Start an empty log."""
        self.path.write_text('', encoding='utf-8')

    def write(self, kind: str, **fields: Any) -> Dict[str, Any]:
        record = {'kind': kind, **fields}
        if self.timestamps:
            record['timestamp'] = timezone.now().isoformat()
        with open(self.path, 'a', encoding='utf-8') as handle:
            handle.write(dumps_record(record) + '\n')
        return record


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    """Read a JSON-lines file, skipping blank lines."""
    records = []
    with open(path, 'r', encoding='utf-8') as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> Path:
    """Write records as JSON lines, replacing the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        for record in records:
            handle.write(dumps_record(record) + '\n')
    return path


def read_json_file(path: PathLike) -> Any:
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)


def write_json(path: PathLike, payload: Any, indent: int = 2) -> Path:
    """Write ``payload`` as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(to_jsonable(payload), handle, cls=DjangoJSONEncoder, indent=indent, sort_keys=True)
        handle.write('\n')
    return path


def derive_seed(*parts: int) -> int:
    """Hash integer parts (global seed, epoch, ordinal, ...) into a 63-bit seed.

    The mapping is independent of process and worker layout, so per-clip
    randomness stays the same whatever the data-loading parallelism.
    """
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def make_rng(seed: Optional[Union[int, np.random.Generator]]) -> np.random.Generator:
    """Accept a seed or an existing generator and return a generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
