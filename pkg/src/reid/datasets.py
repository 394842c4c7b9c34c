"""
Tracklet datasets.

Catalogs the supported on-disk layouts into an immutable TrackletIndex,
samples training clips, partitions tracklets into inference clips, composes
identity-balanced (C x K) batches and writes the synthetic fixture dataset.

Layouts:
    synthetic   root/<id>/<cam>/<tracklet>/frame_%05d.png, all tracklets train
    mars        root/info/{train_name.txt,test_name.txt,tracks_train_info.mat,
                tracks_test_info.mat,query_IDX.mat}, root/bbox_{train,test}/
    prid2011    root/multi_shot/cam_{a,b}/person_NNNN/*.png
    ilids-vid   root/i-LIDS-VID/sequences/cam{1,2}/personNNN/*.png
"""

from __future__ import annotations

import colorsys
import math
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from shared.exceptions import ConfigurationError, DatasetIOError, ValidationError
from shared.utils import make_rng, read_jsonl, read_json_file, write_json, write_jsonl
from .logger import log_error, log_info, log_success, log_warning

SPLITS = ('train', 'query', 'gallery')
LAYOUTS = ('mars', 'prid2011', 'ilids-vid', 'synthetic')
IMAGE_SUFFIXES = ('.png', '.jpg', '.jpeg', '.bmp')

RngLike = Union[int, None, np.random.Generator]


@dataclass(frozen=True)
class TrackletRecord:
    """One person seen by one camera: an ordered run of frame files."""

    person_id: int
    camera_id: int
    frame_paths: Tuple[str, ...]
    split: str = 'train'
    ordinal: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'frame_paths', tuple(str(p) for p in self.frame_paths))
        if not self.frame_paths:
            raise ValidationError(
                f"tracklet {self.person_id}/{self.camera_id}/{self.ordinal} has no frames"
            )
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split '{self.split}', expected one of {SPLITS}")

    def __len__(self) -> int:
        return len(self.frame_paths)

    @property
    def key(self) -> str:
        return f"{self.person_id}/{self.camera_id}/{self.ordinal}"


@dataclass(frozen=True)
class Clip:
    source: TrackletRecord
    frame_indices: Tuple[int, ...]

    def __post_init__(self):
        n = len(self.source)
        indices = tuple(int(i) for i in self.frame_indices)
        object.__setattr__(self, 'frame_indices', indices)
        if any(i < 0 or i >= n for i in indices):
            raise ValidationError(f"clip index out of range for tracklet {self.source.key} of {n} frames")
        if any(b < a for a, b in zip(indices, indices[1:])):
            raise ValidationError("clip frame indices must be non-decreasing")

    @property
    def T(self) -> int:
        return len(self.frame_indices)

    @property
    def frame_paths(self) -> List[str]:
        return [self.source.frame_paths[i] for i in self.frame_indices]


@dataclass(frozen=True)
class BatchSpec:
    """Batch structure B = C x K (identities x clips per identity)."""

    C: int = 8
    K: int = 4

    def __post_init__(self):
        if self.C < 2:
            raise ConfigurationError(f"batch needs at least 2 identities for negatives, got C={self.C}")
        if self.K < 2:
            raise ConfigurationError(f"batch needs at least 2 clips per identity for positives, got K={self.K}")

    @property
    def B(self) -> int:
        return self.C * self.K


@dataclass(frozen=True)
class TrackletIndex:
    """Immutable catalog of tracklets with their split labels.

    ``splits`` holds, for cross-camera layouts, the test identities of each
    random half split; ``split_id`` names the one the labels reflect.
    """

    records: Tuple[TrackletRecord, ...]
    layout: str
    root: str
    split_id: int = 0
    splits: Tuple[Tuple[int, ...], ...] = ()

    def split(self, name: str) -> List[TrackletRecord]:
        if name not in SPLITS:
            raise ValidationError(f"unknown split '{name}'")
        return [r for r in self.records if r.split == name]

    @property
    def train(self) -> List[TrackletRecord]:
        return self.split('train')

    @property
    def query(self) -> List[TrackletRecord]:
        return self.split('query')

    @property
    def gallery(self) -> List[TrackletRecord]:
        return self.split('gallery')

    def by_identity(self, split: str = 'train') -> Dict[int, List[TrackletRecord]]:
        grouped: Dict[int, List[TrackletRecord]] = OrderedDict()
        for record in sorted(self.split(split), key=lambda r: (r.person_id, r.camera_id, r.ordinal)):
            grouped.setdefault(record.person_id, []).append(record)
        return grouped

    def identities(self, split: str = 'train') -> List[int]:
        return sorted({r.person_id for r in self.split(split)})

    def train_label_map(self) -> Dict[int, int]:
        """Contiguous classifier labels for the training identities."""
        return {pid: label for label, pid in enumerate(self.identities('train'))}

    @property
    def num_train_classes(self) -> int:
        return len(self.identities('train'))

    def summary(self) -> Dict[str, object]:
        """Identity, tracklet and image counts per split plus tracklet length stats."""
        lengths = [len(r) for r in self.records]
        stats: Dict[str, object] = {'layout': self.layout, 'root': self.root, 'split_id': self.split_id}
        for name in SPLITS:
            subset = self.split(name)
            stats[name] = {
                'ids': len({r.person_id for r in subset}),
                'tracklets': len(subset),
                'images': sum(len(r) for r in subset),
            }
        if lengths:
            stats['tracklet_length'] = {
                'min': int(min(lengths)), 'max': int(max(lengths)), 'mean': float(np.mean(lengths)),
            }
        return stats

    def with_split(self, split_id: int) -> 'TrackletIndex':
        """Relabel a cross-camera index according to another random half split."""
        if not self.splits:
            raise ConfigurationError(f"layout '{self.layout}' has no alternative splits")
        if not 0 <= split_id < len(self.splits):
            raise ConfigurationError(
                f"split_id {split_id} out of range, expected 0..{len(self.splits) - 1}"
            )
        test_ids = set(self.splits[split_id])
        records = tuple(
            replace(r, split=_cross_camera_role(r, test_ids)) for r in self.records
        )
        return replace(self, records=records, split_id=split_id)

    def save_manifest(self, path: Union[str, Path]) -> Path:
        """Write the index as JSON lines: a header, then one line per tracklet."""
        header = {
            'kind': 'index', 'layout': self.layout, 'root': self.root,
            'split_id': self.split_id, 'splits': [list(s) for s in self.splits],
        }
        lines = [header] + [
            {
                'kind': 'tracklet', 'person_id': r.person_id, 'camera_id': r.camera_id,
                'ordinal': r.ordinal, 'split': r.split, 'frames': list(r.frame_paths),
            }
            for r in self.records
        ]
        return write_jsonl(path, lines)

    @classmethod
    def load_manifest(cls, path: Union[str, Path]) -> 'TrackletIndex':
        """Rebuild an index written by ``save_manifest``."""
        try:
            lines = read_jsonl(path)
        except OSError as exc:
            raise DatasetIOError(f"cannot read manifest {path}: {exc}") from exc
        if not lines or lines[0].get('kind') != 'index':
            raise ValidationError(f"manifest {path} has no index header")
        header = lines[0]
        records = tuple(
            TrackletRecord(
                person_id=int(line['person_id']), camera_id=int(line['camera_id']),
                frame_paths=tuple(line['frames']), split=line['split'], ordinal=int(line['ordinal']),
            )
            for line in lines[1:]
        )
        return cls(
            records=records, layout=header['layout'], root=header['root'],
            split_id=int(header.get('split_id', 0)),
            splits=tuple(tuple(int(p) for p in s) for s in header.get('splits', [])),
        )


def _cross_camera_role(record: TrackletRecord, test_ids) -> str:
    if record.person_id not in test_ids:
        return 'train'
    return 'query' if record.camera_id == 0 else 'gallery'


# ---------------------------------------------------------------------------
# Scanning
# ---------------------------------------------------------------------------

def scan_dataset(root: Union[str, Path], layout: str, split_id: int = 0, num_splits: int = 10,
                 seed: int = 0, verify_images: bool = True) -> TrackletIndex:
    """Catalog a dataset directory into a TrackletIndex.

    Ordering is deterministic (sorted by directory/file names or by the
    layout's info tables), so two scans of the same tree compare equal.
    """
    if layout not in LAYOUTS:
        raise ValidationError(f"unknown dataset layout '{layout}', expected one of {LAYOUTS}")
    root = Path(root)
    if not root.is_dir():
        raise DatasetIOError(f"dataset root not found: {root}")

    log_info("Scanning dataset", {'root': str(root), 'layout': layout, 'split_id': split_id})
    try:
        if layout == 'synthetic':
            index = _scan_synthetic(root)
        elif layout == 'mars':
            index = _scan_mars(root)
        elif layout == 'prid2011':
            index = _scan_cross_camera(
                root, layout, root / 'multi_shot', ('cam_a', 'cam_b'),
                root / 'splits_prid2011.json', split_id, num_splits, seed,
            )
        else:
            index = _scan_cross_camera(
                root, layout, root / 'i-LIDS-VID' / 'sequences', ('cam1', 'cam2'),
                root / 'splits_ilidsvid.json', split_id, num_splits, seed,
            )
        if verify_images:
            _verify_frames(index.records)
    except (ValidationError, ConfigurationError) as exc:
        log_error("Dataset scan failed", exception=exc, extra_data={'root': str(root), 'layout': layout})
        raise

    log_success("Dataset scanned", index.summary())
    return index


def _numbered_dirs(parent: Path) -> List[Tuple[int, Path]]:
    entries = []
    for child in sorted(parent.iterdir()):
        if not child.is_dir():
            continue
        if not child.name.isdigit():
            raise ValidationError(f"malformed synthetic layout, non-numeric directory: {child}")
        entries.append((int(child.name), child))
    return entries


def _image_files(directory: Path) -> List[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _scan_synthetic(root: Path) -> TrackletIndex:
    records = []
    for person_id, person_dir in _numbered_dirs(root):
        for camera_id, camera_dir in _numbered_dirs(person_dir):
            for ordinal, tracklet_dir in _numbered_dirs(camera_dir):
                frames = _image_files(tracklet_dir)
                if not frames:
                    raise ValidationError(f"empty tracklet directory: {tracklet_dir}")
                records.append(TrackletRecord(person_id, camera_id, tuple(frames), 'train', ordinal))
    if not records:
        raise ValidationError(f"no tracklets found under {root} for layout 'synthetic'")
    return TrackletIndex(records=tuple(records), layout='synthetic', root=str(root))


def _read_names(path: Path) -> List[str]:
    with open(path, 'r', encoding='utf-8') as handle:
        return [line.rstrip() for line in handle if line.strip()]


def _scan_mars(root: Path) -> TrackletIndex:
    from scipy.io import loadmat

    info = root / 'info'
    paths = {
        'train_names': info / 'train_name.txt',
        'test_names': info / 'test_name.txt',
        'train_tracks': info / 'tracks_train_info.mat',
        'test_tracks': info / 'tracks_test_info.mat',
        'query_idx': info / 'query_IDX.mat',
    }
    for path in paths.values():
        if not path.exists():
            raise ValidationError(f"MARS layout incomplete, missing {path}")

    train_names = _read_names(paths['train_names'])
    test_names = _read_names(paths['test_names'])
    track_train = loadmat(str(paths['train_tracks']))['track_train_info']
    track_test = loadmat(str(paths['test_tracks']))['track_test_info']
    query_rows = set((loadmat(str(paths['query_idx']))['query_IDX'].ravel() - 1).tolist())

    records = []
    for row, (start, end, pid, camid) in enumerate(track_train.astype(int).tolist()):
        record = _mars_record(root, 'bbox_train', train_names, start, end, pid, camid, 'train', row)
        if record is not None:
            records.append(record)
    offset = len(track_train)
    for row, (start, end, pid, camid) in enumerate(track_test.astype(int).tolist()):
        split = 'query' if row in query_rows else 'gallery'
        record = _mars_record(root, 'bbox_test', test_names, start, end, pid, camid, split, offset + row)
        if record is not None:
            records.append(record)
    return TrackletIndex(records=tuple(records), layout='mars', root=str(root))


def _mars_record(root: Path, home: str, names: List[str], start: int, end: int, pid: int,
                 camid: int, split: str, ordinal: int) -> Optional[TrackletRecord]:
    # -1 marks junk tracklets; 0 (distractors) stays in the gallery
    if pid == -1:
        return None
    img_names = names[start - 1:end]
    if not img_names:
        raise ValidationError(f"MARS tracklet row {ordinal} in {home} is empty")
    if len({name[:4] for name in img_names}) != 1:
        raise ValidationError(f"MARS tracklet row {ordinal} mixes person ids")
    if len({name[5] for name in img_names}) != 1:
        raise ValidationError(f"MARS tracklet row {ordinal} mixes cameras")
    frames = tuple(root / home / name[:4] / name for name in img_names)
    return TrackletRecord(int(pid), int(camid) - 1, frames, split, ordinal)


def _person_number(name: str) -> int:
    digits = ''.join(ch for ch in name if ch.isdigit())
    if not digits:
        raise ValidationError(f"cannot read a person number from directory '{name}'")
    return int(digits)


def _scan_cross_camera(root: Path, layout: str, base: Path, cam_names: Tuple[str, str],
                       split_file: Path, split_id: int, num_splits: int, seed: int) -> TrackletIndex:
    cam_dirs = [base / name for name in cam_names]
    for cam_dir in cam_dirs:
        if not cam_dir.is_dir():
            raise ValidationError(f"{layout} layout incomplete, missing {cam_dir}")
    per_cam = [{p.name: p for p in cam_dir.iterdir() if p.is_dir()} for cam_dir in cam_dirs]
    # Only identities seen by both cameras take part in the protocol
    shared = sorted(set(per_cam[0]) & set(per_cam[1]), key=_person_number)
    if len(shared) < 2:
        raise ValidationError(f"{layout} layout under {base} has fewer than 2 cross-camera identities")

    records = []
    for name in shared:
        pid = _person_number(name)
        for camera_id in (0, 1):
            frames = _image_files(per_cam[camera_id][name])
            if not frames:
                raise ValidationError(f"empty tracklet directory: {per_cam[camera_id][name]}")
            records.append(TrackletRecord(pid, camera_id, tuple(frames), 'train', 0))

    splits = _load_or_make_splits(split_file, [_person_number(n) for n in shared], num_splits, seed)
    index = TrackletIndex(records=tuple(records), layout=layout, root=str(root), splits=splits)
    return index.with_split(split_id)


def _load_or_make_splits(split_file: Path, person_ids: List[int], num_splits: int,
                         seed: int) -> Tuple[Tuple[int, ...], ...]:
    if split_file.exists():
        data = read_json_file(split_file)
        splits = []
        for entry in data:
            test = entry['test'] if isinstance(entry, dict) else entry
            splits.append(tuple(sorted(_person_number(str(t)) for t in test)))
        log_info("Loaded protocol splits", {'file': str(split_file), 'count': len(splits)})
        return tuple(splits)
    if num_splits < 1:
        raise ConfigurationError(f"num_splits must be >= 1, got {num_splits}")
    rng = np.random.default_rng(seed)
    ids = np.asarray(person_ids)
    half = len(ids) // 2
    splits = tuple(
        tuple(sorted(int(p) for p in ids[rng.permutation(len(ids))[:half]]))
        for _ in range(num_splits)
    )
    log_warning("No split file found, generated seeded half splits", {
        'file': str(split_file), 'count': num_splits, 'seed': seed,
    })
    return splits


def _verify_frames(records: Sequence[TrackletRecord]) -> None:
    for record in records:
        for path in record.frame_paths:
            try:
                with Image.open(path) as image:
                    image.verify()
            except (OSError, SyntaxError, ValueError) as exc:
                raise ValidationError(
                    f"unreadable image {path} in tracklet {record.key}: {exc}"
                ) from exc


# ---------------------------------------------------------------------------
# Clips and batches
# ---------------------------------------------------------------------------

def sample_training_clip(tracklet: TrackletRecord, T: int, rng: RngLike) -> Clip:
    """Draw T frames uniformly, without replacement when the tracklet allows it.

    Indices are sorted so the clip keeps temporal order.
    """
    if T < 1:
        raise ValidationError(f"clip length must be >= 1, got {T}")
    rng = make_rng(rng)
    n = len(tracklet)
    indices = rng.choice(n, size=T, replace=n < T)
    return Clip(tracklet, tuple(int(i) for i in np.sort(indices)))


def split_inference_clips(tracklet: TrackletRecord, T: int) -> List[Clip]:
    """Consecutive non-overlapping T-frame windows; the last one repeats the final frame."""
    if T < 1:
        raise ValidationError(f"clip length must be >= 1, got {T}")
    n = len(tracklet)
    clips = []
    for c in range(math.ceil(n / T)):
        indices = list(range(c * T, min((c + 1) * T, n)))
        indices += [n - 1] * (T - len(indices))
        clips.append(Clip(tracklet, tuple(indices)))
    return clips


class PKBatchSampler:
    """Identity-balanced batch stream over the training split.

    One pass (an epoch) shuffles the identities and cuts them into groups of
    C, topping up the last group with other identities, so every identity is
    visited at least once. Each identity contributes K tracklet draws, with
    replacement when it has fewer than K tracklets.
    """

    def __init__(self, index: TrackletIndex, spec: BatchSpec, rng: RngLike, split: str = 'train'):
        self.spec = spec
        self.rng = make_rng(rng)
        self.by_id = index.by_identity(split)
        if len(self.by_id) < spec.C:
            raise ConfigurationError(
                f"{split} split has {len(self.by_id)} identities, batch needs C={spec.C}"
            )
        self.person_ids = list(self.by_id)

    def __len__(self) -> int:
        return math.ceil(len(self.person_ids) / self.spec.C)

    def _groups(self) -> List[List[int]]:
        C = self.spec.C
        order = [self.person_ids[i] for i in self.rng.permutation(len(self.person_ids))]
        groups = [order[i:i + C] for i in range(0, len(order), C)]
        last = groups[-1]
        if len(last) < C:
            others = [pid for pid in self.person_ids if pid not in last]
            fill = self.rng.choice(len(others), size=C - len(last), replace=False)
            last.extend(others[i] for i in sorted(fill))
        return groups

    def __iter__(self) -> Iterator[List[Tuple[TrackletRecord, int]]]:
        K = self.spec.K
        for group in self._groups():
            batch = []
            for pid in group:
                tracklets = self.by_id[pid]
                picks = self.rng.choice(len(tracklets), size=K, replace=len(tracklets) < K)
                batch.extend((tracklets[i], pid) for i in picks)
            yield batch


def pk_batch_stream(index: TrackletIndex, spec: BatchSpec,
                    rng: RngLike) -> Iterator[List[Tuple[TrackletRecord, int]]]:
    """Iterate one epoch of C x K batches."""
    return iter(PKBatchSampler(index, spec, rng))


# ---------------------------------------------------------------------------
# Frame loading
# ---------------------------------------------------------------------------

def load_frames(paths: Sequence[str]) -> List[Image.Image]:
    """Decode frames as RGB, decoding each distinct path once."""
    decoded: Dict[str, Image.Image] = {}
    frames = []
    for path in paths:
        if path not in decoded:
            try:
                with Image.open(path) as image:
                    decoded[path] = image.convert('RGB')
            except (OSError, SyntaxError, ValueError) as exc:
                raise ValidationError(f"cannot decode frame {path}: {exc}") from exc
        frames.append(decoded[path])
    return frames


@dataclass(frozen=True)
class ClipRequest:
    record: TrackletRecord
    label: int
    seed: int


class ClipDataset(Dataset):
    """Materializes training clips; each request carries its own seed."""

    def __init__(self, requests: Sequence[ClipRequest], transform_cfg, clip_len: int):
        self.requests = list(requests)
        self.transform_cfg = transform_cfg
        self.clip_len = clip_len

    def __len__(self) -> int:
        return len(self.requests)

    def __getitem__(self, i: int):
        from .transforms import preprocess_clip

        request = self.requests[i]
        rng = np.random.default_rng(request.seed)
        clip = sample_training_clip(request.record, self.clip_len, rng)
        frames, erase_labels = preprocess_clip(load_frames(clip.frame_paths), self.transform_cfg, rng)
        return frames, torch.tensor(request.label, dtype=torch.long), erase_labels


# ---------------------------------------------------------------------------
# Synthetic fixture
# ---------------------------------------------------------------------------

_GOLDEN = 0.6180339887498949


def _identity_signature(person_id: int) -> Tuple[np.ndarray, np.ndarray, int]:
    """Deterministic appearance per identity: upper colour, lower colour, stripe period."""
    hue = (person_id * _GOLDEN) % 1.0
    value = 0.55 + 0.45 * ((person_id * 7) % 5) / 4
    upper = np.array(colorsys.hsv_to_rgb(hue, 0.85, value)) * 255.0
    lower = np.array(colorsys.hsv_to_rgb((hue + 0.5 + 0.11 * (person_id % 3)) % 1.0, 0.7, 1.1 - value / 2)) * 255.0
    stripe = 2 + person_id % 4
    return upper, lower, stripe


def _render_frame(height: int, width: int, person_id: int, camera_id: int,
                  rng: np.random.Generator) -> np.ndarray:
    upper, lower, stripe = _identity_signature(person_id)
    image = np.empty((height, width, 3), dtype=np.float64)
    split_row = height // 2
    image[:split_row] = upper
    image[split_row:] = lower
    rows = np.arange(height)
    striped = (rows < split_row) & ((rows // stripe) % 2 == 0)
    image[striped] *= 0.7
    image *= 1.0 - 0.08 * camera_id
    image = np.roll(image, int(rng.integers(-2, 3)), axis=0)
    image += rng.normal(0.0, 6.0, size=image.shape)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def generate_synthetic(root: Union[str, Path], num_ids: int = 8, cams: int = 2, tracklets_per: int = 1,
                       frames_per: int = 16, image_size: Tuple[int, int] = (64, 32),
                       rng: RngLike = 0) -> Path:
    """Write a synthetic dataset readable by ``scan_dataset(layout='synthetic')``.

    Every identity has a fixed colour/stripe signature so a small model can
    overfit it; camera shifts brightness, frames jitter and carry noise.
    """
    counts = {'num_ids': num_ids, 'cams': cams, 'tracklets_per': tracklets_per, 'frames_per': frames_per}
    for name, value in counts.items():
        if int(value) < 1:
            raise ValidationError(f"{name} must be >= 1, got {value}")
    height, width = (int(v) for v in image_size)
    if height < 2 or width < 1:
        raise ValidationError(f"image_size must be at least (2, 1), got {image_size}")

    root = Path(root)
    rng = make_rng(rng)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for person_id in range(num_ids):
            for camera_id in range(cams):
                for ordinal in range(tracklets_per):
                    tracklet_dir = root / f"{person_id:04d}" / f"{camera_id:02d}" / f"{ordinal:03d}"
                    tracklet_dir.mkdir(parents=True, exist_ok=True)
                    for frame in range(frames_per):
                        pixels = _render_frame(height, width, person_id, camera_id, rng)
                        Image.fromarray(pixels).save(tracklet_dir / f"frame_{frame:05d}.png")
        write_json(root / 'synthetic.json', {**counts, 'image_size': [height, width]})
    except OSError as exc:
        log_error("Synthetic dataset generation failed", exception=exc, extra_data={'root': str(root)})
        raise DatasetIOError(f"cannot write synthetic dataset under {root}: {exc}") from exc

    log_success("Synthetic dataset written", {
        'root': str(root), **counts, 'images': num_ids * cams * tracklets_per * frames_per,
    })
    return root
