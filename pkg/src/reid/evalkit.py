"""
Video-level features and retrieval metrics.

A video feature is the mean of the clip features of a tracklet cut into
consecutive T-frame clips. Retrieval ranks the gallery by distance for every
query after removing gallery entries that share both the query's identity
and its camera; queries left without a correct match are excluded and
counted.

Protocols:
    fixed          the layout's own query/gallery split (MARS)
    cross-camera   camera 0 probes vs camera 1 gallery over n half splits (PRID2011, iLIDS-VID)
    closed-set     training identities, camera 0 probes vs other cameras (synthetic)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy.spatial.distance import cdist

from shared.exceptions import ConfigurationError, DatasetIOError, NumericError, ValidationError
from shared.utils import read_jsonl, write_json, write_jsonl
from .datasets import TrackletIndex, TrackletRecord, load_frames, split_inference_clips
from .logger import log_error, log_info, log_success
from .transforms import TransformConfig, preprocess_clip

PROTOCOLS = ('auto', 'fixed', 'cross-camera', 'closed-set')
METRICS = ('euclidean', 'cosine')
DEFAULT_RANKS = (1, 5, 10, 20)
LAYOUT_PROTOCOLS = {'mars': 'fixed', 'prid2011': 'cross-camera', 'ilids-vid': 'cross-camera',
                    'synthetic': 'closed-set'}


@dataclass(frozen=True)
class VideoFeature:
    vector: np.ndarray
    person_id: int
    camera_id: int
    tracklet: str

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.ndim != 1:
            raise ValidationError(f"video feature must be a vector, got shape {vector.shape}")
        if not np.isfinite(vector).all():
            raise NumericError(f"non-finite video feature for tracklet {self.tracklet}")
        object.__setattr__(self, 'vector', vector)


@dataclass(frozen=True)
class FeatureMeta:
    person_ids: np.ndarray
    camera_ids: np.ndarray

    @classmethod
    def of(cls, features: Sequence[VideoFeature]) -> 'FeatureMeta':
        return cls(np.array([f.person_id for f in features], dtype=np.int64),
                   np.array([f.camera_id for f in features], dtype=np.int64))

    def __len__(self) -> int:
        return len(self.person_ids)


@dataclass
class RetrievalResult:
    cmc: Dict[int, float]
    mean_ap: float
    num_queries: int
    excluded_queries: int


@dataclass
class EvalReport:
    cmc: Dict[int, float]
    map_score: float
    protocol: Dict[str, Any] = field(default_factory=dict)

    @property
    def rank1(self) -> float:
        return self.cmc.get(1, 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {'cmc': {str(k): v for k, v in self.cmc.items()}, 'map': self.map_score, 'protocol': self.protocol}

    def to_json(self, path: Union[str, Path]) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvalReport':
        return cls({int(k): float(v) for k, v in data['cmc'].items()}, float(data['map']), data.get('protocol', {}))

    def render_table(self) -> str:
        """Human-readable CMC / mAP table."""
        p = self.protocol
        lines = [
            f"Protocol: {p.get('kind', '?')} on {p.get('dataset', '?')}, "
            f"{p.get('splits', 1)} split(s), {p.get('feature_space', '?')} features, {p.get('metric', '?')} distance",
            f"Queries: {p.get('num_queries', '?')} evaluated, {p.get('excluded_queries', 0)} excluded",
            '-' * 24,
        ]
        for rank, value in sorted(self.cmc.items()):
            lines.append(f"{'Rank-' + str(rank):<12}{value * 100:>10.2f}%")
        lines.append(f"{'mAP':<12}{self.map_score * 100:>10.2f}%")
        return '\n'.join(lines)


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

def clip_features(tracklet: TrackletRecord, model, T: int, transform_cfg: Optional[TransformConfig] = None,
                  device: Union[str, torch.device] = 'cpu', clip_batch: int = 16) -> torch.Tensor:
    """Evaluation features of every inference clip, (m, D)."""
    transform_cfg = (transform_cfg or TransformConfig()).for_eval()
    clips = split_inference_clips(tracklet, T)
    outputs = []
    for start in range(0, len(clips), clip_batch):
        frames = torch.stack([
            preprocess_clip(load_frames(clip.frame_paths), transform_cfg)[0]
            for clip in clips[start:start + clip_batch]
        ])
        outputs.append(model.embed(frames.to(device)).cpu())
    return torch.cat(outputs)


def extract_video_feature(tracklet: TrackletRecord, model, T: int,
                          transform_cfg: Optional[TransformConfig] = None,
                          device: Union[str, torch.device] = 'cpu') -> VideoFeature:
    """Mean of the tracklet's clip features."""
    if len(tracklet) == 0:
        raise ValidationError(f"tracklet {tracklet.key} has no frames")
    was_training = model.training
    model.eval()
    try:
        vector = clip_features(tracklet, model, T, transform_cfg, device).mean(dim=0)
    finally:
        model.train(was_training)
    return VideoFeature(vector.double().numpy(), tracklet.person_id, tracklet.camera_id, tracklet.key)


def extract_features(records: Sequence[TrackletRecord], model, T: int,
                     transform_cfg: Optional[TransformConfig] = None,
                     device: Union[str, torch.device] = 'cpu') -> List[VideoFeature]:
    """Video features for every record, in order."""
    features = [extract_video_feature(record, model, T, transform_cfg, device) for record in records]
    log_info("Video features extracted", {'tracklets': len(features), 'clip_len': T})
    return features


def save_features(prefix: Union[str, Path], features: Sequence[VideoFeature]) -> Tuple[Path, Path]:
    """Write ``<prefix>.npy`` (N, D) plus a ``<prefix>.jsonl`` sidecar, row-aligned."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    matrix_path = prefix.with_suffix('.npy')
    sidecar_path = prefix.with_suffix('.jsonl')
    matrix = np.stack([f.vector for f in features]) if features else np.zeros((0, 0))
    np.save(matrix_path, matrix)
    write_jsonl(sidecar_path, [
        {'row': i, 'person_id': f.person_id, 'camera_id': f.camera_id, 'tracklet': f.tracklet}
        for i, f in enumerate(features)
    ])
    return matrix_path, sidecar_path


def load_features(prefix: Union[str, Path]) -> List[VideoFeature]:
    """Read a feature dump written by ``save_features``."""
    prefix = Path(prefix)
    try:
        matrix = np.load(prefix.with_suffix('.npy'))
        sidecar = read_jsonl(prefix.with_suffix('.jsonl'))
    except OSError as exc:
        raise DatasetIOError(f"cannot read feature dump {prefix}: {exc}") from exc
    if len(sidecar) != len(matrix):
        raise ValidationError(f"feature dump {prefix} has {len(matrix)} rows but {len(sidecar)} sidecar records")
    return [
        VideoFeature(matrix[entry['row']], entry['person_id'], entry['camera_id'], entry['tracklet'])
        for entry in sidecar
    ]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features).astype(np.float64)
    return np.stack([f.vector for f in features]).astype(np.float64)


def distance_matrix(query, gallery, metric: str = 'euclidean') -> np.ndarray:
    """Pairwise (Q, G) distances between two feature sets."""
    if metric not in METRICS:
        raise ValidationError(f"unknown distance metric '{metric}', expected one of {METRICS}")
    q, g = _as_matrix(query), _as_matrix(gallery)
    if q.shape[1] != g.shape[1]:
        raise ValidationError(f"feature dimension mismatch: query {q.shape[1]} vs gallery {g.shape[1]}")
    return cdist(q, g, metric=metric)


def evaluate_rankings(dist: np.ndarray, q_meta: FeatureMeta, g_meta: FeatureMeta,
                      ranks: Sequence[int] = DEFAULT_RANKS) -> RetrievalResult:
    """CMC and mAP in one pass over the filtered, stably sorted gallery lists."""
    dist = np.asarray(dist)
    if dist.shape != (len(q_meta), len(g_meta)):
        raise ValidationError(f"distance matrix {dist.shape} does not match {len(q_meta)} queries x {len(g_meta)} gallery")
    first_hits, average_precisions = [], []
    excluded = 0
    for qi in range(len(q_meta)):
        keep = ~((g_meta.person_ids == q_meta.person_ids[qi]) & (g_meta.camera_ids == q_meta.camera_ids[qi]))
        order = np.argsort(dist[qi], kind='stable')
        order = order[keep[order]]
        matches = g_meta.person_ids[order] == q_meta.person_ids[qi]
        if not matches.any():
            excluded += 1
            continue
        positions = np.flatnonzero(matches) + 1
        first_hits.append(positions[0])
        average_precisions.append(float(np.mean(np.arange(1, len(positions) + 1) / positions)))

    if not first_hits:
        raise ValidationError("no query has a valid gallery match after same-id/same-camera filtering")
    first_hits = np.asarray(first_hits)
    cmc = {int(k): float(np.mean(first_hits <= k)) for k in ranks}
    return RetrievalResult(cmc, float(np.mean(average_precisions)), len(first_hits), excluded)


def compute_cmc(dist: np.ndarray, q_meta: FeatureMeta, g_meta: FeatureMeta,
                ranks: Sequence[int] = DEFAULT_RANKS) -> Dict[int, float]:
    """Cumulative match accuracy at each requested rank."""
    return evaluate_rankings(dist, q_meta, g_meta, ranks).cmc


def compute_map(dist: np.ndarray, q_meta: FeatureMeta, g_meta: FeatureMeta) -> float:
    """Mean average precision over the valid queries."""
    return evaluate_rankings(dist, q_meta, g_meta, (1,)).mean_ap


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolConfig:
    kind: str = 'auto'
    num_splits: int = 10
    clip_len: int = 4
    ranks: Tuple[int, ...] = DEFAULT_RANKS
    metric: str = 'euclidean'

    def __post_init__(self):
        object.__setattr__(self, 'ranks', tuple(int(r) for r in self.ranks))
        if self.kind not in PROTOCOLS:
            raise ConfigurationError(f"unknown protocol '{self.kind}', expected one of {PROTOCOLS}")
        if self.num_splits < 1:
            raise ConfigurationError(f"num_splits must be >= 1, got {self.num_splits}")
        if self.clip_len < 1:
            raise ConfigurationError(f"clip_len must be >= 1, got {self.clip_len}")
        if not self.ranks or min(self.ranks) < 1:
            raise ConfigurationError(f"ranks must be positive, got {self.ranks}")
        if self.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}")

    def resolve(self, layout: str) -> str:
        return LAYOUT_PROTOCOLS.get(layout, 'fixed') if self.kind == 'auto' else self.kind


class _FeatureCache:
    """Extracts each tracklet once even when it appears in several splits."""

    def __init__(self, model, cfg: ProtocolConfig, transform_cfg, device):
        self.model, self.cfg, self.transform_cfg, self.device = model, cfg, transform_cfg, device
        self.features: Dict[str, VideoFeature] = {}

    def __call__(self, records: Sequence[TrackletRecord]) -> List[VideoFeature]:
        for record in records:
            if record.key not in self.features:
                self.features[record.key] = extract_video_feature(
                    record, self.model, self.cfg.clip_len, self.transform_cfg, self.device,
                )
        return [self.features[r.key] for r in records]


def _retrieve(query: List[VideoFeature], gallery: List[VideoFeature], cfg: ProtocolConfig) -> RetrievalResult:
    dist = distance_matrix(query, gallery, cfg.metric)
    return evaluate_rankings(dist, FeatureMeta.of(query), FeatureMeta.of(gallery), cfg.ranks)


def _require(records: List[TrackletRecord], what: str) -> List[TrackletRecord]:
    if not records:
        raise ConfigurationError(f"missing split: no {what} tracklets")
    return records


def run_protocol(index: TrackletIndex, model, protocol_cfg: Optional[ProtocolConfig] = None,
                 transform_cfg: Optional[TransformConfig] = None,
                 device: Union[str, torch.device] = 'cpu',
                 only_split: Optional[int] = None) -> EvalReport:
    """Score a model under the layout's protocol.

    For cross-camera layouts every split up to ``num_splits`` is averaged unless
    ``only_split`` names one. Test identities of splits other than the one a
    model trained on overlap its training identities.
    """
    cfg = protocol_cfg or ProtocolConfig()
    kind = cfg.resolve(index.layout)
    feature_space = getattr(getattr(model, 'head_spec', None), 'eval_feature', 'post_bn')
    extract = _FeatureCache(model, cfg, transform_cfg, device)
    protocol: Dict[str, Any] = {
        'dataset': index.layout, 'kind': kind, 'feature_space': feature_space, 'metric': cfg.metric,
        'clip_len': cfg.clip_len, 'filtering': 'gallery entries sharing id and camera with the query removed',
    }

    log_info("Running evaluation protocol", protocol)
    try:
        if kind == 'cross-camera':
            if not index.splits:
                raise ConfigurationError(f"layout '{index.layout}' carries no cross-camera splits")
            if only_split is not None:
                split_ids = [only_split]
            else:
                split_ids = list(range(min(cfg.num_splits, len(index.splits))))
            results = []
            for split_id in split_ids:
                view = index.with_split(split_id)
                results.append(_retrieve(extract(_require(view.query, 'query')),
                                         extract(_require(view.gallery, 'gallery')), cfg))
            cmc = {k: float(np.mean([r.cmc[k] for r in results])) for k in cfg.ranks}
            mean_ap = float(np.mean([r.mean_ap for r in results]))
            protocol.update({
                'splits': len(split_ids), 'split_ids': split_ids, 'probe_camera': 0, 'gallery_camera': 1,
                'per_split_rank1': [r.cmc[min(cfg.ranks)] for r in results],
                'num_queries': int(sum(r.num_queries for r in results)),
                'excluded_queries': int(sum(r.excluded_queries for r in results)),
                'note': ('scored on one split only' if only_split is not None else
                         'one model scores every split; test identities of splits other than the '
                         'training split may overlap its training identities'),
            })
        else:
            if kind == 'closed-set':
                pool = index.train
                query = _require([r for r in pool if r.camera_id == 0], 'camera-0 probe')
                gallery = _require([r for r in pool if r.camera_id != 0], 'non-probe camera')
            else:
                query = _require(index.query, 'query')
                gallery = _require(index.gallery, 'gallery')
                if index.layout == 'mars':
                    protocol['distractors'] = 'person id 0 kept in the gallery as non-matches; junk (-1) dropped at scan'
            result = _retrieve(extract(query), extract(gallery), cfg)
            cmc, mean_ap = result.cmc, result.mean_ap
            protocol.update({
                'splits': 1, 'num_queries': result.num_queries, 'excluded_queries': result.excluded_queries,
                'num_gallery': len(gallery),
            })
    except (ConfigurationError, ValidationError) as exc:
        log_error("Evaluation protocol failed", exception=exc, extra_data={'dataset': index.layout, 'kind': kind})
        raise

    report = EvalReport(cmc, mean_ap, protocol)
    log_success("Evaluation finished", {'rank1': report.rank1, 'map': report.map_score, 'kind': kind})
    return report
