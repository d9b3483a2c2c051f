"""
Object-instance association between clips and the video-to-video distance
built on it.

Instances of two clips are matched by maximizing their mean per-frame IoU.
Matched pairs contribute area-weighted (1 - IoU) per frame; instances left
without a partner contribute their box area. Distances are in squared pixels.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import linear_sum_assignment

from ..exceptions import ArgumentError, ConfigurationError
from ..models import BoundingBox, TrackedClip
from ..utils.logger import get_logger


class InstanceTracks(BaseModel):
    """Dense per-instance view of a clip: boxes (U, T, 4) as x, y, w, h."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    ids: np.ndarray
    boxes: np.ndarray
    present: np.ndarray

    @property
    def areas(self) -> np.ndarray:
        """(U, T) box areas, zero where the instance is undetected."""
        return np.where(self.present, self.boxes[..., 2] * self.boxes[..., 3], 0.0)

    def row(self, instance_id: int) -> int:
        hits = np.nonzero(self.ids == instance_id)[0]
        if hits.size == 0:
            raise ArgumentError(f"instance {instance_id} not in clip")
        return int(hits[0])


class SimilarityMatrix(BaseModel):
    """mIoU between every instance pair of two clips."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    row_ids: np.ndarray
    col_ids: np.ndarray


class Assignment(BaseModel):
    """Matched instance pairs and the instances left without a partner."""

    matches: List[Tuple[int, int]] = Field(default_factory=list)
    unmatched_rows: List[int] = Field(default_factory=list)
    unmatched_cols: List[int] = Field(default_factory=list)
    total: float = 0.0

    @property
    def unmatched(self) -> List[Tuple[str, int]]:
        return [("n", u) for u in self.unmatched_rows] + [("m", v) for v in self.unmatched_cols]


class DistanceMatrix(BaseModel):
    """Symmetric SOIA distances over a set of clips."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    clip_ids: List[str]


def instance_tracks(clip: TrackedClip) -> InstanceTracks:
    """Dense instance tensor of a clip, cached on the clip."""
    if clip._tracks is not None:
        return clip._tracks
    ids = np.array(clip.instance_ids, dtype=np.int64)
    T = clip.num_frames
    boxes = np.zeros((ids.shape[0], T, 4))
    present = np.zeros((ids.shape[0], T), dtype=bool)
    row_of = {int(i): r for r, i in enumerate(ids)}
    for obj in clip.objects:
        r = row_of[obj.instance_id]
        boxes[r, obj.frame_index] = obj.bbox.as_array()
        present[r, obj.frame_index] = True
    tracks = InstanceTracks(ids=ids, boxes=boxes, present=present)
    clip._tracks = tracks
    return tracks


def _pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU of boxes broadcast over leading axes; last axis is (x, y, w, h)."""
    ax1, ay1 = a[..., 0] + a[..., 2], a[..., 1] + a[..., 3]
    bx1, by1 = b[..., 0] + b[..., 2], b[..., 1] + b[..., 3]
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(a[..., 0], b[..., 0]), 0.0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(a[..., 1], b[..., 1]), 0.0, None)
    inter = iw * ih
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def iou(b1: BoundingBox, b2: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 for disjoint boxes."""
    return float(_pairwise_iou(b1.as_array(), b2.as_array()))


def _check_lengths(clip_n: TrackedClip, clip_m: TrackedClip) -> None:
    if clip_n.num_frames != clip_m.num_frames:
        raise ArgumentError(
            f"clips {clip_n.clip_id} and {clip_m.clip_id} have different lengths "
            f"({clip_n.num_frames} vs {clip_m.num_frames})"
        )


def _frame_ious(tn: InstanceTracks, tm: InstanceTracks) -> np.ndarray:
    """(U, V, T) IoU, zero wherever either instance is undetected."""
    ious = _pairwise_iou(tn.boxes[:, None, :, :], tm.boxes[None, :, :, :])
    both = tn.present[:, None, :] & tm.present[None, :, :]
    return np.where(both, ious, 0.0)


def similarity_matrix(clip_n: TrackedClip, clip_m: TrackedClip) -> SimilarityMatrix:
    _check_lengths(clip_n, clip_m)
    tn, tm = instance_tracks(clip_n), instance_tracks(clip_m)
    values = _frame_ious(tn, tm).mean(axis=2) if tn.ids.size and tm.ids.size else np.zeros(
        (tn.ids.size, tm.ids.size)
    )
    return SimilarityMatrix(values=values, row_ids=tn.ids, col_ids=tm.ids)


def instance_similarity(clip_n: TrackedClip, clip_m: TrackedClip, u: int, v: int) -> float:
    """Mean IoU of instance ``u`` of clip n and ``v`` of clip m over all T frames."""
    _check_lengths(clip_n, clip_m)
    tn, tm = instance_tracks(clip_n), instance_tracks(clip_m)
    ru, rv = tn.row(u), tm.row(v)
    ious = _pairwise_iou(tn.boxes[ru], tm.boxes[rv])
    return float(np.mean(np.where(tn.present[ru] & tm.present[rv], ious, 0.0)))


def hungarian_max(
    matrix: np.ndarray,
    row_ids: Optional[Sequence[int]] = None,
    col_ids: Optional[Sequence[int]] = None,
    prune_zero: bool = True,
) -> Assignment:
    """
    Maximum-similarity one-to-one assignment of a rectangular matrix.

    The smaller side is matched completely; with ``prune_zero`` pairs of zero
    similarity are then demoted to unmatched. ``total`` is the similarity of
    the kept matches.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ArgumentError(f"expected a 2-D matrix, got shape {matrix.shape}")
    n_rows, n_cols = matrix.shape
    row_ids = list(range(n_rows)) if row_ids is None else [int(r) for r in row_ids]
    col_ids = list(range(n_cols)) if col_ids is None else [int(c) for c in col_ids]
    if n_rows == 0 or n_cols == 0:
        return Assignment(unmatched_rows=row_ids, unmatched_cols=col_ids)
    if not np.all(np.isfinite(matrix)):
        raise ArgumentError("similarity matrix must be finite")

    rows, cols = linear_sum_assignment(matrix, maximize=True)
    order = np.argsort(rows, kind="stable")
    rows, cols = rows[order], cols[order]

    matches = []
    total = 0.0
    matched_r, matched_c = set(), set()
    for r, c in zip(rows.tolist(), cols.tolist()):
        if prune_zero and matrix[r, c] <= 0.0:
            continue
        matches.append((row_ids[r], col_ids[c]))
        total += float(matrix[r, c])
        matched_r.add(r)
        matched_c.add(c)

    return Assignment(
        matches=matches,
        unmatched_rows=[row_ids[r] for r in range(n_rows) if r not in matched_r],
        unmatched_cols=[col_ids[c] for c in range(n_cols) if c not in matched_c],
        total=total,
    )


def associate(clip_n: TrackedClip, clip_m: TrackedClip) -> Assignment:
    """Instance association between two clips."""
    sim = similarity_matrix(clip_n, clip_m)
    return hungarian_max(sim.values, sim.row_ids, sim.col_ids)


def _distance_oriented(clip_n: TrackedClip, clip_m: TrackedClip) -> float:
    tn, tm = instance_tracks(clip_n), instance_tracks(clip_m)
    T = clip_n.num_frames
    an, am = tn.areas, tm.areas

    if tn.ids.size == 0 or tm.ids.size == 0:
        return float(an.sum() / T + am.sum() / T)

    ious = _frame_ious(tn, tm)
    assignment = hungarian_max(ious.mean(axis=2))
    matched_rows = [u for u, _ in assignment.matches]
    matched_cols = [v for _, v in assignment.matches]

    matched = 0.0
    for u, v in assignment.matches:
        weight = np.maximum(an[u], am[v])
        matched += float(np.sum((1.0 - ious[u, v]) * weight)) / T
    unmatched = float(np.sum(np.delete(an, matched_rows, axis=0))) / T
    unmatched += float(np.sum(np.delete(am, matched_cols, axis=0))) / T
    return matched + unmatched


def soia_distance(clip_n: TrackedClip, clip_m: TrackedClip) -> float:
    """
    Video-to-video distance between two clips of equal length.

    The pair is always evaluated in clip_id order so ``d(n, m)`` and ``d(m, n)``
    run the same computation.
    """
    _check_lengths(clip_n, clip_m)
    if clip_m.clip_id < clip_n.clip_id:
        clip_n, clip_m = clip_m, clip_n
    return _distance_oriented(clip_n, clip_m)


def distance_matrix(
    clips: Sequence[TrackedClip],
    threads: int = 1,
    logger: Optional[logging.Logger] = None,
) -> DistanceMatrix:
    """Pairwise SOIA distances; entries are independent of ``threads``."""
    logger = logger or get_logger(__name__)
    n = len(clips)
    if n:
        T = clips[0].num_frames
        for c in clips:
            if c.num_frames != T:
                raise ArgumentError("all clips must share the same number of frames")
    for c in clips:
        instance_tracks(c)

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    values = np.zeros((n, n))
    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda p: soia_distance(clips[p[0]], clips[p[1]]), pairs))
    else:
        results = [soia_distance(clips[i], clips[j]) for i, j in pairs]
    for (i, j), d in zip(pairs, results):
        values[i, j] = values[j, i] = d
    logger.debug(f"Computed {len(pairs)} SOIA distances over {n} clips")
    return DistanceMatrix(values=values, clip_ids=[c.clip_id for c in clips])


def margin_count(batch_size: int, margin_fraction: float) -> int:
    """Number of nearest non-anchor samples withheld from the negatives."""
    margin = int(math.floor(margin_fraction * batch_size))
    if batch_size < 2:
        raise ConfigurationError(f"batch size must be >= 2, got {batch_size}")
    if margin_fraction < 0:
        raise ConfigurationError(f"margin fraction must be >= 0, got {margin_fraction}")
    if margin > batch_size - 2:
        raise ConfigurationError(
            f"margin of {margin} samples leaves no negatives in a batch of {batch_size}"
        )
    return max(1, margin)


def select_pos_neg(
    anchor_index: int,
    distances: np.ndarray,
    batch_size: Optional[int] = None,
    margin_fraction: float = 0.25,
) -> Tuple[int, List[int]]:
    """
    Positive and negatives of one anchor from its distance row.

    The nearest non-anchor sample is the positive. The ``max(1, floor(alpha*B))``
    nearest samples (positive included) are withheld; the rest are negatives.
    Ties go to the lower batch index.
    """
    distances = np.asarray(distances, dtype=np.float64)
    batch_size = distances.shape[0] if batch_size is None else batch_size
    withheld = margin_count(batch_size, margin_fraction)
    others = np.array([k for k in range(batch_size) if k != anchor_index], dtype=np.int64)
    ranked = others[np.lexsort((others, distances[others]))]
    return int(ranked[0]), sorted(int(k) for k in ranked[withheld:])


class SoiaCache:
    """Order-free memo of SOIA distances keyed by clip_id pairs."""

    def __init__(self) -> None:
        self._values: Dict[Tuple[str, str], float] = {}

    def __len__(self) -> int:
        return len(self._values)

    def distance(self, clip_n: TrackedClip, clip_m: TrackedClip) -> float:
        if clip_n.clip_id == clip_m.clip_id:
            return 0.0
        key = tuple(sorted((clip_n.clip_id, clip_m.clip_id)))
        if key not in self._values:
            self._values[key] = soia_distance(clip_n, clip_m)
        return self._values[key]

    def matrix(self, clips: Sequence[TrackedClip], threads: int = 1) -> np.ndarray:
        n = len(clips)
        missing = [
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if tuple(sorted((clips[i].clip_id, clips[j].clip_id))) not in self._values
            and clips[i].clip_id != clips[j].clip_id
        ]
        if threads > 1 and len(missing) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                found = list(pool.map(lambda p: soia_distance(clips[p[0]], clips[p[1]]), missing))
            for (i, j), d in zip(missing, found):
                self._values[tuple(sorted((clips[i].clip_id, clips[j].clip_id)))] = d
        values = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                values[i, j] = values[j, i] = self.distance(clips[i], clips[j])
        return values
