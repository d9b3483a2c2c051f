"""
Deterministic synthetic driving scenarios.

Each scenario kind scripts one main actor (or none) plus background actors.
Ego motion is approximated by a horizontal flow applied to lane polylines and
background actors. Clips are written in the ingest file formats so the whole
pipeline runs through real files.
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..models import (
    BoundingBox,
    ClipRecord,
    DataConfig,
    DetectedObject,
    LanePolyline,
    TrackedClip,
)
from ..utils.logger import get_logger
from .ingest import rasterize_lanes, serialize_track_file, write_lane_file, write_manifest

CAR, PEDESTRIAN, TRUCK = 2, 0, 3


class ScenarioKind(str, Enum):
    CROSS_LEFT_TO_RIGHT = "cross_left_to_right"
    CROSS_RIGHT_TO_LEFT = "cross_right_to_left"
    LEAD_VEHICLE_STOP = "lead_vehicle_stop"
    ONCOMING_PASS = "oncoming_pass"
    EMPTY_ROAD = "empty_road"
    EGO_TURN_LEFT_PROXY = "ego_turn_left_proxy"
    EGO_TURN_RIGHT_PROXY = "ego_turn_right_proxy"

    @property
    def ordinal(self) -> int:
        return list(ScenarioKind).index(self)


class ScenarioSpec(BaseModel):
    """Parameters of one synthetic clip."""

    model_config = ConfigDict(frozen=True)

    kind: ScenarioKind
    actor_count: int = Field(default=2, ge=0)
    noise: float = Field(default=2.0, ge=0)
    seed: int = 0
    width: float = Field(default=1280.0, gt=0)
    height: float = Field(default=720.0, gt=0)
    num_frames: int = Field(default=10, ge=2)
    clip_id: Optional[str] = None


class Scenario(BaseModel):
    """Rendered scenario: detections and the lane polylines of every frame."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: ScenarioSpec
    objects: List[DetectedObject]
    polylines: List[LanePolyline]


class SyntheticDataset(BaseModel):
    """Labeled, unlabeled and validation pools of a synthetic benchmark."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    classes: List[str]
    labeled: List[TrackedClip] = Field(default_factory=list)
    unlabeled: List[TrackedClip] = Field(default_factory=list)
    validation: List[TrackedClip] = Field(default_factory=list)
    specs: Dict[str, ScenarioSpec] = Field(default_factory=dict)


# (cx, cy, w, h) as fractions of (W, H, W, H) at the start and end of the clip
_MAIN_ACTOR: Dict[ScenarioKind, Tuple[int, Tuple[float, ...], Tuple[float, ...]]] = {
    ScenarioKind.CROSS_LEFT_TO_RIGHT: (CAR, (0.10, 0.55, 0.13, 0.12), (0.90, 0.55, 0.13, 0.12)),
    ScenarioKind.CROSS_RIGHT_TO_LEFT: (CAR, (0.90, 0.55, 0.13, 0.12), (0.10, 0.55, 0.13, 0.12)),
    ScenarioKind.LEAD_VEHICLE_STOP: (CAR, (0.50, 0.58, 0.09, 0.10), (0.50, 0.64, 0.20, 0.21)),
    ScenarioKind.ONCOMING_PASS: (TRUCK, (0.44, 0.55, 0.05, 0.05), (0.12, 0.72, 0.24, 0.24)),
}

_EGO_FLOW = {
    ScenarioKind.EGO_TURN_LEFT_PROXY: 0.06,
    ScenarioKind.EGO_TURN_RIGHT_PROXY: -0.06,
}


def _progress(kind: ScenarioKind, T: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, T)
    if kind == ScenarioKind.LEAD_VEHICLE_STOP:
        # approach over the first 60% of the clip, then hold
        return np.minimum(t / 0.6, 1.0)
    return t


def _lane_polylines(spec: ScenarioSpec, shift: float, frames: Tuple[int, int]) -> List[LanePolyline]:
    W, H = spec.width, spec.height
    left = [(0.15 * W + shift, H), (0.45 * W + shift, 0.55 * H)]
    right = [(0.85 * W + shift, H), (0.55 * W + shift, 0.55 * H)]
    return [LanePolyline(frames=frames, points=left), LanePolyline(frames=frames, points=right)]


def _clamped_box(cx: float, cy: float, w: float, h: float, W: float, H: float) -> Optional[BoundingBox]:
    x0, y0 = max(cx - w / 2.0, 0.0), max(cy - h / 2.0, 0.0)
    x1, y1 = min(cx + w / 2.0, W), min(cy + h / 2.0, H)
    if x1 - x0 <= 1.0 or y1 - y0 <= 1.0:
        return None
    return BoundingBox(x_min=x0, y_min=y0, width=x1 - x0, height=y1 - y0)


def render(spec: ScenarioSpec, rng: Optional[np.random.Generator] = None) -> Scenario:
    """Script the actors and lanes of one scenario."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    W, H, T = spec.width, spec.height, spec.num_frames
    flow = _EGO_FLOW.get(spec.kind, 0.0) * W
    tracks: List[Tuple[int, int, np.ndarray]] = []   # (instance_id, class_id, (T, 4) cx cy w h)

    if spec.kind in _MAIN_ACTOR:
        class_id, start, end = _MAIN_ACTOR[spec.kind]
        start = np.array(start) * [W, H, W, H]
        end = np.array(end) * [W, H, W, H]
        jitter = rng.uniform(-0.03, 0.03, size=2) * [W, H]
        start[:2] += jitter
        end[:2] += jitter
        p = _progress(spec.kind, T)[:, None]
        tracks.append((1, class_id, start[None, :] * (1.0 - p) + end[None, :] * p))

    background = 0 if spec.kind == ScenarioKind.EMPTY_ROAD else spec.actor_count
    if spec.kind in _EGO_FLOW:
        background = max(background, 2)
    for k in range(background):
        roadside = rng.choice([0.08, 0.92]) + rng.uniform(-0.04, 0.04)
        cy = rng.uniform(0.62, 0.85)
        class_id = int(rng.choice([CAR, PEDESTRIAN]))
        w, h = (0.08, 0.09) if class_id == CAR else (0.025, 0.11)
        frames = np.arange(T)[:, None]
        base = np.array([roadside * W, cy * H, w * W, h * H])
        track = np.repeat(base[None, :], T, axis=0)
        track[:, 0:1] += flow * frames
        tracks.append((2 + k, class_id, track))

    objects = []
    for instance_id, class_id, track in tracks:
        noise = rng.normal(0.0, spec.noise, size=(T, 2)) if spec.noise > 0 else np.zeros((T, 2))
        for t in range(T):
            cx, cy, w, h = track[t]
            box = _clamped_box(cx + noise[t, 0], cy + noise[t, 1], w, h, W, H)
            if box is not None:
                objects.append(
                    DetectedObject(frame_index=t, instance_id=instance_id, class_id=class_id, bbox=box)
                )

    if flow == 0.0:
        polylines = _lane_polylines(spec, 0.0, (0, T - 1))
    else:
        polylines = [line for t in range(T) for line in _lane_polylines(spec, flow * t, (t, t))]
    return Scenario(spec=spec, objects=objects, polylines=polylines)


def generate(
    spec: ScenarioSpec,
    rng: Optional[np.random.Generator] = None,
    lane_step: float = 8.0,
) -> TrackedClip:
    """Generate a labeled clip; the label is the scenario kind index."""
    scenario = render(spec, rng)
    lanes = rasterize_lanes(
        scenario.polylines, lane_step, spec.num_frames, 1, bounds=(spec.width, spec.height)
    )
    return TrackedClip(
        clip_id=spec.clip_id or f"{spec.kind.value}_{spec.seed}",
        width=spec.width,
        height=spec.height,
        num_frames=spec.num_frames,
        objects=scenario.objects,
        lanes=lanes,
        label=spec.kind.ordinal,
    )


def _clip_seed(seed: int, kind: ScenarioKind, split: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, kind.ordinal, split, k]).generate_state(1)[0])


class SyntheticCorpus:
    """Builds stratified synthetic datasets and writes them as ingestable files."""

    def __init__(
        self,
        data_config: Optional[DataConfig] = None,
        actor_count: int = 2,
        noise: float = 2.0,
        logger: Optional[logging.Logger] = None,
    ):
        self.data_config = data_config or DataConfig()
        self.actor_count = actor_count
        self.noise = noise
        self.logger = logger or get_logger(__name__)

    def spec(self, kind: ScenarioKind, seed: int, clip_id: str) -> ScenarioSpec:
        cfg = self.data_config
        return ScenarioSpec(
            kind=kind,
            actor_count=self.actor_count,
            noise=self.noise,
            seed=seed,
            width=cfg.width,
            height=cfg.height,
            num_frames=cfg.num_frames,
            clip_id=clip_id,
        )

    def clip(
        self,
        kind: ScenarioKind,
        seed: int,
        split: int,
        k: int,
        label: Optional[int],
        dataset: Optional[SyntheticDataset] = None,
    ) -> TrackedClip:
        tag = ("train", "val")[split]
        spec = self.spec(kind, _clip_seed(seed, kind, split, k), f"{kind.value}_{tag}_{k:04d}")
        if dataset is not None:
            dataset.specs[spec.clip_id] = spec
        return generate(spec, lane_step=self.data_config.lane_step).model_copy(update={"label": label})

    def generate_dataset(
        self,
        class_counts: Dict[ScenarioKind, int],
        labeled_fraction: float,
        seed: int,
        out_of_class: int = 0,
        validation_per_class: int = 10,
        validation_out_of_class: int = 0,
    ) -> SyntheticDataset:
        """
        Stratified labeled / unlabeled / validation split.

        Per class, ``round(count * labeled_fraction)`` clips keep their label and
        the rest join the unlabeled pool; ``out_of_class`` clips of the kinds not
        listed in ``class_counts`` are always unlabeled. Labels index
        ``class_counts`` in insertion order.
        """
        if not 0.0 <= labeled_fraction <= 1.0:
            raise ValueError(f"labeled fraction must lie in [0, 1], got {labeled_fraction}")
        classes = list(class_counts)
        others = [k for k in ScenarioKind if k not in class_counts]
        dataset = SyntheticDataset(classes=[k.value for k in classes])

        for label, kind in enumerate(classes):
            count = class_counts[kind]
            n_labeled = int(round(count * labeled_fraction))
            for k in range(count):
                clip = self.clip(kind, seed, 0, k, label if k < n_labeled else None, dataset)
                (dataset.labeled if k < n_labeled else dataset.unlabeled).append(clip)
            for k in range(validation_per_class):
                dataset.validation.append(self.clip(kind, seed, 1, k, label, dataset))

        for pool, total, split in ((dataset.unlabeled, out_of_class, 0), (dataset.validation, validation_out_of_class, 1)):
            if not others:
                break
            for k in range(total):
                pool.append(self.clip(others[k % len(others)], seed, split, k, None, dataset))

        self.logger.info(
            f"Synthetic dataset: {len(dataset.labeled)} labeled, {len(dataset.unlabeled)} unlabeled, "
            f"{len(dataset.validation)} validation clips over {len(classes)} classes"
        )
        return dataset

    def write(self, dataset: SyntheticDataset, out_dir: Union[str, Path]) -> Path:
        """
        Write tracks, lanes and a manifest for every clip; returns the manifest path.

        Frames are written at the source rate so ingest re-applies downsampling.
        """
        out_dir = Path(out_dir)
        (out_dir / "tracks").mkdir(parents=True, exist_ok=True)
        (out_dir / "lanes").mkdir(parents=True, exist_ok=True)
        stride = self.data_config.frame_stride
        records: List[ClipRecord] = []

        pools = (("train", dataset.labeled), ("train", dataset.unlabeled), ("val", dataset.validation))
        for split, clips in pools:
            for clip in clips:
                scenario = render(dataset.specs[clip.clip_id])
                objects = [
                    o.model_copy(update={"frame_index": o.frame_index * stride}) for o in scenario.objects
                ]
                lines = [
                    p.model_copy(update={"frames": (p.frames[0] * stride, p.frames[1] * stride)})
                    for p in scenario.polylines
                ]
                track_path = out_dir / "tracks" / f"{clip.clip_id}.csv"
                lane_path = out_dir / "lanes" / f"{clip.clip_id}.json"
                track_path.write_text(serialize_track_file(objects), encoding="utf-8")
                write_lane_file(lines, lane_path)
                label = dataset.classes[clip.label] if clip.label is not None else None
                records.append(
                    ClipRecord(
                        clip_id=clip.clip_id,
                        track_file=track_path,
                        lane_file=lane_path,
                        start_frame=0,
                        end_frame=clip.num_frames,
                        label=label,
                        split=split,
                    )
                )

        manifest = out_dir / "manifest.csv"
        with manifest.open("w", encoding="utf-8", newline="") as fh:
            write_manifest(records, fh, relative_to=out_dir)
        self.logger.info(f"Wrote {len(records)} synthetic clips to {out_dir}")
        return manifest
