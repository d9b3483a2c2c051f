"""
Data models and configuration classes for drive-sscl.
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    field_validator,
    model_validator,
)

NUM_OBJECT_CLASSES = 8

OBJECT_CLASS_NAMES = (
    "pedestrian",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
)


class LearningMode(str, Enum):
    """Available learning modes."""
    SCL = "scl"
    GCL = "gcl"
    FSL = "fsl"
    UNSUP = "unsup"


class ContrastFlavor(str, Enum):
    """How positives are found when no label is used."""
    SCL = "scl"
    GCL = "gcl"


class AugmentationKind(str, Enum):
    """Graph augmentations available to GCL."""
    NODE_DROP = "node_drop"
    EDGE_PERTURB = "edge_perturb"
    ATTR_MASK = "attr_mask"


class Readout(str, Enum):
    """Class-score readouts used for AP."""
    AUTO = "auto"
    PROTOTYPE = "prototype"
    CENTROID = "centroid"


class APConvention(str, Enum):
    """Precision-recall integration conventions."""
    CONTINUOUS = "continuous"
    ELEVEN_POINT = "eleven_point"


# ---------------------------------------------------------------------------
# Tracking records
# ---------------------------------------------------------------------------

class BoundingBox(BaseModel):
    """Axis-aligned box in pixels, top-left anchored."""

    model_config = ConfigDict(frozen=True)

    x_min: float
    y_min: float
    width: float = Field(gt=0)
    height: float = Field(gt=0)

    @property
    def centroid(self) -> Tuple[float, float]:
        return self.x_min + self.width / 2.0, self.y_min + self.height / 2.0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.width, self.height], dtype=np.float64)


class DetectedObject(BaseModel):
    """One detection of one tracked instance in one frame."""

    model_config = ConfigDict(frozen=True)

    frame_index: int = Field(ge=0)
    instance_id: int
    class_id: int = Field(ge=0, lt=NUM_OBJECT_CLASSES)
    bbox: BoundingBox


class LanePolyline(BaseModel):
    """Lane line geometry valid over an inclusive source-frame range."""

    model_config = ConfigDict(frozen=True)

    frames: Tuple[int, int]
    points: List[Tuple[float, float]] = Field(min_length=2)

    @field_validator("frames")
    @classmethod
    def validate_frames(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if v[0] < 0 or v[1] < v[0]:
            raise ValueError(f"invalid frame range {v}")
        return v


class LaneFile(BaseModel):
    """On-disk lane geometry document."""

    lanes: List[LanePolyline] = Field(default_factory=list)


class TrackedClip(BaseModel):
    """A fixed-length window of detections plus rasterized lane points."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    clip_id: str
    width: float = Field(gt=0)
    height: float = Field(gt=0)
    num_frames: int = Field(ge=1)
    objects: List[DetectedObject] = Field(default_factory=list)
    lanes: List[np.ndarray] = Field(default_factory=list)
    label: Optional[int] = Field(default=None, ge=0)

    _tracks: Any = PrivateAttr(default=None)

    @model_validator(mode="after")
    def validate_frames(self) -> "TrackedClip":
        seen = set()
        for obj in self.objects:
            if obj.frame_index >= self.num_frames:
                raise ValueError(
                    f"object on frame {obj.frame_index} outside clip of {self.num_frames} frames"
                )
            key = (obj.frame_index, obj.instance_id)
            if key in seen:
                raise ValueError(f"duplicate detection for (frame, instance) {key}")
            seen.add(key)
        if not self.lanes:
            self.lanes = [np.zeros((0, 2)) for _ in range(self.num_frames)]
        elif len(self.lanes) != self.num_frames:
            raise ValueError("lanes must hold one point set per frame")
        return self

    @property
    def is_labeled(self) -> bool:
        return self.label is not None

    @property
    def instance_ids(self) -> List[int]:
        return sorted({obj.instance_id for obj in self.objects})


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class DataConfig(BaseModel):
    """Ingest and clip-slicing settings."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    width: float = Field(default=1280.0, gt=0)
    height: float = Field(default=720.0, gt=0)
    fps_in: float = Field(default=30.0, gt=0)
    working_fps: float = Field(default=2.5, gt=0)
    clip_seconds: float = Field(default=4.0, gt=0)
    clip_stride: Optional[int] = Field(default=None, ge=1)
    score_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    lane_step: float = Field(default=8.0, gt=0)
    classes: List[str] = Field(default_factory=list)
    threads: Optional[int] = Field(default=None, ge=1)

    @property
    def num_frames(self) -> int:
        """Working frames per clip (T)."""
        return max(1, int(round(self.clip_seconds * self.working_fps)))

    @property
    def stride(self) -> int:
        return self.clip_stride or self.num_frames

    @property
    def frame_stride(self) -> int:
        """Source frames per working frame."""
        return max(1, int(round(self.fps_in / self.working_fps)))

    def label_index(self, name: Optional[str]) -> Optional[int]:
        if name is None or name == "":
            return None
        try:
            return self.classes.index(name)
        except ValueError:
            raise ValueError(f"label '{name}' not in configured classes {self.classes}")


class GraphConfig(BaseModel):
    """ST-graph construction settings."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    sigma_lane: Optional[float] = Field(default=None, gt=0)
    normalize_lane: bool = False


class ModelConfig(BaseModel):
    """GCN architecture settings."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    embedding_dim: int = Field(default=64, ge=1)
    encoder_dim: int = Field(default=32, ge=1)
    hidden_dim: int = Field(default=64, ge=1)
    layers: int = Field(default=3, ge=1)
    normalize: bool = True
    use_semantic: bool = True
    use_geometric: bool = True
    use_lane: bool = True
    precision: Literal["float64", "float32"] = "float64"


class TrainConfig(BaseModel):
    """Optimization settings."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    mode: LearningMode = LearningMode.SCL
    contrast: ContrastFlavor = ContrastFlavor.SCL
    batch_size: int = Field(default=16, ge=2)
    epochs: int = Field(default=50, ge=1)
    lr_init: float = Field(default=0.01, gt=0)
    lr_min: float = Field(default=0.0, ge=0)
    margin_fraction: float = Field(default=0.25, ge=0)
    unlabeled_weight: float = Field(default=1.0, gt=0, le=1)
    temperature: float = Field(default=1.0, gt=0)
    num_classes: Optional[int] = Field(default=None, ge=1)
    seed: int = 0

    @property
    def flavor(self) -> ContrastFlavor:
        """Positive-selection flavour actually used by this mode."""
        if self.mode == LearningMode.GCL:
            return ContrastFlavor.GCL
        if self.mode == LearningMode.UNSUP:
            return self.contrast
        return ContrastFlavor.SCL

    @property
    def uses_labels(self) -> bool:
        return self.mode != LearningMode.UNSUP


class AugmentConfig(BaseModel):
    """Graph augmentation settings for GCL."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    node_drop_ratio: float = Field(default=0.1, ge=0.0, lt=1.0)
    edge_perturb_ratio: float = Field(default=0.1, ge=0.0, lt=1.0)
    attr_mask_ratio: float = Field(default=0.1, ge=0.0, lt=1.0)
    policy: List[AugmentationKind] = Field(
        default_factory=lambda: list(AugmentationKind), min_length=1
    )
    seed: int = 0


class EvalConfig(BaseModel):
    """Evaluation settings."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    readout: Readout = Readout.AUTO
    ap_convention: APConvention = APConvention.CONTINUOUS
    top_k: int = Field(default=5, ge=1)

    def resolve_readout(self, mode: LearningMode) -> Readout:
        if self.readout != Readout.AUTO:
            return self.readout
        return Readout.CENTROID if mode == LearningMode.UNSUP else Readout.PROTOTYPE


class RunConfig(BaseModel):
    """Merged view of every section of a run configuration file."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    data: DataConfig = Field(default_factory=DataConfig)
    graph: GraphConfig = Field(default_factory=GraphConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def fill_class_count(self) -> "RunConfig":
        if self.train.num_classes is None and self.data.classes:
            self.train.num_classes = len(self.data.classes)
        return self

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def num_classes(self) -> int:
        return self.train.num_classes or max(1, len(self.data.classes))


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------

class ClipRecord(BaseModel):
    """One line of a clip manifest."""

    clip_id: str
    track_file: Path
    lane_file: Optional[Path] = None
    start_frame: int = Field(ge=0)
    end_frame: int = Field(ge=1)
    label: Optional[str] = None
    split: str = "train"

    @field_validator("label", mode="before")
    @classmethod
    def empty_label_is_none(cls, v: Any) -> Any:
        if v is None or (isinstance(v, str) and v.strip() == ""):
            return None
        return v

    @field_validator("lane_file", mode="before")
    @classmethod
    def empty_lane_file_is_none(cls, v: Any) -> Any:
        if v is None or (isinstance(v, str) and v.strip() == ""):
            return None
        return v


class EpochRecord(BaseModel):
    """One metrics-log line."""

    epoch: int
    lr: float
    loss: float
    val_map: Optional[float] = None
    unlabeled_weight: Optional[float] = None


class LossReport(BaseModel):
    """Loss of one batch."""

    total: float
    per_anchor: List[float] = Field(default_factory=list)
    grad_norms: Dict[str, float] = Field(default_factory=dict)
    lr: Optional[float] = None


class RetrievalHit(BaseModel):
    """One ranked corpus item."""

    clip_id: str
    similarity: float
    soia_distance: Optional[float] = None


class RetrievalResult(BaseModel):
    """Ranked neighbours of one query clip."""

    query_id: str
    hits: List[RetrievalHit] = Field(default_factory=list)

    @property
    def top1(self) -> Optional[RetrievalHit]:
        return self.hits[0] if self.hits else None


class ClassAP(BaseModel):
    """Average precision of one class; ``None`` when it has no positives."""

    class_name: str
    ap: Optional[float] = None
    positives: int = 0


class EvaluationReport(BaseModel):
    """Per-class AP table and overall mAP."""

    classes: List[ClassAP] = Field(default_factory=list)
    mean_ap: float = 0.0
    readout: Readout = Readout.PROTOTYPE
