"""
Track and lane ingestion: MOT-style CSV parsing, frame-rate downsampling,
lane rasterization and clip slicing.

No pixels are ever read; a session is the detections of one recording plus
its lane polylines.
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import IO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..exceptions import (
    ArgumentError,
    DataError,
    FileError,
    RejectedRecordError,
    TrackParseError,
)
from ..models import (
    NUM_OBJECT_CLASSES,
    BoundingBox,
    ClipRecord,
    DataConfig,
    DetectedObject,
    LaneFile,
    LanePolyline,
    TrackedClip,
)
from ..utils.logger import get_logger

TRACK_COLUMNS = ("frame", "id", "x", "y", "w", "h", "class", "score")
MANIFEST_COLUMNS = ("clip_id", "track_file", "lane_file", "start_frame", "end_frame", "label", "split")

StreamLike = Union[IO[bytes], IO[str], bytes, str]

_logger = get_logger(__name__)


class TrackSession(BaseModel):
    """All working-rate detections and lane points of one recording."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    session_id: str
    width: float = Field(gt=0)
    height: float = Field(gt=0)
    num_frames: int = Field(ge=0)
    objects: List[DetectedObject] = Field(default_factory=list)
    lanes: List[np.ndarray] = Field(default_factory=list)


def _read_text(stream: StreamLike) -> str:
    if isinstance(stream, bytes):
        return stream.decode("utf-8-sig")
    if isinstance(stream, str):
        return stream
    data = stream.read()
    if isinstance(data, bytes):
        return data.decode("utf-8-sig")
    return data.lstrip("﻿")


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _as_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got '{text}'")
    return int(value)


def _clamp_interval(start: float, size: float, limit: float) -> Tuple[float, float]:
    """Clamp [start, start+size) into [0, limit]; untouched when already inside."""
    if start >= 0.0 and start + size <= limit:
        return start, size
    lo = min(max(start, 0.0), limit)
    hi = min(max(start + size, 0.0), limit)
    return lo, hi - lo


def parse_track_file(
    stream: StreamLike,
    width: float,
    height: float,
    score_threshold: float = 0.5,
    logger: Optional[logging.Logger] = None,
) -> List[DetectedObject]:
    """
    Parse a ``frame,id,x,y,w,h,class,score`` tracking file.

    Boxes are clamped to the ``width`` x ``height`` frame and detections scoring
    below ``score_threshold`` are dropped.

    Raises:
        TrackParseError: a line is not eight numeric fields
        RejectedRecordError: a record breaks a data invariant
    """
    logger = logger or _logger
    objects: List[DetectedObject] = []
    seen = set()
    dropped = 0

    reader = csv.reader(io.StringIO(_read_text(stream)))
    for line_number, row in enumerate(reader, start=1):
        fields = [f.strip() for f in row]
        if not fields or all(f == "" for f in fields):
            continue
        if line_number == 1 and not _is_number(fields[0]):
            # header
            continue
        if len(fields) != len(TRACK_COLUMNS):
            raise TrackParseError(
                f"expected {len(TRACK_COLUMNS)} fields, got {len(fields)}", line_number
            )
        try:
            frame = _as_int(fields[0])
            instance_id = _as_int(fields[1])
            x, y, w, h = (float(v) for v in fields[2:6])
            class_id = _as_int(fields[6])
            score = float(fields[7])
        except ValueError as e:
            raise TrackParseError(str(e), line_number) from e

        if not all(math.isfinite(v) for v in (x, y, w, h, score)):
            raise TrackParseError("non-finite value", line_number)
        if frame < 0:
            raise RejectedRecordError(f"negative frame index {frame}", line_number)
        if w <= 0 or h <= 0:
            raise RejectedRecordError(f"box size must be positive, got {w}x{h}", line_number)
        if not 0 <= class_id < NUM_OBJECT_CLASSES:
            raise RejectedRecordError(
                f"class {class_id} outside [0,{NUM_OBJECT_CLASSES})", line_number
            )
        if score < score_threshold:
            dropped += 1
            continue

        x, w = _clamp_interval(x, w, width)
        y, h = _clamp_interval(y, h, height)
        if w <= 0 or h <= 0:
            raise RejectedRecordError("box lies outside the frame", line_number)

        key = (frame, instance_id)
        if key in seen:
            raise RejectedRecordError(
                f"duplicate detection of instance {instance_id} on frame {frame}", line_number
            )
        seen.add(key)
        objects.append(
            DetectedObject(
                frame_index=frame,
                instance_id=instance_id,
                class_id=class_id,
                bbox=BoundingBox(x_min=x, y_min=y, width=w, height=h),
            )
        )

    if dropped:
        logger.debug(f"Dropped {dropped} detections below score {score_threshold}")
    return objects


def serialize_track_file(
    objects: Iterable[DetectedObject],
    scores: Optional[Sequence[float]] = None,
    header: bool = True,
) -> str:
    """Write detections back to the tracking CSV format."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    if header:
        writer.writerow(TRACK_COLUMNS)
    for k, obj in enumerate(objects):
        score = 1.0 if scores is None else float(scores[k])
        b = obj.bbox
        writer.writerow(
            [
                obj.frame_index,
                obj.instance_id,
                repr(float(b.x_min)),
                repr(float(b.y_min)),
                repr(float(b.width)),
                repr(float(b.height)),
                obj.class_id,
                repr(score),
            ]
        )
    return out.getvalue()


def downsample_stride(fps_in: float, fps_out: float) -> int:
    if fps_in <= 0 or fps_out <= 0:
        raise ArgumentError(f"frame rates must be positive, got {fps_in} -> {fps_out}")
    if fps_out > fps_in:
        raise ArgumentError(f"cannot upsample from {fps_in} fps to {fps_out} fps")
    return max(1, int(round(fps_in / fps_out)))


def downsample_tracks(
    objects: Sequence[DetectedObject], fps_in: float, fps_out: float
) -> List[DetectedObject]:
    """Keep every ``fps_in/fps_out``-th frame and renumber frames consecutively."""
    stride = downsample_stride(fps_in, fps_out)
    if stride == 1:
        return list(objects)
    return [
        obj.model_copy(update={"frame_index": obj.frame_index // stride})
        for obj in objects
        if obj.frame_index % stride == 0
    ]


def _sample_segment(start: np.ndarray, end: np.ndarray, step: float) -> np.ndarray:
    length = float(np.hypot(*(end - start)))
    pieces = max(1, int(math.ceil(length / step))) if length > 0 else 1
    t = np.linspace(0.0, 1.0, pieces + 1)[:, None]
    return start[None, :] * (1.0 - t) + end[None, :] * t


def rasterize_lanes(
    polylines: Sequence[LanePolyline],
    step: float,
    num_frames: int,
    frame_stride: int = 1,
    bounds: Optional[Tuple[float, float]] = None,
) -> List[np.ndarray]:
    """
    Sample lane polylines into per-frame point sets.

    Every segment is sampled at arc-length intervals no longer than ``step``.
    Working frame ``t`` sees a polyline when ``t * frame_stride`` falls inside
    its inclusive frame range. Points outside ``bounds`` (W, H) are discarded.

    Returns:
        ``num_frames`` arrays of shape (P, 2), deduplicated
    """
    if step <= 0:
        raise ArgumentError(f"lane step must be positive, got {step}")

    sampled = []
    for polyline in polylines:
        vertices = np.asarray(polyline.points, dtype=np.float64)
        parts = [_sample_segment(vertices[k], vertices[k + 1], step) for k in range(len(vertices) - 1)]
        sampled.append((polyline.frames, np.concatenate(parts, axis=0)))

    frames: List[np.ndarray] = []
    for t in range(num_frames):
        source = t * frame_stride
        points = [pts for (lo, hi), pts in sampled if lo <= source <= hi]
        if not points:
            frames.append(np.zeros((0, 2)))
            continue
        stacked = np.concatenate(points, axis=0)
        if bounds is not None:
            inside = (
                (stacked[:, 0] >= 0) & (stacked[:, 0] <= bounds[0])
                & (stacked[:, 1] >= 0) & (stacked[:, 1] <= bounds[1])
            )
            stacked = stacked[inside]
        frames.append(np.unique(stacked, axis=0) if len(stacked) else np.zeros((0, 2)))
    return frames


def slice_clips(
    session: TrackSession,
    num_frames: int,
    stride: Optional[int] = None,
    label: Optional[int] = None,
) -> List[TrackedClip]:
    """
    Cut a session into clips of ``num_frames`` working frames.

    Clip ``k`` covers ``[k*stride, k*stride + num_frames)``; a trailing partial
    window is dropped.
    """
    stride = num_frames if stride is None else stride
    if num_frames < 1 or stride < 1:
        raise ArgumentError(f"clip length and stride must be >= 1, got {num_frames}, {stride}")

    by_frame: Dict[int, List[DetectedObject]] = {}
    for obj in session.objects:
        by_frame.setdefault(obj.frame_index, []).append(obj)

    clips = []
    start = 0
    k = 0
    while start + num_frames <= session.num_frames:
        objects = [
            obj.model_copy(update={"frame_index": t - start})
            for t in range(start, start + num_frames)
            for obj in by_frame.get(t, [])
        ]
        lanes = [
            session.lanes[t] if t < len(session.lanes) else np.zeros((0, 2))
            for t in range(start, start + num_frames)
        ]
        clips.append(
            TrackedClip(
                clip_id=f"{session.session_id}_{k:04d}",
                width=session.width,
                height=session.height,
                num_frames=num_frames,
                objects=objects,
                lanes=lanes,
                label=label,
            )
        )
        start += stride
        k += 1
    return clips


def read_lane_file(path: Union[str, Path]) -> List[LanePolyline]:
    path = Path(path)
    if not path.exists():
        raise FileError(f"Lane file not found: {path}")
    try:
        return LaneFile.model_validate_json(path.read_text(encoding="utf-8")).lanes
    except ValidationError as e:
        raise DataError(f"Invalid lane file {path}: {e}") from e


def write_lane_file(polylines: Sequence[LanePolyline], path: Union[str, Path]) -> None:
    Path(path).write_text(LaneFile(lanes=list(polylines)).model_dump_json(), encoding="utf-8")


def read_manifest(path: Union[str, Path]) -> List[ClipRecord]:
    """Read a clip manifest; relative file paths resolve against the manifest."""
    path = Path(path)
    if not path.exists():
        raise FileError(f"Manifest not found: {path}")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            try:
                record = ClipRecord.model_validate(row)
            except ValidationError as e:
                raise DataError(f"Invalid manifest row in {path}: {e}") from e
            updates = {}
            if not record.track_file.is_absolute():
                updates["track_file"] = path.parent / record.track_file
            if record.lane_file is not None and not record.lane_file.is_absolute():
                updates["lane_file"] = path.parent / record.lane_file
            records.append(record.model_copy(update=updates))
    return records


def write_manifest(
    records: Sequence[ClipRecord],
    stream: IO[str],
    relative_to: Optional[Path] = None,
) -> None:
    def rel(p: Optional[Path]) -> str:
        if p is None:
            return ""
        if relative_to is not None:
            try:
                return Path(p).relative_to(relative_to).as_posix()
            except ValueError:
                pass
        return Path(p).as_posix()

    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for r in records:
        writer.writerow(
            [r.clip_id, rel(r.track_file), rel(r.lane_file), r.start_frame, r.end_frame, r.label or "", r.split]
        )


class TrackIngestor:
    """
    Turns tracking and lane files into working-rate sessions and clips.

    Sessions are cached per (track file, lane file) so a manifest listing many
    clips of one recording reads it once.
    """

    def __init__(self, config: DataConfig, logger: Optional[logging.Logger] = None):
        self.config = config
        self.logger = logger or get_logger(__name__)
        self._sessions: Dict[Tuple[str, str], TrackSession] = {}

    def load_session(
        self,
        track_file: Union[str, Path],
        lane_file: Optional[Union[str, Path]] = None,
        session_id: Optional[str] = None,
    ) -> TrackSession:
        track_file = Path(track_file)
        key = (str(track_file), str(lane_file or ""))
        if key in self._sessions:
            return self._sessions[key]
        if not track_file.exists():
            raise FileError(f"Track file not found: {track_file}")

        cfg = self.config
        with track_file.open("rb") as fh:
            raw = parse_track_file(fh, cfg.width, cfg.height, cfg.score_threshold, self.logger)
        objects = downsample_tracks(raw, cfg.fps_in, cfg.working_fps)
        stride = downsample_stride(cfg.fps_in, cfg.working_fps)

        polylines = read_lane_file(lane_file) if lane_file else []
        last_source = max(
            [o.frame_index for o in raw] + [p.frames[1] for p in polylines], default=-1
        )
        num_frames = last_source // stride + 1 if last_source >= 0 else 0
        lanes = rasterize_lanes(
            polylines, cfg.lane_step, num_frames, stride, bounds=(cfg.width, cfg.height)
        )

        session = TrackSession(
            session_id=session_id or track_file.stem,
            width=cfg.width,
            height=cfg.height,
            num_frames=num_frames,
            objects=objects,
            lanes=lanes,
        )
        self.logger.debug(
            f"Loaded session {session.session_id}: {len(objects)} detections over {num_frames} frames"
        )
        self._sessions[key] = session
        return session

    def slice_session(self, session: TrackSession) -> List[TrackedClip]:
        clips = slice_clips(session, self.config.num_frames, self.config.stride)
        if not clips:
            self.logger.warning(
                f"Session {session.session_id} is shorter than one clip ({session.num_frames} frames)"
            )
        return clips

    def load_clip(self, record: ClipRecord) -> TrackedClip:
        """Materialize the clip a manifest record points at."""
        session = self.load_session(record.track_file, record.lane_file)
        length = record.end_frame - record.start_frame
        if length != self.config.num_frames:
            raise DataError(
                f"Clip {record.clip_id} spans {length} frames, expected {self.config.num_frames}"
            )
        if record.end_frame > session.num_frames:
            raise DataError(
                f"Clip {record.clip_id} ends at frame {record.end_frame} beyond session length {session.num_frames}"
            )
        try:
            label = self.config.label_index(record.label)
        except ValueError as e:
            raise DataError(str(e)) from e

        window = TrackSession(
            session_id=record.clip_id,
            width=session.width,
            height=session.height,
            num_frames=length,
            objects=[
                o.model_copy(update={"frame_index": o.frame_index - record.start_frame})
                for o in session.objects
                if record.start_frame <= o.frame_index < record.end_frame
            ],
            lanes=session.lanes[record.start_frame:record.end_frame],
        )
        clip = slice_clips(window, length, length, label=label)[0]
        return clip.model_copy(update={"clip_id": record.clip_id})

    def load_clips(self, records: Sequence[ClipRecord], threads: int = 1) -> List[TrackedClip]:
        """Load every record, reading each distinct session once."""
        distinct = {(str(r.track_file), str(r.lane_file or "")): r for r in records}
        if threads > 1 and len(distinct) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda r: self.load_session(r.track_file, r.lane_file), distinct.values()))
        clips = [self.load_clip(r) for r in records]
        self.logger.info(f"Loaded {len(clips)} clips from {len(distinct)} sessions")
        return clips
