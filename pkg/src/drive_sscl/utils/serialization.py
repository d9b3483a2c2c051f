"""
On-disk formats: versioned ``.npz`` archives for graphs, checkpoints and
embeddings, plus the JSON Lines metrics log.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ..core.stgraph import StGraph
from ..exceptions import FileError
from ..models import EpochRecord, ModelConfig

FORMAT_VERSION = 1
GRAPH_FORMAT = "drive-sscl-graph"
CHECKPOINT_FORMAT = "drive-sscl-checkpoint"
EMBEDDING_FORMAT = "drive-sscl-embeddings"

_GRAPH_ARRAYS = (
    "frame_index",
    "instance_id",
    "semantic",
    "geometric",
    "lane",
    "spatial_edges",
    "spatial_weights",
    "temporal_edges",
)

PathLike = Union[str, Path]


def _open_archive(path: PathLike, expected_format: str) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileError(f"File not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            data = {k: archive[k] for k in archive.files}
    except (OSError, ValueError) as e:
        raise FileError(f"Cannot read archive {path}: {e}")
    fmt = str(data.get("__format__", ""))
    if fmt != expected_format:
        raise FileError(f"{path} is not a {expected_format} archive (found '{fmt}')")
    version = int(data.get("__version__", -1))
    if version != FORMAT_VERSION:
        raise FileError(f"{path} has unsupported format version {version}")
    return data


def _write_archive(path: PathLike, fmt: str, arrays: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, __format__=np.array(fmt), __version__=np.array(FORMAT_VERSION), **arrays)
    return path


def save_graph(graph: StGraph, path: PathLike) -> Path:
    arrays = {name: getattr(graph, name) for name in _GRAPH_ARRAYS}
    arrays["meta"] = np.array(
        json.dumps(
            {
                "width": graph.width,
                "height": graph.height,
                "num_frames": graph.num_frames,
                "label": graph.label,
                "clip_id": graph.clip_id,
            }
        )
    )
    return _write_archive(path, GRAPH_FORMAT, arrays)


def load_graph(path: PathLike) -> StGraph:
    data = _open_archive(path, GRAPH_FORMAT)
    meta = json.loads(str(data["meta"]))
    fields = {name: data[name] for name in _GRAPH_ARRAYS}
    try:
        return StGraph(**fields, **meta)
    except ValidationError as e:
        raise FileError(f"Invalid graph archive {path}: {e}")


def save_checkpoint(
    path: PathLike,
    tensors: Dict[str, np.ndarray],
    config: ModelConfig,
    num_classes: int,
    class_names: Optional[Sequence[str]] = None,
) -> Path:
    arrays = {f"param/{name}": value for name, value in tensors.items()}
    arrays["config"] = np.array(config.model_dump_json())
    arrays["num_classes"] = np.array(num_classes)
    arrays["class_names"] = np.array(json.dumps(list(class_names or [])))
    return _write_archive(path, CHECKPOINT_FORMAT, arrays)


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], ModelConfig, int, List[str]]:
    """Returns ``(tensors, model config, class count, class names)``."""
    data = _open_archive(path, CHECKPOINT_FORMAT)
    tensors = {k[len("param/"):]: v for k, v in data.items() if k.startswith("param/")}
    try:
        config = ModelConfig.model_validate_json(str(data["config"]))
    except ValidationError as e:
        raise FileError(f"Checkpoint {path} carries an invalid model config: {e}")
    return tensors, config, int(data["num_classes"]), json.loads(str(data["class_names"]))


def save_embeddings(path: PathLike, clip_ids: Sequence[str], embeddings: np.ndarray) -> Path:
    return _write_archive(
        path,
        EMBEDDING_FORMAT,
        {"clip_ids": np.array(list(clip_ids), dtype=str), "embeddings": np.asarray(embeddings)},
    )


def load_embeddings(path: PathLike) -> Tuple[List[str], np.ndarray]:
    data = _open_archive(path, EMBEDDING_FORMAT)
    return [str(c) for c in data["clip_ids"].tolist()], data["embeddings"]


class MetricsLog:
    """Append-only JSON Lines log of ``EpochRecord``s."""

    def __init__(self, path: Optional[PathLike] = None):
        self.path = Path(path) if path else None
        self.records: List[EpochRecord] = []

    def reset(self) -> None:
        self.records = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(record.model_dump_json() + "\n")


def read_metrics(path: PathLike) -> List[EpochRecord]:
    path = Path(path)
    if not path.exists():
        raise FileError(f"File not found: {path}")
    return [
        EpochRecord.model_validate_json(line)
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
