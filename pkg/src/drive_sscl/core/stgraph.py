"""
Spatio-temporal graph construction.

Nodes are per-frame detections. Spatial edges densely connect the detections
of one frame with a Gaussian weight on centroid distance; temporal edges (weight
1) link the same instance on adjacent frames.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..models import NUM_OBJECT_CLASSES, BoundingBox, GraphConfig, TrackedClip
from ..utils.logger import get_logger

SEMANTIC_DIM = NUM_OBJECT_CLASSES
GEOMETRIC_DIM = 5
LANE_DIM = 10
ATTR_DIM = SEMANTIC_DIM + GEOMETRIC_DIM + LANE_DIM


class NodeAttr(BaseModel):
    """Attribute vector of one node, split into its three blocks."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    semantic: np.ndarray
    geometric: np.ndarray
    lane: np.ndarray


class StGraph(BaseModel):
    """
    Spatio-temporal graph of one clip.

    Edges are stored once as (i, j) with i < j and applied symmetrically.
    ``instance_map`` is derived from ``instance_id``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    frame_index: np.ndarray                 # (N,) int
    instance_id: np.ndarray                 # (N,) int
    semantic: np.ndarray                    # (N, 8)
    geometric: np.ndarray                   # (N, 5)
    lane: np.ndarray                        # (N, 10)
    spatial_edges: np.ndarray               # (Es, 2) int
    spatial_weights: np.ndarray             # (Es,)
    temporal_edges: np.ndarray              # (Et, 2) int
    width: float = Field(gt=0)
    height: float = Field(gt=0)
    num_frames: int = Field(ge=1)
    label: Optional[int] = None
    clip_id: str = ""

    @property
    def num_nodes(self) -> int:
        return int(self.frame_index.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.spatial_edges.shape[0] + self.temporal_edges.shape[0])

    @property
    def instance_map(self) -> Dict[int, List[int]]:
        mapping: Dict[int, List[int]] = {}
        for node, inst in enumerate(self.instance_id.tolist()):
            mapping.setdefault(int(inst), []).append(node)
        return mapping

    @property
    def attributes(self) -> np.ndarray:
        """(N, 23) concatenation ``[semantic, geometric, lane]``."""
        return np.concatenate([self.semantic, self.geometric, self.lane], axis=1)

    def node_attr(self, i: int) -> NodeAttr:
        return NodeAttr(semantic=self.semantic[i], geometric=self.geometric[i], lane=self.lane[i])

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """All undirected edges and their weights, spatial first."""
        edges = np.concatenate([self.spatial_edges, self.temporal_edges], axis=0)
        weights = np.concatenate(
            [self.spatial_weights, np.ones(self.temporal_edges.shape[0])]
        )
        return edges.reshape(-1, 2).astype(np.int64), weights

    def centroids(self) -> np.ndarray:
        """Pixel centroids recovered from the geometric block."""
        return np.stack(
            [self.geometric[:, 0] * self.width, self.geometric[:, 1] * self.height], axis=1
        )

    def with_label(self, label: Optional[int]) -> "StGraph":
        return self.model_copy(update={"label": label})

    def canonical(self) -> "StGraph":
        """
        Reorder nodes frame-major then by instance id, and edges lexicographically.

        Two graphs that differ only by node numbering have identical canonical forms.
        """
        order = np.lexsort((self.instance_id, self.frame_index))
        if np.array_equal(order, np.arange(self.num_nodes)) and _edges_sorted(self):
            return self
        rank = np.empty_like(order)
        rank[order] = np.arange(order.shape[0])

        def relabel(edges: np.ndarray, weights: Optional[np.ndarray] = None):
            if edges.shape[0] == 0:
                return edges.reshape(0, 2), weights
            mapped = np.sort(rank[edges], axis=1)
            idx = np.lexsort((mapped[:, 1], mapped[:, 0]))
            return mapped[idx], (weights[idx] if weights is not None else None)

        spatial, weights = relabel(self.spatial_edges, self.spatial_weights)
        temporal, _ = relabel(self.temporal_edges)
        return self.model_copy(
            update={
                "frame_index": self.frame_index[order],
                "instance_id": self.instance_id[order],
                "semantic": self.semantic[order],
                "geometric": self.geometric[order],
                "lane": self.lane[order],
                "spatial_edges": spatial,
                "spatial_weights": weights,
                "temporal_edges": temporal,
            }
        )


def _edges_sorted(graph: StGraph) -> bool:
    for edges in (graph.spatial_edges, graph.temporal_edges):
        if edges.shape[0] == 0:
            continue
        if np.any(edges[:, 0] >= edges[:, 1]):
            return False
        keys = edges[:, 0] * (graph.num_nodes + 1) + edges[:, 1]
        if np.any(np.diff(keys) <= 0):
            return False
    return True


def edge_sigma(width: float, height: float) -> float:
    return math.sqrt(height * height + width * width) / 4.0


def geometric_feature(bbox: BoundingBox, width: float, height: float) -> np.ndarray:
    """``(a/W, b/H, w/W, h/H, wh/sqrt(WH))`` with (a, b) the box centroid."""
    a, b = bbox.centroid
    return np.array(
        [
            a / width,
            b / height,
            bbox.width / width,
            bbox.height / height,
            bbox.width * bbox.height / math.sqrt(width * height),
        ],
        dtype=np.float64,
    )


def box_anchors(bbox: BoundingBox) -> np.ndarray:
    """Top-left, top-right, bottom-left, bottom-right, center."""
    x0, y0 = bbox.x_min, bbox.y_min
    x1, y1 = x0 + bbox.width, y0 + bbox.height
    cx, cy = bbox.centroid
    return np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1], [cx, cy]], dtype=np.float64)


def lane_feature(
    bbox: BoundingBox,
    lane_points: np.ndarray,
    sigma_lane: float,
    normalize: bool = False,
) -> np.ndarray:
    """
    Gaussian-weighted sum of unit vectors from each box anchor to the lane points.

    Returns the 10-vector ``[f_a1, ..., f_a5]``. A point coinciding with an
    anchor contributes nothing; ``normalize`` divides by the number of points.
    """
    points = np.asarray(lane_points, dtype=np.float64).reshape(-1, 2)
    if points.shape[0] == 0:
        return np.zeros(LANE_DIM)
    v = points[None, :, :] - box_anchors(bbox)[:, None, :]      # (5, P, 2)
    d = np.sqrt(np.sum(v * v, axis=2))                           # (5, P)
    w = np.exp(-(d * d) / (2.0 * sigma_lane * sigma_lane))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(d[:, :, None] > 0, v / d[:, :, None], 0.0)
    f = np.sum(w[:, :, None] * unit, axis=1)                     # (5, 2)
    if normalize:
        f = f / points.shape[0]
    return f.reshape(LANE_DIM)


def spatial_edge_weight(
    bbox_i: BoundingBox, bbox_j: BoundingBox, width: float, height: float
) -> float:
    ai, bi = bbox_i.centroid
    aj, bj = bbox_j.centroid
    return centroid_weight(math.hypot(ai - aj, bi - bj), width, height)


def centroid_weight(distance: float, width: float, height: float) -> float:
    sigma = edge_sigma(width, height)
    return math.exp(-(distance * distance) / (2.0 * sigma * sigma))


def empty_graph(width: float, height: float, num_frames: int, label: Optional[int] = None, clip_id: str = "") -> StGraph:
    return StGraph(
        frame_index=np.zeros(0, dtype=np.int64),
        instance_id=np.zeros(0, dtype=np.int64),
        semantic=np.zeros((0, SEMANTIC_DIM)),
        geometric=np.zeros((0, GEOMETRIC_DIM)),
        lane=np.zeros((0, LANE_DIM)),
        spatial_edges=np.zeros((0, 2), dtype=np.int64),
        spatial_weights=np.zeros(0),
        temporal_edges=np.zeros((0, 2), dtype=np.int64),
        width=width,
        height=height,
        num_frames=num_frames,
        label=label,
        clip_id=clip_id,
    )


def build_graph(
    clip: TrackedClip,
    sigma_lane: Optional[float] = None,
    normalize_lane: bool = False,
) -> StGraph:
    """Build the ST-graph of a clip with canonical (frame, instance) node order."""
    objects = sorted(clip.objects, key=lambda o: (o.frame_index, o.instance_id))
    if not objects:
        return empty_graph(clip.width, clip.height, clip.num_frames, clip.label, clip.clip_id)

    W, H = clip.width, clip.height
    sigma_lane = sigma_lane or edge_sigma(W, H)
    n = len(objects)

    frame_index = np.array([o.frame_index for o in objects], dtype=np.int64)
    instance_id = np.array([o.instance_id for o in objects], dtype=np.int64)
    semantic = np.zeros((n, SEMANTIC_DIM))
    semantic[np.arange(n), [o.class_id for o in objects]] = 1.0
    geometric = np.stack([geometric_feature(o.bbox, W, H) for o in objects])
    lane = np.stack(
        [lane_feature(o.bbox, clip.lanes[o.frame_index], sigma_lane, normalize_lane) for o in objects]
    )

    spatial: List[Tuple[int, int]] = []
    weights: List[float] = []
    temporal: List[Tuple[int, int]] = []
    node_of: Dict[Tuple[int, int], int] = {}
    frames: Dict[int, List[int]] = {}
    for i, o in enumerate(objects):
        node_of[(o.frame_index, o.instance_id)] = i
        frames.setdefault(o.frame_index, []).append(i)

    for nodes in frames.values():
        for p, i in enumerate(nodes):
            for j in nodes[p + 1:]:
                spatial.append((i, j))
                weights.append(spatial_edge_weight(objects[i].bbox, objects[j].bbox, W, H))

    for i, o in enumerate(objects):
        j = node_of.get((o.frame_index + 1, o.instance_id))
        if j is not None:
            temporal.append((i, j))
    temporal.sort()

    return StGraph(
        frame_index=frame_index,
        instance_id=instance_id,
        semantic=semantic,
        geometric=geometric,
        lane=lane,
        spatial_edges=np.array(spatial, dtype=np.int64).reshape(-1, 2),
        spatial_weights=np.array(weights, dtype=np.float64),
        temporal_edges=np.array(temporal, dtype=np.int64).reshape(-1, 2),
        width=W,
        height=H,
        num_frames=clip.num_frames,
        label=clip.label,
        clip_id=clip.clip_id,
    )


class GraphBuilder:
    """Builds ST-graphs for many clips with one graph configuration."""

    def __init__(self, config: Optional[GraphConfig] = None, logger: Optional[logging.Logger] = None):
        self.config = config or GraphConfig()
        self.logger = logger or get_logger(__name__)

    def build(self, clip: TrackedClip) -> StGraph:
        return build_graph(clip, self.config.sigma_lane, self.config.normalize_lane)

    def build_all(self, clips: Sequence[TrackedClip]) -> List[StGraph]:
        graphs = [self.build(c) for c in clips]
        self.logger.info(
            f"Built {len(graphs)} ST-graphs ({sum(g.num_nodes for g in graphs)} nodes)"
        )
        return graphs
