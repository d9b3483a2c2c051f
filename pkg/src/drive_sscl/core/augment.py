"""
Graph augmentations producing positive views for graph contrastive learning.

All three operations keep the ST-graph structurally valid: spatial edges stay
within a frame and temporal edges are never created.
"""

import logging
import math
from typing import Optional

import numpy as np

from ..models import AugmentConfig, AugmentationKind
from ..utils.logger import get_logger
from .stgraph import StGraph, centroid_weight

_logger = get_logger(__name__)


def _check_ratio(ratio: float) -> None:
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"augmentation ratio must lie in [0, 1), got {ratio}")


def node_drop(graph: StGraph, ratio: float, rng: np.random.Generator) -> StGraph:
    """Remove ``floor(ratio*|V|)`` uniformly chosen nodes with their incident edges."""
    _check_ratio(ratio)
    count = int(math.floor(ratio * graph.num_nodes))
    if count == 0:
        return graph
    dropped = rng.choice(graph.num_nodes, size=count, replace=False)
    keep = np.ones(graph.num_nodes, dtype=bool)
    keep[dropped] = False
    remap = np.full(graph.num_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))

    def surviving(edges: np.ndarray) -> np.ndarray:
        if edges.shape[0] == 0:
            return np.zeros(edges.shape[0], dtype=bool)
        return keep[edges[:, 0]] & keep[edges[:, 1]]

    s_mask = surviving(graph.spatial_edges)
    t_mask = surviving(graph.temporal_edges)
    return graph.model_copy(
        update={
            "frame_index": graph.frame_index[keep],
            "instance_id": graph.instance_id[keep],
            "semantic": graph.semantic[keep],
            "geometric": graph.geometric[keep],
            "lane": graph.lane[keep],
            "spatial_edges": remap[graph.spatial_edges[s_mask]].reshape(-1, 2),
            "spatial_weights": graph.spatial_weights[s_mask],
            "temporal_edges": remap[graph.temporal_edges[t_mask]].reshape(-1, 2),
        }
    )


def edge_perturb(
    graph: StGraph,
    ratio: float,
    rng: np.random.Generator,
    logger: Optional[logging.Logger] = None,
) -> StGraph:
    """
    Delete ``floor(ratio*|E|)`` edges of either kind and add as many spatial edges.

    Replacements are drawn from same-frame pairs that were not adjacent before
    the deletion, weighted by centroid distance like any spatial edge. Frames
    that are already fully connected offer no replacements, so the view then
    has fewer edges than the input.
    """
    _check_ratio(ratio)
    n_spatial = graph.spatial_edges.shape[0]
    total = graph.num_edges
    count = int(math.floor(ratio * total))
    if count == 0:
        return graph

    removed = rng.choice(total, size=count, replace=False)
    keep = np.ones(total, dtype=bool)
    keep[removed] = False
    spatial_keep = keep[:n_spatial]
    temporal_keep = keep[n_spatial:]
    spatial = graph.spatial_edges[spatial_keep]
    weights = graph.spatial_weights[spatial_keep]

    # pairs adjacent before the deletion are never candidates
    present = {tuple(e) for e in graph.spatial_edges.tolist()}
    present.update(tuple(e) for e in graph.temporal_edges[temporal_keep].tolist())
    candidates = []
    frames = graph.frame_index
    for i in range(graph.num_nodes):
        for j in np.nonzero(frames[i + 1:] == frames[i])[0] + i + 1:
            if (i, int(j)) not in present:
                candidates.append((i, int(j)))

    added = min(count, len(candidates))
    if added < count:
        (logger or _logger).debug(
            f"edge_perturb: only {len(candidates)} unlinked same-frame pairs, adding {added} of {count}"
        )
    if added:
        picks = rng.choice(len(candidates), size=added, replace=False)
        new_edges = np.array([candidates[k] for k in sorted(picks.tolist())], dtype=np.int64)
        centroids = graph.centroids()
        gaps = np.linalg.norm(centroids[new_edges[:, 0]] - centroids[new_edges[:, 1]], axis=1)
        new_weights = np.array(
            [centroid_weight(float(d), graph.width, graph.height) for d in gaps]
        )
        spatial = np.concatenate([spatial.reshape(-1, 2), new_edges], axis=0)
        weights = np.concatenate([weights, new_weights])

    return graph.model_copy(
        update={
            "spatial_edges": spatial.reshape(-1, 2),
            "spatial_weights": weights,
            "temporal_edges": graph.temporal_edges[temporal_keep].reshape(-1, 2),
        }
    )


def attr_mask(graph: StGraph, ratio: float, rng: np.random.Generator) -> StGraph:
    """Zero the full attribute vector of ``floor(ratio*|V|)`` nodes."""
    _check_ratio(ratio)
    count = int(math.floor(ratio * graph.num_nodes))
    if count == 0:
        return graph
    masked = rng.choice(graph.num_nodes, size=count, replace=False)
    semantic, geometric, lane = graph.semantic.copy(), graph.geometric.copy(), graph.lane.copy()
    semantic[masked] = 0.0
    geometric[masked] = 0.0
    lane[masked] = 0.0
    return graph.model_copy(update={"semantic": semantic, "geometric": geometric, "lane": lane})


class GraphAugmentor:
    """Applies one augmentation, picked uniformly from the policy, per call."""

    def __init__(self, config: Optional[AugmentConfig] = None, logger: Optional[logging.Logger] = None):
        self.config = config or AugmentConfig()
        self.logger = logger or get_logger(__name__)

    def apply(self, graph: StGraph, kind: AugmentationKind, rng: np.random.Generator) -> StGraph:
        if kind == AugmentationKind.NODE_DROP:
            return node_drop(graph, self.config.node_drop_ratio, rng)
        if kind == AugmentationKind.EDGE_PERTURB:
            return edge_perturb(graph, self.config.edge_perturb_ratio, rng, self.logger)
        return attr_mask(graph, self.config.attr_mask_ratio, rng)

    def augment(self, graph: StGraph, rng: np.random.Generator) -> StGraph:
        policy = self.config.policy
        kind = policy[int(rng.integers(len(policy)))]
        return self.apply(graph, kind, rng)
