"""
Tracking ingest, ST-graph construction, SOIA distance, augmentation and
synthetic scenarios.
"""

from .ingest import TrackIngestor, parse_track_file, slice_clips
from .stgraph import GraphBuilder, StGraph, build_graph
from .soia import SoiaCache, distance_matrix, hungarian_max, soia_distance
from .augment import GraphAugmentor
from .synth import ScenarioKind, SyntheticCorpus

__all__ = [
    "TrackIngestor",
    "parse_track_file",
    "slice_clips",
    "GraphBuilder",
    "StGraph",
    "build_graph",
    "SoiaCache",
    "distance_matrix",
    "hungarian_max",
    "soia_distance",
    "GraphAugmentor",
    "ScenarioKind",
    "SyntheticCorpus",
]
