"""
Training pools and mini-batch assembly for each learning mode.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core.augment import GraphAugmentor
from ..core.soia import SoiaCache, select_pos_neg
from ..core.stgraph import GraphBuilder, StGraph
from ..exceptions import ConfigurationError
from ..models import AugmentConfig, ContrastFlavor, LearningMode, TrackedClip, TrainConfig
from ..utils.logger import get_logger


class TrainingSet:
    """
    Clips with their ST-graphs and optional class indices.

    Labels are only ever read through ``label_of``.
    """

    def __init__(
        self,
        clips: Sequence[TrackedClip],
        graphs: Sequence[StGraph],
        labels: Optional[Sequence[Optional[int]]] = None,
    ):
        if len(clips) != len(graphs):
            raise ConfigurationError("clips and graphs must pair up one to one")
        self._clips = list(clips)
        self._graphs = list(graphs)
        if labels is None:
            labels = [c.label for c in self._clips]
        elif len(labels) != len(self._clips):
            raise ConfigurationError("one label slot per clip is required")
        self._labels: List[Optional[int]] = list(labels)

    @classmethod
    def from_clips(cls, clips: Sequence[TrackedClip], builder: Optional[GraphBuilder] = None) -> "TrainingSet":
        builder = builder or GraphBuilder()
        return cls(clips, builder.build_all(clips))

    def __len__(self) -> int:
        return len(self._clips)

    def clip(self, i: int) -> TrackedClip:
        return self._clips[i]

    def graph(self, i: int) -> StGraph:
        return self._graphs[i]

    @property
    def clips(self) -> List[TrackedClip]:
        return list(self._clips)

    @property
    def graphs(self) -> List[StGraph]:
        return list(self._graphs)

    def label_of(self, i: int) -> Optional[int]:
        return self._labels[i]

    def labeled_indices(self) -> List[int]:
        return [i for i in range(len(self)) if self.label_of(i) is not None]

    def subset(self, indices: Sequence[int]) -> "TrainingSet":
        return TrainingSet(
            [self._clips[i] for i in indices],
            [self._graphs[i] for i in indices],
            [self._labels[i] for i in indices],
        )

    def labeled_only(self) -> "TrainingSet":
        return self.subset(self.labeled_indices())

    def strip_labels(self) -> "TrainingSet":
        """Copy with every label hidden; touches no label field."""
        return TrainingSet(self._clips, self._graphs, [None] * len(self._clips))


class Batch(BaseModel):
    """
    One mini-batch.

    ``graphs`` holds the ``B`` members first, followed by any augmented views.
    ``positives[n]`` indexes a row of the embedding matrix (``-1`` when the
    anchor has no sample positive) and ``negatives[n]`` the negative rows.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    members: List[int]
    graphs: List[StGraph]
    labels: np.ndarray
    positives: np.ndarray
    negatives: List[np.ndarray] = Field(default_factory=list)
    mode: LearningMode = LearningMode.SCL

    @property
    def size(self) -> int:
        return len(self.members)


class BatchBuilder:
    """Samples batches and attaches positives/negatives for one training mode."""

    def __init__(
        self,
        config: Optional[TrainConfig] = None,
        augment: Optional[AugmentConfig] = None,
        cache: Optional[SoiaCache] = None,
        threads: int = 1,
        logger: Optional[logging.Logger] = None,
    ):
        self.config = config or TrainConfig()
        self.augmentor = GraphAugmentor(augment, logger)
        self.cache = cache if cache is not None else SoiaCache()
        self.threads = threads
        self.logger = logger or get_logger(__name__)

    def make_batch(
        self,
        dataset: TrainingSet,
        rng: np.random.Generator,
        indices: Optional[Sequence[int]] = None,
    ) -> Batch:
        B = self.config.batch_size
        if len(dataset) == 0:
            raise ConfigurationError("cannot draw a batch from an empty dataset")
        if B > len(dataset):
            raise ConfigurationError(f"batch size {B} exceeds dataset size {len(dataset)}")
        if indices is None:
            indices = rng.choice(len(dataset), size=B, replace=False)
        members = [int(i) for i in indices]
        B = len(members)
        graphs = [dataset.graph(i) for i in members]
        mode = self.config.mode

        if self.config.uses_labels:
            labels = np.array(
                [-1 if (lab := dataset.label_of(i)) is None else lab for i in members], dtype=np.int64
            )
        else:
            labels = np.full(B, -1, dtype=np.int64)

        if mode == LearningMode.FSL:
            if np.any(labels < 0):
                raise ConfigurationError("FSL batches must contain labeled clips only")
            return Batch(
                members=members,
                graphs=graphs,
                labels=labels,
                positives=np.full(B, -1, dtype=np.int64),
                negatives=[np.zeros(0, dtype=np.int64) for _ in range(B)],
                mode=mode,
            )

        positives = np.empty(B, dtype=np.int64)
        negatives: List[np.ndarray] = []
        if self.config.flavor == ContrastFlavor.GCL:
            for n in range(B):
                graphs.append(self.augmentor.augment(graphs[n], rng))
                positives[n] = B + n
                negatives.append(np.array([k for k in range(B) if k != n], dtype=np.int64))
        else:
            distances = self.cache.matrix([dataset.clip(i) for i in members], self.threads)
            for n in range(B):
                pos, negs = select_pos_neg(n, distances[n], B, self.config.margin_fraction)
                positives[n] = pos
                negatives.append(np.array(negs, dtype=np.int64))

        return Batch(
            members=members,
            graphs=graphs,
            labels=labels,
            positives=positives,
            negatives=negatives,
            mode=mode,
        )


def make_batch(
    dataset: TrainingSet,
    config: TrainConfig,
    rng: np.random.Generator,
    augment: Optional[AugmentConfig] = None,
) -> Batch:
    """Draw one uniformly sampled batch; see ``BatchBuilder.make_batch``."""
    return BatchBuilder(config, augment).make_batch(dataset, rng)
