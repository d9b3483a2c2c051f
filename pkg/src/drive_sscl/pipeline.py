"""
DriveSceneProcessor - the primary entry point tying the pipeline stages together.
"""

import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core.ingest import TrackIngestor, read_manifest, write_manifest
from .core.soia import DistanceMatrix, distance_matrix
from .core.stgraph import GraphBuilder, StGraph
from .core.synth import ScenarioKind, SyntheticCorpus
from .evaluation.benchmark import ModeSweep, SweepConfig, SweepReport
from .evaluation.metrics import Evaluator
from .evaluation.retrieval import Retriever
from .exceptions import ConfigurationError, DataError
from .learning.batching import TrainingSet
from .learning.net import GCNModel, ModelParams, load_model
from .learning.trainer import Trainer, TrainResult
from .models import (
    ClipRecord,
    EvaluationReport,
    LearningMode,
    Readout,
    RetrievalResult,
    RunConfig,
    TrackedClip,
)
from .utils.logger import get_logger
from .utils.serialization import save_graph

PathLike = Union[str, Path]


class DriveSceneProcessor:
    """
    Runs ingest, graph building, SOIA, training, embedding, retrieval and
    evaluation from clip manifests.

    Example:
        >>> processor = DriveSceneProcessor(RunConfig())
        >>> result = processor.train("data/manifest.csv", "model.npz")
        >>> report = processor.evaluate("data/manifest.csv", "model.npz")
    """

    def __init__(
        self,
        config: Optional[RunConfig] = None,
        threads: Optional[int] = None,
        logger: Optional[logging.Logger] = None,
    ):
        """
        Initialize the processor.

        Args:
            config: Run configuration (defaults for every section when omitted)
            threads: Worker threads; falls back to ``data.threads`` then the CPU count
            logger: Optional custom logger
        """
        self.logger = logger or get_logger(__name__)
        self.config = config or RunConfig()
        self.threads = threads or self.config.data.threads or os.cpu_count() or 1
        self.builder = GraphBuilder(self.config.graph, self.logger)

    # ------------------------------------------------------------------
    # manifests and clips
    # ------------------------------------------------------------------

    def _resolve_classes(self, records: Sequence[ClipRecord]) -> List[str]:
        """Configured class list, or the sorted distinct manifest labels."""
        if not self.config.data.classes:
            found = sorted({r.label for r in records if r.label is not None})
            if found:
                self.config.data.classes = found
                self.logger.info(f"Classes inferred from manifest: {', '.join(found)}")
        if self.config.train.num_classes is None and self.config.data.classes:
            self.config.train.num_classes = len(self.config.data.classes)
        return list(self.config.data.classes)

    def load_records(self, manifest: PathLike, split: Optional[str] = None) -> List[ClipRecord]:
        records = read_manifest(manifest)
        self._resolve_classes(records)
        if split is not None:
            records = [r for r in records if r.split == split]
        return records

    def load_clips(self, records: Sequence[ClipRecord]) -> List[TrackedClip]:
        ingestor = TrackIngestor(self.config.data, self.logger)
        return ingestor.load_clips(records, self.threads)

    def ingest(
        self,
        track_file: PathLike,
        out_manifest: PathLike,
        lane_file: Optional[PathLike] = None,
        label: Optional[str] = None,
        split: str = "train",
    ) -> List[ClipRecord]:
        """Slice one recording into clips and write their manifest."""
        if label is not None and self.config.data.classes:
            try:
                self.config.data.label_index(label)
            except ValueError as e:
                raise DataError(str(e)) from e
        ingestor = TrackIngestor(self.config.data, self.logger)
        session = ingestor.load_session(track_file, lane_file)
        clips = ingestor.slice_session(session)
        stride = self.config.data.stride
        records = [
            ClipRecord(
                clip_id=clip.clip_id,
                track_file=Path(track_file).resolve(),
                lane_file=Path(lane_file).resolve() if lane_file else None,
                start_frame=k * stride,
                end_frame=k * stride + clip.num_frames,
                label=label,
                split=split,
            )
            for k, clip in enumerate(clips)
        ]
        out_manifest = Path(out_manifest)
        out_manifest.parent.mkdir(parents=True, exist_ok=True)
        with out_manifest.open("w", encoding="utf-8", newline="") as fh:
            write_manifest(records, fh, relative_to=out_manifest.parent.resolve())
        self.logger.info(f"Wrote {len(records)} clip records to {out_manifest}")
        return records

    # ------------------------------------------------------------------
    # graphs and distances
    # ------------------------------------------------------------------

    def build_graphs(self, manifest: PathLike, out_dir: Optional[PathLike] = None) -> List[StGraph]:
        clips = self.load_clips(self.load_records(manifest))
        graphs = self.builder.build_all(clips)
        if out_dir is not None:
            out_dir = Path(out_dir)
            for graph in graphs:
                save_graph(graph, out_dir / f"{graph.clip_id}.npz")
            self.logger.info(f"Saved {len(graphs)} graphs to {out_dir}")
        return graphs

    def distance_matrix(self, manifest: PathLike, split: Optional[str] = None) -> DistanceMatrix:
        clips = self.load_clips(self.load_records(manifest, split))
        return distance_matrix(clips, self.threads, self.logger)

    # ------------------------------------------------------------------
    # learning
    # ------------------------------------------------------------------

    def _training_set(self, clips: Sequence[TrackedClip]) -> TrainingSet:
        return TrainingSet(clips, self.builder.build_all(clips))

    def train(
        self,
        manifest: PathLike,
        checkpoint: Optional[PathLike] = None,
        metrics: Optional[PathLike] = None,
    ) -> TrainResult:
        """Train on the ``train`` split; labeled ``val`` clips drive validation mAP."""
        records = self.load_records(manifest)
        train_records = [r for r in records if r.split == "train"]
        val_records = [r for r in records if r.split == "val" and r.label is not None]
        if not train_records:
            raise ConfigurationError(f"Manifest {manifest} has no training clips")
        train_set = self._training_set(self.load_clips(train_records))
        validation = self._training_set(self.load_clips(val_records)) if val_records else None
        trainer = Trainer(self.config, self.threads, self.logger)
        return trainer.fit(
            train_set,
            validation,
            checkpoint=checkpoint,
            metrics_path=metrics,
            class_names=self.config.data.classes or None,
        )

    def _load_checkpoint(self, checkpoint: PathLike) -> Tuple[GCNModel, ModelParams]:
        model, params, class_names = load_model(checkpoint, self.logger)
        if class_names:
            self.config.data.classes = class_names
            self.config.train.num_classes = len(class_names)
        return model, params

    def embed(
        self, manifest: PathLike, checkpoint: PathLike, split: Optional[str] = None
    ) -> Tuple[List[str], np.ndarray]:
        model, params = self._load_checkpoint(checkpoint)
        clips = self.load_clips(self.load_records(manifest, split))
        graphs = self.builder.build_all(clips)
        return [c.clip_id for c in clips], model.embed(graphs, params)

    def retrieve(
        self,
        manifest: PathLike,
        checkpoint: PathLike,
        top_k: Optional[int] = None,
        unlabeled_only: bool = False,
    ) -> List[RetrievalResult]:
        """
        Validation clips query the training corpus (labeled and unlabeled).

        Each hit carries its SOIA distance to the query.
        """
        model, params = self._load_checkpoint(checkpoint)
        records = self.load_records(manifest)
        queries = [r for r in records if r.split == "val" and (r.label is None or not unlabeled_only)]
        corpus = [r for r in records if r.split == "train"]
        if not queries or not corpus:
            raise ConfigurationError("retrieval needs val clips as queries and train clips as corpus")
        q_clips = self.load_clips(queries)
        c_clips = self.load_clips(corpus)
        q_z = model.embed(self.builder.build_all(q_clips), params)
        c_z = model.embed(self.builder.build_all(c_clips), params)
        by_id: Dict[str, TrackedClip] = {c.clip_id: c for c in q_clips + c_clips}
        retriever = Retriever(top_k or self.config.eval.top_k, logger=self.logger)
        results = retriever.search(
            [c.clip_id for c in q_clips], q_z, [c.clip_id for c in c_clips], c_z, by_id
        )
        self.logger.info(
            f"Average SOIA distance of top-1 retrievals: {retriever.average_top1_distance(results, by_id):.2f}"
        )
        return results

    def evaluate(
        self,
        manifest: PathLike,
        checkpoint: PathLike,
        mode: Optional[LearningMode] = None,
    ) -> EvaluationReport:
        """Per-class AP on labeled ``val`` clips."""
        model, params = self._load_checkpoint(checkpoint)
        mode = mode or self.config.train.mode
        records = self.load_records(manifest)
        val_records = [r for r in records if r.split == "val" and r.label is not None]
        if not val_records:
            raise ConfigurationError(f"Manifest {manifest} has no labeled val clips")
        val_clips = self.load_clips(val_records)
        reference = None
        if self.config.eval.resolve_readout(mode) == Readout.CENTROID:
            ref_clips = self.load_clips([r for r in records if r.split == "train" and r.label is not None])
            if not ref_clips:
                raise ConfigurationError("centroid readout needs labeled train clips")
            reference = (
                model.embed(self.builder.build_all(ref_clips), params),
                [c.label for c in ref_clips],
            )
        evaluator = Evaluator(self.config.eval, self.config.train.temperature, self.logger)
        return evaluator.evaluate(
            model.embed(self.builder.build_all(val_clips), params),
            [c.label for c in val_clips],
            self.config.data.classes,
            mode,
            prototypes=model.prototype_vectors(params),
            reference=reference,
        )

    # ------------------------------------------------------------------
    # synthetic data
    # ------------------------------------------------------------------

    def synthesize(
        self,
        out_dir: PathLike,
        seed: int = 0,
        kinds: Optional[Sequence[ScenarioKind]] = None,
        clips_per_class: int = 50,
        labeled_fraction: float = 1.0,
        out_of_class: int = 0,
        validation_per_class: int = 10,
    ) -> Path:
        kinds = list(kinds or list(ScenarioKind)[:5])
        corpus = SyntheticCorpus(self.config.data, logger=self.logger)
        try:
            dataset = corpus.generate_dataset(
                {k: clips_per_class for k in kinds},
                labeled_fraction,
                seed,
                out_of_class=out_of_class,
                validation_per_class=validation_per_class,
            )
        except ValueError as e:
            raise ConfigurationError(str(e)) from e
        return corpus.write(dataset, out_dir)

    def compare_modes(self, sweep: Optional[SweepConfig] = None) -> SweepReport:
        """Train SCL, UNSUP and FSL over a seed sweep of synthetic benchmarks."""
        return ModeSweep(self.config, sweep, self.threads, self.logger).run()
