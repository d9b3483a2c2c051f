"""
Seed sweeps over the synthetic benchmark comparing learning modes.

Each seed generates one dataset per labeled fraction and trains SCL and
UNSUP on it; FSL is added at the smallest fraction, where the retrieval
comparison is also made.
"""

import logging
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..core.soia import SoiaCache
from ..core.stgraph import GraphBuilder
from ..core.synth import ScenarioKind, SyntheticCorpus
from ..learning.batching import TrainingSet
from ..learning.trainer import Trainer, TrainResult
from ..models import LearningMode, RunConfig
from ..utils.logger import get_logger
from .retrieval import Retriever


class SweepConfig(BaseModel):
    """Dataset shape and seeds of a mode-comparison sweep."""

    model_config = ConfigDict(extra="forbid")

    kinds: List[ScenarioKind] = Field(default_factory=lambda: list(ScenarioKind)[:5], min_length=1)
    clips_per_class: int = Field(default=50, ge=1)
    out_of_class: int = Field(default=150, ge=0)
    validation_per_class: int = Field(default=10, ge=1)
    labeled_fractions: List[float] = Field(default_factory=lambda: [1.0, 0.5, 0.1], min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    required_seeds: Optional[int] = Field(default=None, ge=1)

    @field_validator("labeled_fractions")
    @classmethod
    def fractions_in_range(cls, v: List[float]) -> List[float]:
        for f in v:
            if not 0.0 < f <= 1.0:
                raise ValueError(f"labeled fractions must lie in (0, 1], got {f}")
        return sorted(set(v), reverse=True)

    @model_validator(mode="after")
    def required_within_seeds(self) -> "SweepConfig":
        if self.required_seeds is not None and self.required_seeds > len(self.seeds):
            raise ValueError(f"required_seeds {self.required_seeds} exceeds the {len(self.seeds)} seeds")
        return self

    @property
    def seeds_needed(self) -> int:
        """Seeds a comparison must hold for; four in five unless configured."""
        if self.required_seeds is not None:
            return self.required_seeds
        return len(self.seeds) - len(self.seeds) // 5

    @property
    def lowest_fraction(self) -> float:
        return min(self.labeled_fractions)


class SweepRun(BaseModel):
    """Outcome of one training run of a sweep."""

    seed: int
    labeled_fraction: float
    mode: LearningMode
    mean_ap: float
    top1_soia: Optional[float] = None


class SweepReport(BaseModel):
    """Every run of a sweep and the seed counts of each comparison."""

    sweep: SweepConfig
    runs: List[SweepRun] = Field(default_factory=list)

    def _lookup(self) -> Dict[Tuple[int, float, LearningMode], SweepRun]:
        return {(r.seed, r.labeled_fraction, r.mode): r for r in self.runs}

    def semi_beats_unsupervised(self) -> List[int]:
        """Seeds where SCL mAP is at least UNSUP mAP at every fraction."""
        runs = self._lookup()
        return [
            seed
            for seed in self.sweep.seeds
            if all(
                runs[(seed, f, LearningMode.SCL)].mean_ap >= runs[(seed, f, LearningMode.UNSUP)].mean_ap
                for f in self.sweep.labeled_fractions
            )
        ]

    def semi_beats_supervised(self) -> List[int]:
        """Seeds where SCL mAP exceeds FSL mAP at the smallest fraction."""
        runs = self._lookup()
        f = self.sweep.lowest_fraction
        return [
            seed
            for seed in self.sweep.seeds
            if runs[(seed, f, LearningMode.SCL)].mean_ap > runs[(seed, f, LearningMode.FSL)].mean_ap
        ]

    def semi_retrieves_closer(self) -> List[int]:
        """Seeds where SCL top-1 retrievals are no farther in SOIA than FSL's."""
        runs = self._lookup()
        f = self.sweep.lowest_fraction
        return [
            seed
            for seed in self.sweep.seeds
            if runs[(seed, f, LearningMode.SCL)].top1_soia <= runs[(seed, f, LearningMode.FSL)].top1_soia
        ]

    def seed_counts(self) -> Dict[str, int]:
        return {
            "scl_ge_unsup": len(self.semi_beats_unsupervised()),
            "scl_gt_fsl": len(self.semi_beats_supervised()),
            "scl_soia_le_fsl": len(self.semi_retrieves_closer()),
        }

    def checks(self) -> Dict[str, bool]:
        need = self.sweep.seeds_needed
        return {name: count >= need for name, count in self.seed_counts().items()}

    @property
    def passed(self) -> bool:
        return all(self.checks().values())


class ModeSweep:
    """
    Trains every (seed, fraction, mode) combination of a sweep.

    Example:
        >>> report = ModeSweep(RunConfig(), SweepConfig(seeds=[0, 1])).run()
        >>> report.checks()
    """

    def __init__(
        self,
        config: Optional[RunConfig] = None,
        sweep: Optional[SweepConfig] = None,
        threads: int = 1,
        logger: Optional[logging.Logger] = None,
    ):
        self.config = config or RunConfig()
        self.sweep = sweep or SweepConfig()
        self.threads = threads
        self.logger = logger or get_logger(__name__)
        self.corpus = SyntheticCorpus(self.config.data, logger=self.logger)
        self.builder = GraphBuilder(self.config.graph, self.logger)

    def _run_config(self, classes: List[str], mode: LearningMode, seed: int) -> RunConfig:
        config = self.config.model_copy(deep=True)
        config.data.classes = classes
        config.train.num_classes = len(classes)
        config.train.mode = mode
        config.train.seed = seed
        config.augment.seed = seed
        return config

    def _fit(
        self,
        classes: List[str],
        mode: LearningMode,
        seed: int,
        train_set: TrainingSet,
        validation: TrainingSet,
    ) -> TrainResult:
        trainer = Trainer(self._run_config(classes, mode, seed), self.threads, self.logger)
        return trainer.fit(train_set, validation, class_names=classes)

    def _top1_soia(
        self,
        result: TrainResult,
        train_set: TrainingSet,
        validation: TrainingSet,
        cache: SoiaCache,
    ) -> float:
        retriever = Retriever(top_k=1, cache=cache, logger=self.logger)
        clips = {c.clip_id: c for c in validation.clips + train_set.clips}
        results = retriever.search(
            [c.clip_id for c in validation.clips],
            result.model.embed(validation.graphs, result.params),
            [c.clip_id for c in train_set.clips],
            result.model.embed(train_set.graphs, result.params),
            clips,
        )
        return retriever.average_top1_distance(results, clips)

    def run_seed(self, seed: int) -> List[SweepRun]:
        sweep = self.sweep
        runs: List[SweepRun] = []
        for fraction in sweep.labeled_fractions:
            dataset = self.corpus.generate_dataset(
                {k: sweep.clips_per_class for k in sweep.kinds},
                fraction,
                seed,
                out_of_class=sweep.out_of_class,
                validation_per_class=sweep.validation_per_class,
            )
            train_set = TrainingSet.from_clips(dataset.labeled + dataset.unlabeled, self.builder)
            validation = TrainingSet.from_clips(dataset.validation, self.builder)
            modes = [LearningMode.SCL, LearningMode.UNSUP]
            lowest = fraction == sweep.lowest_fraction
            if lowest:
                modes.append(LearningMode.FSL)
            cache = SoiaCache()
            for mode in modes:
                result = self._fit(dataset.classes, mode, seed, train_set, validation)
                top1 = None
                if lowest and mode != LearningMode.UNSUP:
                    top1 = self._top1_soia(result, train_set, validation, cache)
                run = SweepRun(
                    seed=seed,
                    labeled_fraction=fraction,
                    mode=mode,
                    mean_ap=result.history[-1].val_map,
                    top1_soia=top1,
                )
                self.logger.info(
                    f"seed {seed} fraction {fraction:g} {mode.value}: mAP {run.mean_ap:.4f}"
                    + (f", top-1 SOIA {top1:.1f}" if top1 is not None else "")
                )
                runs.append(run)
        return runs

    def run(self) -> SweepReport:
        report = SweepReport(sweep=self.sweep)
        for seed in self.sweep.seeds:
            report.runs.extend(self.run_seed(seed))
        for name, ok in report.checks().items():
            self.logger.info(f"{name}: {'holds' if ok else 'fails'}")
        return report
