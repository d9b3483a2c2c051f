"""
Training loop: batches -> forward -> loss -> backward -> Adam, one cosine
schedule over every step of every epoch.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core.soia import SoiaCache
from ..evaluation.metrics import Evaluator
from ..exceptions import ConfigurationError, TrainingDivergedError
from ..models import EpochRecord, LearningMode, Readout, RunConfig
from ..utils.logger import get_logger
from ..utils.serialization import MetricsLog
from .batching import BatchBuilder, TrainingSet
from .loss import sscl_loss
from .net import GCNModel, ModelParams, save_model
from .optim import AdamOptimizer, CosineAnnealingSchedule


class TrainResult(BaseModel):
    """Final parameters and per-epoch history of a run."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: GCNModel
    params: ModelParams
    history: List[EpochRecord] = Field(default_factory=list)
    checkpoint: Optional[Path] = None

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.history]


class Trainer:
    """
    Runs one training configuration end to end.

    Example:
        >>> trainer = Trainer(RunConfig())
        >>> result = trainer.fit(TrainingSet.from_clips(clips))
        >>> result.history[-1].loss
    """

    def __init__(
        self,
        config: Optional[RunConfig] = None,
        threads: int = 1,
        logger: Optional[logging.Logger] = None,
    ):
        self.config = config or RunConfig()
        self.threads = threads
        self.logger = logger or get_logger(__name__)
        self.cache = SoiaCache()

    def _prepare(self, dataset: TrainingSet) -> TrainingSet:
        mode = self.config.train.mode
        if mode == LearningMode.UNSUP:
            return dataset.strip_labels()
        if mode == LearningMode.FSL:
            labeled = dataset.labeled_only()
            if len(labeled) == 0:
                raise ConfigurationError("FSL mode needs at least one labeled clip")
            return labeled
        return dataset

    def fit(
        self,
        dataset: TrainingSet,
        validation: Optional[TrainingSet] = None,
        reference: Optional[TrainingSet] = None,
        checkpoint: Optional[Union[str, Path]] = None,
        metrics_path: Optional[Union[str, Path]] = None,
        class_names: Optional[Sequence[str]] = None,
    ) -> TrainResult:
        """
        Train on ``dataset``; ``validation`` (labeled clips) drives per-epoch mAP.

        ``reference`` supplies labeled embeddings for the centroid readout and
        defaults to ``dataset``.
        """
        tc = self.config.train
        train_set = self._prepare(dataset)
        B = tc.batch_size
        if len(train_set) == 0:
            raise ConfigurationError("training set is empty")
        if B > len(train_set):
            raise ConfigurationError(f"batch size {B} exceeds training set size {len(train_set)}")

        C = self.config.num_classes
        class_names = list(class_names or self.config.data.classes or [str(k) for k in range(C)])
        rng = np.random.default_rng(tc.seed)
        model = GCNModel(self.config.model, C, self.logger)
        params = model.init_params(rng)
        optimizer = AdamOptimizer(params)
        builder = BatchBuilder(tc, self.config.augment, self.cache, self.threads, self.logger)
        per_epoch = len(train_set) // B
        schedule = CosineAnnealingSchedule(tc.epochs * per_epoch, tc.lr_init, tc.lr_min)
        log = MetricsLog(metrics_path)
        log.reset()
        self.logger.info(
            f"Training {tc.mode.value} on {len(train_set)} clips: "
            f"{tc.epochs} epochs x {per_epoch} batches of {B}"
        )
        step = 0
        for epoch in range(1, tc.epochs + 1):
            order = rng.permutation(len(train_set))
            losses = []
            for b in range(per_epoch):
                lr = schedule(step)
                batch = builder.make_batch(train_set, rng, order[b * B:(b + 1) * B])
                z, state = model.forward(batch.graphs, params)
                result = sscl_loss(z, batch, model.prototype_vectors(params), tc)
                if not np.isfinite(result.report.total):
                    self._diverged(model, params, checkpoint, class_names, epoch)
                tape = model.backward(result.grad_embeddings, state, params)
                model.prototype_backward(result.grad_prototypes, params, tape)
                optimizer.step(params, tape, lr)
                report = result.report.model_copy(update={"grad_norms": tape.norms(), "lr": lr})
                losses.append(report.total)
                step += 1
                self.logger.debug(f"epoch {epoch} batch {b}: loss {report.total:.4f} lr {lr:.5f}")

            val_map = self._validate(model, params, validation, reference or dataset, class_names)
            record = EpochRecord(
                epoch=epoch,
                lr=lr,
                loss=float(np.mean(losses)),
                val_map=val_map,
                unlabeled_weight=tc.unlabeled_weight,
            )
            log.append(record)
            self.logger.info(
                f"Epoch {epoch}/{tc.epochs}: loss {record.loss:.4f}"
                + (f", val mAP {val_map:.4f}" if val_map is not None else "")
            )

        saved = save_model(checkpoint, model, params, class_names) if checkpoint else None
        return TrainResult(model=model, params=params, history=log.records, checkpoint=saved)

    def _diverged(self, model, params, checkpoint, class_names, epoch: int) -> None:
        last = params.copy()
        if checkpoint:
            save_model(checkpoint, model, last, class_names)
        raise TrainingDivergedError(
            f"loss became non-finite in epoch {epoch}"
            + (f"; last parameters saved to {checkpoint}" if checkpoint else ""),
            last_params=last,
        )

    def _validate(
        self,
        model: GCNModel,
        params: ModelParams,
        validation: Optional[TrainingSet],
        reference: TrainingSet,
        class_names: Sequence[str],
    ) -> Optional[float]:
        if validation is None or len(validation) == 0:
            return None
        labels = [validation.label_of(i) for i in range(len(validation))]
        if all(lab is None for lab in labels):
            return None
        mode = self.config.train.mode
        evaluator = Evaluator(self.config.eval, self.config.train.temperature, self.logger)
        ref = None
        if self.config.eval.resolve_readout(mode) == Readout.CENTROID:
            ref_labels = [reference.label_of(i) for i in range(len(reference))]
            ref = (model.embed(reference.graphs, params), ref_labels)
        report = evaluator.evaluate(
            model.embed(validation.graphs, params),
            labels,
            class_names,
            mode,
            prototypes=model.prototype_vectors(params),
            reference=ref,
        )
        return report.mean_ap


def train_run(
    dataset: TrainingSet,
    config: Optional[RunConfig] = None,
    validation: Optional[TrainingSet] = None,
    checkpoint: Optional[Union[str, Path]] = None,
    metrics_path: Optional[Union[str, Path]] = None,
    threads: int = 1,
) -> TrainResult:
    return Trainer(config, threads).fit(dataset, validation, checkpoint=checkpoint, metrics_path=metrics_path)
