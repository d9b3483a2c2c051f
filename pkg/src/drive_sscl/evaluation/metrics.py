"""
Classification scoring and average precision.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..exceptions import ArgumentError
from ..models import (
    APConvention,
    ClassAP,
    EvalConfig,
    EvaluationReport,
    LearningMode,
    Readout,
)
from ..utils.logger import get_logger

NORM_EPS = 1e-12


class PrCurve(BaseModel):
    """Step precision-recall curve of one class, one point per ranked item."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def class_scores(embedding: np.ndarray, prototypes: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax over ``z.c_k / tau``; accepts one embedding or a ``(G, D)`` stack."""
    z = np.asarray(embedding, dtype=np.float64)
    return _softmax_rows((z @ np.asarray(prototypes, dtype=np.float64).T) / temperature)


def class_centroids(
    embeddings: np.ndarray, labels: Sequence[Optional[int]], num_classes: int, normalize: bool = True
) -> np.ndarray:
    """Mean embedding per class; classes without members get a zero row."""
    z = np.asarray(embeddings, dtype=np.float64)
    centroids = np.zeros((num_classes, z.shape[1]))
    for k in range(num_classes):
        rows = [i for i, lab in enumerate(labels) if lab == k]
        if rows:
            centroids[k] = z[rows].mean(axis=0)
    if normalize:
        norms = np.linalg.norm(centroids, axis=1, keepdims=True)
        centroids = np.where(norms > NORM_EPS, centroids / np.maximum(norms, NORM_EPS), 0.0)
    return centroids


def _ranked_hits(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise ArgumentError("scores and labels must have the same length")
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return labels[order]


def precision_recall_curve(scores: np.ndarray, labels: np.ndarray) -> PrCurve:
    """Curve over descending scores, ties broken by item index."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    hits = _ranked_hits(scores, labels)
    tp = np.cumsum(hits)
    positives = max(int(tp[-1]) if tp.size else 0, 1)
    ranks = np.arange(1, hits.shape[0] + 1)
    return PrCurve(recall=tp / positives, precision=tp / ranks, thresholds=scores[order])


def average_precision(
    scores: np.ndarray,
    labels: np.ndarray,
    convention: APConvention = APConvention.CONTINUOUS,
) -> Optional[float]:
    """
    Area under the step PR curve by rank summation.

    Returns ``None`` when there are no positives.
    """
    hits = _ranked_hits(scores, labels)
    positives = int(hits.sum())
    if positives == 0:
        return None
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.shape[0] + 1)
    if convention == APConvention.ELEVEN_POINT:
        recall = tp / positives
        return float(
            np.mean([precision[recall >= t].max() if np.any(recall >= t) else 0.0 for t in np.linspace(0, 1, 11)])
        )
    return float(np.sum(precision[hits]) / positives)


def mean_ap(aps: Sequence[Optional[float]]) -> float:
    """Unweighted mean over the defined entries."""
    defined = [a for a in aps if a is not None]
    if not defined:
        raise ArgumentError("mean AP needs at least one class with positives")
    return float(np.mean(defined))


def evaluate_scores(
    scores: np.ndarray,
    labels: Sequence[int],
    class_names: Sequence[str],
    convention: APConvention = APConvention.CONTINUOUS,
    readout: Readout = Readout.PROTOTYPE,
) -> EvaluationReport:
    """Per-class one-vs-rest AP over a ``(G, C)`` score matrix."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    rows = []
    for k, name in enumerate(class_names):
        truth = labels == k
        ap = average_precision(scores[:, k], truth, convention)
        rows.append(ClassAP(class_name=name, ap=ap, positives=int(truth.sum())))
    defined = [r.ap for r in rows if r.ap is not None]
    return EvaluationReport(
        classes=rows, mean_ap=mean_ap(defined) if defined else 0.0, readout=readout
    )


class Evaluator:
    """Scores labeled embeddings with a prototype or class-centroid readout."""

    def __init__(
        self,
        config: Optional[EvalConfig] = None,
        temperature: float = 1.0,
        logger: Optional[logging.Logger] = None,
    ):
        self.config = config or EvalConfig()
        self.temperature = temperature
        self.logger = logger or get_logger(__name__)

    def readout_vectors(
        self,
        mode: LearningMode,
        num_classes: int,
        prototypes: Optional[np.ndarray] = None,
        reference: Optional[Tuple[np.ndarray, Sequence[Optional[int]]]] = None,
    ) -> Tuple[Readout, np.ndarray]:
        readout = self.config.resolve_readout(mode)
        if readout == Readout.PROTOTYPE:
            if prototypes is None:
                raise ArgumentError("prototype readout needs trained prototypes")
            return readout, prototypes
        if reference is None:
            raise ArgumentError("centroid readout needs labeled reference embeddings")
        return readout, class_centroids(reference[0], reference[1], num_classes)

    def evaluate(
        self,
        embeddings: np.ndarray,
        labels: Sequence[Optional[int]],
        class_names: Sequence[str],
        mode: LearningMode,
        prototypes: Optional[np.ndarray] = None,
        reference: Optional[Tuple[np.ndarray, Sequence[Optional[int]]]] = None,
    ) -> EvaluationReport:
        """AP table over the labeled rows of ``embeddings``."""
        keep = [i for i, lab in enumerate(labels) if lab is not None]
        readout, vectors = self.readout_vectors(mode, len(class_names), prototypes, reference)
        if not keep:
            self.logger.warning("No labeled clips to evaluate")
            return EvaluationReport(readout=readout)
        scores = class_scores(np.asarray(embeddings)[keep], vectors, self.temperature)
        report = evaluate_scores(
            scores, [labels[i] for i in keep], class_names, self.config.ap_convention, readout
        )
        self.logger.debug(f"Evaluated {len(keep)} clips: mAP {report.mean_ap:.4f}")
        return report
