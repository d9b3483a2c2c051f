"""
Semi-supervised contrastive loss with class prototypes.

For anchor ``n`` with positive set ``P_n`` and candidate set ``A_n``::

    L_n = -sum_{p in P_n} log( exp(p.z_n / tau) / sum_{a in A_n} exp(a.z_n / tau) )

``A_n`` holds the negatives, the sample positive and every prototype. Labeled
anchors attract their sample positive and their class prototype; unlabeled
anchors attract the sample positive only and are weighted by ``unlabeled_weight``.
"""

from typing import List, NamedTuple

import numpy as np

from ..exceptions import DataError
from ..models import LossReport, TrainConfig
from .batching import Batch


class LossResult(NamedTuple):
    report: LossReport
    grad_embeddings: np.ndarray
    grad_prototypes: np.ndarray


def _log_sum_exp(logits: np.ndarray) -> float:
    m = float(np.max(logits))
    return m + float(np.log(np.sum(np.exp(logits - m))))


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - np.max(logits))
    return e / np.sum(e)


def sscl_loss(
    embeddings: np.ndarray,
    batch: Batch,
    prototypes: np.ndarray,
    config: TrainConfig,
) -> LossResult:
    """
    Loss of one batch with gradients w.r.t. every embedding row and prototype.

    ``embeddings`` has one row per graph of ``batch.graphs``; anchors are the
    first ``batch.size`` rows.
    """
    z_all = np.asarray(embeddings)
    protos = np.asarray(prototypes)
    C = protos.shape[0]
    tau = config.temperature
    grad_z = np.zeros_like(z_all)
    grad_p = np.zeros_like(protos)
    per_anchor: List[float] = []
    total = 0.0

    for n in range(batch.size):
        label = int(batch.labels[n])
        if label >= C:
            raise DataError(f"anchor {n} has class index {label} outside [0, {C})")
        pos = int(batch.positives[n])
        rows = batch.negatives[n] if len(batch.negatives) > n else np.zeros(0, dtype=np.int64)
        rows = np.asarray(rows, dtype=np.int64)
        if pos >= 0:
            rows = np.append(rows, pos)
        targets = []
        if pos >= 0:
            targets.append(rows.shape[0] - 1)
        if label >= 0:
            targets.append(rows.shape[0] + label)
        if not targets:
            per_anchor.append(0.0)
            continue

        z_n = z_all[n]
        candidates = np.concatenate([z_all[rows], protos], axis=0)
        logits = candidates @ z_n / tau
        loss_n = len(targets) * _log_sum_exp(logits) - float(np.sum(logits[targets]))
        weight = 1.0 if label >= 0 else config.unlabeled_weight
        per_anchor.append(loss_n)
        total += weight * loss_n

        d_logits = len(targets) * _softmax(logits)
        d_logits[targets] -= 1.0
        d_logits *= weight / tau
        grad_z[n] += candidates.T @ d_logits
        d_cand = np.outer(d_logits, z_n)
        np.add.at(grad_z, rows, d_cand[: rows.shape[0]])
        grad_p += d_cand[rows.shape[0]:]

    report = LossReport(total=float(total), per_anchor=per_anchor)
    return LossResult(report, grad_z, grad_p)
