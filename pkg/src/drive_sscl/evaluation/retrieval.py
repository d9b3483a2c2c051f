"""
Embedding-space nearest-neighbour retrieval.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..core.soia import SoiaCache
from ..exceptions import ArgumentError
from ..models import RetrievalHit, RetrievalResult, TrackedClip
from ..utils.logger import get_logger

NORM_EPS = 1e-12


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, NORM_EPS)


def retrieve_knn(
    query: np.ndarray,
    corpus: np.ndarray,
    corpus_ids: Sequence[str],
    k: int,
    query_id: str = "",
) -> RetrievalResult:
    """
    Top-``k`` corpus items by cosine similarity, ties broken by clip_id.

    An item whose clip_id equals ``query_id`` is never returned. ``k`` larger
    than the corpus yields the full ranking.
    """
    corpus = np.atleast_2d(np.asarray(corpus, dtype=np.float64))
    if corpus.shape[0] == 0:
        raise ArgumentError("retrieval corpus is empty")
    if corpus.shape[0] != len(corpus_ids):
        raise ArgumentError("one clip_id per corpus row is required")
    sims = _unit_rows(corpus) @ _unit_rows(query)[0]
    ranked = sorted(
        (i for i in range(len(corpus_ids)) if corpus_ids[i] != query_id),
        key=lambda i: (-sims[i], corpus_ids[i]),
    )
    hits = [RetrievalHit(clip_id=corpus_ids[i], similarity=float(sims[i])) for i in ranked[:k]]
    return RetrievalResult(query_id=query_id, hits=hits)


def avg_soia_of_retrievals(
    queries: Sequence[TrackedClip],
    top1: Sequence[TrackedClip],
    cache: Optional[SoiaCache] = None,
) -> float:
    """Mean SOIA distance between each query and its first retrieval."""
    if len(queries) != len(top1):
        raise ArgumentError("one top-1 clip per query is required")
    if not queries:
        return 0.0
    cache = cache if cache is not None else SoiaCache()
    return float(np.mean([cache.distance(q, t) for q, t in zip(queries, top1)]))


class Retriever:
    """Ranks corpus clips for each query and attaches SOIA distances."""

    def __init__(self, top_k: int = 5, cache: Optional[SoiaCache] = None, logger: Optional[logging.Logger] = None):
        self.top_k = top_k
        self.cache = cache if cache is not None else SoiaCache()
        self.logger = logger or get_logger(__name__)

    def search(
        self,
        query_ids: Sequence[str],
        query_embeddings: np.ndarray,
        corpus_ids: Sequence[str],
        corpus_embeddings: np.ndarray,
        clips: Optional[Dict[str, TrackedClip]] = None,
    ) -> List[RetrievalResult]:
        results = []
        for qid, q in zip(query_ids, np.atleast_2d(query_embeddings)):
            result = retrieve_knn(q, corpus_embeddings, corpus_ids, self.top_k, qid)
            if clips is not None and qid in clips:
                for hit in result.hits:
                    if hit.clip_id in clips:
                        hit.soia_distance = self.cache.distance(clips[qid], clips[hit.clip_id])
            results.append(result)
        self.logger.info(f"Retrieved top-{self.top_k} neighbours for {len(results)} queries")
        return results

    def average_top1_distance(self, results: Sequence[RetrievalResult], clips: Dict[str, TrackedClip]) -> float:
        pairs = [(clips[r.query_id], clips[r.top1.clip_id]) for r in results if r.top1 is not None]
        return avg_soia_of_retrievals([p[0] for p in pairs], [p[1] for p in pairs], self.cache)
