"""
Tests for embedding-space retrieval.
"""

import numpy as np
import pytest

from conftest import make_clip
from drive_sscl.core.soia import SoiaCache, soia_distance
from drive_sscl.evaluation.retrieval import Retriever, avg_soia_of_retrievals, retrieve_knn
from drive_sscl.exceptions import ArgumentError


class TestRetrieveKnn:
    """Tests for retrieve_knn."""

    def test_duplicate_ranked_first(self, rng):
        """Test an exact duplicate of the query comes first with similarity 1."""
        corpus = rng.normal(size=(6, 4))
        query = corpus[3].copy()
        result = retrieve_knn(query, corpus, [f"c{k}" for k in range(6)], k=3, query_id="q")
        assert result.hits[0].clip_id == "c3"
        assert result.hits[0].similarity == pytest.approx(1.0)
        sims = [h.similarity for h in result.hits]
        assert sims == sorted(sims, reverse=True)

    def test_k_one(self, rng):
        """Test k=1 returns exactly one hit."""
        result = retrieve_knn(rng.normal(size=3), rng.normal(size=(5, 3)), list("abcde"), k=1)
        assert len(result.hits) == 1

    def test_orthogonal(self):
        """Test orthogonal corpus vectors all score zero."""
        result = retrieve_knn(np.array([1.0, 0.0, 0.0]), np.eye(3)[1:], ["b", "a"], k=5)
        assert [h.similarity for h in result.hits] == [0.0, 0.0]
        assert [h.clip_id for h in result.hits] == ["a", "b"]

    def test_large_k_full_ranking(self, rng):
        """Test k beyond the corpus returns every item."""
        result = retrieve_knn(rng.normal(size=3), rng.normal(size=(4, 3)), list("wxyz"), k=10)
        assert sorted(h.clip_id for h in result.hits) == list("wxyz")

    def test_query_excluded(self, rng):
        """Test the query's own clip never appears among its hits."""
        corpus = rng.normal(size=(5, 3))
        ids = list("abcde")
        result = retrieve_knn(corpus[2], corpus, ids, k=5, query_id="c")
        assert "c" not in [h.clip_id for h in result.hits]
        assert len(result.hits) == 4

    def test_empty_corpus(self):
        """Test an empty corpus is an argument error."""
        with pytest.raises(ArgumentError):
            retrieve_knn(np.ones(2), np.zeros((0, 2)), [], k=1)


class TestAverageSoia:
    """Tests for the retrieval SOIA diagnostic."""

    def _clip(self, clip_id, x, w):
        return make_clip([(0, 1, 2, x, 0.0, w, 2.0)], num_frames=1, clip_id=clip_id)

    def test_identical_top1(self):
        """Test a top-1 equal to its query scores zero."""
        q = self._clip("q", 0.0, 2.0)
        assert avg_soia_of_retrievals([q], [self._clip("t", 0.0, 2.0)]) == 0.0

    def test_mean(self):
        """Test the mean over two queries with distances 4 and 6."""
        q1, t1 = self._clip("q1", 0.0, 2.0), self._clip("t1", 0.75, 3.0)
        q2 = make_clip([(0, 1, 2, 0.0, 0.0, 2.0, 3.0)], num_frames=1, clip_id="q2")
        t2 = make_clip([], num_frames=1, clip_id="t2")
        assert soia_distance(q1, t1) == pytest.approx(4.0)
        assert soia_distance(q2, t2) == pytest.approx(6.0)
        assert avg_soia_of_retrievals([q1, q2], [t1, t2]) == pytest.approx(5.0)

    def test_retriever_attaches_distances(self, rng):
        """Test every hit carries its SOIA distance to the query."""
        clips = {cid: self._clip(cid, x, 2.0) for cid, x in (("q", 0.0), ("a", 0.5), ("b", 30.0))}
        retriever = Retriever(top_k=2)
        results = retriever.search(["q"], np.array([[1.0, 0.0]]), ["a", "b"], np.array([[1.0, 0.1], [0.0, 1.0]]), clips)
        hits = results[0].hits
        assert [h.clip_id for h in hits] == ["a", "b"]
        for h in hits:
            assert h.soia_distance == soia_distance(clips["q"], clips[h.clip_id])
        assert retriever.average_top1_distance(results, clips) == hits[0].soia_distance

    def test_shared_empty_cache_kept(self):
        """Test an empty cache passed in is the one that gets filled."""
        cache = SoiaCache()
        retriever = Retriever(cache=cache)
        assert retriever.cache is cache
        clips = {cid: self._clip(cid, x, 2.0) for cid, x in (("q", 0.0), ("a", 0.5))}
        retriever.search(["q"], np.array([[1.0, 0.0]]), ["a"], np.array([[1.0, 0.1]]), clips)
        assert len(cache) == 1

    def test_average_fills_shared_cache(self):
        """Test the diagnostic memoises into a caller's empty cache."""
        cache = SoiaCache()
        avg_soia_of_retrievals([self._clip("q", 0.0, 2.0)], [self._clip("t", 0.75, 3.0)], cache)
        assert len(cache) == 1
