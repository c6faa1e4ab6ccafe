"""End-to-end inference: fused ranking, anchor selection, centroid expansion,
and constrained re-ranking over the pooled candidates.

One recommendation costs a single task encoding, one full semantic pass over
the index, one structural pass, and one more index pass for the centroid, so
the whole pipeline is O(M*d') per request. Every ordering ties off by
ascending server id so identical inputs always produce identical lists.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import McpRecord, TaskRecord, concat_text
from .encoder import (DenseEmbedding, EmbeddingIndex, TowerParams,
                      encode_corpus, forward, normalize)
from .lexical import Vocabulary, embed_text
from .rerank import (CandidateCard, RerankBackend, RerankRequest, RerankResult,
                     rerank)
from .structural import (FusionWeights, Taxonomy, ThemeSystemRules,
                         compat_features, structural_score)

logger = logging.getLogger(__name__)


class RecommendError(ValueError):
    pass


@dataclass(frozen=True)
class RecommendConfig:
    k1: int = 20
    k2: int = 50
    k: int = 10

    def __post_init__(self):
        if self.k1 < 1:
            raise RecommendError("K1 must be >= 1")
        if self.k2 < self.k1:
            raise RecommendError("K2 must be >= K1")
        if self.k < 1:
            raise RecommendError("K must be >= 1")
        if self.k > self.k2:
            raise RecommendError(f"K={self.k} exceeds the pool size K2={self.k2}")


@dataclass(frozen=True)
class CandidateScores:
    semantic: float
    structural: float
    fused: float
    centroid_sim: float | None = None


@dataclass(frozen=True)
class CandidatePool:
    """Anchors in fused order, expansion in centroid-similarity order."""

    anchors: tuple[str, ...]
    expansion: tuple[str, ...]
    scores: dict[str, CandidateScores] = field(default_factory=dict)

    def members(self) -> tuple[str, ...]:
        return self.anchors + self.expansion

    def fused_order(self) -> tuple[str, ...]:
        """Pool members by fused score descending; the re-ranker's pre-order."""
        return tuple(sorted(
            self.members(),
            key=lambda i: (-self.scores[i].fused, i)))

    def __contains__(self, server_id: str) -> bool:
        return server_id in self.scores

    def __len__(self) -> int:
        return len(self.anchors) + len(self.expansion)


@dataclass(frozen=True)
class RankedItem:
    id: str
    rank: int
    provenance: str                 # anchor | expansion
    scores: CandidateScores


@dataclass(frozen=True)
class RankedList:
    items: tuple[RankedItem, ...]
    status: str = "accepted"        # accepted | fallback
    reason: str | None = None
    explanation: str = ""
    pool: CandidatePool | None = None

    def ids(self) -> tuple[str, ...]:
        return tuple(item.id for item in self.items)

    def __len__(self) -> int:
        return len(self.items)


def sort_by_score(ids, scores) -> list[str]:
    """Descending score, ties by ascending id; the one ordering rule."""
    score_of = dict(zip(ids, scores))
    return sorted(ids, key=lambda i: (-score_of[i], i))


def anchor(ranked_ids, k1: int) -> tuple[str, ...]:
    """Top-K1 prefix of the fused ranking."""
    if k1 < 1:
        raise RecommendError("K1 must be >= 1")
    return tuple(ranked_ids[:k1])


def centroid(task_emb: DenseEmbedding, anchor_embeddings) -> np.ndarray:
    """Mean of the task embedding and the anchor embeddings.

    Not re-normalized: ranking by dot product is invariant to positive
    scaling, so the raw mean orders candidates identically.
    """
    anchor_embeddings = list(anchor_embeddings)
    if not anchor_embeddings:
        logger.warning("empty anchor set; centroid degenerates to the task embedding")
        return task_emb.vector.copy()
    total = task_emb.vector.copy()
    for emb in anchor_embeddings:
        total = total + emb.vector
    return total / (len(anchor_embeddings) + 1)


def _select_expansion(sims, ids, exclude, count: int) -> tuple[str, ...]:
    if count <= 0:
        return ()
    exclude = set(exclude)
    remaining = [i for i, server_id in enumerate(ids) if server_id not in exclude]
    ordered = sorted(remaining, key=lambda i: (-sims[i], ids[i]))
    return tuple(ids[i] for i in ordered[:count])


def expand(centroid_vec: np.ndarray, index: EmbeddingIndex, exclude,
           count: int) -> tuple[str, ...]:
    """Top `count` non-anchor servers by centroid similarity."""
    if count <= 0:
        return ()
    sims = index.scores(centroid_vec)
    return _select_expansion(sims, index.ids, exclude, count)


class Engine:
    """Immutable inference bundle: towers, vocabulary, index, metadata.

    Passing task_tower=server_tower=None selects the identity (tower-free)
    variant: tasks and servers are compared by direct cosine over their
    normalized sparse lexical vectors.
    """

    def __init__(self, task_tower: TowerParams | None, server_tower: TowerParams | None,
                 vocab: Vocabulary, servers: dict[str, McpRecord],
                 taxonomy: Taxonomy, index: EmbeddingIndex | None = None,
                 weights: FusionWeights | None = None,
                 rules: ThemeSystemRules | None = None):
        if (task_tower is None) != (server_tower is None):
            raise RecommendError("towers must be given together or not at all")
        self.task_tower = task_tower
        self.server_tower = server_tower
        self.vocab = vocab
        self.servers = dict(servers)
        self.taxonomy = taxonomy
        self.weights = weights or FusionWeights()
        self.rules = rules
        if index is None:
            items = [(m.id, embed_text(concat_text(m), vocab))
                     for m in servers.values()]
            if server_tower is None:
                items.sort(key=lambda pair: pair[0])
                matrix = np.zeros((len(items), vocab.dim), dtype=np.float64)
                for i, (_, v) in enumerate(items):
                    matrix[i] = v.to_dense()
                index = EmbeddingIndex(tuple(i for i, _ in items), matrix)
            else:
                index = encode_corpus(server_tower, items)
        missing = set(servers) - set(index.ids)
        if missing:
            raise RecommendError(f"index is missing servers {sorted(missing)[:5]}")
        self.index = index

    def encode_task(self, task: TaskRecord) -> DenseEmbedding:
        v = embed_text(concat_text(task), self.vocab)
        if self.task_tower is None:
            return DenseEmbedding(vector=v.to_dense(), normalized=True,
                                  degenerate=v.degenerate)
        return normalize(forward(self.task_tower, v, mode="infer"))

    def structural_scores(self, task: TaskRecord) -> np.ndarray:
        """One O(M) pass computing the structural score per indexed server."""
        out = np.zeros(len(self.index), dtype=np.float64)
        for i, server_id in enumerate(self.index.ids):
            features = compat_features(task, self.servers[server_id],
                                       self.taxonomy, self.rules)
            out[i] = structural_score(features, self.weights)
        return out

    def rank_fused(self, task: TaskRecord):
        """Fused scores for every indexed server, sorted descending.

        Returns (ordered ids, task embedding, per-id CandidateScores).
        """
        task_emb = self.encode_task(task)
        semantic = self.index.scores(task_emb.vector)
        structural = self.structural_scores(task)
        fused = self.weights.alpha_sem * semantic + self.weights.alpha_str * structural
        ids = list(self.index.ids)
        scores = {
            server_id: CandidateScores(
                semantic=float(semantic[i]),
                structural=float(structural[i]),
                fused=float(fused[i]))
            for i, server_id in enumerate(ids)
        }
        ordered = sort_by_score(ids, [scores[i].fused for i in ids])
        return ordered, task_emb, scores

    def build_pool(self, task: TaskRecord, config: RecommendConfig):
        """Anchors plus centroid expansion; returns (pool, task embedding)."""
        ordered, task_emb, scores = self.rank_fused(task)
        anchors = anchor(ordered, config.k1)
        c = centroid(task_emb, (self.index.embedding(a) for a in anchors))
        centroid_sims = self.index.scores(c)
        expansion = _select_expansion(
            centroid_sims, self.index.ids, anchors, config.k2 - len(anchors))
        pos = {server_id: i for i, server_id in enumerate(self.index.ids)}
        enriched = {}
        for server_id in anchors + expansion:
            base = scores[server_id]
            enriched[server_id] = CandidateScores(
                semantic=base.semantic, structural=base.structural,
                fused=base.fused,
                centroid_sim=float(centroid_sims[pos[server_id]]))
        return CandidatePool(anchors=anchors, expansion=expansion,
                             scores=enriched), task_emb

    def recommend(self, task: TaskRecord, config: RecommendConfig | None = None,
                  backend: RerankBackend | None = None,
                  constraints: dict | None = None) -> RankedList:
        """Full pipeline for one task; re-rank failures fall back silently."""
        config = config or RecommendConfig()
        pool, _ = self.build_pool(task, config)
        if len(pool) == 0:
            return RankedList(items=(), pool=pool)
        pre_order = pool.fused_order()
        k = min(config.k, len(pool))
        if backend is None:
            result = RerankResult(ids=pre_order[:k])
        else:
            request = RerankRequest(
                task_text=concat_text(task),
                constraints=constraints or _task_constraints(task),
                cards=tuple(CandidateCard.from_record(self.servers[i])
                            for i in pre_order),
                k=k)
            result = rerank(request, backend)
        anchors = set(pool.anchors)
        items = tuple(
            RankedItem(
                id=server_id,
                rank=rank,
                provenance="anchor" if server_id in anchors else "expansion",
                scores=pool.scores[server_id])
            for rank, server_id in enumerate(result.ids, start=1))
        return RankedList(items=items, status=result.status,
                          reason=result.reason, explanation=result.explanation,
                          pool=pool)


def _task_constraints(task: TaskRecord) -> dict:
    return {key: value for key, value in (
        ("language", task.language),
        ("category", task.category),
        ("theme", task.theme),
    ) if value}
