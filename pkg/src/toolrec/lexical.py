"""Shared vocabulary and L2-normalized sparse lexical vectors.

Tasks and servers are embedded from a single vocabulary so their vectors live
in a common feature space. Tokenization is deliberately simple: lowercase and
split on non-alphanumeric runs; document-frequency bounds do any filtering.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

_TOKEN_RE = re.compile(r"[0-9a-z]+")


class LexicalError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class VocabularyConfig:
    min_doc_freq: int = 1
    max_doc_freq_ratio: float = 1.0
    use_idf: bool = True


@dataclass(frozen=True)
class Vocabulary:
    """Token -> dense index map with optional smoothed idf weights."""

    index: dict[str, int]
    idf: np.ndarray
    config: VocabularyConfig = field(default_factory=VocabularyConfig)

    @property
    def dim(self) -> int:
        return len(self.index)

    def tokens(self) -> list[str]:
        return sorted(self.index, key=self.index.get)

    def content_hash(self) -> str:
        """Stable digest of the token map and idf weights.

        Checkpoints record this so a model is never served against a
        vocabulary other than the one it was trained with.
        """
        h = hashlib.sha256()
        for token in self.tokens():
            i = self.index[token]
            h.update(f"{token}\t{i}\t{float(self.idf[i])!r}\n".encode("utf-8"))
        return h.hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#config\t{self.config.min_doc_freq}\t"
                     f"{self.config.max_doc_freq_ratio!r}\t{int(self.config.use_idf)}\n")
            for token in self.tokens():
                i = self.index[token]
                fh.write(f"{token}\t{i}\t{float(self.idf[i])!r}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        index: dict[str, int] = {}
        idf_entries: dict[int, float] = {}
        config = VocabularyConfig()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if parts[0] == "#config":
                    config = VocabularyConfig(
                        min_doc_freq=int(parts[1]),
                        max_doc_freq_ratio=float(parts[2]),
                        use_idf=bool(int(parts[3])),
                    )
                    continue
                token, i, w = parts
                index[token] = int(i)
                idf_entries[int(i)] = float(w)
        idf = np.ones(len(index), dtype=np.float64)
        for i, w in idf_entries.items():
            idf[i] = w
        return cls(index=index, idf=idf, config=config)


def build_vocabulary(all_texts, config: VocabularyConfig | None = None) -> Vocabulary:
    """Build a deterministic (lexicographically indexed) shared vocabulary.

    Tokens outside [min_doc_freq, max_doc_freq_ratio * n_docs] document
    frequency are excluded. idf uses the smoothed form ln((1+N)/(1+df)) + 1.
    """
    config = config or VocabularyConfig()
    texts = list(all_texts)
    if not any(t.strip() for t in texts):
        raise LexicalError("cannot build a vocabulary from an empty corpus")
    n_docs = len(texts)
    doc_freq: dict[str, int] = {}
    for text in texts:
        for token in set(tokenize(text)):
            doc_freq[token] = doc_freq.get(token, 0) + 1
    max_df = config.max_doc_freq_ratio * n_docs
    kept = sorted(t for t, df in doc_freq.items()
                  if df >= config.min_doc_freq and df <= max_df)
    index = {token: i for i, token in enumerate(kept)}
    idf = np.ones(len(kept), dtype=np.float64)
    if config.use_idf:
        for token, i in index.items():
            idf[i] = math.log((1 + n_docs) / (1 + doc_freq[token])) + 1.0
    return Vocabulary(index=index, idf=idf, config=config)


@dataclass(frozen=True)
class SparseVector:
    """Sorted (index, weight) pairs over a d-dim space; zero vectors carry a flag."""

    indices: tuple[int, ...]
    weights: tuple[float, ...]
    dim: int
    degenerate: bool = False

    def norm(self) -> float:
        return math.sqrt(sum(w * w for w in self.weights))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        for i, w in zip(self.indices, self.weights):
            out[i] = w
        return out


def vectorize(text: str, vocab: Vocabulary) -> SparseVector:
    """Term-frequency vector (x idf when the vocabulary carries idf weights).

    Out-of-vocabulary tokens are dropped; fully OOV or empty text yields a
    zero vector flagged degenerate.
    """
    counts: dict[int, float] = {}
    for token in tokenize(text):
        i = vocab.index.get(token)
        if i is not None:
            counts[i] = counts.get(i, 0.0) + 1.0
    if not counts:
        return SparseVector(indices=(), weights=(), dim=vocab.dim, degenerate=True)
    if vocab.config.use_idf:
        counts = {i: c * vocab.idf[i] for i, c in counts.items()}
    indices = tuple(sorted(counts))
    weights = tuple(counts[i] for i in indices)
    return SparseVector(indices=indices, weights=weights, dim=vocab.dim)


def l2_normalize(v: SparseVector) -> SparseVector:
    """Scale to unit Euclidean norm; a zero vector passes through flagged."""
    n = v.norm()
    if n == 0.0:
        return SparseVector(indices=v.indices, weights=v.weights, dim=v.dim,
                            degenerate=True)
    return SparseVector(
        indices=v.indices,
        weights=tuple(w / n for w in v.weights),
        dim=v.dim,
        degenerate=False,
    )


def vectors_to_csr(vectors) -> sparse.csr_matrix:
    """Stack sparse vectors into one CSR matrix for batched tower input."""
    vectors = list(vectors)
    if not vectors:
        raise LexicalError("cannot stack an empty list of vectors")
    dim = vectors[0].dim
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for v in vectors:
        if v.dim != dim:
            raise LexicalError(f"mixed dimensions {dim} and {v.dim}")
        indices.extend(v.indices)
        data.extend(v.weights)
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.asarray(data, dtype=np.float64),
         np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(vectors), dim),
    )


def embed_text(text: str, vocab: Vocabulary) -> SparseVector:
    """Vectorize then normalize in one step."""
    return l2_normalize(vectorize(text, vocab))
