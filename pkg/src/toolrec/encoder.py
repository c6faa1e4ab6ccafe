"""Dual-tower MLP encoder.

Each tower maps an L2-normalized sparse lexical vector through L dense layers
(rectifier between layers, dropout after hidden activations in train mode
only) into a d'-dimensional embedding, which is normalized to unit length so
that a dot product is exactly cosine similarity. Server embeddings are
precomputed once into an immutable index; queries then cost one O(M*d')
matrix-vector pass.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .lexical import SparseVector


class EncoderError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class DenseEmbedding:
    """Fixed-width embedding; `normalized` marks unit (or flagged zero) length."""

    vector: np.ndarray
    normalized: bool = False
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


class TowerParams:
    """One tower: weight/bias per layer, chained d -> hidden... -> d'."""

    def __init__(self, weights, biases, dropout_rate: float = 0.0):
        if len(weights) != len(biases):
            raise EncoderError("weights and biases must pair up")
        if not weights:
            raise EncoderError("a tower needs at least one layer")
        if not 0.0 <= dropout_rate < 1.0:
            raise EncoderError(f"dropout_rate must be in [0,1), got {dropout_rate}")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise EncoderError(f"layer {i} shapes do not chain: {w.shape} / {b.shape}")
            if i > 0 and weights[i - 1].shape[1] != w.shape[0]:
                raise EncoderError(
                    f"layer {i} input {w.shape[0]} does not match previous output "
                    f"{weights[i - 1].shape[1]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise EncoderError(f"layer {i} contains non-finite parameters")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.dropout_rate = float(dropout_rate)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.weights[-1].shape[1])

    def copy(self) -> "TowerParams":
        return TowerParams([w.copy() for w in self.weights],
                           [b.copy() for b in self.biases],
                           self.dropout_rate)

    @classmethod
    def init(cls, dims, rng: np.random.Generator,
             dropout_rate: float = 0.2) -> "TowerParams":
        """Centered uniform init scaled by 1/sqrt(fan_in); zero biases."""
        if len(dims) < 2:
            raise EncoderError("need at least input and output dimensions")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out, dtype=np.float64))
        return cls(weights, biases, dropout_rate)


@dataclass
class ForwardCache:
    """Activations saved during a train-mode pass for backpropagation."""

    inputs: object                    # (B, d) csr or ndarray
    pre_acts: list                    # per layer, before the rectifier
    hidden: list                      # per hidden layer, after rectifier+dropout
    dropout_masks: list               # per hidden layer, None in infer mode
    out: np.ndarray                   # (B, d') unnormalized


def forward_batch(tower: TowerParams, inputs, mode: str = "infer",
                  rng: np.random.Generator | None = None):
    """Run a batch through the tower.

    Returns (out, cache); cache is None in infer mode. Dropout uses inverted
    scaling so inference needs no rescale, and is applied only after hidden
    activations, never to the output layer.
    """
    if mode not in ("train", "infer"):
        raise EncoderError(f"unknown mode {mode!r}")
    if mode == "train" and rng is None and tower.dropout_rate > 0:
        raise EncoderError("train mode with dropout requires a generator")
    if inputs.shape[1] != tower.in_dim:
        raise EncoderError(
            f"input dim {inputs.shape[1]} does not match tower input {tower.in_dim}")

    h = inputs
    pre_acts, hidden, masks = [], [], []
    for layer in range(tower.n_layers):
        z = h @ tower.weights[layer] + tower.biases[layer]
        z = np.asarray(z)
        if layer < tower.n_layers - 1:
            pre_acts.append(z)
            a = np.maximum(z, 0.0)
            if mode == "train" and tower.dropout_rate > 0:
                keep = 1.0 - tower.dropout_rate
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
                masks.append(mask)
            else:
                masks.append(None)
            hidden.append(a)
            h = a
        else:
            out = z
    cache = None
    if mode == "train":
        cache = ForwardCache(inputs=inputs, pre_acts=pre_acts, hidden=hidden,
                             dropout_masks=masks, out=out)
    return out, cache


def forward(tower: TowerParams, v, mode: str = "infer",
            rng: np.random.Generator | None = None) -> DenseEmbedding:
    """Single-record forward pass; returns the unnormalized embedding."""
    if isinstance(v, SparseVector):
        row = sparse.csr_matrix(v.to_dense().reshape(1, -1))
    else:
        row = np.asarray(v, dtype=np.float64).reshape(1, -1)
    out, _ = forward_batch(tower, row, mode=mode, rng=rng)
    return DenseEmbedding(vector=out[0], normalized=False)


def normalize(z) -> DenseEmbedding:
    """Unit-length embedding; a zero vector passes through flagged degenerate."""
    vec = z.vector if isinstance(z, DenseEmbedding) else np.asarray(z, dtype=np.float64)
    n = float(np.linalg.norm(vec))
    if n == 0.0:
        return DenseEmbedding(vector=vec.copy(), normalized=True, degenerate=True)
    return DenseEmbedding(vector=vec / n, normalized=True)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise unit norm; all-zero rows are left as zero."""
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return matrix / safe


def semantic_score(emb_m: DenseEmbedding, emb_t: DenseEmbedding) -> float:
    """Cosine similarity: a plain dot product once both sides are unit-norm."""
    if not (emb_m.normalized and emb_t.normalized):
        raise EncoderError("semantic_score requires normalized embeddings")
    return float(np.dot(emb_m.vector, emb_t.vector))


class EmbeddingIndex:
    """Immutable id -> unit embedding snapshot with an instrumented score pass.

    `scores` is the only way to sweep the corpus, and it counts invocations so
    tests can assert how many O(M*d') passes an inference performs.
    """

    def __init__(self, ids, matrix: np.ndarray):
        ids = tuple(ids)
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise EncoderError(
                f"index shape {matrix.shape} does not match {len(ids)} ids")
        norms = np.linalg.norm(matrix, axis=1)
        bad = [ids[i] for i in np.nonzero(np.abs(norms - 1.0) > 1e-6)[0]
               if norms[i] != 0.0]
        if bad:
            raise EncoderError(f"non-unit embeddings for ids {bad[:5]}")
        matrix.setflags(write=False)
        self.ids = ids
        self.matrix = matrix
        self._pos = {server_id: i for i, server_id in enumerate(ids)}
        h = hashlib.sha256()
        h.update("\n".join(ids).encode("utf-8"))
        h.update(matrix.tobytes())
        self.snapshot_id = h.hexdigest()[:16]
        self.matvec_count = 0

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1]) if self.matrix.size else 0

    def embedding(self, server_id: str) -> DenseEmbedding:
        i = self._pos[server_id]
        vec = self.matrix[i]
        return DenseEmbedding(vector=vec, normalized=True,
                              degenerate=bool(np.all(vec == 0.0)))

    def scores(self, query: np.ndarray) -> np.ndarray:
        """One full corpus pass: dot of every stored embedding with `query`."""
        self.matvec_count += 1
        if len(self.ids) == 0:
            return np.zeros(0, dtype=np.float64)
        return self.matrix @ np.asarray(query, dtype=np.float64)


def encode_corpus(tower: TowerParams, items) -> EmbeddingIndex:
    """Precompute normalized embeddings for (id, SparseVector) pairs.

    Ids are stored sorted so rebuilding from the same params and corpus is
    bit-identical.
    """
    items = sorted(items, key=lambda pair: pair[0])
    if not items:
        return EmbeddingIndex((), np.zeros((0, tower.out_dim), dtype=np.float64))
    ids = [server_id for server_id, _ in items]
    if len(set(ids)) != len(ids):
        raise EncoderError("duplicate ids in corpus")
    from .lexical import vectors_to_csr

    batch = vectors_to_csr([v for _, v in items])
    out, _ = forward_batch(tower, batch, mode="infer")
    return EmbeddingIndex(tuple(ids), normalize_rows(out))


CHECKPOINT_VERSION = 1


def _write_npz_deterministic(path, arrays: dict) -> None:
    # np.savez stamps the current time into the zip members, which would break
    # byte-identical reruns; write the archive with a fixed timestamp instead.
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]),
                                      allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def save_checkpoint(path, task_tower: TowerParams, server_tower: TowerParams,
                    vocab_hash: str, extra: dict | None = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "vocab_hash": vocab_hash,
        "task_layers": task_tower.n_layers,
        "server_layers": server_tower.n_layers,
        "dropout_rate": task_tower.dropout_rate,
        "extra": extra or {},
    }
    arrays = {
        "meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                              dtype=np.uint8),
    }
    for prefix, tower in (("task", task_tower), ("server", server_tower)):
        for i, (w, b) in enumerate(zip(tower.weights, tower.biases)):
            arrays[f"{prefix}_W{i}"] = w
            arrays[f"{prefix}_b{i}"] = b
    _write_npz_deterministic(path, arrays)


def save_index(path, index: EmbeddingIndex) -> None:
    """Persist an embedding index with the same deterministic layout."""
    arrays = {
        "ids": np.asarray(index.ids, dtype=np.str_),
        "matrix": index.matrix,
    }
    _write_npz_deterministic(path, arrays)


def load_index(path) -> EmbeddingIndex:
    try:
        with np.load(path) as data:
            ids = [str(x) for x in data["ids"]]
            matrix = np.array(data["matrix"], dtype=np.float64)
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read index {path}: {exc}") from exc
    return EmbeddingIndex(tuple(ids), matrix)


def load_checkpoint(path, expected_vocab_hash: str | None = None):
    """Load (task_tower, server_tower, meta); verifies the vocabulary hash."""
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in arrays:
        raise CheckpointError(f"{path}: missing metadata block")
    meta = json.loads(bytes(arrays["meta"]).decode("utf-8"))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {meta.get('version')}")
    if expected_vocab_hash is not None and meta["vocab_hash"] != expected_vocab_hash:
        raise CheckpointError(
            f"{path}: checkpoint was trained against a different vocabulary "
            f"({meta['vocab_hash'][:12]}... != {expected_vocab_hash[:12]}...)")
    towers = {}
    for prefix in ("task", "server"):
        n = meta[f"{prefix}_layers"]
        weights = [arrays[f"{prefix}_W{i}"] for i in range(n)]
        biases = [arrays[f"{prefix}_b{i}"] for i in range(n)]
        towers[prefix] = TowerParams(weights, biases, meta["dropout_rate"])
    return towers["task"], towers["server"], meta
