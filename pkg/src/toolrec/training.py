"""Contrastive training of the two towers.

Each batch pairs B tasks with one sampled positive server apiece; every other
server in the batch acts as a negative. The loss is a temperature-scaled
softmax cross-entropy over in-batch scores, averaged over tasks, optionally
symmetrized with the server->task direction. Gradients are computed
analytically (through the output L2 normalization and both MLPs) and applied
with a decoupled-weight-decay Adam update.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .corpus import concat_text
from .encoder import TowerParams, forward_batch, normalize_rows
from .lexical import embed_text, vectors_to_csr

logger = logging.getLogger(__name__)

LOSS_VARIANTS = ("one_sided", "symmetric", "bce")


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 200
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    temperature: float = 0.07
    seed: int = 0
    eval_every: int = 1
    n_layers: int = 3
    hidden_dim: int = 512
    out_dim: int = 256
    dropout_rate: float = 0.2
    loss: str = "symmetric"

    def __post_init__(self):
        if self.temperature <= 0:
            raise TrainingError("temperature must be positive")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")
        if self.loss not in LOSS_VARIANTS:
            raise TrainingError(f"loss must be one of {LOSS_VARIANTS}")

    def tower_dims(self, in_dim: int) -> list[int]:
        return [in_dim] + [self.hidden_dim] * (self.n_layers - 1) + [self.out_dim]


@dataclass(frozen=True)
class Batch:
    """Aligned (task_id, positive_server_id) pairs; tasks unique within a batch."""

    task_ids: tuple[str, ...]
    positive_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.task_ids)


def sample_batch(train_tasks, interactions, rng: np.random.Generator,
                 batch_size: int) -> Batch:
    """Draw up to batch_size distinct tasks, one uniform positive each.

    Tasks without positives are skipped with a warning rather than failing the
    whole run.
    """
    usable = []
    for task_id in train_tasks:
        if interactions.for_task(task_id):
            usable.append(task_id)
        else:
            logger.warning("task %s has no positives; skipped", task_id)
    if not usable:
        raise TrainingError("no trainable tasks: every task has empty positives")
    order = rng.permutation(len(usable))[:batch_size]
    chosen = [usable[i] for i in order]
    positives = []
    for task_id in chosen:
        pos = interactions.for_task(task_id)
        positives.append(pos[int(rng.integers(len(pos)))])
    return Batch(task_ids=tuple(chosen), positive_ids=tuple(positives))


def _epoch_batches(train_tasks, interactions, rng: np.random.Generator,
                   batch_size: int):
    """Shuffle the epoch's tasks and chunk them; positives resampled each epoch."""
    usable = [t for t in train_tasks if interactions.for_task(t)]
    order = rng.permutation(len(usable))
    shuffled = [usable[i] for i in order]
    for start in range(0, len(shuffled), batch_size):
        chunk = shuffled[start:start + batch_size]
        positives = []
        for task_id in chunk:
            pos = interactions.for_task(task_id)
            positives.append(pos[int(rng.integers(len(pos)))])
        yield Batch(task_ids=tuple(chunk), positive_ids=tuple(positives))


def contrastive_loss(task_embs: np.ndarray, server_embs: np.ndarray,
                     temperature: float, variant: str = "symmetric"):
    """Loss and gradients w.r.t. the normalized embeddings.

    task_embs/server_embs: (B, d') unit rows, row i of each forming a positive
    pair. Returns (loss, grad_task, grad_server). The softmax for task i runs
    over all B batch servers; the symmetric variant averages in the
    server->task direction. The bce variant scores every pair independently
    with a sigmoid against the identity target.
    """
    if temperature <= 0:
        raise TrainingError("temperature must be positive")
    if variant not in LOSS_VARIANTS:
        raise TrainingError(f"unknown loss variant {variant!r}")
    if task_embs.shape != server_embs.shape:
        raise TrainingError("task and server batches must have equal shapes")
    b = task_embs.shape[0]
    scores = task_embs @ server_embs.T
    logits = scores / temperature

    if variant == "bce":
        targets = np.eye(b)
        softplus = np.logaddexp(0.0, logits)
        loss = float(np.mean(softplus - targets * logits))
        sig = expit(logits)
        grad_scores = (sig - targets) / (b * b * temperature)
    else:
        # rows: softmax over servers for each task
        row_shift = logits - logits.max(axis=1, keepdims=True)
        row_p = np.exp(row_shift)
        row_p /= row_p.sum(axis=1, keepdims=True)
        row_loss = float(np.mean(-np.log(row_p[np.arange(b), np.arange(b)])))
        eye = np.eye(b)
        grad_rows = (row_p - eye) / (b * temperature)
        if variant == "one_sided":
            loss = row_loss
            grad_scores = grad_rows
        else:
            col_shift = logits - logits.max(axis=0, keepdims=True)
            col_p = np.exp(col_shift)
            col_p /= col_p.sum(axis=0, keepdims=True)
            col_loss = float(np.mean(-np.log(col_p[np.arange(b), np.arange(b)])))
            grad_cols = (col_p - eye) / (b * temperature)
            loss = 0.5 * (row_loss + col_loss)
            grad_scores = 0.5 * (grad_rows + grad_cols)

    grad_task = grad_scores @ server_embs
    grad_server = grad_scores.T @ task_embs
    return loss, grad_task, grad_server


def normalization_backward(raw: np.ndarray, normed: np.ndarray,
                           grad_normed: np.ndarray) -> np.ndarray:
    """Backprop through row-wise z -> z/||z||.

    d/dz of (g . z_hat) is (g - z_hat (z_hat . g)) / ||z||; zero rows pass a
    zero gradient (the normalization is constant there).
    """
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    inner = np.sum(grad_normed * normed, axis=1, keepdims=True)
    grad = (grad_normed - normed * inner) / safe
    return np.where(norms == 0.0, 0.0, grad)


def tower_backward(tower: TowerParams, cache, grad_out: np.ndarray):
    """Gradients for every weight and bias given d(loss)/d(unnormalized output)."""
    grad_w = [None] * tower.n_layers
    grad_b = [None] * tower.n_layers
    delta = grad_out
    for layer in range(tower.n_layers - 1, -1, -1):
        prev = cache.inputs if layer == 0 else cache.hidden[layer - 1]
        grad_w[layer] = np.asarray((prev.T @ delta))
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ tower.weights[layer].T
            mask = cache.dropout_masks[layer - 1]
            if mask is not None:
                delta = delta * mask
            delta = delta * (cache.pre_acts[layer - 1] > 0)
    return grad_w, grad_b


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Bias-corrected first/second moments; decay is applied directly to the
    parameters, never mixed into the gradient. Non-finite gradients skip the
    step with a warning.
    """

    def __init__(self, params, learning_rate: float, weight_decay: float = 0.01,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> bool:
        grads = list(grads)
        if len(grads) != len(self.params):
            raise TrainingError("gradient count does not match parameter count")
        if not all(np.isfinite(g).all() for g in grads):
            logger.warning("non-finite gradient; optimizer step skipped")
            return False
        self.step_count += 1
        t = self.step_count
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (g * g)
            m_hat = self.m[i] / (1 - self.beta1 ** t)
            v_hat = self.v[i] / (1 - self.beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
        return True


def batch_loss_and_grads(task_tower: TowerParams, server_tower: TowerParams,
                         task_inputs, server_inputs, config: TrainConfig,
                         rng: np.random.Generator | None = None,
                         mode: str = "train"):
    """Full forward/backward for one batch.

    Returns (loss, grads) with grads ordered as [task W0, task b0, ...,
    server W0, server b0, ...], matching `tower_param_list`.
    """
    task_raw, task_cache = forward_batch(task_tower, task_inputs, mode, rng)
    server_raw, server_cache = forward_batch(server_tower, server_inputs, mode, rng)
    task_hat = normalize_rows(task_raw)
    server_hat = normalize_rows(server_raw)
    loss, g_task_hat, g_server_hat = contrastive_loss(
        task_hat, server_hat, config.temperature, config.loss)
    if mode != "train":
        return loss, None
    g_task_raw = normalization_backward(task_raw, task_hat, g_task_hat)
    g_server_raw = normalization_backward(server_raw, server_hat, g_server_hat)
    tw, tb = tower_backward(task_tower, task_cache, g_task_raw)
    sw, sb = tower_backward(server_tower, server_cache, g_server_raw)
    grads = []
    for w, b in zip(tw, tb):
        grads.extend([w, b])
    for w, b in zip(sw, sb):
        grads.extend([w, b])
    return loss, grads


def tower_param_list(task_tower: TowerParams, server_tower: TowerParams):
    params = []
    for tower in (task_tower, server_tower):
        for w, b in zip(tower.weights, tower.biases):
            params.extend([w, b])
    return params


@dataclass
class TrainResult:
    task_tower: TowerParams
    server_tower: TowerParams
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_recall: float = 0.0
    diverged: bool = False


def _semantic_recall_at_10(task_tower, server_tower, task_vecs, server_vecs,
                           eval_tasks, interactions) -> float:
    """Validation metric: semantic-only Recall@10 over one split."""
    server_ids = sorted(server_vecs)
    server_matrix, _ = forward_batch(
        server_tower, vectors_to_csr([server_vecs[i] for i in server_ids]), "infer")
    server_matrix = normalize_rows(server_matrix)
    recalls = []
    for task_id in eval_tasks:
        positives = set(interactions.for_task(task_id))
        if not positives:
            continue
        raw, _ = forward_batch(
            task_tower, vectors_to_csr([task_vecs[task_id]]), "infer")
        query = normalize_rows(raw)[0]
        scores = server_matrix @ query
        order = sorted(range(len(server_ids)), key=lambda i: (-scores[i], server_ids[i]))
        top = {server_ids[i] for i in order[:10]}
        recalls.append(len(top & positives) / len(positives))
    return float(np.mean(recalls)) if recalls else 0.0


def train(servers, tasks, interactions, split, vocab, config: TrainConfig,
          log_path=None):
    """Run the full loop and return the best-validation-recall parameters.

    The training log (one record per epoch: loss, validation recall when
    measured) carries no timestamps so identical runs produce identical logs.
    A non-finite loss aborts with the parameters from the last finite epoch.
    """
    rng = np.random.default_rng(config.seed)
    dims = config.tower_dims(vocab.dim)
    # Both towers start from one draw, twin style: a text paired with itself
    # scores 1.0 before any training and the towers specialize from there.
    task_tower = TowerParams.init(dims, rng, config.dropout_rate)
    server_tower = task_tower.copy()

    task_vecs = {t.id: embed_text(concat_text(t), vocab) for t in tasks.values()}
    server_vecs = {m.id: embed_text(concat_text(m), vocab) for m in servers.values()}

    optimizer = AdamW(tower_param_list(task_tower, server_tower),
                      learning_rate=config.learning_rate,
                      weight_decay=config.weight_decay)

    result = TrainResult(task_tower=task_tower.copy(),
                         server_tower=server_tower.copy())
    best_recall = -1.0
    last_good = (task_tower.copy(), server_tower.copy())

    for epoch in range(1, config.epochs + 1):
        losses = []
        for batch in _epoch_batches(split.train, interactions, rng,
                                    config.batch_size):
            task_inputs = vectors_to_csr([task_vecs[t] for t in batch.task_ids])
            server_inputs = vectors_to_csr(
                [server_vecs[m] for m in batch.positive_ids])
            loss, grads = batch_loss_and_grads(
                task_tower, server_tower, task_inputs, server_inputs, config, rng)
            losses.append(loss)
            if not np.isfinite(loss):
                logger.error("non-finite loss at epoch %d; aborting", epoch)
                result.task_tower, result.server_tower = last_good
                result.diverged = True
                if log_path:
                    _write_log(log_path, result.log)
                return result
            optimizer.step(grads)
        epoch_loss = float(np.mean(losses)) if losses else 0.0
        record = {"epoch": epoch, "loss": epoch_loss}

        if config.eval_every and epoch % config.eval_every == 0 and split.valid:
            recall = _semantic_recall_at_10(
                task_tower, server_tower, task_vecs, server_vecs,
                split.valid, interactions)
            record["recall10_valid"] = recall
            if recall > best_recall:
                best_recall = recall
                result.best_epoch = epoch
                result.best_recall = recall
                result.task_tower = task_tower.copy()
                result.server_tower = server_tower.copy()
        result.log.append(record)
        last_good = (task_tower.copy(), server_tower.copy())

    if best_recall < 0:
        # no validation pass ran; keep the final parameters
        result.task_tower = task_tower.copy()
        result.server_tower = server_tower.copy()
        result.best_epoch = config.epochs
    if log_path:
        _write_log(log_path, result.log)
    return result


def _write_log(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
