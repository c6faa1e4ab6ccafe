import numpy as np
import pytest

from toolrec.encoder import (CHECKPOINT_VERSION, CheckpointError,
                             DenseEmbedding, EmbeddingIndex, EncoderError,
                             TowerParams, encode_corpus, forward,
                             forward_batch, load_checkpoint, load_index,
                             normalize, normalize_rows, save_checkpoint,
                             save_index, semantic_score)
from toolrec.lexical import SparseVector


def small_tower(rng=None, dims=(4, 3, 2), dropout=0.0):
    rng = rng or np.random.default_rng(0)
    return TowerParams.init(dims, rng, dropout_rate=dropout)


def test_zero_input_composes_biases():
    # With x = 0 every layer reduces to relu(b), so the output is a pure
    # function of the bias chain.
    w1 = np.zeros((3, 2))
    w2 = np.zeros((2, 2))
    b1 = np.array([1.0, -1.0])
    b2 = np.array([0.25, 0.5])
    tower = TowerParams([w1, w2], [b1, b2], dropout_rate=0.0)
    out, _ = forward_batch(tower, np.zeros((1, 3)), mode="infer")
    assert np.allclose(out[0], b2)


def test_identity_single_layer():
    weights = [np.eye(3)]
    biases = [np.zeros(3)]
    tower = TowerParams(weights, biases, dropout_rate=0.0)
    x = np.array([[0.3, -0.7, 2.0]])
    out, _ = forward_batch(tower, x, mode="infer")
    # Single layer means no rectifier, so negatives survive.
    assert np.allclose(out, x)


def test_infer_deterministic():
    tower = small_tower(dims=(5, 4, 3), dropout=0.5)
    x = np.random.default_rng(1).normal(size=(6, 5))
    out1, cache1 = forward_batch(tower, x, mode="infer")
    out2, cache2 = forward_batch(tower, x, mode="infer")
    assert np.array_equal(out1, out2)
    assert cache1 is None and cache2 is None


def test_train_mode_needs_rng_when_dropping():
    tower = small_tower(dropout=0.2)
    x = np.zeros((1, 4))
    with pytest.raises(EncoderError, match="generator"):
        forward_batch(tower, x, mode="train")
    # No dropout: rng becomes optional.
    out, cache = forward_batch(small_tower(dropout=0.0), x, mode="train")
    assert cache is not None


def test_dim_mismatch_raises():
    tower = small_tower()
    with pytest.raises(EncoderError, match="does not match"):
        forward_batch(tower, np.zeros((2, 7)), mode="infer")


def test_bad_mode():
    with pytest.raises(EncoderError, match="mode"):
        forward_batch(small_tower(), np.zeros((1, 4)), mode="predict")


def test_dropout_never_touches_output_layer():
    # Drive dropout_rate high; the final linear map must still be exact.
    rng = np.random.default_rng(3)
    w1 = np.eye(3)
    w2 = np.eye(3)
    tower = TowerParams([w1, w2], [np.ones(3) * 5, np.zeros(3)],
                        dropout_rate=0.9)
    x = np.zeros((200, 3))
    out, cache = forward_batch(tower, x, mode="train", rng=rng)
    keep = 0.1
    # Hidden activation is 5 everywhere, masked to 0 or 5/keep; the output
    # layer passes those through untouched.
    for value in np.unique(out):
        assert value == 0.0 or value == pytest.approx(5.0 / keep)
    assert cache.dropout_masks[0] is not None
    assert len(cache.dropout_masks) == 1


def test_dropout_mask_scaling_statistics():
    rng = np.random.default_rng(7)
    tower = TowerParams([np.eye(2), np.eye(2)],
                        [np.zeros(2), np.zeros(2)], dropout_rate=0.2)
    x = np.ones((5000, 2))
    out, _ = forward_batch(tower, x, mode="train", rng=rng)
    # Inverted dropout keeps the expectation at the no-dropout value.
    assert np.mean(out) == pytest.approx(1.0, abs=0.05)
    values = set(np.unique(out).round(12))
    assert values <= {0.0, round(1 / 0.8, 12)}


def test_forward_single_sparse_record():
    tower = small_tower(dims=(4, 3, 2))
    sv = SparseVector(indices=np.array([0, 2]), weights=np.array([1.0, 2.0]),
                      dim=4, degenerate=False)
    emb = forward(tower, sv)
    dense = np.array([1.0, 0.0, 2.0, 0.0])
    out, _ = forward_batch(tower, dense.reshape(1, -1), mode="infer")
    assert np.allclose(emb.vector, out[0])
    assert not emb.normalized


def test_normalize_hand_case():
    emb = normalize(np.array([3.0, 4.0]))
    assert np.allclose(emb.vector, [0.6, 0.8])
    assert emb.normalized and not emb.degenerate


def test_normalize_scale_invariant():
    rng = np.random.default_rng(11)
    for _ in range(50):
        v = rng.normal(size=5)
        c = rng.uniform(0.1, 10)
        assert np.allclose(normalize(v).vector, normalize(c * v).vector)


def test_normalize_zero_flagged():
    emb = normalize(np.zeros(4))
    assert emb.degenerate and emb.normalized
    assert np.all(emb.vector == 0.0)


def test_normalize_rows_keeps_zero_rows():
    m = np.array([[3.0, 4.0], [0.0, 0.0]])
    out = normalize_rows(m)
    assert np.allclose(out[0], [0.6, 0.8])
    assert np.all(out[1] == 0.0)


def test_semantic_score_bounds_and_symmetry():
    a = normalize(np.array([1.0, 0.0]))
    b = normalize(np.array([0.0, 1.0]))
    c = normalize(np.array([-1.0, 0.0]))
    assert semantic_score(a, a) == pytest.approx(1.0)
    assert semantic_score(a, b) == pytest.approx(0.0)
    assert semantic_score(a, c) == pytest.approx(-1.0)
    assert semantic_score(a, b) == semantic_score(b, a)


def test_semantic_score_requires_normalized():
    raw = DenseEmbedding(vector=np.array([3.0, 4.0]))
    unit = normalize(np.array([1.0, 0.0]))
    with pytest.raises(EncoderError):
        semantic_score(raw, unit)


def test_encode_corpus_sorted_unit_and_repeatable():
    tower = small_tower(dims=(3, 4, 2))
    items = [
        ("m2", SparseVector(np.array([0]), np.array([1.0]), 3, False)),
        ("m0", SparseVector(np.array([1]), np.array([2.0]), 3, False)),
        ("m1", SparseVector(np.array([2]), np.array([0.5]), 3, False)),
    ]
    index = encode_corpus(tower, items)
    assert index.ids == ("m0", "m1", "m2")
    norms = np.linalg.norm(index.matrix, axis=1)
    assert np.allclose(norms, 1.0)
    again = encode_corpus(tower, list(reversed(items)))
    assert again.snapshot_id == index.snapshot_id
    assert np.array_equal(again.matrix, index.matrix)


def test_encode_corpus_duplicate_ids():
    tower = small_tower(dims=(3, 2))
    sv = SparseVector(np.array([0]), np.array([1.0]), 3, False)
    with pytest.raises(EncoderError, match="duplicate"):
        encode_corpus(tower, [("m0", sv), ("m0", sv)])


def test_encode_corpus_empty():
    tower = small_tower(dims=(3, 2))
    index = encode_corpus(tower, [])
    assert len(index) == 0
    assert index.scores(np.zeros(2)).shape == (0,)


def test_index_counts_score_passes():
    matrix = normalize_rows(np.array([[1.0, 0.0], [1.0, 1.0]]))
    index = EmbeddingIndex(("a", "b"), matrix)
    assert index.matvec_count == 0
    s = index.scores(np.array([1.0, 0.0]))
    assert index.matvec_count == 1
    assert s == pytest.approx([1.0, np.sqrt(0.5)])
    index.scores(np.array([0.0, 1.0]))
    assert index.matvec_count == 2


def test_index_rejects_non_unit_rows():
    with pytest.raises(EncoderError, match="non-unit"):
        EmbeddingIndex(("a",), np.array([[3.0, 4.0]]))
    # Zero rows are tolerated (degenerate corpus entries).
    index = EmbeddingIndex(("a",), np.zeros((1, 2)))
    assert index.embedding("a").degenerate


def test_index_matrix_read_only():
    index = EmbeddingIndex(("a",), np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError):
        index.matrix[0, 0] = 2.0


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    task = TowerParams.init((6, 4, 3), rng, dropout_rate=0.2)
    server = TowerParams.init((6, 4, 3), rng, dropout_rate=0.2)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, task, server, vocab_hash="abc123",
                    extra={"epochs": 7})
    t2, s2, meta = load_checkpoint(path, expected_vocab_hash="abc123")
    assert meta["version"] == CHECKPOINT_VERSION
    assert meta["extra"] == {"epochs": 7}
    for orig, loaded in ((task, t2), (server, s2)):
        assert loaded.n_layers == orig.n_layers
        for w_a, w_b in zip(orig.weights, loaded.weights):
            assert np.array_equal(w_a, w_b)
        for b_a, b_b in zip(orig.biases, loaded.biases):
            assert np.array_equal(b_a, b_b)
        assert loaded.dropout_rate == orig.dropout_rate


def test_checkpoint_vocab_hash_mismatch(tmp_path):
    rng = np.random.default_rng(5)
    tower = TowerParams.init((4, 3), rng)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, tower, tower, vocab_hash="right")
    with pytest.raises(CheckpointError, match="vocabulary"):
        load_checkpoint(path, expected_vocab_hash="wrong")
    # Without an expectation the hash is not enforced.
    load_checkpoint(path)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.npz")


def test_checkpoint_save_byte_identical(tmp_path):
    rng = np.random.default_rng(5)
    task = TowerParams.init((4, 3), rng)
    server = TowerParams.init((4, 3), rng)
    p1 = tmp_path / "a.npz"
    p2 = tmp_path / "b.npz"
    save_checkpoint(p1, task, server, vocab_hash="h")
    save_checkpoint(p2, task, server, vocab_hash="h")
    assert p1.read_bytes() == p2.read_bytes()


def test_index_save_load_round_trip(tmp_path):
    matrix = normalize_rows(np.random.default_rng(2).normal(size=(4, 3)))
    index = EmbeddingIndex(("a", "b", "c", "d"), matrix)
    path = tmp_path / "index.npz"
    save_index(path, index)
    loaded = load_index(path)
    assert loaded.ids == index.ids
    assert np.array_equal(loaded.matrix, index.matrix)
    assert loaded.snapshot_id == index.snapshot_id
    # Same content twice is byte-identical on disk too.
    path2 = tmp_path / "index2.npz"
    save_index(path2, index)
    assert path.read_bytes() == path2.read_bytes()


def test_tower_init_shapes_and_bounds():
    rng = np.random.default_rng(0)
    tower = TowerParams.init((10, 8, 4), rng, dropout_rate=0.2)
    assert tower.in_dim == 10 and tower.out_dim == 4 and tower.n_layers == 2
    for w in tower.weights:
        bound = 1.0 / np.sqrt(w.shape[0])
        assert np.all(np.abs(w) <= bound)
    for b in tower.biases:
        assert np.all(b == 0.0)


def test_tower_validation():
    with pytest.raises(EncoderError, match="does not match previous"):
        TowerParams([np.zeros((3, 2)), np.zeros((4, 2))],
                    [np.zeros(2), np.zeros(2)])
    with pytest.raises(EncoderError, match="dropout"):
        TowerParams([np.zeros((3, 2))], [np.zeros(2)], dropout_rate=1.0)
    with pytest.raises(EncoderError, match="non-finite"):
        TowerParams([np.full((2, 2), np.nan)], [np.zeros(2)])


def test_tower_copy_is_deep():
    tower = small_tower()
    dup = tower.copy()
    dup.weights[0][0, 0] += 1.0
    assert tower.weights[0][0, 0] != dup.weights[0][0, 0]
