import numpy as np
import pytest

from chunkformer import (
    AttentionBlock,
    ChunkInput,
    ConfigError,
    DegenerateRowError,
    DimensionError,
    ScoreMatrixCounter,
    Tensor,
    block_forward,
    footprint_section,
    scaled_dot_attention,
)


def test_single_key_returns_value():
    v = np.array([[0.3, -1.0, 2.0]])
    out = scaled_dot_attention(Tensor([[1.0, 2.0, 3.0]]), Tensor([[4.0, 5.0, 6.0]]), Tensor(v))
    assert np.allclose(out.data, v, rtol=1e-15)


def test_identical_keys_average_values(rng):
    q = Tensor(rng.normal(size=(4, 3)))
    k = Tensor(np.tile([0.5, -0.2, 1.0], (4, 1)))
    v = rng.normal(size=(4, 3))
    out = scaled_dot_attention(q, k, Tensor(v))
    assert np.allclose(out.data, np.tile(v.mean(axis=0), (4, 1)), rtol=1e-12)


def test_two_by_two():
    eye = np.eye(2)
    out = scaled_dot_attention(Tensor(eye), Tensor(eye), Tensor(eye), scale=1.0)
    e = np.e
    expected = np.array([[e, 1.0], [1.0, e]]) / (e + 1.0)
    assert np.allclose(out.data, expected, rtol=1e-14)


def test_masked_keys_are_ignored(rng):
    q, k = Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(5, 4)))
    v = rng.normal(size=(5, 4))
    mask = np.array([True, True, True, False, False])
    a = scaled_dot_attention(q, k, Tensor(v), mask)
    v[3:] = 1e6
    b = scaled_dot_attention(q, k, Tensor(v), mask)
    assert np.array_equal(a.data[:3], b.data[:3])
    assert not a.data[3:].any()


def test_attention_shape_errors():
    with pytest.raises(DimensionError):
        scaled_dot_attention(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 2))), Tensor(np.ones((4, 2))))
    with pytest.raises(DimensionError):
        scaled_dot_attention(Tensor(np.ones((3, 2))), Tensor(np.ones((3, 5))), Tensor(np.ones((3, 2))))


def test_query_without_keys(rng):
    q, k, v = (Tensor(rng.normal(size=(3, 4))) for _ in range(3))
    queries = np.array([True, True, False])
    out = scaled_dot_attention(q, k, v, queries, key_mask=np.array([False, True, False]))
    assert np.allclose(out.data[:2], np.tile(v.data[1], (2, 1)), rtol=1e-14)
    with pytest.raises(DegenerateRowError):
        scaled_dot_attention(q, k, v, queries, key_mask=np.zeros(3, dtype=bool))


def _block(**kw):
    args = dict(d_model=8, heads=2, dropout_rate=0.0, rng=np.random.default_rng(0))
    args.update(kw)
    return AttentionBlock(**args)


def test_block_identity_with_zero_outputs(rng):
    block = _block()
    block.weights["w_o"].data[:] = 0.0
    block.weights["w_2"].data[:] = 0.0
    x = Tensor(rng.normal(size=(2, 6, 8)))
    assert np.array_equal(block.forward(x).data, x.data)


def test_block_single_position(rng):
    """k = 1: attention only passes the position's own value transform"""
    block = _block(d_ff=0)
    x = rng.normal(size=(1, 8))
    w = {k: t.data for k, t in block.weights.items()}
    h = x - x.mean()
    h = h / np.sqrt((h * h).mean() + block.layer_norm_eps)
    h = h * w["ln1_gamma"] + w["ln1_beta"]
    expected = x + (h @ w["w_v"] + w["b_v"]) @ w["w_o"] + w["b_o"]
    assert np.allclose(block.forward(Tensor(x)).data, expected, rtol=1e-12, atol=1e-12)


def test_block_padded_rows_zero(rng):
    block = _block()
    x = Tensor(rng.normal(size=(3, 4, 8)))
    mask = np.array([[True] * 4, [True, True, False, False], [False] * 4])
    y = block.forward(x, mask).data
    assert not y[1, 2:].any()
    assert not y[2].any()
    assert np.all(np.abs(y[0]) > 0)


def test_block_ignores_padded_values(rng):
    block = _block()
    x = rng.normal(size=(4, 8))
    mask = np.array([True, True, True, False])
    a = block_forward(ChunkInput(Tensor(x), mask), block, False).data
    x[3] = 100.0 * rng.normal(size=8)
    b = block_forward(ChunkInput(Tensor(x), mask), block, False).data
    assert np.array_equal(a[:3], b[:3])


def test_block_permutation_equivariant(rng):
    block = _block()
    x = rng.normal(size=(6, 8))
    perm = rng.permutation(6)
    mask = np.ones(6, dtype=bool)
    a = block_forward(ChunkInput(Tensor(x), mask), block, False).data
    b = block_forward(ChunkInput(Tensor(x[perm]), mask), block, False).data
    assert np.allclose(b, a[perm], rtol=1e-9, atol=1e-12)


def test_block_width_mismatch(rng):
    block = _block()
    with pytest.raises(DimensionError):
        block_forward(ChunkInput(Tensor(rng.normal(size=(4, 6))), np.ones(4, bool)), block, False)


def test_block_config_errors():
    with pytest.raises(ConfigError):
        _block(heads=3)
    with pytest.raises(ConfigError):
        _block(dropout_rate=1.0)
    with pytest.raises(ConfigError):
        _block(norm="sandwich")


def test_dropout_only_when_training(rng):
    block = _block(dropout_rate=0.5)
    x = Tensor(rng.normal(size=(2, 4, 8)))
    a = block.forward(x, training=False).data
    b = block.forward(x, training=False).data
    c = block.forward(x, training=True, rng=np.random.default_rng(1)).data
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_post_norm_block(rng):
    block = _block(norm="post")
    y = block.forward(Tensor(rng.normal(size=(4, 8)))).data
    # the last operation is a layer norm with gamma 1 and beta 0
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-12)


def test_counter_books_sections(rng):
    block = _block()
    x = Tensor(rng.normal(size=(6, 4, 8)))
    with ScoreMatrixCounter() as counter:
        with footprint_section("stage_1", items=2, heads=2):
            block.forward(x)
    # 6 chunks of 4 positions for 2 sequences: 3 * 4 * 4 per head per sequence
    assert counter.per_head() == {"stage_1": 48}
    assert counter.peak() == 48
