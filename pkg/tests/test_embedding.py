import numpy as np
import pytest

from chunkformer import (
    ChunkFormer,
    ConfigError,
    EmbeddedSequence,
    EmbeddingTable,
    EncodingError,
    KeywordError,
    MissingKeywordError,
    ModelConfig,
    Tensor,
    add_positions,
    default_embedding_dim,
    embed_step,
    sinusoidal_positions,
)


def test_padding_id_is_zero_vector():
    tab = EmbeddingTable(name="event", vocab_size=12, dim=4)
    out = embed_step(np.zeros((5, 1), dtype=int), [tab])
    assert out.shape == (5, 4)
    assert not out.data.any()


def test_lookup_returns_row():
    tab = EmbeddingTable(name="event", vocab_size=4, dim=4)
    tab.table.data = np.eye(4)
    assert np.array_equal(embed_step(np.array([[2]]), [tab]).data, [[0, 0, 1, 0]])


def test_two_features_concatenate():
    a = EmbeddingTable(name="a", vocab_size=10, dim=3)
    b = EmbeddingTable(name="b", vocab_size=20, dim=5)
    out = embed_step(np.array([[[1, 2], [3, 4]]]), [a, b])
    assert out.shape == (1, 2, 8)


def test_out_of_range_id_names_feature():
    tab = EmbeddingTable(name="channel", vocab_size=5, dim=2)
    with pytest.raises(EncodingError, match="channel"):
        embed_step(np.array([[5]]), [tab])


def test_wrong_feature_count():
    tab = EmbeddingTable(name="a", vocab_size=5, dim=2)
    with pytest.raises(EncodingError):
        embed_step(np.array([[1, 2]]), [tab])


def test_keyword_checks():
    with pytest.raises(MissingKeywordError):
        EmbeddingTable(name="a")
    with pytest.raises(KeywordError):
        EmbeddingTable(name="a", vocab_size=5, width=3)
    with pytest.raises(ConfigError):
        EmbeddingTable(name="a", vocab_size=1)


dim_values = [(2, 2), (16, 2), (17, 3), (10001, 11), (10**12, 64)]


@pytest.mark.parametrize("vocab, dim", dim_values)
def test_default_dim(vocab, dim):
    assert default_embedding_dim(vocab) == dim


def test_sinusoidal_position_zero():
    pe = sinusoidal_positions(5, 6)
    assert np.array_equal(pe[0, 0::2], np.zeros(3))
    assert np.array_equal(pe[0, 1::2], np.ones(3))


def _seq(rng, mask=None):
    x = rng.normal(size=(2, 5, 4))
    m = np.ones((2, 5), dtype=bool) if mask is None else mask
    return EmbeddedSequence(values=Tensor(x), mask=m)


def test_positions_none(rng):
    seq = _seq(rng)
    assert add_positions(seq, "none") is seq


def test_positions_learned_zero_table(rng):
    seq = _seq(rng)
    out = add_positions(seq, "learned", Tensor(np.zeros((8, 4))))
    assert np.array_equal(out.values.data, seq.values.data)


def test_learned_positions_start_at_zero(rng):
    ids = rng.integers(1, 9, size=(2, 12, 2))
    mask = np.ones((2, 12), dtype=bool)
    mask[1, 7:] = False
    out = {}
    for mode in ("learned", "none"):
        cfg = ModelConfig(d_model=8, heads=2, seq_len=12, positional=mode, seed=3)
        out[mode] = ChunkFormer(config=cfg, vocab_sizes=[9, 9]).embed(ids, mask)
    assert np.array_equal(out["learned"].values.data, out["none"].values.data)


def test_positions_skip_padding(rng):
    mask = np.array([[True] * 5, [True, True, False, False, False]])
    seq = _seq(rng, mask)
    out = add_positions(seq, "sinusoidal")
    assert np.array_equal(out.values.data[1, 2:], seq.values.data[1, 2:])
    assert not np.array_equal(out.values.data[1, :2], seq.values.data[1, :2])


def test_positions_unknown_mode(rng):
    with pytest.raises(ConfigError):
        add_positions(_seq(rng), "rotary")


def test_padding_row_gets_no_gradient():
    from chunkformer import GradTape

    tab = EmbeddingTable(name="a", vocab_size=4, dim=3)
    with GradTape() as tape:
        loss = embed_step(np.array([[0], [1], [0], [3]]), [tab]).sum()
    g = tape.backward(loss).get_grad(tab.table)
    assert not g[0].any()
    assert np.array_equal(g[1], np.ones(3))
    assert np.array_equal(g[3], np.ones(3))
