import numpy as np
import pytest

from chunkformer import (
    BenchCase,
    ChunkFormer,
    ConfigError,
    ContractError,
    EmbeddedSequence,
    HiddenStates,
    IngestionError,
    MeanPoolBaseline,
    ModelConfig,
    Tensor,
    aligned_length,
    attention_footprint,
    bce_with_logits,
    build_model,
    gradient_check,
    measure_footprint,
    pad_to_multiple,
    partition,
    receptive_fields,
    stage_forward,
)


# --- numpy reference of one pre-norm encoder block --------------------


def ref_layer_norm(x, g, b, eps):
    xc = x - x.mean(axis=-1, keepdims=True)
    return xc / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps) * g + b


def ref_gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def ref_block(x, block):
    """x: (k, d_model), no padding, no dropout"""
    w = {k: t.data for k, t in block.weights.items()}
    eps, dh = block.layer_norm_eps, block.d_head
    a = ref_layer_norm(x, w["ln1_gamma"], w["ln1_beta"], eps)
    q, k, v = (a @ w[f"w_{p}"] + w[f"b_{p}"] for p in "qkv")
    out = np.zeros_like(x)
    for h in range(block.heads):
        s = slice(h * dh, (h + 1) * dh)
        scores = q[:, s] @ k[:, s].T / np.sqrt(dh)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        out[:, s] = (e / e.sum(axis=1, keepdims=True)) @ v[:, s]
    y = x + out @ w["w_o"] + w["b_o"]
    f = ref_layer_norm(y, w["ln2_gamma"], w["ln2_beta"], eps)
    return y + ref_gelu(f @ w["w_1"] + w["b_1"]) @ w["w_2"] + w["b_2"]


def ref_encoder(x, model):
    """Apply every stage chunk by chunk with the reference block"""
    for stage in model.stages:
        k = stage.chunk_size
        x = np.concatenate(
            [ref_block(x[s : s + k], stage.block) for s in range(0, len(x), k)]
        )
    return x


def make_model(stages, L, d=8, heads=2, **kw):
    cfg = ModelConfig(
        d_model=d, heads=heads, stages=stages, seq_len=L, dropout_rate=0.0, **kw
    )
    return ChunkFormer(config=cfg, vocab_sizes=[16])


def hidden(model, x):
    seq = EmbeddedSequence(values=Tensor(x[None]), mask=np.ones((1, len(x)), bool))
    return model.encode(seq).values.data[0]


# --- partition and padding ---------------------------------------------


def test_partition_six_by_three():
    p = partition(6, 3)
    assert p.ranges == [(0, 3), (3, 6)]
    assert p.B == 2


def test_partition_k_equals_length():
    assert partition(5, 5).ranges == [(0, 5)]


def test_partition_pads_last_chunk():
    p = partition(7, 3)
    assert p.padded_length == 9
    assert p.ranges == [(0, 3), (3, 6), (6, 9)]


def test_partition_empty():
    with pytest.raises(IngestionError):
        partition(0, 3)


def test_pad_to_multiple_masks_padding(rng):
    seq = EmbeddedSequence(values=Tensor(rng.normal(size=(7, 4))), mask=np.ones(7, bool))
    out = pad_to_multiple(seq, [3])
    assert out.length == 9
    assert np.array_equal(out.mask, [True] * 7 + [False] * 2)
    assert not out.values.data[7:].any()


aligned_values = [  # length, chunk sizes, aligned length
    (720, [3, 4], 720),
    (10, [3, 4], 12),
    (12, [3, 4], 12),
    (7, [3], 9),
    (180, [3, 4], 180),
]


@pytest.mark.parametrize("length, sizes, expected", aligned_values)
def test_aligned_length(length, sizes, expected):
    assert aligned_length(length, sizes) == expected


def test_aligned_length_empty():
    with pytest.raises(IngestionError):
        aligned_length(0, [3, 4])


def test_pad_to_multiple_identity(rng):
    seq = EmbeddedSequence(values=Tensor(rng.normal(size=(12, 4))), mask=np.ones(12, bool))
    assert pad_to_multiple(seq, [3, 4]) is seq


def test_stage_config_errors():
    with pytest.raises(ConfigError):
        ModelConfig(stages=[]).validate()
    with pytest.raises(ConfigError):
        ModelConfig(stages=[4, 3]).validate()
    with pytest.raises(ConfigError):
        ModelConfig(stages=[0, 3]).validate()
    ModelConfig(stages=[3, 4], seq_len=720).validate()


# --- equivalence with the regular transformer --------------------------


def test_full_attention_equivalence(rng):
    model = make_model([16], 16, d=16, heads=2)
    x = rng.normal(size=(16, 16))
    h = hidden(model, x)
    assert np.allclose(h, ref_block(x, model.stages[0].block), rtol=0, atol=1e-9)
    block = model.stages[0].block.forward(Tensor(x)).data
    assert np.allclose(h, block, rtol=0, atol=1e-9)


def test_chunked_matches_reference(rng):
    model = make_model([3, 4], 12)
    x = rng.normal(size=(12, 8))
    assert np.allclose(hidden(model, x), ref_encoder(x, model), rtol=0, atol=1e-9)


def test_stage_forward_keeps_chunks_apart(rng):
    model = make_model([3, 4], 12)
    x = rng.normal(size=(1, 12, 8))
    h = HiddenStates(values=Tensor(x), mask=np.ones((1, 12), bool))
    a = stage_forward(h, model.stages[0], training=False)
    assert a.stage_index == 1
    x[0, 3:6] += 1.0
    b = stage_forward(HiddenStates(values=Tensor(x), mask=h.mask), model.stages[0], False)
    changed = np.flatnonzero(np.abs(a.values.data - b.values.data).max(axis=-1)[0] > 0)
    assert np.array_equal(changed, np.arange(3, 6))
    short = HiddenStates(values=Tensor(x[:, :10]), mask=np.ones((1, 10), bool))
    with pytest.raises(ContractError):
        stage_forward(short, model.stages[0], False)


def test_logits_single_block_classifier(rng):
    model = make_model([12], 12, positional="none")
    ids = rng.integers(1, 16, size=(1, 12, 1))
    mask = np.ones((1, 12), bool)
    seq = model.embed(ids, mask)
    h = ref_block(seq.values.data[0], model.stages[0].block)[-1]
    w = {k: t.data for k, t in model.weights.items()}
    z = ref_gelu(h @ w["w_head_1"] + w["b_head_1"]) @ w["w_head_2"] + w["b_head_2"]
    assert np.allclose(model.logits(ids, mask).data, z, rtol=0, atol=1e-9)


# --- locality and receptive fields --------------------------------------


@pytest.mark.parametrize("p", range(12))
def test_locality_single_stage(p):
    model = make_model([4], 12)
    x = np.random.default_rng(p).normal(size=(12, 8))
    base = hidden(model, x)
    x2 = x.copy()
    x2[p] += 0.5
    changed = hidden(model, x2)
    chunk = p // 4
    for c in range(3):
        diff = np.abs(changed[4 * c : 4 * c + 4] - base[4 * c : 4 * c + 4])
        if c == chunk:
            assert diff.max() > 1e-6
        else:
            assert diff.max() == 0.0


def test_receptive_field_of_last_position():
    R = receptive_fields([3, 4], 12)
    assert np.array_equal(np.flatnonzero(R[-1][11]), np.arange(6, 12))
    assert np.array_equal(np.flatnonzero(R[0][11]), np.arange(9, 12))


def test_receptive_field_not_divisible():
    with pytest.raises(ContractError):
        receptive_fields([3, 5], 12)


def test_measured_dependencies_match_receptive_field():
    model = make_model([3, 4], 12)
    x = np.random.default_rng(11).normal(size=(12, 8))
    base = hidden(model, x)
    direction = np.random.default_rng(12).normal(size=8)
    measured = np.zeros((12, 12), dtype=bool)
    for p in range(12):
        x2 = x.copy()
        x2[p] += 1e-5 * direction
        measured[:, p] = np.abs(hidden(model, x2) - base).max(axis=1) > 1e-12
    assert np.array_equal(measured, receptive_fields([3, 4], 12)[-1])


# --- gradients ----------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_end_to_end_gradients(seed):
    cfg = ModelConfig(
        d_model=8, heads=2, stages=[3, 4], seq_len=12, dropout_rate=0.0, seed=seed
    )
    model = ChunkFormer(config=cfg, vocab_sizes=[7, 5])
    rng = np.random.default_rng(100 + seed)
    ids = np.stack([rng.integers(1, 7, size=(3, 12)), rng.integers(1, 5, size=(3, 12))], -1)
    mask = np.ones((3, 12), bool)
    labels = np.array([1.0, 0.0, 1.0])

    def loss():
        return bce_with_logits(model.logits(ids, mask), labels)

    # softmax is invariant to the key bias, its gradient is zero
    params = [p for n, p in model.named_parameters().items() if not n.endswith("b_k")]
    errors = gradient_check(loss, params, h=1e-5, samples=5, rng=rng)
    assert max(errors.values()) < 1e-4


# --- footprint ----------------------------------------------------------


def test_footprint_720():
    fp = attention_footprint(ModelConfig(stages=[3, 4], seq_len=720))
    assert fp.per_stage == [2160, 2880]
    assert fp.full == 720 * 720


def test_footprint_256_by_8():
    fp = attention_footprint(ModelConfig(stages=[8], seq_len=256))
    assert fp.peak == 2048
    assert fp.full == 65536


def test_footprint_full_attention():
    assert attention_footprint(ModelConfig(stages=[240], seq_len=240)).peak == 240**2


@pytest.mark.parametrize("L", [180, 240, 480, 720])
def test_measured_footprint(L):
    fp = measure_footprint(BenchCase(length=L, d_model=8, heads=2, stages=[3, 4]))
    assert fp.per_stage == {"stage_1": 3 * L, "stage_2": 4 * L}
    assert fp.peak / fp.full == pytest.approx(4 / L, rel=1e-12)


# --- model -------------------------------------------------------------


def test_deterministic_logits(rng):
    model = make_model([3, 4], 24)
    ids = rng.integers(1, 16, size=(4, 20, 1))
    mask = np.ones((4, 20), bool)
    mask[1, 15:] = False
    a = model.logits(ids, mask).data
    b = model.logits(ids, mask).data
    assert a.shape == (4,)
    assert np.array_equal(a, b)


def test_same_seed_same_weights():
    a = make_model([3, 4], 12).state_dict()
    b = make_model([3, 4], 12).state_dict()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_padding_does_not_change_prediction(rng):
    """a sequence padded to the batch width scores like the bare one"""
    model = make_model([3, 4], 24)
    ids = rng.integers(1, 16, size=(1, 24, 1))
    mask = np.ones((1, 24), bool)
    mask[0, 17:] = False
    short = model.logits(ids[:, :17], mask[:, :17]).data
    padded = model.logits(ids, mask).data
    assert np.allclose(short, padded, rtol=0, atol=1e-12)


prediction_values = [  # mode, expected shape
    ("last_position", (2,)),
    ("mean_pool", (2,)),
    ("per_position", (2, 10)),
]


@pytest.mark.parametrize("mode, shape", prediction_values)
def test_prediction_modes(mode, shape, rng):
    model = make_model([3, 4], 12, prediction_mode=mode)
    ids = rng.integers(1, 16, size=(2, 10, 1))
    mask = np.ones((2, 10), bool)
    mask[1, 6:] = False
    z = model.logits(ids, mask).data
    assert z.shape == shape
    if mode == "per_position":
        assert not z[1, 6:].any()


def test_single_sequence_forward(rng):
    model = make_model([3, 4], 12)
    seq = EmbeddedSequence(values=Tensor(rng.normal(size=(12, 8))), mask=np.ones(12, bool))
    assert model.forward(seq).shape == ()


def test_empty_sequence_rejected():
    model = make_model([3, 4], 12)
    mask = np.zeros((1, 12), bool)
    with pytest.raises(IngestionError):
        model.logits(np.zeros((1, 12, 1), int), mask)


def test_baseline_ignores_order(rng):
    cfg = ModelConfig(d_model=8, heads=2, encoder="mean_pool", dropout_rate=0.0)
    model = build_model(cfg, [16])
    assert isinstance(model, MeanPoolBaseline)
    assert model.stages == []
    ids = rng.integers(1, 16, size=(1, 9, 1))
    mask = np.ones((1, 9), bool)
    z = model.logits(ids, mask).data
    z_rev = model.logits(ids[:, ::-1], mask).data
    # sinusoidal positions make order visible; without them it is not
    cfg.positional = "none"
    plain = build_model(cfg, [16])
    assert np.allclose(plain.logits(ids, mask).data, plain.logits(ids[:, ::-1], mask).data)
    assert z.shape == z_rev.shape == (1,)


def test_state_dict_round_trip(rng):
    a = make_model([3, 4], 12)
    b = make_model([3, 4], 12, seed=99)
    b.load_state_dict(a.state_dict())
    ids = rng.integers(1, 16, size=(2, 12, 1))
    mask = np.ones((2, 12), bool)
    assert np.array_equal(a.logits(ids, mask).data, b.logits(ids, mask).data)


def test_named_parameters_unique():
    model = make_model([3, 4], 12)
    names = list(model.named_parameters())
    assert len(names) == len(set(names))
    assert "model.stage_1.block.w_q" in names
    assert "model.embed_0.table" in names
