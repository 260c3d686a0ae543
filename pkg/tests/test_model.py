import numpy as np
import pytest

from rangesam.autodiff import Parameter, Tensor, no_grad
from rangesam.autodiff import functional as F
from rangesam.autodiff.gradcheck import check_gradients, randomize
from rangesam.model import (RFB, Decoder, Encoder, HieraBlock, ModelConfig, RangeSAM, StageTransition,
                            Stem, count_parameters, decoder_forward, encoder_forward,
                            parameter_breakdown, parameter_report, pos_embed_forward, rfb_forward,
                            stage_transition, stem_forward, window_mask, window_partition,
                            window_unpartition)
from rangesam.model.layers import Linear

TOL = 1e-4


def rng(seed=0):
    return np.random.default_rng(seed)


def zero_all(module):
    for p in module.parameters():
        p.data[...] = 0.0


def to64(module):
    module.to_dtype(np.float64)
    for p in module.parameters():
        p.requires_grad = True
    return module


# -- config ----------------------------------------------------------------------
def test_default_config_values():
    cfg = ModelConfig()
    assert cfg.num_blocks == 12
    assert [cfg.stage_of_block(i) for i in (0, 1, 2, 3, 9, 10, 11)] == [0, 1, 1, 2, 2, 3, 3]
    assert [cfg.stage_of_block(i) for i in cfg.global_blocks] == [2, 2, 2, 3]
    rates = cfg.drop_rates()
    assert rates[0] == 0.0 and rates[-1] == pytest.approx(0.1)
    assert np.all(np.diff(rates) > 0)


@pytest.mark.parametrize("kw", [
    dict(stage_channels=(96, 190, 384, 768)),
    dict(global_blocks=(12,)),
    dict(heads=(1, 2, 5, 8)),
    dict(input_hw=(60, 2048)),
    dict(pos_mode="sine"),
    dict(stage_blocks=(1, 2, 7)),
])
def test_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_toy_preset_keeps_structure():
    cfg = ModelConfig.toy()
    assert cfg.num_stages == 4
    assert any(cfg.stage_of_block(i) in (2, 3) for i in cfg.global_blocks)
    assert cfg.feature_shapes(2) == [(2, 16, 16, 256), (2, 32, 8, 128), (2, 64, 4, 64), (2, 128, 2, 32)]


# -- stem / positional embedding ---------------------------------------------------
def test_stem_shape():
    cfg = ModelConfig.toy(input_hw=(16, 64))
    stem = Stem(rng(), cfg)
    y = stem_forward(rng(1).normal(size=(2, 6, 16, 64)), stem)
    assert y.shape == (2, 16, 16, 64)


def test_stem_rejects_channel_mismatch():
    stem = Stem(rng(), ModelConfig.toy())
    with pytest.raises(ValueError):
        stem_forward(np.zeros((1, 5, 16, 64), np.float32), stem)


def test_stem_zero_input_gives_pos_embedding():
    cfg = ModelConfig.toy(input_hw=(16, 64))
    stem = Stem(rng(), cfg)
    stem.pos_scale.data[:] = rng(3).normal(size=16)
    y = stem_forward(np.zeros((1, 6, 16, 64), np.float32), stem)
    x0 = Tensor(np.zeros((1, 16, 16, 64), np.float32))
    expected = pos_embed_forward(x0, stem.pos_table, stem.pos_scale)
    np.testing.assert_allclose(y.data, expected.data, atol=1e-7)
    assert np.abs(y.data).max() > 0


def test_pos_embed_trivial_cases():
    x = Tensor(rng().normal(size=(2, 3, 8, 32)).astype(np.float32))
    zero_table = Parameter(np.zeros((4, 128), np.float32))
    ones = Parameter(np.ones(3, np.float32))
    np.testing.assert_array_equal(pos_embed_forward(x, zero_table, ones).data, x.data)
    table = Parameter(rng(1).normal(size=(4, 128)).astype(np.float32))
    np.testing.assert_array_equal(pos_embed_forward(x, table, Parameter(np.zeros(3, np.float32))).data, x.data)
    const = Parameter(np.full((4, 128), 0.75, np.float32))
    np.testing.assert_allclose(pos_embed_forward(x, const, ones).data, x.data + 0.75, atol=1e-6)


def test_pos_mode_none_has_no_table():
    stem = Stem(rng(), ModelConfig.toy(pos_mode="none"))
    names = [n for n, _ in stem.named_parameters()]
    assert not any(n.startswith("pos_") for n in names)


def test_stem_gradients():
    cfg = ModelConfig.toy(input_hw=(16, 64))
    stem = to64(Stem(rng(), cfg))
    x = Tensor(rng(2).normal(size=(1, 6, 16, 64)), requires_grad=True)
    params = [x] + stem.parameters()
    errs = check_gradients(lambda: stem_forward(x, stem), params, max_entries=6)
    assert max(errs) <= TOL, errs


# -- windows -------------------------------------------------------------------------
@pytest.mark.parametrize("hw,win", [((8, 16), (8, 16)), ((8, 32), (4, 8)), ((7, 13), (4, 8)), ((3, 5), (4, 8))])
def test_window_roundtrip(hw, win):
    x = rng().normal(size=(2,) + hw + (3,)).astype(np.float32)
    w, rec = window_partition(x, win)
    assert w.shape[1:] == (win[0] * win[1], 3)
    np.testing.assert_array_equal(window_unpartition(w, win, rec).data, x)


def test_single_window_when_sizes_match():
    w, _ = window_partition(np.zeros((1, 8, 64, 2), np.float32), (8, 64))
    assert w.shape == (1, 512, 2)


def test_window_count_full_raster():
    w, _ = window_partition(np.zeros((1, 64, 2048, 1), np.float32), (8, 64))
    assert w.shape[0] == 256


def test_window_tokens_are_row_major_tiles():
    x = np.arange(4 * 8, dtype=np.float32).reshape(1, 4, 8, 1)
    w, _ = window_partition(x, (2, 4))
    np.testing.assert_array_equal(w.data[1, :, 0], [4, 5, 6, 7, 12, 13, 14, 15])


def test_window_mask_block_diagonal():
    m = window_mask(2, 4, (1, 2))
    assert m.shape == (8, 8)
    inside = m == 0
    assert inside.sum() == 4 * 4
    assert inside[0, 1] and not inside[0, 2] and not inside[0, 4]


# -- hiera block ---------------------------------------------------------------------
def make_block(is_global=False, c=8, heads=2, win=(2, 4), seed=0, **kw):
    blk = HieraBlock(rng(seed), c, heads, win, is_global=is_global, **kw)
    for p in blk.parameters():  # non-trivial LN affine and biases
        if p.data.ndim == 1:
            p.data[:] += rng(seed + 1).normal(scale=0.1, size=p.shape)
    return blk


def test_block_forced_drop_is_identity():
    blk = make_block(drop_rate=1.0).train()
    x = Tensor(rng().normal(size=(2, 4, 8, 8)).astype(np.float32))
    y = blk(x, drop_masks=(np.zeros(2, bool), np.zeros(2, bool)))
    np.testing.assert_array_equal(y.data, x.data)


def test_block_zero_weights_identity_in_eval():
    blk = make_block().eval()
    zero_all(blk)
    x = Tensor(rng().normal(size=(2, 4, 8, 8)).astype(np.float32))
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_block_partition_equals_mask_route():
    blk = make_block().eval()
    x = rng(5).normal(size=(1, 4, 8, 8)).astype(np.float32)
    a = blk(Tensor(x)).data
    b = blk(Tensor(x), route="mask").data
    assert np.abs(a - b).max() <= 1e-5


@pytest.mark.parametrize("hw", [(5, 9), (3, 4), (6, 11)])
def test_block_partition_with_padding_equals_mask_route(hw):
    blk = to64(make_block(seed=3)).eval()
    x = rng(6).normal(size=(2,) + hw + (8,))
    a = blk(Tensor(x)).data
    b = blk(Tensor(x), route="mask").data
    assert np.abs(a - b).max() <= 1e-10


def test_block_permutation_equivariance_within_window():
    blk = make_block(use_dwconv=False, seed=2).eval()
    x = rng(7).normal(size=(1, 4, 8, 8)).astype(np.float32)
    perm = rng(8).permutation(8)  # window 0 covers rows 0-1, cols 0-3
    rows, cols = np.divmod(np.arange(8), 4)
    xp = x.copy()
    xp[0, rows, cols] = x[0, rows[perm], cols[perm]]
    y, yp = blk(Tensor(x)).data, blk(Tensor(xp)).data
    np.testing.assert_allclose(yp[0, rows, cols], y[0, rows[perm], cols[perm]], atol=1e-5)
    np.testing.assert_allclose(yp[0, 2:], y[0, 2:], atol=1e-5)


def test_block_eval_deterministic():
    blk = make_block(drop_rate=0.5).eval()
    x = Tensor(rng().normal(size=(2, 4, 8, 8)).astype(np.float32))
    np.testing.assert_array_equal(blk(x).data, blk(x).data)


def test_block_gradients():
    blk = to64(make_block(seed=4))
    blk.eval()
    x = Tensor(rng(9).normal(size=(1, 5, 9, 8)), requires_grad=True)
    errs = check_gradients(lambda: blk(x), [x] + blk.parameters(), max_entries=6)
    assert max(errs) <= TOL, errs


# -- transitions, encoder ------------------------------------------------------------
def test_stage_transition_constant_input():
    st = StageTransition(rng(), 3)
    st.proj.weight.data[:] = np.hstack([np.eye(3), 2 * np.eye(3)])
    st.proj.bias.data[:] = 0
    x = np.broadcast_to(np.array([1.0, -2.0, 0.5], np.float32)[None, :, None, None], (1, 3, 4, 6)).copy()
    y = stage_transition(x, st).data
    assert y.shape == (1, 6, 2, 3)
    np.testing.assert_allclose(y[0, :, 0, 0], [1, -2, 0.5, 2, -4, 1])
    assert np.ptp(y, axis=(2, 3)).max() == 0


def test_stage_transition_gradients():
    st = to64(StageTransition(rng(), 4))
    x = Tensor(rng(1).normal(size=(2, 4, 6, 8)), requires_grad=True)
    errs = check_gradients(lambda: stage_transition(x, st), [x] + st.parameters())
    assert max(errs) <= TOL, errs


def test_encoder_feature_shapes_toy():
    cfg = ModelConfig.toy()
    enc = Encoder(rng(), cfg).eval()
    feats = encoder_forward(np.zeros((1, 6, 16, 256), np.float32), enc)
    assert [f.shape for f in feats] == cfg.feature_shapes(1)


def test_encoder_all_windowed_same_shapes():
    cfg = ModelConfig.toy(global_blocks=())
    enc = Encoder(rng(), cfg).eval()
    assert not any(b.is_global for b in enc.blocks)
    feats = encoder_forward(np.zeros((1, 6, 16, 256), np.float32), enc)
    assert [f.shape for f in feats] == cfg.feature_shapes(1)


def test_encoder_global_flags_follow_config():
    enc = Encoder(rng(), ModelConfig.toy())
    assert [b.is_global for b in enc.blocks] == [False, False, True, False, True]


# -- decoder -------------------------------------------------------------------------
def test_rfb_shape_and_zero():
    rfb = RFB(rng(), 16, 32)
    x = rng(1).normal(size=(2, 16, 5, 9)).astype(np.float32)
    assert rfb_forward(x, rfb).shape == (2, 32, 5, 9)
    zero_all(rfb)
    assert np.abs(rfb_forward(x, rfb).data).max() == 0


def test_rfb_gradients():
    rfb = to64(RFB(rng(), 4, 8))
    for p in rfb.parameters():
        if p.ndim == 1:
            p.data += rng(2).normal(scale=0.1, size=p.shape)
    x = Tensor(rng(1).normal(size=(1, 4, 7, 12)), requires_grad=True)
    errs = check_gradients(lambda: rfb_forward(x, rfb), [x] + rfb.parameters(), max_entries=5)
    assert max(errs) <= TOL, errs


def test_decoder_two_classes():
    cfg = ModelConfig.toy(num_classes=2)
    dec = Decoder(rng(), cfg)
    feats = [Tensor(np.zeros(s, np.float32)) for s in cfg.feature_shapes(1)]
    main, aux = decoder_forward(feats, dec)
    assert main.shape == (1, 2, 16, 256)
    assert [a.shape for a in aux] == [(1, 2) + s[2:] for s in cfg.feature_shapes(1)]


def test_model_end_to_end_gradients():
    cfg = ModelConfig.toy(input_hw=(16, 64), num_classes=3, decoder_channels=16,
                          stage_channels=(8, 16, 32, 64), stem_channels=8)
    model = randomize(to64(RangeSAM(cfg, seed=1)), seed=2).eval()
    x = Tensor(rng(3).normal(size=(1, 6, 16, 64)), requires_grad=True)

    def fn():
        main, aux = model(x)
        return F.concat([F.reshape(main, (-1,))] + [F.reshape(a, (-1,)) for a in aux], axis=0)

    # key biases have a structurally zero gradient (softmax shift invariance);
    # the floor keeps FD round-off on them from reading as a relative error
    errs = check_gradients(fn, [x] + model.parameters(), max_entries=3, floor=1e-3)
    assert max(errs) <= TOL, max(errs)


def test_model_eval_deterministic_and_groups():
    model = RangeSAM(ModelConfig.toy(), seed=0).eval()
    x = rng().normal(size=(1, 6, 16, 256)).astype(np.float32)
    with no_grad():
        a, _ = model(x)
        b, _ = model(x)
    np.testing.assert_array_equal(a.data, b.data)
    groups = model.param_groups()
    assert count_parameters(groups["backbone"]) == count_parameters(model.encoder)
    assert count_parameters(groups["head"]) == count_parameters(model.decoder)


def test_model_seed_reproducible():
    a = RangeSAM(ModelConfig.toy(), seed=4).state_dict()
    b = RangeSAM(ModelConfig.toy(), seed=4).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


# -- parameter counting --------------------------------------------------------------
def test_count_linear():
    assert count_parameters(Linear(rng(), 4, 2)) == 10


def test_count_stem_closed_form():
    C = 96
    expected = (6 * C + C) + 2 * C + (C * C * 49 + C) + 4 * 128 + C
    assert count_parameters(Stem(rng(), ModelConfig())) == expected


def test_parameter_report_flags_inconsistency():
    model = RangeSAM(ModelConfig.toy())
    b = parameter_breakdown(model)
    assert b["total"] == count_parameters(model)
    assert b["stem"] + b["blocks"] + b["transitions"] == b["encoder"]
    assert b["rfb"] + b["aux_heads"] + b["fusion"] == b["decoder"]
    text = parameter_report(model)
    assert "30M" in text and "63M" in text and "INCONSISTENT" in text
