import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaloc.errors import ConfigError, ContractError, ShapeError
from adaloc.model import (
    ModelConfig,
    Regressor,
    count_params,
    encoder_layer,
    feed_forward,
    forward_tensor,
    init_weights,
    max_pool_features,
    model_forward,
    multi_head_attention,
    param_shapes,
    parse_arch,
    positional_encoding,
    scaled_dot_attention,
    table_grid,
)
from adaloc.preprocess import CirSample
from adaloc.rng import generator
from adaloc.tensor import Tensor, float64_mode, mse_loss, parameter

from conftest import fd_grad, rel_err

TINY = dict(seq_len=8, d_model=6, n_heads=2, d_ff=5, fcnn_hidden=4, dropout_rate=0.0)


def rng(name):
    return generator(0, "tests", name)


def attention_oracle(q, k, v):
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        s = np.array([sum(q[i, t] * k[j, t] for t in range(q.shape[1])) for j in range(k.shape[0])])
        s = s / math.sqrt(q.shape[1])
        e = np.exp(s - s.max())
        p = e / e.sum()
        for j in range(k.shape[0]):
            out[i] += p[j] * v[j]
    return out


# -- positional encoding ---------------------------------------------------------

def test_positional_encoding_closed_forms():
    pe = positional_encoding()
    assert pe.shape == (128, 46)
    assert pe[0, 0] == 0.0 and pe[0, 1] == 1.0
    assert np.allclose(pe[:, 0], np.sin(np.arange(128)))
    assert np.all(np.abs(pe) <= 1.0)
    i = 5
    arg = 17 / 10000 ** (2 * i / 46)
    assert pe[17, 2 * i] == pytest.approx(math.sin(arg))
    assert pe[17, 2 * i + 1] == pytest.approx(math.cos(arg))


# -- attention -------------------------------------------------------------------------

def test_attention_with_one_position_returns_v():
    v = rng("v1").normal(size=(1, 3))
    out = scaled_dot_attention(Tensor(rng("q1").normal(size=(1, 3))), Tensor(rng("k1").normal(size=(1, 3))), Tensor(v))
    np.testing.assert_array_equal(out.data, v.astype(np.float32))


def test_attention_with_zero_keys_is_uniform():
    v = rng("v0").normal(size=(5, 3))
    with float64_mode():
        out = scaled_dot_attention(Tensor(rng("q0").normal(size=(5, 3))), Tensor(np.zeros((5, 3))), Tensor(v))
    assert np.allclose(out.data, v.mean(axis=0), atol=1e-12)


def test_attention_matches_loop_oracle():
    q, k, v = (rng(n).normal(size=(4, 3)) for n in "qkv")
    with float64_mode():
        out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v)).data
    assert np.allclose(out, attention_oracle(q, k, v), atol=1e-6)


def test_attention_shape_mismatch():
    with pytest.raises(ShapeError):
        scaled_dot_attention(Tensor(np.ones((4, 3))), Tensor(np.ones((4, 2))), Tensor(np.ones((4, 3))))


def _mha_weights(d, r, scale=0.3):
    w = {}
    for m in "qkvo":
        w["w" + m] = Tensor(r.normal(0, scale, (d, d)))
        w["b" + m] = Tensor(r.normal(0, scale, d))
    return w


def test_mha_zero_weights_give_zero():
    w = {k: Tensor(np.zeros(v.shape)) for k, v in _mha_weights(46, rng("z")).items()}
    out = multi_head_attention(Tensor(rng("x").normal(size=(128, 46))), w, 2)
    assert out.shape == (128, 46)
    assert np.all(out.data == 0)


def test_single_head_mha_is_attention_then_projection():
    x = rng("x").normal(size=(7, 6))
    with float64_mode():
        w = _mha_weights(6, rng("w"))
        out = multi_head_attention(Tensor(x), w, 1).data
        proj = {m: x @ w["w" + m].data + w["b" + m].data for m in "qkv"}
        ref = attention_oracle(proj["q"], proj["k"], proj["v"]) @ w["wo"].data + w["bo"].data
    assert np.allclose(out, ref, atol=1e-10)


def test_two_heads_use_disjoint_slices():
    x = rng("x2").normal(size=(5, 6))
    with float64_mode():
        w = _mha_weights(6, rng("w2"))
        out = multi_head_attention(Tensor(x), w, 2).data
        proj = {m: x @ w["w" + m].data + w["b" + m].data for m in "qkv"}
        heads = [attention_oracle(proj["q"][:, s], proj["k"][:, s], proj["v"][:, s])
                 for s in (slice(0, 3), slice(3, 6))]
        ref = np.concatenate(heads, axis=1) @ w["wo"].data + w["bo"].data
    assert np.allclose(out, ref, atol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mha_shape_contract(seed):
    r = np.random.default_rng(seed)
    out = multi_head_attention(Tensor(r.normal(size=(128, 46))), _mha_weights(46, r, r.uniform(0, 3)), 2)
    assert out.shape == (128, 46)


def test_mha_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        multi_head_attention(Tensor(np.ones((4, 46))), _mha_weights(46, rng("w")), 3)


# -- feed-forward -----------------------------------------------------------------------

def test_ffn_zero_weights_broadcast_b2():
    b2 = rng("b2").normal(size=46)
    out = feed_forward(Tensor(rng("x").normal(size=(128, 46))), Tensor(np.zeros((46, 64))),
                       Tensor(np.zeros(64)), Tensor(np.zeros((64, 46))), Tensor(b2))
    assert np.allclose(out.data, np.broadcast_to(b2, (128, 46)).astype(np.float32))


def test_ffn_dead_relu_gives_b2():
    x = np.abs(rng("x").normal(size=(10, 46)))
    w1 = -np.abs(rng("w1").normal(size=(46, 64)))
    b2 = rng("b2").normal(size=46)
    out = feed_forward(Tensor(x), Tensor(w1), Tensor(-np.ones(64)), Tensor(rng("w2").normal(size=(64, 46))), Tensor(b2))
    assert np.allclose(out.data, b2.astype(np.float32))


def test_ffn_is_position_wise():
    r = rng("ffn")
    x = r.normal(size=(128, 46))
    args = [Tensor(r.normal(size=s)) for s in ((46, 64), (64,), (64, 46), (46,))]
    perm = r.permutation(128)
    a = feed_forward(Tensor(x), *args).data
    b = feed_forward(Tensor(x[perm]), *args).data
    np.testing.assert_array_equal(a[perm], b)


def test_ffn_width_mismatch():
    with pytest.raises(ShapeError):
        feed_forward(Tensor(np.ones((3, 46))), Tensor(np.ones((46, 64))), Tensor(np.ones(64)),
                     Tensor(np.ones((32, 46))), Tensor(np.ones(46)))


# -- encoder layer ----------------------------------------------------------------------

def _layer_weights(config, fill=None):
    w = {k[len("enc0."):]: v for k, v in init_weights(config, 1).items() if k.startswith("enc0.")}
    if fill is not None:
        for k, v in w.items():
            if not k.startswith("ln"):
                v.data[...] = fill
    return w


def test_zero_sublayers_leave_input_unchanged():
    cfg = ModelConfig()
    x = rng("x").normal(size=(2, 128, 46)).astype(np.float32)
    out = encoder_layer(Tensor(x), _layer_weights(cfg, 0.0), cfg)
    np.testing.assert_array_equal(out.data, x)


def test_post_norm_rows_are_normalized():
    cfg = ModelConfig(use_layer_norm=True)
    with float64_mode():
        out = encoder_layer(Tensor(rng("x").normal(size=(128, 46))), _layer_weights(cfg), cfg).data
    assert np.allclose(out.mean(axis=-1), 0, atol=1e-5)
    assert np.allclose(out.var(axis=-1), 1, atol=1e-4)


# -- max pooling -----------------------------------------------------------------------

def test_pool_of_counting_row():
    x = np.tile(np.arange(1.0, 47.0), (3, 128, 1))
    out = max_pool_features(Tensor(x)).data
    assert out.shape == (3, 128, 12)
    np.testing.assert_array_equal(out[0, 0], [4, 8, 12, 16, 20, 24, 28, 32, 36, 40, 44, 46])


def test_pool_of_constant_row():
    out = max_pool_features(Tensor(np.full((1, 128, 46), -2.5))).data
    assert np.all(out == -2.5)


def test_pool_rejects_other_widths():
    with pytest.raises(ConfigError):
        max_pool_features(Tensor(np.ones((1, 128, 44))))


def test_pool_gradient_goes_to_segment_maxima_only():
    x = rng("pool").normal(size=(1, 2, 46))
    with float64_mode():
        t = parameter(x.copy())
        out = max_pool_features(t, 4, 46)
        w = rng("pw").normal(size=out.shape)
        (out * Tensor(w)).sum().backward()

        def f():
            return float((max_pool_features(Tensor(t.data), 4, 46).data * w).sum())
        num = fd_grad(f, t.data, 1e-6)
    assert rel_err(t.grad, num) < 1e-6
    padded = np.concatenate([x, np.full((1, 2, 2), -np.inf)], axis=-1).reshape(1, 2, 12, 4)
    winners = padded.argmax(axis=-1) + 4 * np.arange(12)
    mask = np.zeros_like(x, dtype=bool)
    np.put_along_axis(mask, winners, True, axis=-1)
    assert np.all(t.grad[~mask] == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 45))
def test_perturbing_a_loser_leaves_pool_unchanged(seed, j):
    x = np.random.default_rng(seed).permutation(46).astype(np.float64)[None, None]
    seg = x[0, 0, (j // 4) * 4:(j // 4) * 4 + 4]
    if x[0, 0, j] == seg.max():
        return
    gap = seg.max() - x[0, 0, j]
    y = x.copy()
    y[0, 0, j] += 0.5 * gap
    with float64_mode():
        np.testing.assert_array_equal(max_pool_features(Tensor(x)).data, max_pool_features(Tensor(y)).data)


# -- full model ----------------------------------------------------------------------------

def _samples(n, seed=0, standardized=True, seq=128, d=46):
    r = np.random.default_rng(seed)
    return [CirSample(r.normal(size=(seq, d)).astype(np.float32), (0.0, 0.0), "S1", 1, 0.0, standardized)
            for _ in range(n)]


@pytest.mark.parametrize("config", table_grid(), ids=lambda c: c.tag)
def test_grid_config_shapes(config):
    w = init_weights(config, 0)
    trace = {}
    x = np.stack([s.cir for s in _samples(64)])
    out = forward_tensor(x, config, w, trace=trace)
    assert out.shape == (64, 2)
    assert trace["pre_flatten"] == ((64, 128, 12) if config.use_max_pool else (64, 128, 46))
    assert model_forward(_samples(1)[0], config, w).shape == (2,)
    assert count_params(config) == sum(v.data.size for v in w.values())


def test_grid_has_twenty_distinct_configs():
    grid = table_grid()
    assert len(grid) == 20 and len({c.tag for c in grid}) == 20


def test_eval_mode_is_pure():
    cfg = ModelConfig(encoder_layers=2, use_max_pool=True)
    w = init_weights(cfg, 3)
    s = _samples(4, seed=2)
    np.testing.assert_array_equal(model_forward(s, cfg, w), model_forward(s, cfg, w))


def test_train_mode_without_dropout_equals_eval():
    cfg = ModelConfig(encoder_layers=2, use_layer_norm=True, dropout_rate=0.0)
    w = init_weights(cfg, 3)
    s = _samples(3, seed=1)
    np.testing.assert_array_equal(model_forward(s, cfg, w, "train", rng("d")), model_forward(s, cfg, w))


def test_train_mode_with_dropout_differs():
    cfg = ModelConfig(dropout_rate=0.05)
    w = init_weights(cfg, 3)
    s = _samples(2)
    assert not np.array_equal(model_forward(s, cfg, w, "train", rng("d")), model_forward(s, cfg, w))


def test_unstandardized_input_rejected():
    cfg = ModelConfig()
    with pytest.raises(ContractError):
        model_forward(_samples(1, standardized=False)[0], cfg, init_weights(cfg))


def test_wrong_input_shape():
    cfg = ModelConfig()
    with pytest.raises(ShapeError):
        forward_tensor(np.zeros((2, 64, 46), np.float32), cfg, init_weights(cfg))


@pytest.mark.parametrize("ln", [False, True])
def test_tiny_encoder_gradients_match_finite_differences(ln):
    cfg = ModelConfig(encoder_layers=2, use_layer_norm=ln, use_max_pool=True, **TINY)
    r = rng(f"tiny{ln}")
    with float64_mode():
        w = init_weights(cfg, 5)
        for v in w.values():                       # move biases and gains off their init values
            v.data += r.normal(0, 0.1, v.data.shape)
        x = parameter(r.normal(size=(3, 8, 6)))
        y = r.normal(size=(3, 2))

        def loss():
            return mse_loss(forward_tensor(x, cfg, w), y)

        loss().backward()
        grads = {k: v.grad.copy() for k, v in w.items()}
        gx = x.grad.copy()

        def f():
            return float(mse_loss(forward_tensor(Tensor(x.data), cfg, w), y).data)
        numeric = {k: fd_grad(f, w[k].data) for k in w}
        numeric["x"] = fd_grad(f, x.data)
    grads["x"] = gx
    # attention key biases have an exactly zero gradient (softmax shift invariance),
    # so errors are taken relative to the largest gradient entry of the model
    scale = max(np.abs(g).max() for g in grads.values())
    worst = max(np.abs(grads[k] - numeric[k]).max() for k in grads) / scale
    assert worst < 1e-4
    for k in ("enc0.mha.bk", "enc1.mha.bk"):
        assert np.abs(grads[k]).max() < 1e-10


# -- parameter counts -------------------------------------------------------------------

def test_reference_parameter_counts():
    assert count_params(parse_arch("el=1,ln=off,mp=on")) == 85_442
    enc = count_params(ModelConfig(encoder_layers=1, use_max_pool=True)) - (1536 * 46 + 46 + 46 * 2 + 2)
    assert enc == 14_646
    assert count_params(parse_arch("el=3,ln=off,mp=off")) == 314_926
    assert count_params(parse_arch("el=2,ln=off,mp=on")) == 100_088


@pytest.mark.parametrize("el", [1, 2, 3, 4, 5])
def test_layer_norm_adds_184_per_layer(el):
    for mp in (False, True):
        off = count_params(ModelConfig(encoder_layers=el, use_max_pool=mp))
        on = count_params(ModelConfig(encoder_layers=el, use_layer_norm=True, use_max_pool=mp))
        assert on - off == 184 * el


def test_pooling_shrinks_head_input():
    assert ModelConfig(use_max_pool=False).flat_features == 5888
    assert ModelConfig(use_max_pool=True).flat_features == 1536
    shapes = param_shapes(ModelConfig(use_max_pool=True))
    assert shapes["head.w1"] == (1536, 46)


@pytest.mark.parametrize("text", ["el=0,ln=off,mp=on", "el=6", "ln=on,mp=on", "el=2,xx=1", "el=two"])
def test_bad_arch_strings(text):
    with pytest.raises(ConfigError):
        parse_arch(text)


def test_regressor_predicts_meters():
    from adaloc.preprocess import Scalers
    cfg = ModelConfig(use_max_pool=True)
    r = rng("reg")
    cir = r.random((20, 128, 46))
    labels = r.normal(0, 5, (20, 2))
    model = Regressor(cfg, scalers=Scalers.fit(cir, labels), seed=1)
    out = model.predict_meters(cir[:3])
    std = model.predict_standardized(model.scalers.forward_inputs(cir[:3]))
    assert np.allclose(out, model.scalers.inverse_labels(std))
