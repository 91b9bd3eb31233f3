import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pahires import autodiff as ad
from pahires.model import (CrossScaleAttention, FourierActivation, ModelConfig, ModelConfigError, Normalizer,
                           PaHiRes, PaidMlp, decode, encode_multiscale, fourier_activate, fuse_cross_scale,
                           init_activation, init_parametric, load_model, predict_frame, save_model,
                           unit_gain_omega)
from pahires.motion import MotionSequence


def random_act(z, seed=0):
    rng = np.random.default_rng(seed)
    act = FourierActivation(z)
    act.amp.value[:] = rng.normal(size=z)
    act.freq.value[:] = rng.normal(size=z) * 3
    act.phase.value[:] = rng.uniform(-np.pi, np.pi, z)
    return act


def test_activation_examples():
    act = random_act(5)
    act.amp.value[:] = 0
    assert not fourier_activate(act, np.linspace(-3, 3, 7)).value.any()
    one = FourierActivation(1)
    one.amp.value[:] = 1
    one.freq.value[:] = 1
    one.phase.value[:] = np.pi / 2
    assert fourier_activate(one, np.array([0.0])).value[0] == 1.0


def test_activation_term_by_term():
    act = random_act(16, seed=3)
    got = fourier_activate(act, np.array([0.37])).value[0]
    terms = [a * math.sin(f * 0.37 + p) for a, f, p in zip(act.amp.value, act.freq.value, act.phase.value)]
    assert got == pytest.approx(math.fsum(terms), abs=1e-12)


@given(st.integers(0, 1000), st.integers(0, 15))
def test_activation_phase_periodic(seed, i):
    act = random_act(16, seed)
    x = np.random.default_rng(seed).normal(size=(3, 4))
    before = fourier_activate(act, x).value
    act.phase.value[i] += 2 * np.pi
    after = fourier_activate(act, x).value
    assert before.shape == x.shape
    assert np.allclose(before, after, atol=1e-12)


def test_init_harmonics_and_determinism():
    mlp = init_parametric(PaidMlp([3, 8, 8, 2], harmonics=4), np.random.default_rng(1))
    assert np.array_equal(mlp.acts[0].freq.value, [30, 60, 90, 120])
    assert np.array_equal(mlp.acts[1].freq.value, [1, 2, 3, 4])
    assert np.all(np.abs(mlp.acts[0].phase.value) <= np.pi)
    again = init_parametric(PaidMlp([3, 8, 8, 2], harmonics=4), np.random.default_rng(1))
    for a, b in zip(mlp.parameters(), again.parameters()):
        assert np.array_equal(a.value, b.value)
    assert not any(b.value.any() for b in mlp.biases)


@pytest.mark.parametrize("omega", [30.0, 1.0])
def test_init_layer_output_variance(omega):
    # one linear + activation layer on unit-variance input, Monte-Carlo estimate
    rng = np.random.default_rng(0)
    mlp = init_parametric(PaidMlp([64, 64, 1], harmonics=16), rng, first_omega=omega)
    x = rng.normal(size=(10_000, 64))
    h = mlp.acts[0](ad.add(ad.matmul(x, mlp.weights[0]), mlp.biases[0])).value
    assert 0.2 <= h.var() <= 5.0


def test_unit_gain_omega_closed_form():
    # mean-square slope of the initialized activation on N(0, 2) input is one
    z = 16
    w0 = unit_gain_omega(z)
    i = np.arange(1, z + 1)
    assert w0 ** 2 * np.sum(i ** 2) * (2 / z) == pytest.approx(1.0, rel=1e-12)


def test_sharing_parameter_counts():
    z = 5
    shared = PaidMlp([3, 4, 4, 4, 2], harmonics=z, share=True)
    own = PaidMlp([3, 4, 4, 4, 2], harmonics=z, share=False)

    def act_count(m):
        return sum(p.value.size for a in m.activations() for p in a.parameters())
    assert act_count(shared) == 3 * z
    assert act_count(own) == 3 * z * 3
    assert len({id(a) for a in own.acts}) == 3 and len({id(a) for a in shared.acts}) == 1


def test_relu_mlp_has_no_activation_parameters():
    m = PaidMlp([2, 4, 1], activation="relu")
    assert m.activations() == [] and len(m.parameters()) == 4


# ------------------------------------------------------------------ attention

def softmax_rows(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_oracle(blk, zq, zkv, P, d):
    q = zq.reshape(P, d) @ blk["query"]
    k = zkv.reshape(P, d) @ blk["key"]
    v = zkv.reshape(P, d) @ blk["value"]
    out = np.zeros((P, d))
    for i in range(P):
        scores = [sum(q[i, c] * k[j, c] for c in range(d)) / math.sqrt(d) for j in range(P)]
        m = max(scores)
        w = [math.exp(s - m) for s in scores]
        w = [x / sum(w) for x in w]
        out[i] = sum(w[j] * v[j] for j in range(P))
    return (out @ blk["out"]).reshape(-1) + zkv


def test_fuse_hand_attention():
    rng = np.random.default_rng(4)
    att = CrossScaleAttention(1, latent=4, token_dim=2)
    att.init(rng)
    z1, z2 = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    fused = fuse_cross_scale(att, [z1, z2]).value
    blk = {k: p.value for k, p in att.blocks[0].items()}
    expect = np.concatenate([z1[0], attention_oracle(blk, z1[0], z2[0], 2, 2)])
    assert np.allclose(fused[0], expect, atol=1e-10, rtol=0)


def test_fuse_degenerate_cases():
    z = np.random.default_rng(0).normal(size=(3, 8))
    att1 = CrossScaleAttention(0, 8, 4)
    assert np.array_equal(fuse_cross_scale(att1, [z]).value, z)
    att = CrossScaleAttention(2, 8, 4)
    att.init(np.random.default_rng(0))
    for blk in att.blocks:
        blk["out"].value[:] = 0
    zeros = [np.zeros((2, 8))] * 3
    assert not fuse_cross_scale(att, zeros).value.any()
    lat = [np.random.default_rng(i).normal(size=(2, 8)) for i in range(3)]
    assert np.array_equal(fuse_cross_scale(att, lat).value, np.concatenate(lat, axis=1))
    with pytest.raises(ad.ShapeError):
        fuse_cross_scale(att, lat[:2])


@pytest.mark.parametrize("S", [1, 2, 3, 4])
def test_fused_width(S):
    att = CrossScaleAttention(S - 1, 8, 4)
    att.init(np.random.default_rng(S))
    lat = [np.random.default_rng(i).normal(size=(5, 8)) for i in range(S)]
    assert fuse_cross_scale(att, lat).shape == (5, 8 * S)


@given(st.integers(0, 10_000))
def test_attention_weights_convex(seed):
    rng = np.random.default_rng(seed)
    att = CrossScaleAttention(1, 8, 2)
    att.init(rng)
    _, w = att.attend(0, ad.constant(rng.normal(size=(3, 8)) * 5), ad.constant(rng.normal(size=(3, 8)) * 5))
    assert np.allclose(w.value.sum(axis=-1), 1.0, atol=1e-12)


# -------------------------------------------------------------------- model

def tiny(S=3, **kw):
    cfg = ModelConfig(n_scales=S, harmonics=3, latent=8, token_dim=4, encoder_width=6,
                      decoder_width=6, **kw)
    return PaHiRes(cfg, dim=2)


def tiny_seq(T=9, D=2, seed=0):
    return MotionSequence(np.random.default_rng(seed).normal(size=(T, D)), 30.0)


def mlp_oracle(mlp, x):
    h = x
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w.value + b.value
        if k < len(mlp.weights) - 1:
            a = mlp.acts[k]
            h = sum(a.amp.value[i] * np.sin(a.freq.value[i] * h + a.phase.value[i]) for i in range(a.harmonics))
    return h


def forward_oracle(model, seq, t):
    """Straight-line re-derivation: explicit clip enumeration, MLPs, attention, decoder."""
    T = seq.length
    latents = []
    for s in range(model.config.n_scales):
        stride = 2 ** s
        center = min(max(int(math.floor(t * (T - 1) + 0.5)), 0), T - 1)
        idx = [min(max(center + k * stride, 0), T - 1) for k in range(-2, 3)]
        row = np.concatenate([seq.frames[idx].ravel(), np.array(idx) / (T - 1) - t, [t]])
        latents.append(mlp_oracle(model.latent_mlps[s], mlp_oracle(model.encoders[s], row)))
    fused = [latents[0]]
    P, d = model.config.tokens, model.config.token_dim
    for s in range(1, len(latents)):
        blk = {k: p.value for k, p in model.attention.blocks[s - 1].items()}
        fused.append(attention_oracle(blk, latents[s - 1], latents[s], P, d))
    return latents, mlp_oracle(model.decoder, np.concatenate(fused + [[t]]))


@pytest.mark.parametrize("t", [0.0, 0.3, 0.5, 1.0])
def test_forward_matches_oracle(t):
    model = tiny(seed=7)
    seq = tiny_seq()
    latents, frame = forward_oracle(model, seq, t)
    got = encode_multiscale(model, seq, t)
    for a, b in zip(got, latents):
        assert np.allclose(a.value[0], b, atol=1e-10, rtol=0)
    assert np.allclose(predict_frame(model, seq, t), frame, atol=1e-10, rtol=0)


def test_single_scale_has_one_latent():
    assert len(encode_multiscale(tiny(S=1), tiny_seq(), 0.5)) == 1


def test_constant_sequence_clips_differ_only_in_offsets():
    model = tiny()
    seq = MotionSequence(np.full((40, 2), 1.5), 30.0)
    rows_a = model.encoder_inputs(seq.frames, [0.45])
    rows_b = model.encoder_inputs(seq.frames, [0.55])
    for a, b in zip(rows_a, rows_b):
        assert np.array_equal(a[:, :10], b[:, :10])
        assert not np.array_equal(a[:, 10:], b[:, 10:])


def test_decoder_zero_and_shape():
    dec = PaidMlp([17, 6, 6, 2], harmonics=3)
    out = decode(dec, np.ones((3, 16)), [0.2, -0.5, 1.7])
    assert not out.value.any() and out.shape == (3, 2)
    init_parametric(dec, np.random.default_rng(0))
    assert decode(dec, np.ones((2, 16)), [-3.0, 4.0]).shape == (2, 2)
    with pytest.raises(ad.ShapeError):
        decode(dec, np.ones((2, 15)), [0.0, 1.0])


def test_predict_is_pure_and_accepts_endpoints():
    model, seq = tiny(), tiny_seq()
    a = model.predict(seq, [0.0, 1.0, 0.4])
    b = model.predict(seq, [0.0, 1.0, 0.4])
    assert np.array_equal(a, b) and np.all(np.isfinite(a))
    assert np.array_equal(predict_frame(model, seq, 0.4), a[2])


def test_model_gradient_matches_finite_differences():
    from oracles import central_difference, rel_error
    model, seq = tiny(seed=2), tiny_seq()
    t = np.array([0.1, 0.6])
    target = np.random.default_rng(1).normal(size=(2, 2))
    inputs = model.encoder_inputs(seq.frames, t)

    def loss():
        diff = ad.sub(model.forward(inputs, t), target)
        return ad.sum_(ad.mul(diff, diff))
    grads = ad.gradient(loss(), model.parameters())
    for p in model.parameters():
        num = central_difference(lambda: float(loss().value), p.value)
        assert rel_error(grads[p], num) < 1e-4, p.label


def test_config_validation():
    with pytest.raises(ModelConfigError):
        ModelConfig(latent=10, token_dim=4)
    with pytest.raises(ModelConfigError):
        ModelConfig(clip_frames=4)
    with pytest.raises(ModelConfigError):
        ModelConfig(activation="tanh")
    assert ModelConfig().strides() == [1, 2, 4] and ModelConfig().tokens == 8


def test_default_widths():
    m = PaHiRes(ModelConfig(), dim=7)
    assert m.encoders[0].sizes == [5 * 8 + 1, 128, 128, 128]
    assert m.latent_mlps[0].sizes == [128, 128, 128]
    assert m.decoder.sizes == [3 * 128 + 1, 256, 256, 256, 256, 7]


def test_checkpoint_round_trip(tmp_path):
    model, seq = tiny(seed=3), tiny_seq()
    model.normalizer = Normalizer.fit([seq])
    model.trained_steps = 5
    save_model(tmp_path / "m.ckpt", model)
    back = load_model(tmp_path / "m.ckpt", dim=2)
    assert back.trained_steps == 5 and back.config == model.config
    assert np.array_equal(back.predict(seq, [0.3]), model.predict(seq, [0.3]))
    with pytest.raises(ModelConfigError):
        load_model(tmp_path / "m.ckpt", dim=3)


def test_normalizer():
    seq = MotionSequence(np.array([[1.0, 5.0], [3.0, 5.0]]), 30)
    n = Normalizer.fit([seq])
    assert np.array_equal(n.std, [1.0, 1.0]) and np.array_equal(n.mean, [2.0, 5.0])
    x = np.random.default_rng(0).normal(size=(4, 2))
    assert np.allclose(n.inverse(n.forward(x)), x, atol=1e-15)


def test_init_activation_bounds():
    act = FourierActivation(9)
    init_activation(act, 2.0, np.random.default_rng(0))
    assert np.all(np.abs(act.amp.value) <= math.sqrt(6 / 9))
    assert np.array_equal(act.freq.value, 2.0 * np.arange(1, 10))
