import numpy as np
import pytest

from demoire.autodiff import ShapeError, Tape, Tensor, check_gradients, ops
from demoire.net import (
    CouplingBlock,
    DemoireNet,
    FrequencyFilter,
    InnStage,
    NetworkConfig,
    TripleOutput,
    haar_analysis,
    haar_synthesis,
    inn_forward,
    inn_inverse,
    lfef_apply,
    total_loss,
    wavelet_loss,
)
from demoire.net.losses import L1_WEIGHT, PERCEPTUAL_WEIGHT, PerceptualSurrogate
from demoire.optim import AdamW

SMALL = dict(base_channels=8, image_size=32, ttt_dim=8, ttt_key_dim=8, patch_size=2)


def small_cfg(**kw):
    return NetworkConfig(**{**SMALL, **kw})


# --- coupling stage -------------------------------------------------------------------


def test_identity_coupling_is_identity(rng):
    stage = InnStage(rng, 6, n_blocks=3, identity_init=True)
    x = Tensor(rng.standard_normal((2, 6, 8, 8)).astype(np.float32))
    np.testing.assert_array_equal(inn_forward(x, stage).data, x.data)
    np.testing.assert_array_equal(inn_inverse(x, stage).data, x.data)


def _perturb(stage, rng, scale=0.3):
    for p in stage.parameters():
        p.data = p.data + (rng.standard_normal(p.shape) * scale).astype(p.dtype)


def test_round_trip_random_maps(rng):
    worst = 0.0
    for trial in range(100):
        stage = InnStage(np.random.default_rng(trial), 8, n_blocks=2)
        _perturb(stage, rng)
        x = Tensor(rng.standard_normal((1, 8, 8, 8)).astype(np.float32))
        worst = max(worst, float(np.max(np.abs(stage.inverse(stage(x)).data - x.data))))
    assert worst < 1e-4


def test_round_trip_after_training(rng):
    stage = InnStage(rng, 8, n_blocks=2)
    opt = AdamW(stage.parameters(), lr=1e-2)
    target = Tensor(rng.standard_normal((2, 8, 8, 8)).astype(np.float32))
    for _ in range(100):
        x = Tensor(rng.standard_normal((2, 8, 8, 8)).astype(np.float32))
        with Tape() as tape:
            tape.watch(stage.parameters())
            loss = ops.mean(ops.square(stage(x) - target))
        opt.step(tape.gradient(loss, stage.parameters()))
    x = Tensor(rng.standard_normal((4, 8, 8, 8)).astype(np.float32))
    assert np.max(np.abs(stage.inverse(stage(x)).data - x.data)) < 1e-4


def test_logdet_matches_dense_jacobian(rng):
    block = CouplingBlock(rng, 2, hidden=4)
    _perturb(block, rng, 0.5)
    block.to(np.float64)
    x0 = rng.standard_normal((1, 2, 2, 2))
    _, logdet = block(Tensor(x0), return_logdet=True)
    n = x0.size
    jac = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1e-6
        plus = block(Tensor(x0 + e.reshape(x0.shape))).data.ravel()
        minus = block(Tensor(x0 - e.reshape(x0.shape))).data.ravel()
        jac[:, i] = (plus - minus) / 2e-6
    _, ref = np.linalg.slogdet(jac)
    assert float(logdet.data[0]) == pytest.approx(ref, abs=1e-6)


def test_coupling_gradients(rng):
    block = CouplingBlock(rng, 4, hidden=4)
    _perturb(block, rng, 0.3)
    s_conv = block.s_net.conv2

    def op(x, w):
        s_conv.weight = w
        block.to(x.dtype)
        return block(x)

    inputs = [rng.standard_normal((1, 4, 4, 4)), s_conv.weight.data.astype(np.float64)]
    assert check_gradients(op, inputs, dtype=np.float64) < 1e-6
    assert check_gradients(op, inputs, dtype=np.float32) < 1e-3


def test_coupling_rejects_single_channel(rng):
    with pytest.raises(ShapeError):
        CouplingBlock(rng, 1)


# --- frequency filter -----------------------------------------------------------------


def test_all_pass_gate_is_exact_identity(rng):
    filt = FrequencyFilter(3, 8, 8, alpha_init=1.0)
    f = Tensor(rng.standard_normal((2, 3, 8, 8)).astype(np.float32))
    np.testing.assert_array_equal(lfef_apply(f, filt).data, f.data)


def test_dc_only_gate_gives_channel_means(rng):
    filt = FrequencyFilter(3, 8, 8, alpha_init=1.0).to(np.float64)
    gate = np.zeros(filt.delta_re.shape, dtype=complex)
    gate[:, 0, 0] = 1.0
    filt.set_gate(gate)
    f = rng.standard_normal((2, 3, 8, 8))
    out = lfef_apply(Tensor(f), filt).data
    np.testing.assert_allclose(out, np.broadcast_to(f.mean(axis=(2, 3), keepdims=True), f.shape), atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_contractive_gate_never_adds_energy(seed):
    rng = np.random.default_rng(seed)
    filt = FrequencyFilter(2, 8, 16, alpha_init=1.0).to(np.float64)
    mag = rng.uniform(0, 1, filt.delta_re.shape)
    phase = rng.uniform(-np.pi, np.pi, filt.delta_re.shape)
    filt.set_gate(mag * np.exp(1j * phase))
    f = rng.standard_normal((1, 2, 8, 16))
    assert np.sum(lfef_apply(Tensor(f), filt).data ** 2) <= np.sum(f**2) + 1e-9


def test_filter_matches_numpy_fft_oracle(rng):
    filt = FrequencyFilter(2, 8, 8).to(np.float64)
    filt.alpha = Tensor(np.array(0.7))
    gate = rng.standard_normal(filt.delta_re.shape) + 1j * rng.standard_normal(filt.delta_re.shape)
    filt.set_gate(gate)
    f = rng.standard_normal((1, 2, 8, 8))
    ref = 0.7 * np.fft.irfft2(np.fft.rfft2(f) * gate, s=(8, 8)) + 0.3 * f
    np.testing.assert_allclose(lfef_apply(Tensor(f), filt).data, ref, atol=1e-12)


def test_filter_applies_to_other_sizes(rng):
    filt = FrequencyFilter(2, 8, 8, alpha_init=1.0).to(np.float64)
    filt.set_gate(np.full(filt.delta_re.shape, 0.5))
    f = rng.standard_normal((1, 2, 16, 16))
    np.testing.assert_allclose(filt(Tensor(f)).data, 0.5 * f, atol=1e-12)

    # a tone at 1/8 cycles/pixel sits on a bin of both grids; notching that bin removes it
    gate = np.ones(filt.delta_re.shape)
    gate[:, 0, 1] = 0.0
    filt.set_gate(gate)
    x = np.arange(16)
    tone = np.broadcast_to(np.cos(2 * np.pi * x / 8), (1, 2, 16, 16))
    np.testing.assert_allclose(filt(Tensor(tone + 1.0)).data, 1.0, atol=1e-12)


def test_filter_gradients(rng):
    filt = FrequencyFilter(2, 4, 8, rng=rng, init_std=0.3).to(np.float64)
    x = rng.standard_normal((1, 2, 4, 8))

    def op(f, d_re, d_im, alpha):
        filt.delta_re, filt.delta_im, filt.alpha = d_re, d_im, alpha
        return filt(f)

    inputs = [x, filt.delta_re.data, filt.delta_im.data, np.array(0.6)]
    assert check_gradients(op, inputs, dtype=np.float64) < 1e-6
    assert check_gradients(op, inputs, dtype=np.float32) < 1e-3


def test_filter_rejects_bad_input(rng):
    filt = FrequencyFilter(2, 8, 8)
    with pytest.raises(ShapeError):
        filt(Tensor(np.zeros((1, 3, 8, 8))))


# --- network ------------------------------------------------------------------------


def test_zero_input_gives_zero_features():
    net = DemoireNet(small_cfg(identity_init=True))
    feats = net.sfe_forward(Tensor(np.zeros((1, 4, 16, 16), dtype=np.float32)))
    np.testing.assert_array_equal(feats.data, 0.0)


def test_identity_network_features_are_bilinear_pyramid(rng):
    net = DemoireNet(small_cfg(identity_init=True))
    shallow = Tensor(rng.standard_normal((1, 8, 16, 16)).astype(np.float32))
    maps = net.dfe_forward(shallow).maps
    for m, s in zip(maps, (1.0, 0.5, 0.25)):
        np.testing.assert_allclose(m.data, ops.bilinear_resize(shallow, s).data, atol=1e-6)


def test_shape_contract_default_config(rng):
    cfg = NetworkConfig()
    net = DemoireNet(cfg)
    raw = Tensor(rng.uniform(0, 1, (1, 4, 32, 32)).astype(np.float32))
    shallow = net.sfe_forward(raw)
    feats = net.dfe_forward(shallow)
    assert feats.shapes == [(1, 16, 32, 32), (1, 16, 16, 16), (1, 16, 8, 8)]
    for m, block in zip(feats.maps, net.ttt_blocks):
        tokens = block.tokenize(m)
        assert tokens.shape[1] == (m.shape[-1] // cfg.patch_size) ** 2
    out = net.reconstruct(feats, raw)
    assert isinstance(out, TripleOutput)
    assert [o.shape for o in out.as_tuple()] == [(1, 3, 64, 64), (1, 3, 32, 32), (1, 3, 16, 16)]


def test_default_network_is_micro_scale():
    assert DemoireNet(NetworkConfig()).num_parameters() <= 500_000


def test_gradient_reaches_every_parameter(rng):
    net = DemoireNet(small_cfg())
    raw = Tensor(rng.uniform(0, 1, (2, 4, 16, 16)).astype(np.float32))
    gt = Tensor(rng.uniform(0, 1, (2, 3, 32, 32)).astype(np.float32))
    params = net.named_parameters()
    names, tensors = zip(*params)
    with Tape() as tape:
        tape.watch(list(tensors))
        loss = total_loss(net(raw), gt)
    grads = tape.gradient(loss, list(tensors))
    dead = [n for n, g in zip(names, grads) if not np.any(g)]
    assert not dead, f"no gradient for {dead}"


@pytest.mark.parametrize("flag", ["use_inn", "use_lfef", "use_ttt"])
def test_ablation_flags_drop_components(flag):
    full = DemoireNet(small_cfg())
    reduced = DemoireNet(small_cfg(**{flag: False}))
    assert reduced.num_parameters() < full.num_parameters()


def test_three_frame_input(rng):
    net = DemoireNet(small_cfg(input_frames=3))
    out = net(Tensor(rng.uniform(0, 1, (1, 12, 16, 16)).astype(np.float32)))
    assert out.full.shape == (1, 3, 32, 32)


@pytest.mark.parametrize("shape", [(1, 4, 12, 12), (1, 3, 16, 16), (4, 16, 16)])
def test_network_rejects_bad_input(shape):
    net = DemoireNet(small_cfg())
    with pytest.raises((ShapeError, ValueError)):
        net(Tensor(np.zeros(shape, dtype=np.float32)))


def test_config_json_round_trip():
    cfg = NetworkConfig(base_channels=8, use_inn=False)
    assert NetworkConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ValueError):
        NetworkConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        NetworkConfig(image_size=48)


# --- losses ------------------------------------------------------------------------


def _triple(x):
    return TripleOutput(x, ops.bilinear_resize(x, 0.5), ops.bilinear_resize(x, 0.25))


def test_loss_zero_at_target(rng):
    gt = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))
    assert total_loss(_triple(gt), gt).item() == 0.0


def test_loss_weights_with_identity_features(rng):
    gt = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
    pred = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)))
    out = _triple(pred)
    loss = total_loss(out, gt, features=lambda x: [x]).item()
    ref = sum(np.mean(np.abs(p.data - g)) for p, g in
              zip(out.as_tuple(), (gt.data, ops.bilinear_resize(gt, 0.5).data, ops.bilinear_resize(gt, 0.25).data)))
    assert L1_WEIGHT + PERCEPTUAL_WEIGHT == 1.0
    assert loss == pytest.approx(ref, rel=1e-12)


def test_constant_offset_l1_term():
    gt = Tensor(np.zeros((1, 3, 8, 8)))
    pred = _triple(Tensor(np.full((1, 3, 8, 8), 0.1)))
    loss = total_loss(pred, gt, perceptual_weight=0.0).item()
    assert loss / 3 == pytest.approx(0.07, abs=1e-12)


def test_perceptual_surrogate_is_frozen():
    s = PerceptualSurrogate()
    assert s.frozen
    net = DemoireNet(small_cfg())
    assert not any("layers" in n and "surrogate" in n for n, _ in net.named_parameters())


def test_wavelet_zero_and_constant_offset():
    a = Tensor(np.full((1, 3, 8, 8), 0.3))
    assert wavelet_loss(a, a).item() == 0.0
    b = Tensor(np.full((1, 3, 8, 8), 0.3 + 0.05))
    assert wavelet_loss(b, a).item() == pytest.approx(2 * 0.05, abs=1e-12)
    ll, lh, hl, hh = haar_analysis(b - a)
    for band in (lh, hl, hh):
        np.testing.assert_allclose(band.data, 0.0, atol=1e-15)


def test_haar_round_trip(rng):
    x = Tensor(rng.standard_normal((2, 3, 8, 16)).astype(np.float32))
    assert np.max(np.abs(haar_synthesis(*haar_analysis(x)).data - x.data)) < 1e-5


def test_haar_is_orthonormal(rng):
    x = rng.standard_normal((1, 1, 8, 8))
    bands = haar_analysis(Tensor(x))
    assert sum(np.sum(b.data**2) for b in bands) == pytest.approx(np.sum(x**2), rel=1e-12)


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        wavelet_loss(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((1, 3, 4, 4))))
