#!/usr/bin/env python3
"""
Tests for the network layers, gradients, streaming inference, Adam and the model file format
"""

import sys
import tempfile
from pathlib import Path

import pytest
import torch

from errors import ConfigurationError, ModelFormatError, NumericalError, ShapeError
from feature_extractor import FC_DIM, FO_DIM
from network import (
    AdamOptimizer, FCLayer, GRUCell, GRULayer, LookaheadConv1d, ModelConfig, PercepNetPlus,
    TFGRUBlock, gru_parameter_count, load_model, model_backward, save_model,
    tfgru_parameter_count,
)
from testing_support import collect, run_suite

TINY = dict(fo_enc_dim=6, fc_enc_dim=5, conv_channels=8, gru_hidden=7, tfgru_band_dim=1,
            snr_hidden=4, num_bands=34)


def _features(batch, frames, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    return (torch.randn(batch, frames, FO_DIM, generator=gen, dtype=dtype),
            torch.randn(batch, frames, FC_DIM, generator=gen, dtype=dtype))


def _zero_parameters(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def test_preset_parameter_counts():
    desk, full = ModelConfig.desk(), ModelConfig.full()
    assert desk.parameter_count() == 943359
    assert full.parameter_count() == 8483571
    assert abs(full.parameter_count() - 8.5e6) / 8.5e6 < 0.05
    assert PercepNetPlus(desk).parameter_count() == desk.parameter_count()


def test_tfgru_matches_gru_size():
    for cfg in (ModelConfig.desk(), ModelConfig.full()):
        tf = tfgru_parameter_count(cfg.conv_channels, cfg.tfgru_band_dim, cfg.tfgru_hidden)
        plain = gru_parameter_count(cfg.conv_channels, cfg.gru_hidden)
        assert abs(tf - plain) / plain < 0.02


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(conv_kernel=5)
    with pytest.raises(ConfigurationError):
        ModelConfig(conv_kernel=1)
    with pytest.raises(ConfigurationError):
        ModelConfig(gru_hidden=0)
    with pytest.raises(ConfigurationError):
        ModelConfig.from_dict({'nonsense': 1})
    cfg = ModelConfig.full(seed=3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert ModelConfig.desk().conv_lookaheads == (2, 1)


def test_fc_layer():
    layer = FCLayer(4, 3, 'linear')
    _zero_parameters(layer)
    x = torch.randn(2, 4)
    assert not layer(x).any()
    with torch.no_grad():
        identity = FCLayer(3, 3, 'linear')
        identity.linear.weight.copy_(torch.eye(3))
        identity.linear.bias.zero_()
    x = torch.randn(5, 3)
    torch.testing.assert_close(identity(x), x)
    out = FCLayer(3, 8, 'sigmoid')(100 * torch.randn(10, 3))
    assert ((out >= 0) & (out <= 1)).all()
    with pytest.raises(ShapeError):
        layer(torch.randn(2, 5))
    with pytest.raises(ConfigurationError):
        FCLayer(2, 2, 'relu6')


def test_lookahead_conv_passthrough():
    conv = LookaheadConv1d(3, 3, kernel=3, lookahead=0)
    with torch.no_grad():
        conv.conv.weight.zero_()
        conv.conv.bias.zero_()
        conv.conv.weight[:, :, -1] = torch.eye(3)
    x = 0.5 * torch.rand(1, 6, 3)
    torch.testing.assert_close(conv(x), torch.tanh(x))
    _zero_parameters(conv)
    assert not conv(x).any()
    with pytest.raises(ConfigurationError):
        LookaheadConv1d(3, 3, kernel=3, lookahead=3)


def test_gru_cell_closed_forms():
    cell = GRUCell(3, 4)
    _zero_parameters(cell)
    h = torch.rand(2, 4)
    torch.testing.assert_close(cell(torch.randn(2, 3), h), 0.5 * h)
    assert not cell(torch.zeros(2, 3), torch.zeros(2, 4)).any()

    cell = GRUCell(3, 4)
    h = 2 * torch.rand(50, 4) - 1
    out = cell(10 * torch.randn(50, 3), h)
    assert (out.abs() <= 1).all()


def test_gru_layer_carries_state():
    layer = GRULayer(3, 5)
    x = torch.randn(2, 6, 3)
    full, h_full = layer(x)
    first, h_first = layer(x[:, :4])
    second, h_second = layer(x[:, 4:], h_first)
    torch.testing.assert_close(torch.cat([first, second], 1), full)
    torch.testing.assert_close(h_second, h_full)
    assert full.shape == (2, 6, 5)


def test_tfgru_block():
    block = TFGRUBlock(8, band_dim=2, hidden_size=5, num_bands=34)
    out, h = block(torch.randn(2, 3, 8))
    assert out.shape == (2, 3, 10) and h.shape == (2, 5)
    _zero_parameters(block)
    out, _ = block(torch.randn(2, 3, 8))
    assert not out.any()
    with pytest.raises(ConfigurationError):
        TFGRUBlock(8, band_dim=2, hidden_size=5, num_bands=34, projection_size=70)


def test_outputs_in_unit_interval():
    model = PercepNetPlus(ModelConfig(**TINY))
    f_o, f_c = _features(2, 10)
    output, _ = model(10 * f_o, 10 * f_c)
    assert output.gain_real.shape == (2, 10, 34)
    assert output.snr.shape == (2, 10)
    for tensor in output:
        assert ((tensor > 0) & (tensor < 1)).all()


def test_outputs_are_deterministic():
    f_o, f_c = _features(1, 8)
    a, _ = PercepNetPlus(ModelConfig(**TINY, seed=5))(f_o, f_c)
    b, _ = PercepNetPlus(ModelConfig(**TINY, seed=5))(f_o, f_c)
    for x, y in zip(a, b):
        assert torch.equal(x, y)


def test_ablation_switches():
    f_o, f_c = _features(1, 5)
    no_snr = PercepNetPlus(ModelConfig(**TINY, snr_head=False))
    output, _ = no_snr(f_o, f_c)
    assert torch.equal(output.snr, torch.ones(1, 5))
    assert no_snr.parameter_count() == no_snr.config.parameter_count()

    for switches in (dict(tf_gru=False), dict(complex_features=False)):
        model = PercepNetPlus(ModelConfig(**TINY, **switches))
        assert model.parameter_count() == model.config.parameter_count()
        output, _ = model(f_o, f_c)
        assert output.gain_imag.shape == (1, 5, 34)

    # without complex features f_c has no influence
    model = PercepNetPlus(ModelConfig(**TINY, complex_features=False))
    a, _ = model(f_o, f_c)
    b, _ = model(f_o, torch.zeros_like(f_c))
    assert torch.equal(a.gain_real, b.gain_real)


def test_forward_rejects_bad_shapes():
    model = PercepNetPlus(ModelConfig(**TINY))
    f_o, f_c = _features(1, 4)
    with pytest.raises(ShapeError):
        model(f_o[..., :-1], f_c)
    with pytest.raises(ShapeError):
        model(f_o, f_c[:, :3])


def test_streaming_matches_offline():
    model = PercepNetPlus(ModelConfig(**TINY)).double()
    f_o, f_c = _features(1, 12, dtype=torch.float64)
    offline, _ = model(f_o, f_c)

    state = model.initial_state()
    streamed = []
    for t in range(12):
        out = model.step(f_o[:, t], f_c[:, t], state)
        assert (out is None) == (t < 3)
        if out is not None:
            streamed.append(out)
    for _ in range(3):
        streamed.append(model.step(None, None, state))
    for name in ('gain_real', 'gain_imag', 'strength', 'snr'):
        stacked = torch.stack([getattr(o, name) for o in streamed], dim=1)
        torch.testing.assert_close(stacked, getattr(offline, name), rtol=1e-10, atol=1e-12)


def test_step_requires_state():
    model = PercepNetPlus(ModelConfig(**TINY))
    f_o, f_c = _features(1, 1)
    with pytest.raises(ValueError):
        model.step(f_o[:, 0], f_c[:, 0], None)


def test_lookahead_is_three_frames():
    model = PercepNetPlus(ModelConfig(**TINY, seed=1)).double()
    f_o, f_c = _features(1, 16, seed=2, dtype=torch.float64)
    base, _ = model(f_o, f_c)
    t = 6
    for offset, should_change in ((4, False), (3, True)):
        f_o2, f_c2 = f_o.clone(), f_c.clone()
        f_o2[:, t + offset] += 5.0
        f_c2[:, t + offset] += 5.0
        bumped, _ = model(f_o2, f_c2)
        changed = not torch.equal(bumped.gain_real[:, t], base.gain_real[:, t])
        assert changed == should_change
        assert torch.equal(bumped.gain_real[:, :t], base.gain_real[:, :t])


def test_layer_gradients():
    for seed in range(10):
        torch.manual_seed(seed)
        x = torch.randn(2, 4, 3, dtype=torch.float64, requires_grad=True)
        fc = FCLayer(3, 2, 'tanh').double()
        conv = LookaheadConv1d(3, 2, kernel=3, lookahead=1).double()
        gru = GRULayer(3, 2).double()
        block = TFGRUBlock(3, band_dim=1, hidden_size=2, num_bands=3).double()
        assert torch.autograd.gradcheck(lambda v: fc(v), (x,))
        assert torch.autograd.gradcheck(lambda v: conv(v), (x,))
        assert torch.autograd.gradcheck(lambda v: gru(v)[0], (x,))
        assert torch.autograd.gradcheck(lambda v: block(v)[0], (x,))


def test_model_parameter_gradients():
    model = PercepNetPlus(ModelConfig(**TINY)).double()
    f_o, f_c = _features(1, 4, dtype=torch.float64)
    names = ['gain_real_head.linear.weight', 'conv1.conv.bias', 'block1.tgru.cell.h2h.weight',
             'snr_fc.linear.weight', 'fo_enc.linear.bias']
    params = dict(model.named_parameters())

    for name in names:
        target = params[name]
        original = target.detach().clone()

        def loss_of(values):
            with torch.no_grad():
                target.copy_(values)
            output, _ = model(f_o, f_c)
            return sum(t.sum() for t in output).item()

        output, _ = model(f_o, f_c)
        grads = model_backward(model, list(output), [torch.ones_like(t) for t in output])
        analytic = grads[name].flatten()
        for index in range(min(5, original.numel())):
            bumped = original.clone().flatten()
            bumped[index] += 1e-5
            up = loss_of(bumped.view_as(original))
            bumped[index] -= 2e-5
            down = loss_of(bumped.view_as(original))
            numeric = (up - down) / 2e-5
            assert numeric == pytest.approx(analytic[index].item(), rel=1e-4, abs=1e-7)
        with torch.no_grad():
            target.copy_(original)


def test_model_backward_edge_cases():
    model = PercepNetPlus(ModelConfig(**TINY))
    f_o, f_c = _features(1, 3)
    output, _ = model(f_o, f_c)
    grads = model_backward(model, list(output), [torch.zeros_like(t) for t in output])
    assert all(not g.any() for g in grads.values())

    output, _ = model(f_o, f_c)
    grads = model_backward(model, [output.snr], [torch.ones_like(output.snr)])
    assert not grads['gain_real_head.linear.weight'].any()
    assert grads['snr_fc.linear.weight'].any()

    with torch.no_grad():
        detached, _ = model(f_o, f_c)
    with pytest.raises(ValueError):
        model_backward(model, [detached.snr], [torch.ones_like(detached.snr)])


def test_adam_zero_gradients_keep_parameters():
    p = torch.nn.Parameter(torch.randn(5))
    before = p.detach().clone()
    opt = AdamOptimizer([p], lr=0.1)
    p.grad = torch.zeros(5)
    opt.step()
    torch.testing.assert_close(p.detach(), before)


def test_adam_moves_against_gradient():
    p = torch.nn.Parameter(torch.zeros(4))
    opt = AdamOptimizer([p], lr=0.01)
    previous = p.detach().clone()
    for _ in range(20):
        p.grad = torch.tensor([1.0, -1.0, 2.0, -0.5])
        opt.step()
        current = p.detach().clone()
        step = current - previous
        assert (step[[0, 2]] < 0).all() and (step[[1, 3]] > 0).all()
        assert (step.abs() <= 0.01 * 1.01).all()
        previous = current


def test_adam_steps_stay_within_learning_rate_bound():
    lr, betas = 1e-3, (0.9, 0.999)
    gen = torch.Generator().manual_seed(11)
    p = torch.nn.Parameter(torch.zeros(64, dtype=torch.float64))
    opt = AdamOptimizer([p], lr=lr, betas=betas)
    bound = lr * (1 - betas[0]) / (1 - betas[1]) ** 0.5
    previous = p.detach().clone()
    for step in range(200):
        p.grad = torch.randn(64, generator=gen, dtype=torch.float64)
        opt.step()
        moved = (p.detach() - previous).abs()
        # the first step is lr * |g| / (|g| + eps)
        assert (moved <= (lr if step == 0 else bound) * (1 + 1e-9)).all(), step
        previous = p.detach().clone()


def test_adam_rejects_nan():
    p = torch.nn.Parameter(torch.zeros(3))
    opt = AdamOptimizer([p])
    p.grad = torch.tensor([0.0, float('nan'), 0.0])
    with pytest.raises(NumericalError):
        opt.step()
    assert not p.detach().any()


def test_save_and_load_model():
    model = PercepNetPlus(ModelConfig(**TINY, seed=9, tf_gru=False))
    with tempfile.TemporaryDirectory() as tmp:
        path = save_model(model, Path(tmp) / 'm.pcpn')
        loaded = load_model(path)
        assert loaded.config == model.config
        for (name, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
            assert torch.equal(a, b), name

        data = bytearray(path.read_bytes())
        data[20] ^= 0xFF
        corrupt = Path(tmp) / 'corrupt.pcpn'
        corrupt.write_bytes(bytes(data))
        with pytest.raises(ModelFormatError):
            load_model(corrupt)

        corrupt.write_bytes(b'WRONG' + path.read_bytes()[5:])
        with pytest.raises(ModelFormatError):
            load_model(corrupt)

        with pytest.raises(ModelFormatError):
            load_model(Path(tmp) / 'missing.pcpn')


if __name__ == "__main__":
    sys.exit(0 if run_suite("Network", collect(globals())) else 1)
