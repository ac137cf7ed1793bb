import numpy as np
import pytest

from htdemucs import numerics as nx
from htdemucs.dsp import AudioClip
from htdemucs.errors import ConfigError, FormatError, LengthError
from htdemucs.trainer import l1_loss
from htdemucs.transformer import TransformerConfig
from htdemucs.unet import ModelConfig, build_model, count_params, model_forward

SR = 44100


def toy_config(channels=4, dim=16, depth=1, **kw):
    return ModelConfig(channels=channels, transformer=TransformerConfig(dim=dim, heads=4, depth=depth), **kw)


def closed_form_params(c0, dim, depth, n_src=4, ch=2, ffn=4):
    widths = [c0 * 2 ** i for i in range(4)]

    def enc(cin, c):
        return cin * c * 8 + c + c * 2 * c + 2 * c

    def dec(w, cout, bias=True):
        return w * 2 * w * 3 + 2 * w + w * cout * 8 + (cout if bias else 0)

    def branch(c_in, c_final):
        total, prev = 0, c_in
        for w in widths:
            total += enc(prev, w)
            prev = w
        outs = [c_final] + widths[:-1]
        for i in range(4):
            total += dec(widths[i], outs[i], bias=i > 0)
        return total

    d = dim
    layer = 2 * d + 4 * (d * d + d) + d + 2 * d + (d * ffn * d + ffn * d) + (ffn * d * d + d) + d + 2 * d
    n_cross = depth // 2
    transformer = 2 * (depth * layer + n_cross * 2 * d)
    proj = 0 if widths[-1] == d else 2 * (widths[-1] * d + d) + 2 * (d * widths[-1] + widths[-1])
    return branch(ch, n_src * ch) + branch(2 * ch, 2 * n_src * ch) + transformer + proj


@pytest.mark.parametrize("c0,dim,depth", [(4, 16, 1), (4, 32, 2), (8, 64, 3)])
def test_toy_parameter_count_closed_form(c0, dim, depth):
    assert count_params(build_model(toy_config(c0, dim, depth))) == closed_form_params(c0, dim, depth)


def test_default_parameter_count_near_anchor():
    n = count_params(build_model(ModelConfig()))
    assert abs(n - 26.9e6) / 26.9e6 <= 0.15


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(sources=())
    with pytest.raises(ConfigError):
        ModelConfig(sources=("a", "a"))
    with pytest.raises(ConfigError):
        ModelConfig(audio_channels=3)
    with pytest.raises(ConfigError):
        ModelConfig(n_fft=1024, n_layers_outer=5)


def test_skip_geometry_checked_at_build():
    with pytest.raises(ConfigError):
        build_model(toy_config(kernel=12))


def test_config_round_trip():
    cfg = toy_config()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("seconds", [0.5, 1.3, 2.7])
def test_output_shape(seconds):
    model = build_model(toy_config())
    length = int(seconds * SR)
    x = np.random.default_rng(0).standard_normal((2, length)).astype(np.float32) * 0.1
    with nx.no_grad():
        out = model_forward(model, AudioClip(x))
    assert out.shape == (4, 2, length)
    assert np.all(np.isfinite(out.data))


def test_batched_forward_matches_single():
    model = build_model(toy_config())
    x = np.random.default_rng(1).standard_normal((2, 2, SR // 2)).astype(np.float32)
    with nx.no_grad():
        both = model.forward(x).data
        first = model.forward(x[0]).data
    np.testing.assert_allclose(both[0], first, atol=1e-5)


def test_zero_input_gives_zero_output():
    model = build_model(toy_config())
    with nx.no_grad():
        out = model.forward(np.zeros((2, SR), np.float32))
    assert np.abs(out.data).max() < 1e-2


def test_wrong_rate_and_short_input():
    model = build_model(toy_config())
    with pytest.raises(FormatError):
        model_forward(model, AudioClip(np.zeros((2, SR), np.float32), 48000))
    with pytest.raises(LengthError):
        model.forward(np.zeros((2, 1000), np.float32))
    with pytest.raises(FormatError):
        model.forward(np.zeros((1, SR), np.float32))


def test_doubling_amplitude_stays_finite():
    model = build_model(toy_config())
    x = np.random.default_rng(2).standard_normal((2, SR // 2)).astype(np.float32)
    with nx.no_grad():
        a = model.forward(x).data
        b = model.forward(2 * x).data
    assert np.all(np.isfinite(a)) and np.all(np.isfinite(b))


def test_gradient_reaches_both_branches():
    model = build_model(toy_config())
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, SR // 2)).astype(np.float32) * 0.1
    target = rng.standard_normal((1, 4, 2, SR // 2)).astype(np.float32) * 0.1
    l1_loss(model.forward(x), target).backward()
    for name in ("t_encoder.0.conv.weight", "f_encoder.0.conv.weight",
                 "crosstransformer.temporal.0.attn.q.weight", "crosstransformer.spectral.0.attn.q.weight"):
        p = dict(model.named_parameters())[name]
        assert p.grad is not None and np.abs(p.grad).max() > 0, name


def test_end_to_end_finite_differences():
    model = build_model(toy_config(), seed=4)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 2, SR)) * 0.1
    target = rng.standard_normal((1, 4, 2, SR)) * 0.1

    def loss():
        return l1_loss(model.forward(x), target)

    model.zero_grad()
    loss().backward()
    params = model.named_parameters()
    params = list(params)
    analytic = {n: p.grad.copy() for n, p in params}
    model.astype(np.float64)
    h = 1e-3
    picks = rng.choice(len(params), 8, replace=False)
    try:
        for i in picks:
            name, p = params[i]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            old = p.data[idx]
            p.data[idx] = old + h
            up = float(loss().data)
            p.data[idx] = old - h
            down = float(loss().data)
            p.data[idx] = old
            a, n = float(analytic[name][idx]), (up - down) / (2 * h)
            assert abs(a - n) <= 2e-2 * max(abs(a), abs(n)) or abs(a - n) <= 1e-7, (name, a, n)
    finally:
        model.astype(np.float32)


def test_sparse_model_runs():
    from htdemucs.sparse_attention import LshConfig
    model = build_model(toy_config(depth=2, sparse=LshConfig(rounds=8)))
    with nx.no_grad():
        out = model.forward(np.random.default_rng(5).standard_normal((2, SR // 2)).astype(np.float32))
    assert out.shape == (4, 2, SR // 2) and np.all(np.isfinite(out.data))
