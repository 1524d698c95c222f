import math
import zlib

import numpy as np
import pytest

from njet import nn
from njet.basis import BasisSpec, FilterSizeError, sample_basis
from njet.gradcheck import check_layer, numeric_gradient, rel_error
from njet.nn import functional as F


def naive_conv(x, w, b, pad):
    B, C, H, W = x.shape
    O, _, s, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = H + 2 * pad - s + 1, W + 2 * pad - s + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for y in range(Ho):
                for x_ in range(Wo):
                    acc = b[o]
                    for c in range(C):
                        for u in range(s):
                            for v in range(s):
                                acc += w[o, c, u, v] * xp[n, c, y + u, x_ + v]
                    out[n, o, y, x_] = acc
    return out


def test_conv_ones():
    out, _ = F.conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1), "valid")
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 9


@pytest.mark.parametrize("method", ["direct", "fft"])
def test_conv_identity_filter(method):
    x = np.random.default_rng(0).standard_normal((2, 3, 7, 6))
    w = np.zeros((3, 3, 5, 5))
    for c in range(3):
        w[c, c, 2, 2] = 1
    out, _ = F.conv2d_forward(x, w, np.zeros(3), "same", method)
    np.testing.assert_allclose(out, x, atol=1e-12)


@pytest.mark.parametrize("method", ["direct", "fft"])
@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv_matches_naive_oracle(method, padding):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 5, 5))
    b = rng.standard_normal(4)
    out, _ = F.conv2d_forward(x, w, b, padding, method)
    expected = naive_conv(x, w, b, 2 if padding == "same" else 0)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-10)


def test_conv_direct_and_fft_agree_on_large_filters():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 2, 20, 17))
    w = rng.standard_normal((3, 2, 11, 11))
    a, ca = F.conv2d_forward(x, w, None, "same", "direct")
    b, cb = F.conv2d_forward(x, w, None, "same", "fft")
    np.testing.assert_allclose(a, b, atol=1e-10)
    g = rng.standard_normal(a.shape)
    for ga, gb in zip(F.conv2d_backward(g, ca), F.conv2d_backward(g, cb)):
        np.testing.assert_allclose(ga, gb, atol=1e-9)


def test_conv_errors():
    with pytest.raises(ValueError):
        F.conv2d_forward(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(ValueError):
        F.conv2d_forward(np.zeros((1, 1, 3, 3)), np.zeros((1, 1, 5, 5)), padding="valid")
    _, cache = F.conv2d_forward(np.zeros((1, 1, 5, 5)), np.zeros((2, 1, 3, 3)))
    with pytest.raises(ValueError):
        F.conv2d_backward(np.zeros((1, 2, 4, 4)), cache)


def test_conv_backward_zero_and_bias():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 2, 6, 5))
    out, cache = F.conv2d_forward(x, rng.standard_normal((4, 2, 3, 3)), np.zeros(4))
    dx, dw, db = F.conv2d_backward(np.zeros_like(out), cache)
    assert not dx.any() and not dw.any() and not db.any()
    _, _, db = F.conv2d_backward(np.ones_like(out), cache)
    np.testing.assert_allclose(db, 3 * 6 * 5)


LAYER_SHAPES = [(2, 1, 6, 6), (3, 2, 5, 7), (2, 3, 9, 8)]


def _layers(C, rng):
    f64 = np.float64
    return {
        "conv_direct": nn.Conv2d(C, 3, 3, rng=rng, dtype=f64, method="direct"),
        "conv_fft": nn.Conv2d(C, 2, 5, rng=rng, dtype=f64, method="fft"),
        "conv_valid": nn.Conv2d(C, 2, 3, rng=rng, dtype=f64, padding="valid"),
        "batchnorm": nn.BatchNorm2d(C, dtype=f64),
        "relu": nn.ReLU(),
        "maxpool": nn.MaxPool2d(2),
        "maxpool_overlap": nn.MaxPool2d(3, 1),
        "global_avgpool": nn.GlobalAvgPool(),
        "dense": None,
    }


@pytest.mark.parametrize("shape", LAYER_SHAPES)
@pytest.mark.parametrize("name", ["conv_direct", "conv_fft", "conv_valid", "batchnorm", "relu",
                                  "maxpool", "maxpool_overlap", "global_avgpool", "dense"])
def test_layer_gradients(shape, name):
    rng = np.random.default_rng(zlib.crc32(f"{shape}{name}".encode()))
    x = rng.standard_normal(shape)
    layer = _layers(shape[1], rng)[name]
    if name == "dense":
        layer = nn.Dense(int(np.prod(shape[1:])), 4, rng=rng, dtype=np.float64)
    for r in check_layer(name, layer, x, rng):
        assert r.rel_error < 1e-5, r


@pytest.mark.parametrize("shape", LAYER_SHAPES)
def test_batchnorm_eval_gradients(shape):
    rng = np.random.default_rng(7)
    bn = nn.BatchNorm2d(shape[1], dtype=np.float64)
    bn.running_mean[:] = rng.standard_normal(shape[1])
    bn.running_var[:] = rng.uniform(0.5, 2, shape[1])
    for r in check_layer("bn_eval", bn, rng.standard_normal(shape), rng, train=False):
        assert r.rel_error < 1e-5, r


@pytest.mark.parametrize("shape", LAYER_SHAPES)
def test_softmax_xent_gradient(shape):
    rng = np.random.default_rng(shape[0])
    logits = rng.standard_normal((shape[0], 5))
    labels = rng.integers(0, 5, size=shape[0])
    _, d = F.softmax_xent(logits, labels)
    num = numeric_gradient(lambda: F.softmax_xent(logits, labels)[0], logits)
    assert rel_error(d, num) < 1e-5


def test_relu_values():
    out, _ = F.relu_forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out, [0, 0, 2])


def test_softmax_uniform_logits():
    loss, _ = F.softmax_xent(np.zeros((4, 10)), np.array([0, 3, 9, 5]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    assert loss == pytest.approx(2.302585, abs=1e-6)


def test_softmax_label_range():
    with pytest.raises(ValueError):
        F.softmax_xent(np.zeros((2, 3)), np.array([0, 3]))


def test_batchnorm_normalizes_per_channel():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.5, size=(8, 4, 5, 5))
    out, _ = F.batchnorm_forward(x, np.ones(4), np.zeros(4), np.zeros(4), np.ones(4))
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, rtol=1e-5)


def test_batchnorm_running_stats_used_in_eval():
    bn = nn.BatchNorm2d(2, dtype=np.float64)
    bn.running_mean[:] = [1.0, -1.0]
    bn.running_var[:] = [4.0, 1.0]
    out = bn.forward(np.ones((1, 2, 1, 1)), train=False)
    np.testing.assert_allclose(out.ravel(), [0.0, 2.0 / math.sqrt(1 + 1e-5)], rtol=1e-12)


def test_maxpool_window_too_large():
    with pytest.raises(ValueError):
        F.maxpool_forward(np.zeros((1, 1, 2, 2)), 3)


def test_backward_before_forward():
    with pytest.raises(RuntimeError):
        nn.NJetConv2d(1, 1).backward(np.zeros((1, 1, 3, 3)))


# N-Jet layer

def _njet(C_in, C_out, order, sigma, k=2.0, seed=0):
    return nn.NJetConv2d(C_in, C_out, order, k, sigma, rng=seed, dtype=np.float64)


def test_njet_filter_size():
    assert _njet(1, 1, 2, 1.0).filter_size == 5


def test_njet_order_zero_is_gaussian_blur():
    rng = np.random.default_rng(0)
    x = rng.random((1, 2, 16, 16))
    layer = _njet(2, 2, 0, 1.2, k=4.0)
    layer.params["alphas"][:] = np.eye(2)[:, :, None]
    out = layer.forward(x)
    g = sample_basis(BasisSpec(0, 1.2, 4.0)).filters[0]
    for c in range(2):
        ref = naive_conv(x[:, c:c + 1], g[None, None], np.zeros(1), (g.shape[0] - 1) // 2)
        np.testing.assert_allclose(out[:, c:c + 1], ref, atol=1e-12)


@pytest.mark.parametrize("sigma,k", [(0.8, 3.0), (1.5, 3.0), (2.0, 4.0)])
def test_njet_order_zero_preserves_mean(sigma, k):
    rng = np.random.default_rng(1)
    x = rng.random((1, 1, 64, 64))
    layer = _njet(1, 1, 0, sigma, k)
    layer.params["alphas"][:] = 1.0
    out = layer.forward(x)
    # zero padding leaks mass at the border; compare away from it
    h = (layer.filter_size - 1) // 2
    inner = (Ellipsis, slice(h, -h), slice(h, -h))
    assert out[inner].mean() == pytest.approx(x[inner].mean(), rel=0.02)


@pytest.mark.parametrize("seed,order,sigma", [(0, 1, 0.9), (1, 2, 1.4), (2, 3, 1.1)])
def test_njet_gradients_with_pinned_size(seed, order, sigma):
    rng = np.random.default_rng(seed)
    layer = _njet(2, 3, order, sigma, seed=seed)
    layer.size_override = layer.filter_size
    for r in check_layer("njet", layer, rng.standard_normal((2, 2, 7, 7)), rng):
        assert r.rel_error < 1e-5, r


def test_njet_end_to_end_log_sigma():
    rng = np.random.default_rng(9)
    layer = _njet(1, 2, 2, 1.3)
    x = rng.standard_normal((2, 1, 9, 9))
    size = layer.filter_size
    out = layer.forward(x)
    layer.backward(np.ones_like(out))
    analytic = float(layer.grads["log_sigma"])

    def loss():
        return float(layer.forward(x).sum())

    layer.size_override = size
    num = numeric_gradient(loss, layer.params["log_sigma"])
    assert analytic == pytest.approx(float(num), rel=1e-4)


def test_njet_log_sigma_chain_rule():
    from njet.synthesis import grad_sigma
    rng = np.random.default_rng(2)
    layer = _njet(2, 2, 3, 1.7)
    x = rng.standard_normal((1, 2, 8, 8))
    up = rng.standard_normal((1, 2, 8, 8))
    layer.forward(x)
    layer.backward(up)
    _, synth, conv_cache = layer._cache
    _, dw, _ = F.conv2d_backward(up, conv_cache)
    assert float(layer.grads["log_sigma"]) == pytest.approx(layer.sigma * grad_sigma(dw, synth),
                                                             rel=1e-12)


def test_njet_zero_upstream():
    layer = _njet(1, 2, 2, 1.0)
    out = layer.forward(np.random.default_rng(0).standard_normal((1, 1, 6, 6)))
    layer.backward(np.zeros_like(out))
    assert all(not np.any(g) for g in layer.grads.values())


def test_njet_single_pixel_upstream_is_local():
    # dalpha[o, c, m] = <basis m, input patch around the pixel>
    rng = np.random.default_rng(4)
    layer = _njet(2, 1, 2, 1.0)
    x = rng.standard_normal((1, 2, 11, 11))
    out = layer.forward(x)
    up = np.zeros_like(out)
    y0, x0 = 5, 4
    up[0, 0, y0, x0] = 1.0
    layer.backward(up)
    st_ = sample_basis(BasisSpec(2, 1.0, 2.0))
    h = (st_.size - 1) // 2
    expected = np.zeros((1, 2, st_.count))
    for c in range(2):
        patch = x[0, c, y0 - h:y0 + h + 1, x0 - h:x0 + h + 1]
        for m in range(st_.count):
            expected[0, c, m] = np.sum(patch * st_.filters[m])
    np.testing.assert_allclose(layer.grads["alphas"], expected, atol=1e-12)


def test_njet_channel_mismatch():
    with pytest.raises(ValueError):
        _njet(2, 1, 1, 1.0).forward(np.zeros((1, 3, 5, 5)))


def test_njet_size_cap_propagates():
    layer = _njet(1, 1, 1, 40.0)
    with pytest.raises(FilterSizeError):
        layer.forward(np.zeros((1, 1, 8, 8)))


def test_njet_init_scheme():
    layer = nn.NJetConv2d(4, 8, order=3, rng=0, dtype=np.float64)
    M = 10
    bound = math.sqrt(6 / (4 * M + 8 * M))
    assert np.abs(layer.params["alphas"]).max() <= bound
    assert not layer.params["bias"].any()
    assert layer.sigma == 1.0


def _tiny_model(seed):
    from njet import models
    return models.toy(12, classes=3, scale=1.0, filters=4, order=2, seed=seed, dtype=np.float64)


def test_determinism_three_steps():
    from njet.train import TrainConfig, _model_params, sgd_step

    def run():
        rng = np.random.default_rng(0)
        x = rng.random((8, 1, 12, 12))
        y = rng.integers(0, 3, 8)
        model = _tiny_model(1)
        vel = {}
        losses = []
        for _ in range(3):
            loss, d = F.softmax_xent(model.forward(x), y)
            model.backward(d)
            p, g, k = _model_params(model)
            sgd_step(p, g, vel, TrainConfig(learning_rate=0.1), k)
            losses.append(loss)
        return losses

    a, b = run(), run()
    assert [x.hex() for x in a] == [x.hex() for x in b]


def test_checkpoint_roundtrip(tmp_path):
    from njet import models
    model = models.conv_stack(2, classes=3, channels=4, conv="njet", subsample_r=4.0, seed=2,
                              dtype=np.float64)
    model.layers[0].params["log_sigma"][...] = 0.37
    model.layers[1].running_mean[:] = [0.1, 0.2, 0.3, 0.4]
    x = np.random.default_rng(0).random((2, 1, 10, 10))
    ref = model.forward(x, train=False)
    nn.save(model, tmp_path / "m.json", meta={"arch": "two_layer"})
    loaded, meta = nn.load(tmp_path / "m.json")
    assert meta == {"arch": "two_layer"}
    np.testing.assert_array_equal(loaded.forward(x, train=False), ref)
    assert (tmp_path / "m.json").read_text().startswith('{"magic": "NJET1"')


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"magic": "NOPE", "layers": []}')
    with pytest.raises(nn.CheckpointError):
        nn.load(p)
