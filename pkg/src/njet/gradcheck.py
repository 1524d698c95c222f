"""Central finite-difference checks for every layer and for filter synthesis.

Each check builds a random float64 case, defines the scalar loss
L = sum(R * layer(x)) for a fixed random projection R, and compares the
analytic gradients of all inputs and parameters with central
differences. Relative error is ||a - n|| / max(||a||, ||n||).
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from njet import basis as _basis
from njet import synthesis
from njet.nn import layers as L


class CheckResult(NamedTuple):
    name: str
    shape: tuple
    target: str
    rel_error: float


def rel_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h=None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place.

    The step adapts to the entry magnitude: h_i = 1e-5 * max(1, |x_i|).
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        step = h if h is not None else 1e-5 * max(1.0, abs(float(orig)))
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        g[i] = (fp - fm) / (2 * step)
    return grad


def check_layer(name, layer: L.Layer, x: np.ndarray, rng, train=True) -> list[CheckResult]:
    out = layer.forward(x, train=train)
    proj = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(proj * layer.forward(x, train=train)))

    layer.forward(x, train=train)
    dx = layer.backward(proj.astype(out.dtype))
    analytic = {k: np.array(v, dtype=np.float64) for k, v in layer.grads.items()}
    results = [CheckResult(name, x.shape, "input", rel_error(dx, numeric_gradient(loss, x)))]
    for key, p in layer.params.items():
        num = numeric_gradient(loss, p)
        results.append(CheckResult(name, x.shape, key, rel_error(analytic[key], num)))
    return results


def check_loss(name, logits, labels) -> CheckResult:
    from njet.nn.functional import softmax_xent
    _, d = softmax_xent(logits, labels)
    num = numeric_gradient(lambda: softmax_xent(logits, labels)[0], logits)
    return CheckResult(name, logits.shape, "logits", rel_error(d, num))


def check_synthesis(seed, order, sigma, c_out, c_in, extent_k=2.0) -> list[CheckResult]:
    """dF/dalpha and dF/dsigma contracted with a random upstream, grid size held fixed."""
    rng = np.random.default_rng(seed)
    spec = _basis.BasisSpec(order, sigma, extent_k)
    stack = _basis.sample_basis(spec)
    size = stack.size
    alphas = rng.standard_normal((c_out, c_in, stack.count))
    up = rng.standard_normal((c_out, c_in, size, size))
    synth = synthesis.synthesize(alphas, stack)

    def loss_alpha():
        return float(np.sum(up * synthesis.synthesize(alphas, stack).filters))

    sig = np.array(sigma, dtype=np.float64)

    def loss_sigma():
        st = _basis.sample_basis(_basis.BasisSpec(order, float(sig), extent_k), size=size)
        return float(np.sum(up * synthesis.synthesize(alphas, st).filters))

    ga = synthesis.grad_alpha(up, stack)
    gs = synthesis.grad_sigma(up, synth)
    shape = (c_out, c_in, stack.count)
    return [
        CheckResult(f"synthesis[N={order}]", shape, "alphas",
                    rel_error(ga, numeric_gradient(loss_alpha, alphas))),
        CheckResult(f"synthesis[N={order}]", shape, "sigma",
                    rel_error(gs, numeric_gradient(loss_sigma, sig))),
    ]


def _pin(layer):
    # keep the grid size constant across the sigma stencil
    layer.size_override = layer.filter_size
    return layer


def run_all(seed=0) -> list[CheckResult]:
    """Three random shapes for every layer type plus synthesis and the loss."""
    rng = np.random.default_rng(seed)
    f64 = np.float64
    res: list[CheckResult] = []
    shapes = [(2, 1, 6, 6), (3, 2, 5, 7), (2, 3, 8, 8)]
    for i, (B, C, H, W) in enumerate(shapes):
        x = rng.standard_normal((B, C, H, W))
        O = 2 + i
        res += check_layer("conv_direct", L.Conv2d(C, O, 3, rng=rng, dtype=f64, method="direct"), x, rng)
        res += check_layer("conv_fft", L.Conv2d(C, O, 5, rng=rng, dtype=f64, method="fft"), x, rng)
        res += check_layer("conv_valid", L.Conv2d(C, O, 3, rng=rng, dtype=f64, padding="valid"), x, rng)
        sigma = (0.8, 1.3, 1.7)[i]
        nj = _pin(L.NJetConv2d(C, O, order=i + 1, sigma=sigma, rng=rng, dtype=f64))
        res += check_layer("njet", nj, x, rng)
        bn = L.BatchNorm2d(C, dtype=f64)
        bn.params["gamma"][:] = rng.uniform(0.5, 1.5, C)
        bn.params["beta"][:] = rng.standard_normal(C)
        res += check_layer("batchnorm_train", bn, x, rng, train=True)
        bn.running_mean[:] = rng.standard_normal(C)
        bn.running_var[:] = rng.uniform(0.5, 2.0, C)
        res += check_layer("batchnorm_eval", bn, x, rng, train=False)
        res += check_layer("relu", L.ReLU(), x, rng)
        res += check_layer("maxpool", L.MaxPool2d(2, 2), x, rng)
        res += check_layer("maxpool_overlap", L.MaxPool2d(3, 1), x, rng)
        res += check_layer("global_avgpool", L.GlobalAvgPool(), x, rng)
        res += check_layer("dense", L.Dense(C * H * W, O, rng=rng, dtype=f64), x, rng)
        src = L.NJetConv2d(C, C, sigma=4.0 * (i + 1), dtype=f64)
        res += check_layer("safe_subsample", L.SafeSubsample(src, r=4.0), x, rng)
        res.append(check_loss("softmax_xent", rng.standard_normal((B, 4 + i)),
                              rng.integers(0, 4 + i, size=B)))
        res += check_synthesis(seed * 31 + i, i + 1, sigma, O, C)
    return res


def summarize(results) -> dict[str, float]:
    """Max relative error per layer name."""
    out: dict[str, float] = {}
    for r in results:
        out[r.name] = max(out.get(r.name, 0.0), r.rel_error)
    return out
