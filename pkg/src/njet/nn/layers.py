"""Stateful layers and a sequential container built on :mod:`njet.nn.functional`.

Each layer keeps its parameters in ``params`` and the gradients of the
last backward pass in ``grads`` (same keys, same shapes). Parameters are
updated in place by the optimizer.
"""

from __future__ import annotations

import math

import numpy as np

from njet import basis as _basis
from njet import synthesis
from njet.nn import functional as F
from njet.resample import SubsampleRule, downsample, downsample_backward, safe_size


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def config(self) -> dict:
        return {}

    def state(self) -> dict:
        return {k: v for k, v in self.params.items()}


def _glorot(rng, shape, fan_in, fan_out, dtype):
    b = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-b, b, size=shape).astype(dtype)


class NJetConv2d(Layer):
    """Convolution whose filters are alpha-weighted Gaussian derivative bases.

    sigma is stored as ``log_sigma`` (a 0-d array) so it stays positive
    under any update. Filter size follows sigma and is re-derived on
    every forward pass.
    """

    kind = "njet"

    def __init__(self, in_channels, out_channels, order=3, extent_k=2.0, sigma=1.0,
                 rng=None, dtype=np.float32, max_size=_basis.MAX_FILTER_SIZE, method="auto"):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.order = int(order)
        self.extent_k = float(extent_k)
        self.max_size = max_size
        self.method = method
        M = _basis.basis_count(self.order)
        self.params["alphas"] = _glorot(rng, (out_channels, in_channels, M),
                                        in_channels * M, out_channels * M, dtype)
        self.params["bias"] = np.zeros(out_channels, dtype=dtype)
        self.params["log_sigma"] = np.array(math.log(sigma), dtype=np.float64)
        self.zero_grad()
        # pinned size for finite-difference checks across a size jump
        self.size_override = None

    @property
    def sigma(self) -> float:
        return math.exp(float(self.params["log_sigma"]))

    @property
    def filter_size(self) -> int:
        if self.size_override is not None:
            return self.size_override
        return _basis.filter_size(self.sigma, self.extent_k)

    def basis(self) -> _basis.BasisStack:
        spec = _basis.BasisSpec(self.order, self.sigma, self.extent_k)
        return _basis.sample_basis(spec, size=self.size_override, max_size=self.max_size)

    def filters(self) -> synthesis.SynthesizedFilters:
        return synthesis.synthesize(self.params["alphas"], self.basis())

    def forward(self, x, train=True):
        if x.shape[1] != self.params["alphas"].shape[1]:
            raise ValueError(f"layer expects {self.params['alphas'].shape[1]} input channels, "
                             f"got {x.shape[1]}")
        stack = self.basis()
        synth = synthesis.synthesize(self.params["alphas"], stack)
        w = synth.filters.astype(x.dtype)
        out, conv_cache = F.conv2d_forward(x, w, self.params["bias"], "same", self.method)
        self._cache = (stack, synth, conv_cache)
        return out

    def backward(self, dout):
        stack, synth, conv_cache = self._cached()
        dx, dw, db = F.conv2d_backward(dout, conv_cache)
        dw = dw.astype(np.float64)
        self.grads["alphas"] = synthesis.grad_alpha(dw, stack).astype(self.params["alphas"].dtype)
        dsigma = synthesis.grad_sigma(dw, synth)
        self.grads["log_sigma"] = np.array(dsigma * self.sigma)
        self.grads["bias"] = db.astype(self.params["bias"].dtype)
        return dx

    def config(self):
        C_out, C_in, _ = self.params["alphas"].shape
        return {"in_channels": C_in, "out_channels": C_out, "order": self.order,
                "extent_k": self.extent_k}


class Conv2d(Layer):
    """Plain pixel-basis convolution with a fixed odd filter size."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, size=3, rng=None, dtype=np.float32,
                 padding="same", method="auto"):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.padding = padding
        self.method = method
        fan = size * size
        self.params["w"] = _glorot(rng, (out_channels, in_channels, size, size),
                                   in_channels * fan, out_channels * fan, dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=True):
        out, self._cache = F.conv2d_forward(x, self.params["w"], self.params["b"],
                                            self.padding, self.method)
        return out

    def backward(self, dout):
        dx, dw, db = F.conv2d_backward(dout, self._cached())
        self.grads["w"], self.grads["b"] = dw, db
        return dx

    def config(self):
        O, C, s, _ = self.params["w"].shape
        return {"in_channels": C, "out_channels": O, "size": s, "padding": self.padding}


class BatchNorm2d(Layer):
    kind = "batchnorm"

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.zero_grad()

    def forward(self, x, train=True):
        out, self._cache = F.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"], self.running_mean,
            self.running_var, train=train, momentum=self.momentum, eps=self.eps)
        return out

    def backward(self, dout):
        dx, self.grads["gamma"], self.grads["beta"] = F.batchnorm_backward(dout, self._cached())
        return dx

    def config(self):
        return {"channels": self.params["gamma"].size, "momentum": self.momentum, "eps": self.eps}

    def state(self):
        return {**self.params, "running_mean": self.running_mean, "running_var": self.running_var}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=True):
        out, self._cache = F.relu_forward(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._cached())


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, window=2, stride=None):
        super().__init__()
        self.window = int(window)
        self.stride = self.window if stride is None else int(stride)

    def forward(self, x, train=True):
        out, self._cache = F.maxpool_forward(x, self.window, self.stride)
        return out

    def backward(self, dout):
        return F.maxpool_backward(dout, self._cached())

    def config(self):
        return {"window": self.window, "stride": self.stride}


class GlobalAvgPool(Layer):
    kind = "global_avgpool"

    def forward(self, x, train=True):
        out, self._cache = F.global_avgpool_forward(x)
        return out

    def backward(self, dout):
        return F.global_avgpool_backward(dout, self._cached())


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(rng)
        self.params["w"] = _glorot(rng, (in_features, out_features), in_features,
                                   out_features, dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=True):
        out, self._cache = F.dense_forward(x, self.params["w"], self.params["b"])
        return out

    def backward(self, dout):
        dx, self.grads["w"], self.grads["b"] = F.dense_backward(dout, self._cached())
        return dx

    def config(self):
        D, K = self.params["w"].shape
        return {"in_features": D, "out_features": K}


class SafeSubsample(Layer):
    """Area-average a map to s * (1/2)**(sigma/r), sigma taken from ``source``.

    ``source`` is the N-Jet layer that produced the map.
    """

    kind = "safe_subsample"

    def __init__(self, source: NJetConv2d, r=4.0):
        super().__init__()
        self.source = source
        self.rule = SubsampleRule(r)

    def target(self, h, w):
        sigma = self.source.sigma
        return safe_size(h, sigma, self.rule), safe_size(w, sigma, self.rule)

    def forward(self, x, train=True):
        H, W = x.shape[2:]
        th, tw = self.target(H, W)
        self._cache = (H, W)
        if (th, tw) == (H, W):
            return x
        return downsample(x, th, tw)

    def backward(self, dout):
        H, W = self._cached()
        if dout.shape[2:] == (H, W):
            return dout
        return downsample_backward(dout, H, W)

    def config(self):
        return {"r": self.rule.r}


class Sequential:
    """Ordered stack of layers with a single forward and backward pass."""

    def __init__(self, layers, name="model"):
        self.layers = list(layers)
        self.name = name

    def forward(self, x, train=True, upto=None):
        for layer in self.layers[:upto]:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dout, upto=None):
        for layer in reversed(self.layers[:upto]):
            dout = layer.backward(dout)
        return dout

    __call__ = forward

    def named_params(self):
        """Yield ``(key, layer, name)`` for every parameter."""
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield f"{i}.{name}", layer, name

    def njet_layers(self):
        return [l for l in self.layers if isinstance(l, NJetConv2d)]

    @property
    def dtype(self):
        for layer in self.layers:
            for v in layer.params.values():
                if v.ndim:
                    return v.dtype
        return np.dtype(np.float64)
