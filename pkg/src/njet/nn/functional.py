"""Hand-differentiated forward/backward pairs on NCHW arrays.

Every ``*_forward`` returns ``(out, cache)`` and the matching
``*_backward`` takes ``(dout, cache)``. All functions follow the dtype
of their input.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft

# above this many bytes the im2col matrix is built in batch chunks
_IM2COL_BYTES = 64 * 2**20
# filters at least this large go through the FFT path
FFT_MIN_SIZE = 7


def _pad_amount(size: int, padding: str) -> int:
    if padding == "same":
        if size % 2 != 1:
            raise ValueError(f"same padding needs an odd filter size, got {size}")
        return (size - 1) // 2
    if padding == "valid":
        return 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _pick_method(method: str, size: int) -> str:
    if method == "auto":
        return "fft" if size >= FFT_MIN_SIZE else "direct"
    if method not in ("direct", "fft"):
        raise ValueError(f"unknown convolution method {method!r}")
    return method


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _check_conv_shapes(x, w, b):
    if x.ndim != 4:
        raise ValueError(f"input must be [B, C, H, W], got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"filters must be [C_out, C_in, s, s], got shape {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ValueError(f"filters expect {w.shape[1]} input channels, input has {x.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"bias must have shape ({w.shape[0]},), got {b.shape}")


def _im2col(xp, s, Ho, Wo):
    """Columns [C*s*s, B*Ho*Wo] built tap by tap from a channel-major copy."""
    xc = xp.transpose(1, 0, 2, 3)
    C, B = xc.shape[:2]
    cols = np.empty((C, s, s, B, Ho, Wo), dtype=xp.dtype)
    for u in range(s):
        for v in range(s):
            cols[:, u, v] = xc[:, :, u:u + Ho, v:v + Wo]
    return cols.reshape(C * s * s, B * Ho * Wo)


def _chunks(xp, s, Ho, Wo):
    C = xp.shape[1]
    step = max(1, _IM2COL_BYTES // max(Ho * Wo * C * s * s * xp.itemsize, 1))
    return range(0, xp.shape[0], step), step


def _direct_forward(xp, w):
    B = xp.shape[0]
    O, C, s, _ = w.shape
    Ho, Wo = xp.shape[2] - s + 1, xp.shape[3] - s + 1
    wmat = w.reshape(O, -1)
    out = np.empty((B, O, Ho, Wo), dtype=np.result_type(xp, w))
    starts, step = _chunks(xp, s, Ho, Wo)
    for b0 in starts:
        xb = xp[b0:b0 + step]
        res = wmat @ _im2col(xb, s, Ho, Wo)
        out[b0:b0 + step] = res.reshape(O, len(xb), Ho, Wo).transpose(1, 0, 2, 3)
    return out


def _direct_backward(dout, xp, w):
    B, O, Ho, Wo = dout.shape
    _, C, s, _ = w.shape
    wmat = w.reshape(O, -1)
    dw = np.zeros((O, C * s * s), dtype=np.result_type(dout, xp))
    dxp = np.zeros(xp.shape, dtype=np.result_type(dout, w))
    starts, step = _chunks(xp, s, Ho, Wo)
    for b0 in starts:
        xb = xp[b0:b0 + step]
        nb = len(xb)
        g = np.ascontiguousarray(dout[b0:b0 + step].transpose(1, 0, 2, 3)).reshape(O, -1)
        dw += g @ _im2col(xb, s, Ho, Wo).T
        # col2im: scatter each tap of the column gradient back onto the padded input
        dcols = (wmat.T @ g).reshape(C, s, s, nb, Ho, Wo)
        dst = dxp[b0:b0 + step].transpose(1, 0, 2, 3)
        for u in range(s):
            for v in range(s):
                dst[:, :, u:u + Ho, v:v + Wo] += dcols[:, u, v]
    return dxp, dw.reshape(w.shape)


def _fft_shape(xp):
    return (sfft.next_fast_len(xp.shape[2], real=True),
            sfft.next_fast_len(xp.shape[3], real=True))


def _freq_major(a):
    # [n, c, U, V] -> [U*V, n, c]
    n, c = a.shape[:2]
    return np.ascontiguousarray(a.reshape(n, c, -1).transpose(2, 0, 1))


def _spatial_major(a, shape):
    # [U*V, n, c] -> [n, c, U, V]
    return np.ascontiguousarray(a.transpose(1, 2, 0)).reshape(a.shape[1], a.shape[2], *shape)


def _fft_forward(xp, w):
    s = w.shape[-1]
    Hp, Wp = xp.shape[2:]
    L = _fft_shape(xp)
    xf = sfft.rfft2(xp, s=L)
    shape = xf.shape[2:]
    xf = _freq_major(xf)
    kf = sfft.rfft2(w[:, :, ::-1, ::-1], s=L)
    # per-frequency channel mixing as one batched matmul
    yf = _spatial_major(xf @ _freq_major(kf).transpose(0, 2, 1), shape)
    y = sfft.irfft2(yf, s=L)
    # the input spectrum is reused by the backward pass
    return np.ascontiguousarray(y[:, :, s - 1:Hp, s - 1:Wp]), xf


def _fft_backward(dout, xp, w, xf):
    s = w.shape[-1]
    Hp, Wp = xp.shape[2:]
    L = _fft_shape(xp)
    gf = sfft.rfft2(dout, s=L)
    shape = gf.shape[2:]
    gf = _freq_major(gf)
    wf = _freq_major(sfft.rfft2(w, s=L))
    dxp = sfft.irfft2(_spatial_major(gf @ wf, shape), s=L)[:, :, :Hp, :Wp]
    dwf = _spatial_major(gf.conj().transpose(0, 2, 1) @ xf, shape)
    dw = sfft.irfft2(dwf, s=L)[:, :, :s, :s]
    return np.ascontiguousarray(dxp), np.ascontiguousarray(dw)


def conv2d_forward(x, w, b=None, padding="same", method="auto"):
    """Cross-correlation of ``x`` [B, C, H, W] with ``w`` [O, C, s, s] plus bias.

    ``padding='same'`` zero-pads (s - 1) / 2 on every side; ``'valid'``
    pads nothing. ``method`` chooses im2col ("direct"), FFT ("fft") or
    lets the filter size decide ("auto").
    """
    _check_conv_shapes(x, w, b)
    s = w.shape[-1]
    p = _pad_amount(s, padding)
    xp = _pad(x, p)
    if xp.shape[2] < s or xp.shape[3] < s:
        raise ValueError(f"filter of size {s} is larger than the padded input {xp.shape[2:]}")
    how = _pick_method(method, s)
    xf = None
    if how == "fft":
        out, xf = _fft_forward(xp, w)
    else:
        out = _direct_forward(xp, w)
    out = out.astype(x.dtype, copy=False)
    if b is not None:
        out += b.reshape(1, -1, 1, 1).astype(x.dtype, copy=False)
    return out, (x.shape, xp, w, p, how, xf)


def conv2d_backward(dout, cache):
    """Returns ``(dx, dw, db)`` for :func:`conv2d_forward`."""
    x_shape, xp, w, p, how, xf = cache
    B, O = x_shape[0], w.shape[0]
    if dout.shape[:2] != (B, O) or dout.shape[2] != xp.shape[2] - w.shape[2] + 1 \
            or dout.shape[3] != xp.shape[3] - w.shape[3] + 1:
        raise ValueError(f"upstream gradient has shape {dout.shape}, inconsistent with the forward pass")
    if how == "fft":
        dxp, dw = _fft_backward(dout, xp, w, xf)
    else:
        dxp, dw = _direct_backward(dout, xp, w)
    H, W = x_shape[2:]
    dx = dxp[:, :, p:p + H, p:p + W].astype(dout.dtype, copy=False)
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw.astype(w.dtype, copy=False), db


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, x > 0


def relu_backward(dout, cache):
    return dout * cache


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train=True,
                      momentum=0.1, eps=1e-5):
    """Per-channel batch norm over (batch, H, W).

    Running statistics are updated in place in train mode.
    """
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        n = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mean.reshape(1, -1, 1, 1).astype(x.dtype)) * inv_std.reshape(1, -1, 1, 1)
    out = xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)
    return out, (xhat, inv_std, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(1, -1, 1, 1)
    if not train:
        return dxhat * inv_std.reshape(1, -1, 1, 1), dgamma, dbeta
    mean_dxhat = dxhat.mean(axis=(0, 2, 3), keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
    dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std.reshape(1, -1, 1, 1)
    return dx, dgamma, dbeta


def maxpool_forward(x, window, stride=None):
    """Max pooling with a square window; trailing rows/cols that do not fill a window are dropped."""
    stride = window if stride is None else stride
    B, C, H, W = x.shape
    if window > H or window > W:
        raise ValueError(f"pool window {window} is larger than the input {H}x{W}")
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2:4]
    flat = win.reshape(B, C, Ho, Wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, window, stride)


def maxpool_backward(dout, cache):
    x_shape, arg, window, stride = cache
    B, C, Ho, Wo = dout.shape
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dy, dxo = np.divmod(arg, window)
    rows = np.arange(Ho).reshape(1, 1, -1, 1) * stride + dy
    cols = np.arange(Wo).reshape(1, 1, 1, -1) * stride + dxo
    bi = np.arange(B).reshape(-1, 1, 1, 1)
    ci = np.arange(C).reshape(1, -1, 1, 1)
    np.add.at(dx, (bi, ci, rows, cols), dout)
    return dx


def global_avgpool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avgpool_backward(dout, cache):
    B, C, H, W = cache
    return np.broadcast_to((dout / (H * W))[:, :, None, None], cache).copy()


def dense_forward(x, w, b):
    """Affine map of the flattened input; ``w`` is [D, K]."""
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[0]:
        raise ValueError(f"dense layer expects {w.shape[0]} features, got {flat.shape[1]}")
    return flat @ w + b, (x.shape, flat, w)


def dense_backward(dout, cache):
    x_shape, flat, w = cache
    dw = flat.T @ dout
    db = dout.sum(axis=0)
    dx = (dout @ w.T).reshape(x_shape)
    return dx, dw, db


def softmax_xent(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(B), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(B), labels] -= 1
    dlogits /= B
    return float(loss), dlogits.astype(logits.dtype, copy=False)
