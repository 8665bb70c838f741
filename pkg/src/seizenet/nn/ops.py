"""Neural-network kernels with hand-written backward rules.

Shapes follow the conventions: signals are (channels, length) or
(batch, channels, length); sequences are (seq, dim) or (batch, seq, dim).
Unbatched inputs are accepted everywhere and returned unbatched.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ..errors import ConfigError, ShapeError
from ..rand import Rng
from .tensor import Tensor

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias, with weight shaped (in_features, out_features)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"linear input width {x.shape[-1]} != weight rows {weight.shape[0]}"
        )
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x), with the Gaussian CDF via erf."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out_data = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data**2)
        x.accumulate_grad(g * (cdf + x.data * pdf))

    return Tensor.from_op(out_data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        x.accumulate_grad((g - dot) * y)

    return Tensor.from_op(y, (x,), backward)


def dropout(x: Tensor, p: float, rng: Rng | None, training: bool) -> Tensor:
    """Inverted dropout: scale kept activations by 1/(1-p) at train time."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.uniform(size=x.shape) >= p) / (1.0 - p)

    def backward(g):
        x.accumulate_grad(g * mask)

    return Tensor.from_op(x.data * mask, (x,), backward)


def _conv_shape_check(x, weight, stride, padding, groups):
    n, c_in, length = x.shape
    c_out, c_in_g, k = weight.shape
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if groups < 1 or c_in % groups or c_out % groups:
        raise ShapeError(
            f"groups={groups} must divide in={c_in} and out={c_out} channels"
        )
    if c_in_g != c_in // groups:
        raise ShapeError(
            f"weight expects {c_in_g} input channels per group, "
            f"input provides {c_in // groups}"
        )
    padded = length + 2 * padding
    if k > padded:
        raise ShapeError(f"kernel {k} longer than padded input {padded}")
    return n, c_in, length, c_out, k


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Strided cross-correlation over the last axis.

    ``x`` is (C_in, L) or (N, C_in, L); ``weight`` is (C_out, C_in/groups, K).
    Output length is floor((L + 2*padding - K)/stride) + 1.
    """
    squeeze = x.ndim == 2
    xb = x.reshape(1, *x.shape) if squeeze else x
    n, c_in, length, c_out, k = _conv_shape_check(
        xb.data, weight.data, stride, padding, groups
    )
    g = groups
    xp = (
        np.pad(xb.data, ((0, 0), (0, 0), (padding, padding)))
        if padding
        else xb.data
    )
    # (N, C_in, L_out, K) windows flattened to a grouped im2col matmul,
    # (g, N*L_out, C_in/g*K) @ (g, C_in/g*K, C_out/g), which stays in BLAS
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    l_out = win.shape[2]
    cols = np.ascontiguousarray(
        win.reshape(n, g, c_in // g, l_out, k).transpose(1, 0, 3, 2, 4)
    ).reshape(g, n * l_out, (c_in // g) * k)
    wmat = weight.data.reshape(g, c_out // g, (c_in // g) * k)
    y = cols @ wmat.transpose(0, 2, 1)
    y = y.reshape(g, n, l_out, c_out // g).transpose(1, 0, 3, 2)
    y = np.ascontiguousarray(y.reshape(n, c_out, l_out))
    if bias is not None:
        y = y + bias.data[:, None]

    def backward(gy):
        gy = gy.reshape(n, c_out, l_out)
        gy_mat = np.ascontiguousarray(
            gy.reshape(n, g, c_out // g, l_out).transpose(1, 0, 3, 2)
        ).reshape(g, n * l_out, c_out // g)
        if weight.requires_grad:
            gw = gy_mat.transpose(0, 2, 1) @ cols
            weight.accumulate_grad(gw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gy.sum(axis=(0, 2)))
        if xb.requires_grad:
            gcols = gy_mat @ wmat
            gwin = gcols.reshape(g, n, l_out, c_in // g, k).transpose(
                1, 0, 3, 2, 4
            )
            gwin = gwin.reshape(n, c_in, l_out, k)
            gxp = np.zeros_like(xp)
            starts = np.arange(l_out) * stride
            for kk in range(k):  # indices unique per kk, so += is safe
                gxp[:, :, starts + kk] += gwin[:, :, :, kk]
            gx = gxp[:, :, padding : padding + length] if padding else gxp
            xb.accumulate_grad(gx)

    out = Tensor.from_op(y, (xb, weight) + ((bias,) if bias is not None else ()), backward)
    return out.reshape(c_out, l_out) if squeeze else out


def group_norm(
    x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tensor:
    """Per-group normalization over (channels/groups, length) with affine."""
    squeeze = x.ndim == 2
    xb = x.reshape(1, *x.shape) if squeeze else x
    n, c, length = xb.shape
    if c % groups:
        raise ShapeError(f"{c} channels not divisible by {groups} groups")
    xg = xb.data.reshape(n, groups, c // groups, length)
    mu = xg.mean(axis=(2, 3), keepdims=True)
    var = xg.var(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    z = (xg - mu) * inv_std
    zc = z.reshape(n, c, length)
    y = zc * gamma.data[:, None] + beta.data[:, None]

    def backward(gy):
        gy = gy.reshape(n, c, length)
        if gamma.requires_grad:
            gamma.accumulate_grad((gy * zc).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta.accumulate_grad(gy.sum(axis=(0, 2)))
        if xb.requires_grad:
            ghat = (gy * gamma.data[:, None]).reshape(n, groups, c // groups, length)
            ghat_mean = ghat.mean(axis=(2, 3), keepdims=True)
            ghat_z_mean = (ghat * z).mean(axis=(2, 3), keepdims=True)
            gx = (ghat - ghat_mean - z * ghat_z_mean) * inv_std
            xb.accumulate_grad(gx.reshape(n, c, length))

    out = Tensor.from_op(y, (xb, gamma, beta), backward)
    return out.reshape(c, length) if squeeze else out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learned affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"affine shapes {gamma.shape}/{beta.shape} != ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    z = (x.data - mu) * inv_std
    y = z * gamma.data + beta.data

    def backward(gy):
        if gamma.requires_grad:
            reduce_axes = tuple(range(gy.ndim - 1))
            gamma.accumulate_grad((gy * z).sum(axis=reduce_axes))
        if beta.requires_grad:
            reduce_axes = tuple(range(gy.ndim - 1))
            beta.accumulate_grad(gy.sum(axis=reduce_axes))
        if x.requires_grad:
            ghat = gy * gamma.data
            ghat_mean = ghat.mean(axis=-1, keepdims=True)
            ghat_z_mean = (ghat * z).mean(axis=-1, keepdims=True)
            x.accumulate_grad((ghat - ghat_mean - z * ghat_z_mean) * inv_std)

    return Tensor.from_op(y, (x, gamma, beta), backward)


def multi_head_attention(
    x: Tensor,
    heads: int,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
) -> Tensor:
    """Bias-free multi-head self-attention over (S, D) or (N, S, D)."""
    d = x.shape[-1]
    if d % heads:
        raise ShapeError(f"model dim {d} not divisible by {heads} heads")
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)):
        if w.shape != (d, d):
            raise ShapeError(f"{name} must be ({d}, {d}), got {w.shape}")
    squeeze = x.ndim == 2
    xb = x.reshape(1, *x.shape) if squeeze else x
    n, s, _ = xb.shape
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(n, s, heads, dh).transpose(0, 2, 1, 3)

    q = split(xb @ wq)
    k = split(xb @ wk)
    v = split(xb @ wv)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(n, s, d)
    out = ctx @ wo
    return out.reshape(s, d) if squeeze else out


def kaiming_uniform(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
