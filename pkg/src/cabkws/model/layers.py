"""Forward/backward pairs for every layer in the network.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache and returns the input gradient
followed by parameter gradients. Feature maps use (batch, time, freq,
channel) layout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def conv2d_forward(x, w, b, stride):
    """2-D convolution with zero "same" padding of ``k // 2`` on each side.

    x: (B, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,).
    Output is (B, (H - 1) // stride + 1, (W - 1) // stride + 1, Cout).
    """
    kh, kw, cin, cout = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    bsz, ho, wo = win.shape[:3]
    # (B, Ho, Wo, C, kh, kw) -> rows ordered (kh, kw, C) to match w
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(bsz * ho * wo, kh * kw * cin)
    out = cols @ w.reshape(-1, cout) + b
    return out.reshape(bsz, ho, wo, cout), (cols, x.shape, stride)


def conv2d_backward(dout, cache, w, need_dx=True):
    cols, x_shape, stride = cache
    kh, kw, cin, cout = w.shape
    bsz, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(bsz, ho, wo, kh, kw, cin)
    _, h, wd, _ = x_shape
    ph, pw = kh // 2, kw // 2
    dxp = np.zeros((bsz, h + 2 * ph, wd + 2 * pw, cin), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                dcols[:, :, :, i, j]
            )
    return dxp[:, ph : ph + h, pw : pw + wd], dw, db


def group_norm_forward(x, gamma, beta, groups, eps):
    """Normalise each sample over (time, freq, channels-in-group)."""
    bsz, h, wd, c = x.shape
    xg = x.reshape(bsz, h, wd, groups, c // groups)
    mu = xg.mean(axis=(1, 2, 4), keepdims=True)
    var = xg.var(axis=(1, 2, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    return xhat * gamma + beta, (xhat, inv, groups)


def group_norm_backward(dout, cache, gamma):
    xhat, inv, groups = cache
    bsz, h, wd, c = dout.shape
    dgamma = (dout * xhat).sum(axis=(0, 1, 2))
    dbeta = dout.sum(axis=(0, 1, 2))
    g_shape = (bsz, h, wd, groups, c // groups)
    dxhat = (dout * gamma).reshape(g_shape)
    xh = xhat.reshape(g_shape)
    axes = (1, 2, 4)
    dx = inv * (
        dxhat - dxhat.mean(axis=axes, keepdims=True) - xh * (dxhat * xh).mean(axis=axes, keepdims=True)
    )
    return dx.reshape(dout.shape), dgamma, dbeta


def soft_pool_forward(x, w, b, group):
    """Attention soft-pooling over non-overlapping groups of ``group`` frames.

    x: (B, T, F, C); w: (F, C) per-channel scorer; b: (C,).
    Frame score ``alpha[t, c] = x[t, :, c] . w[:, c] + b[c]``; within each
    group the weights are softmax(alpha) and the pooled frame is the weighted
    sum. A short final group simply has fewer members.
    """
    bsz, t, f, c = x.shape
    p = -(-t // group)
    pad = p * group - t
    alpha = np.einsum("btfc,fc->btc", x, w) + b
    if pad:
        x = np.concatenate([x, np.zeros((bsz, pad, f, c), dtype=x.dtype)], axis=1)
        alpha = np.concatenate([alpha, np.full((bsz, pad, c), -np.inf, dtype=x.dtype)], axis=1)
    a = alpha.reshape(bsz, p, group, c)
    a = a - a.max(axis=2, keepdims=True)
    e = np.exp(a)
    beta = e / e.sum(axis=2, keepdims=True)
    xg = x.reshape(bsz, p, group, f, c)
    out = np.einsum("bpqc,bpqfc->bpfc", beta, xg)
    return out, (xg, beta, t)


def soft_pool_backward(dout, cache, w):
    xg, beta, t = cache
    bsz, p, group, f, c = xg.shape
    dbeta = np.einsum("bpfc,bpqfc->bpqc", dout, xg)
    dx = beta[:, :, :, None, :] * dout[:, :, None, :, :]
    dalpha = beta * (dbeta - (beta * dbeta).sum(axis=2, keepdims=True))
    dx = dx.reshape(bsz, p * group, f, c)[:, :t]
    xs = xg.reshape(bsz, p * group, f, c)[:, :t]
    dalpha = dalpha.reshape(bsz, p * group, c)[:, :t]
    dw = np.einsum("btc,btfc->fc", dalpha, xs)
    db = dalpha.sum(axis=(0, 1))
    dx = dx + dalpha[:, :, None, :] * w
    return dx, dw, db


def soft_pool_weights(x, w, b, group):
    """The softmax weights beta, shape (B, P, group, C); padded slots are 0."""
    return soft_pool_forward(x, w, b, group)[1][1]


def layer_norm_forward(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv)


def layer_norm_backward(dout, cache, gamma):
    xhat, inv = cache
    lead = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=lead)
    dbeta = dout.sum(axis=lead)
    dxhat = dout * gamma
    dx = inv * (
        dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def matmul_last(x, w):
    """``x @ w`` over the last axis, as one 2-D GEMM (much faster than batched 3-D)."""
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[1])


def linear_forward(x, w, b):
    return matmul_last(x, w) + b, x


def linear_backward(dout, x, w, need_dx=True):
    lead = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = lead.T @ d2
    db = d2.sum(axis=0)
    dx = (d2 @ w.T).reshape(x.shape) if need_dx else None
    return dx, dw, db


def softmax(s, axis=-1):
    s = s - s.max(axis=axis, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=axis, keepdims=True)


def attention_forward(x, w_qkv, b_qkv, w_o, b_o, heads):
    """Multi-head scaled dot-product self-attention over x: (B, P, D)."""
    bsz, p, d = x.shape
    dh = d // heads
    qkv = matmul_last(x, w_qkv) + b_qkv
    qkv = qkv.reshape(bsz, p, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / float(np.sqrt(dh))
    attn = softmax((q @ k.transpose(0, 1, 3, 2)) * scale, axis=-1)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(bsz, p, d)
    out = matmul_last(ctx, w_o) + b_o
    return out, (x, q, k, v, attn, ctx, scale)


def attention_backward(dout, cache, w_qkv, w_o):
    x, q, k, v, attn, ctx, scale = cache
    bsz, heads, p, dh = q.shape
    d = heads * dh
    dctx, dw_o, db_o = linear_backward(dout, ctx, w_o)
    dctx = dctx.reshape(bsz, p, heads, dh).transpose(0, 2, 1, 3)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(bsz, p, 3 * d)
    dx, dw_qkv, db_qkv = linear_backward(dqkv, x, w_qkv)
    return dx, dw_qkv, db_qkv, dw_o, db_o


def sinusoidal_encoding(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2, dtype=np.float64) / dim))
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates[: dim // 2])
    return pe.astype(dtype)
