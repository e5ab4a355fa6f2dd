"""Forward/backward pairs for the few layers the encoder needs.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns input gradients
followed by parameter gradients.  Arrays carry a leading batch axis; all
arithmetic is float64.
"""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w):
    d = w.shape[0]
    dx = dy @ w.T
    dw = x.reshape(-1, d).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def layernorm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def layernorm_backward(dy, cache, g):
    xhat, inv = cache
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    d = dy.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    return dx, dg, db


def gelu_forward(u):
    """tanh-approximated GELU."""
    t = np.tanh(_GELU_C * (u + 0.044715 * u ** 3))
    return 0.5 * u * (1.0 + t), (u, t)


def gelu_backward(dy, cache):
    u, t = cache
    dt = _GELU_C * (1.0 + 3 * 0.044715 * u * u) * (1.0 - t * t)
    return dy * (0.5 * (1.0 + t) + 0.5 * u * dt)


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dp, p, axis=-1):
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


# --- shifted-window plumbing -------------------------------------------------

def to_windows(x, grid, win):
    """``(B, grid*grid, D)`` -> ``(B * nW, win*win, D)``, windows row-major."""
    bsz, _, d = x.shape
    n = grid // win
    x = x.reshape(bsz, n, win, n, win, d).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(bsz * n * n, win * win, d)


def from_windows(xw, bsz, grid, win):
    n = grid // win
    d = xw.shape[-1]
    x = xw.reshape(bsz, n, n, win, win, d).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(bsz, grid * grid, d)


def roll_grid(x, grid, shift):
    if shift == 0:
        return x
    bsz, _, d = x.shape
    g = x.reshape(bsz, grid, grid, d)
    return np.roll(g, (shift, shift), axis=(1, 2)).reshape(bsz, grid * grid, d)


def shift_mask(grid, win, shift):
    """Additive ``(nW, n, n)`` mask that stops rolled-in tokens attending across seams."""
    labels = np.zeros((grid, grid), dtype=np.int64)
    bounds = (slice(0, grid - win), slice(grid - win, grid - shift), slice(grid - shift, grid))
    k = 0
    for rs in bounds:
        for cs in bounds:
            labels[rs, cs] = k
            k += 1
    lw = to_windows(labels.reshape(1, grid * grid, 1), grid, win)[..., 0]
    same = lw[:, :, None] == lw[:, None, :]
    return np.where(same, 0.0, -np.inf)


def window_attention_forward(x, p, heads, grid, win, shift, mask):
    """Multi-head self-attention restricted to ``win x win`` token windows.

    ``p`` holds ``qkv_w, qkv_b, proj_w, proj_b``.  With ``shift > 0`` the
    grid is cyclically rolled by ``-shift`` first and ``mask`` blocks
    attention between tokens that were not neighbours before the roll.
    """
    bsz, _, d = x.shape
    dh = d // heads
    xr = roll_grid(x, grid, -shift)
    xw = to_windows(xr, grid, win)
    m, n, _ = xw.shape
    qkv = xw @ p["qkv_w"] + p["qkv_b"]
    qkv = qkv.reshape(m, n, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / math.sqrt(dh)
    s = (q @ k.transpose(0, 1, 3, 2)) * scale
    if mask is not None:
        nw = mask.shape[0]
        s = (s.reshape(bsz, nw, heads, n, n) + mask[None, :, None]).reshape(m, heads, n, n)
    a = softmax(s)
    ctx = (a @ v).transpose(0, 2, 1, 3).reshape(m, n, d)
    out = ctx @ p["proj_w"] + p["proj_b"]
    y = roll_grid(from_windows(out, bsz, grid, win), grid, shift)
    return y, (xw, q, k, v, a, ctx)


def window_attention_backward(dy, cache, p, heads, grid, win, shift):
    xw, q, k, v, a, ctx = cache
    m, n, d = xw.shape
    bsz = dy.shape[0]
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    dout = to_windows(roll_grid(dy, grid, -shift), grid, win)
    dctx, dproj_w, dproj_b = linear_backward(dout, ctx, p["proj_w"])
    dctx = dctx.reshape(m, n, heads, dh).transpose(0, 2, 1, 3)
    da = dctx @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ dctx
    ds = softmax_backward(da, a) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(m, n, 3 * d)
    dxw, dqkv_w, dqkv_b = linear_backward(dqkv, xw, p["qkv_w"])
    dx = roll_grid(from_windows(dxw, bsz, grid, win), grid, shift)
    return dx, {"qkv_w": dqkv_w, "qkv_b": dqkv_b, "proj_w": dproj_w, "proj_b": dproj_b}
