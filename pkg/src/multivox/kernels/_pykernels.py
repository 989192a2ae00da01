"""Pure-numpy recurrent kernels; reference semantics for the compiled backend.

Layouts are time-major. ``gx`` holds the input projections (bias included) for
every step, so only the recurrent matmul runs inside the time loop.

GRU (reset applied before the candidate matmul)::

    r = sigmoid(gx_r + h U_r)        z = sigmoid(gx_z + h U_z)
    n = tanh(gx_n + (r * h) U_n)     h' = (1 - z) * n + z * h

LSTM, gate order i, f, g, o::

    c' = f * c + i * g               h' = o * tanh(c')
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(gx, h0, U):
    T, B, H3 = gx.shape
    H = H3 // 3
    hs = np.empty((T + 1, B, H))
    hs[0] = h0
    r = np.empty((T, B, H))
    z = np.empty((T, B, H))
    n = np.empty((T, B, H))
    U_rz, U_n = U[:, : 2 * H], U[:, 2 * H:]
    for t in range(T):
        h = hs[t]
        rz = _sigmoid(gx[t, :, : 2 * H] + h @ U_rz)
        r[t] = rz[:, :H]
        z[t] = rz[:, H:]
        n[t] = np.tanh(gx[t, :, 2 * H:] + (r[t] * h) @ U_n)
        hs[t + 1] = (1.0 - z[t]) * n[t] + z[t] * h
    return hs, r, z, n


def gru_backward(dhs, hs, r, z, n, U):
    T, B, H = dhs.shape
    U_rz, U_n = U[:, : 2 * H], U[:, 2 * H:]
    dgx = np.empty((T, B, 3 * H))
    dU = np.zeros_like(U)
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + dhs[t]
        h, rt, zt, nt = hs[t], r[t], z[t], n[t]
        dan = dh * (1.0 - zt) * (1.0 - nt * nt)
        dz = dh * (h - nt)
        dh_prev = dh * zt
        dU[:, 2 * H:] += (rt * h).T @ dan
        drh = dan @ U_n.T
        dh_prev += drh * rt
        da = np.concatenate([drh * h * rt * (1.0 - rt), dz * zt * (1.0 - zt)], axis=1)
        dU[:, : 2 * H] += h.T @ da
        dh_prev += da @ U_rz.T
        dgx[t, :, : 2 * H] = da
        dgx[t, :, 2 * H:] = dan
        dh = dh_prev
    return dgx, dh, dU


def lstm_forward(gx, h0, c0, U):
    T, B, H4 = gx.shape
    H = H4 // 4
    hs = np.empty((T + 1, B, H))
    cs = np.empty((T + 1, B, H))
    acts = np.empty((T, B, 4 * H))
    hs[0] = h0
    cs[0] = c0
    for t in range(T):
        a = gx[t] + hs[t] @ U
        acts[t] = _sigmoid(a)
        acts[t, :, 2 * H: 3 * H] = np.tanh(a[:, 2 * H: 3 * H])
        i, f, g, o = (acts[t, :, k * H: (k + 1) * H] for k in range(4))
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
    return hs, cs, acts


def lstm_backward(dhs, hs, cs, acts, U, dc_last=None):
    """``dc_last`` is the upstream gradient of the final cell state, if any."""
    T, B, H = dhs.shape
    dgx = np.empty((T, B, 4 * H))
    dU = np.zeros_like(U)
    dh = np.zeros((B, H))
    dc = np.zeros((B, H)) if dc_last is None else np.array(dc_last, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        dh = dh + dhs[t]
        i, f, g, o = (acts[t, :, k * H: (k + 1) * H] for k in range(4))
        tc = np.tanh(cs[t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        da = dgx[t]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H: 2 * H] = dc * cs[t] * f * (1.0 - f)
        da[:, 2 * H: 3 * H] = dc * i * (1.0 - g * g)
        da[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dU += hs[t].T @ da
        dh = da @ U.T
        dc = dc * f
    return dgx, dh, dc, dU


def wavernn_generate(cond_gx, emb_gx, U, W1, b1, W2, b2, uniforms, start_class):
    """Free-running autoregressive sampling.

    ``cond_gx`` (T, 3H) is the conditioning share of the GRU input projection plus
    bias; ``emb_gx`` (Q, 3H) the previous-class share. ``uniforms`` (T,) selects
    inverse-CDF sampling; ``None`` selects argmax.
    """
    T = cond_gx.shape[0]
    H = U.shape[0]
    U_rz, U_n = U[:, : 2 * H], U[:, 2 * H:]
    h = np.zeros(H)
    prev = int(start_class)
    out = np.empty(T, dtype=np.int64)
    last = W2.shape[1] - 1
    for t in range(T):
        gx = cond_gx[t] + emb_gx[prev]
        rz = _sigmoid(gx[: 2 * H] + h @ U_rz)
        r, z = rz[:H], rz[H:]
        nv = np.tanh(gx[2 * H:] + (r * h) @ U_n)
        h = (1.0 - z) * nv + z * h
        logits = np.maximum(h @ W1 + b1, 0.0) @ W2 + b2
        if uniforms is None:
            prev = int(np.argmax(logits))
        else:
            cdf = np.cumsum(np.exp(logits - logits.max()))
            prev = min(int(np.searchsorted(cdf, uniforms[t] * cdf[-1], side="right")), last)
        out[t] = prev
    return out
