"""Differentiable primitives.

Each primitive computes its forward value with numpy and, when a tape is active
and any input requires grad, records a closure that maps the output gradient to
input gradients.
"""

import numpy as np

from .. import kernels
from ..errors import NonFiniteValue, ShapeMismatch, TargetOutOfRange
from .tensor import Tensor, active_tape, as_tensor


def _check_finite(data, name):
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{name} produced non-finite values")


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _make(name, data, inputs, grad_fn):
    """Wrap ``data``; ``grad_fn(g)`` returns one gradient (or None) per input."""
    _check_finite(data, name)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True

        def backward():
            if out.grad is None:
                return
            for t, g in zip(inputs, grad_fn(out.grad)):
                if g is not None:
                    _accum(t, g)

        tape.record(name, backward)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{name}: cannot broadcast {a.shape} with {b.shape}") from None


# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, c):
    a = as_tensor(a)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def sum(a, axis=None):  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def grad(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", out, (a,), grad)


def mean(a, axis=None):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / count)


# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def grad(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", a.data @ b.data, (a, b), grad)


def affine(x, W, b=None):
    """x[..., in] @ W[in, out] + b[out]."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeMismatch(f"affine: input {x.shape} vs weight {W.shape}")
    inputs = (x, W) if b is None else (x, W, as_tensor(b))
    if b is not None and inputs[2].shape != (W.shape[1],):
        raise ShapeMismatch(f"affine: bias {inputs[2].shape} vs weight {W.shape}")
    out = x.data @ W.data
    if b is not None:
        out = out + inputs[2].data

    def grad(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        grads = [g @ W.data.T, x2.T @ g2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _make("affine", out, inputs, grad)


# activations


def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x):
    x = as_tensor(x)
    on = x.data > 0
    return _make("relu", np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def dropout(x, p, rng, training=True):
    """Inverted dropout; identity when not training or p == 0."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def softmax(x, axis=-1):
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return _make("softmax", y, (x,),
                 lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),))


def _targets(targets, n, k, name):
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != n:
        raise ShapeMismatch(f"{name}: {n} rows but {t.shape[0]} targets")
    if np.any(t < 0) or np.any(t >= k):
        raise TargetOutOfRange(f"{name}: targets must lie in [0, {k})")
    return t


# losses (all return a mean over rows)


def softmax_cross_entropy(logits, targets):
    """Mean of -log softmax(logits)[target] over rows; logits (..., K)."""
    logits = as_tensor(logits)
    k = logits.shape[-1]
    z = logits.data.reshape(-1, k)
    n = z.shape[0]
    t = _targets(targets, n, k, "softmax_cross_entropy")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(log_norm - shifted[rows, t])

    def grad(g):
        p = np.exp(shifted - log_norm[:, None])
        p[rows, t] -= 1.0
        return ((g / n) * p.reshape(logits.shape),)

    return _make("softmax_cross_entropy", np.asarray(loss), (logits,), grad)


def categorical_nll(probs, targets):
    """Mean of -log p[target] for rows of probabilities."""
    probs = as_tensor(probs)
    k = probs.shape[-1]
    p = probs.data.reshape(-1, k)
    n = p.shape[0]
    t = _targets(targets, n, k, "categorical_nll")
    rows = np.arange(n)
    picked = p[rows, t]
    with np.errstate(divide="ignore"):
        loss = np.mean(-np.log(picked))

    def grad(g):
        gp = np.zeros_like(p)
        gp[rows, t] = -g / (n * picked)
        return (gp.reshape(probs.shape),)

    return _make("categorical_nll", np.asarray(loss), (probs,), grad)


def bce_with_logits(logits, targets):
    logits = as_tensor(logits)
    y = np.broadcast_to(np.asarray(targets, dtype=np.float64), logits.shape)
    x = logits.data
    loss = np.mean(np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x))))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _make("bce_with_logits", np.asarray(loss), (logits,),
                 lambda g: (g * (sig - y) / x.size,))


def l1_loss(pred, target):
    """Mean absolute error; the subgradient at ties is 0."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"l1_loss: {pred.shape} vs {target.shape}")
    d = pred.data - target.data
    s = np.sign(d) / d.size
    return _make("l1_loss", np.asarray(np.mean(np.abs(d))), (pred, target),
                 lambda g: (g * s, -g * s))


def masked_l1_loss(pred, target, mask):
    """Mean absolute error over entries where ``mask`` (broadcast to pred) is set.

    An all-zero mask gives 0.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"masked_l1_loss: {pred.shape} vs {target.shape}")
    try:
        m = np.broadcast_to(np.asarray(mask, dtype=np.float64), pred.shape)
    except ValueError:
        raise ShapeMismatch(f"masked_l1_loss: mask {np.shape(mask)} vs {pred.shape}") from None
    count = m.sum()
    d = pred.data - target.data
    if count == 0:
        return _make("masked_l1_loss", np.asarray(0.0), (pred, target), lambda g: (None, None))
    s = np.sign(d) * m / count
    return _make("masked_l1_loss", np.asarray(np.sum(np.abs(d) * m) / count), (pred, target),
                 lambda g: (g * s, -g * s))


# sequence layers (batch-major: B x T x C)


def conv1d(x, W, b=None):
    """Same-padded 1-D convolution. x (B, T, Cin), W (k, Cin, Cout)."""
    x, W = as_tensor(x), as_tensor(W)
    if x.ndim != 3 or W.ndim != 3 or W.shape[1] != x.shape[2]:
        raise ShapeMismatch(f"conv1d: input {x.shape} vs kernel {W.shape}")
    k, cin, cout = W.shape
    B, T, _ = x.shape
    left = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (left, k - 1 - left), (0, 0)))
    cols = np.stack([xp[:, j: j + T] for j in range(k)], axis=2).reshape(B, T, k * cin)
    Wr = W.data.reshape(k * cin, cout)
    out = cols @ Wr
    inputs = (x, W)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        inputs = (x, W, b)

    def grad(g):
        g2 = g.reshape(-1, cout)
        gW = (cols.reshape(-1, k * cin).T @ g2).reshape(W.shape)
        gcols = (g @ Wr.T).reshape(B, T, k, cin)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j: j + T] += gcols[:, :, j]
        grads = [gxp[:, left: left + T], gW]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _make("conv1d", out, inputs, grad)


def maxpool1d(x):
    """Width-2, stride-1 max pool along time, length preserving (last frame passes through)."""
    x = as_tensor(x)
    nxt = np.concatenate([x.data[:, 1:], x.data[:, -1:]], axis=1)
    first = x.data >= nxt

    def grad(g):
        gx = g * first
        gx[:, 1:] += (g * ~first)[:, :-1]
        return (gx,)

    return _make("maxpool1d", np.where(first, x.data, nxt), (x,), grad)


def _cell_shapes(x, h, Wx, U, b, gates, name):
    H = h.shape[-1]
    if (Wx.ndim != 2 or Wx.shape != (x.shape[-1], gates * H) or U.shape != (H, gates * H)
            or b.shape != (gates * H,) or x.shape[0] != h.shape[0]):
        raise ShapeMismatch(f"{name}: x {x.shape}, h {h.shape}, Wx {Wx.shape}, U {U.shape}, b {b.shape}")


def gru_cell(x, h, Wx, U, b):
    """One GRU step, reset gate applied before the candidate matmul."""
    x, h, Wx, U, b = map(as_tensor, (x, h, Wx, U, b))
    _cell_shapes(x, h, Wx, U, b, 3, "gru_cell")
    gx = (x.data @ Wx.data + b.data)[None]
    hs, r, z, n = kernels.gru_forward(gx, np.ascontiguousarray(h.data), U.data)

    def grad(g):
        dgx, dh, dU = kernels.gru_backward(np.ascontiguousarray(g[None]), hs, r, z, n, U.data)
        dgx = dgx[0]
        return dgx @ Wx.data.T, dh, x.data.T @ dgx, dU, dgx.sum(axis=0)

    return _make("gru_cell", hs[1], (x, h, Wx, U, b), grad)


def lstm_cell(x, h, c, Wx, U, b):
    """One LSTM step (gates i, f, g, o). Returns (h', c')."""
    x, h, c, Wx, U, b = map(as_tensor, (x, h, c, Wx, U, b))
    _cell_shapes(x, h, Wx, U, b, 4, "lstm_cell")
    gx = (x.data @ Wx.data + b.data)[None]
    hs, cs, acts = kernels.lstm_forward(gx, np.ascontiguousarray(h.data),
                                        np.ascontiguousarray(c.data), U.data)
    _check_finite(hs, "lstm_cell")
    h_out, c_out = Tensor(hs[1]), Tensor(cs[1])
    inputs = (x, h, c, Wx, U, b)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        h_out.requires_grad = c_out.requires_grad = True

        def backward():
            if h_out.grad is None and c_out.grad is None:
                return
            gh = np.zeros_like(hs[1]) if h_out.grad is None else h_out.grad
            dgx, dh, dc, dU = kernels.lstm_backward(np.ascontiguousarray(gh[None]), hs, cs, acts,
                                                    U.data, c_out.grad)
            dgx = dgx[0]
            for t, gt in zip(inputs, (dgx @ Wx.data.T, dh, dc, x.data.T @ dgx, dU, dgx.sum(axis=0))):
                _accum(t, gt)

        tape.record("lstm_cell", backward)
    return h_out, c_out


def _time_major(a, reverse):
    a = np.swapaxes(a, 0, 1)
    if reverse:
        a = a[::-1]
    return np.ascontiguousarray(a)


def _batch_major(a, reverse):
    if reverse:
        a = a[::-1]
    return np.ascontiguousarray(np.swapaxes(a, 0, 1))


def gru_sequence(x, Wx, U, b, h0=None, reverse=False):
    """Run a GRU over x (B, T, in); returns all hidden states (B, T, H)."""
    x, Wx, U, b = map(as_tensor, (x, Wx, U, b))
    H = U.shape[0]
    if x.ndim != 3 or Wx.shape != (x.shape[2], 3 * H) or U.shape != (H, 3 * H) or b.shape != (3 * H,):
        raise ShapeMismatch(f"gru_sequence: x {x.shape}, Wx {Wx.shape}, U {U.shape}, b {b.shape}")
    B = x.shape[0]
    h0 = as_tensor(np.zeros((B, H)) if h0 is None else h0)
    gx = _time_major(x.data @ Wx.data + b.data, reverse)
    hs, r, z, n = kernels.gru_forward(gx, np.ascontiguousarray(h0.data), U.data)

    def grad(g):
        dgx, dh0, dU = kernels.gru_backward(_time_major(g, reverse), hs, r, z, n, U.data)
        dgx = _batch_major(dgx, reverse)
        g2 = dgx.reshape(-1, 3 * H)
        return (dgx @ Wx.data.T, x.data.reshape(-1, x.shape[2]).T @ g2, dU, g2.sum(axis=0), dh0)

    return _make("gru_sequence", _batch_major(hs[1:], reverse), (x, Wx, U, b, h0), grad)


def lstm_sequence(x, Wx, U, b, reverse=False):
    """Run an LSTM over x (B, T, in) from zero state; returns hidden states (B, T, H)."""
    x, Wx, U, b = map(as_tensor, (x, Wx, U, b))
    H = U.shape[0]
    if x.ndim != 3 or Wx.shape != (x.shape[2], 4 * H) or U.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeMismatch(f"lstm_sequence: x {x.shape}, Wx {Wx.shape}, U {U.shape}, b {b.shape}")
    B = x.shape[0]
    gx = _time_major(x.data @ Wx.data + b.data, reverse)
    zeros = np.zeros((B, H))
    hs, cs, acts = kernels.lstm_forward(gx, zeros, zeros, U.data)

    def grad(g):
        dgx, _, _, dU = kernels.lstm_backward(_time_major(g, reverse), hs, cs, acts, U.data)
        dgx = _batch_major(dgx, reverse)
        g2 = dgx.reshape(-1, 4 * H)
        return (dgx @ Wx.data.T, x.data.reshape(-1, x.shape[2]).T @ g2, dU, g2.sum(axis=0))

    return _make("lstm_sequence", _batch_major(hs[1:], reverse), (x, Wx, U, b), grad)


def bidirectional_wrap(layer, x, forward_params, backward_params):
    """Concatenate ``layer`` run forward and time-reversed over x along features."""
    fwd = layer(x, *forward_params, reverse=False)
    bwd = layer(x, *backward_params, reverse=True)
    return concat([fwd, bwd], axis=-1)


# shape plumbing


def embedding_lookup(table, ids):
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if np.any(ids < 0) or np.any(ids >= table.shape[0]):
        raise TargetOutOfRange(f"embedding ids must lie in [0, {table.shape[0]})")

    def grad(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make("embedding_lookup", table.data[ids], (table,), grad)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make("concat", out, tensors, lambda g: np.split(g, bounds, axis=axis))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"stack: {[t.shape for t in tensors]}") from None
    return _make("stack", out, tensors,
                 lambda g: [np.take(g, i, axis=axis) for i in range(len(tensors))])


def getitem(x, index):
    x = as_tensor(x)

    def grad(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make("getitem", x.data[index], (x,), grad)


def reshape(x, shape):
    x = as_tensor(x)
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def repeat(x, repeats, axis):
    """np.repeat with a uniform integer count."""
    x = as_tensor(x)
    axis = axis % x.ndim

    def grad(g):
        shape = x.shape[: axis + 1] + (repeats,) + x.shape[axis + 1:]
        return (g.reshape(shape).sum(axis=axis + 1),)

    return _make("repeat", np.repeat(x.data, repeats, axis=axis), (x,), grad)


def mean_over_time(x, axis=1):
    x = as_tensor(x)
    n = x.shape[axis]
    return _make("mean_over_time", x.data.mean(axis=axis), (x,),
                 lambda g: (np.repeat(np.expand_dims(g, axis), n, axis=axis) / n,))


def l2_normalize(x, axis=-1):
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise NonFiniteValue("l2_normalize of a zero vector")
    y = x.data / norm
    return _make("l2_normalize", y, (x,),
                 lambda g: ((g - y * np.sum(g * y, axis=axis, keepdims=True)) / norm,))
