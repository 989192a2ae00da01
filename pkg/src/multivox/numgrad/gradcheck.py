import numpy as np

from . import ops
from .tensor import Tape, Tensor


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def grad_check(fn, inputs, eps=1e-5, seed=0):
    """Max relative error between backward and central finite differences.

    ``fn`` maps Tensors (one per array in ``inputs``) to a Tensor. Non-scalar
    outputs are contracted with fixed random weights so every output coordinate
    contributes. Every coordinate of every input is perturbed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"epsilon {eps} outside [1e-7, 1e-3]")
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    probe = fn(*[Tensor(a) for a in arrays]).data
    weights = np.random.default_rng(seed).normal(size=probe.shape) if probe.size > 1 else np.ones(probe.shape)

    def objective(arrs):
        return float(np.sum(fn(*[Tensor(a) for a in arrs]).data * weights))

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = ops.sum(ops.mul(fn(*tensors), weights))
    tape.backward(loss)

    worst = 0.0
    for i, a in enumerate(arrays):
        analytic = np.zeros_like(a) if tensors[i].grad is None else tensors[i].grad
        numeric = np.empty_like(a)
        for idx in np.ndindex(a.shape):
            saved = a[idx]
            a[idx] = saved + eps
            up = objective(arrays)
            a[idx] = saved - eps
            down = objective(arrays)
            a[idx] = saved
            numeric[idx] = (up - down) / (2.0 * eps)
        if a.size:
            worst = max(worst, float(np.max(relative_error(analytic, numeric))))
    return worst
