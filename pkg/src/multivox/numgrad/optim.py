import numpy as np

from ..errors import ShapeMismatch
from .params import ParamSet


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of the trainable entries of ``params``.

    ``state`` is a dict holding ``step`` and per-name ``m``/``v`` moments; an
    empty dict starts from zeros. Returns ``(params, state)``.
    """
    if not state:
        state.update(step=0, m={}, v={})
    state["step"] += 1
    step = state["step"]
    for name, t in params.trainable():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        if g.shape != t.shape:
            raise ShapeMismatch(f"gradient for {name}: {g.shape} vs parameter {t.shape}")
        m = state["m"].get(name, np.zeros_like(t.data))
        v = state["v"].get(name, np.zeros_like(t.data))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        t.data = t.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        state["m"][name] = m
        state["v"][name] = v
    return params, state


def clip_grad_norm(grads, max_norm):
    """Scale all gradients together so their global L2 norm is at most ``max_norm``."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or total <= max_norm or total == 0.0:
        return grads, total
    k = max_norm / total
    return {name: g * k for name, g in grads.items()}, total


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=None):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip = clip
        self.state = {}

    def step(self):
        grads, norm = clip_grad_norm(self.params.grads(), self.clip)
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        self.params.zero_grad()
        return norm

    def state_params(self):
        """Moments and step count as a ParamSet, for checkpointing next to the weights."""
        out = ParamSet("adam")
        out.add("step", np.asarray(float(self.state.get("step", 0))))
        for name, _ in self.params.trainable():
            zeros = np.zeros(self.params[name].shape)
            out.add(f"m/{name}", self.state.get("m", {}).get(name, zeros))
            out.add(f"v/{name}", self.state.get("v", {}).get(name, zeros))
        return out

    def load_state_params(self, saved):
        step = int(saved["step"].data)
        self.state = {"step": step, "m": {}, "v": {}}
        for name, t in self.params.trainable():
            for key in ("m", "v"):
                entry = f"{key}/{name}"
                if entry not in saved or saved[entry].shape != t.shape:
                    raise ShapeMismatch(f"optimizer state lacks a matching {entry}")
                self.state[key][name] = saved[entry].data.copy()
