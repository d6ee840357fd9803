"""AdamW with decoupled weight decay."""
import re
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(state, params, grads, lr, weight_decay, decay=None):
    """Apply one AdamW update in place.

    ``params`` and ``grads`` map names to arrays of equal shape. ``decay``
    optionally maps names to booleans; names mapped to ``False`` skip the
    weight-decay term. All gradients are checked before anything changes.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter group {name!r}")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if weight_decay and (decay is None or decay.get(name, True)):
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def is_decayed(name):
    """Weight decay applies to weight matrices and learned queries only."""
    leaf = name.rsplit(".", 1)[-1]
    return not (leaf == "gain" or "bias" in leaf or re.fullmatch(r"b\d*|b_\w+", leaf))


class AdamW:
    def __init__(self, module, lr=0.01, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.module = module
        self.lr = lr
        self.weight_decay = weight_decay
        self.state = AdamWState(beta1=betas[0], beta2=betas[1], eps=eps)
        self.decay = {name: is_decayed(name) for name in module.parameters()}

    def step(self):
        tensors = self.module.parameters()
        params = {n: t.data for n, t in tensors.items()}
        grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for n, t in tensors.items()}
        adamw_step(self.state, params, grads, self.lr, self.weight_decay, self.decay)
