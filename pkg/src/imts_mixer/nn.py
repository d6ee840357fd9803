"""Parameter containers and shared building blocks."""
import numpy as np

from .autograd import Tensor, as_tensor, getitem, matmul, relu, rms_norm, tsum, where, exp


class Module:
    """Minimal parameter container.

    Parameters are grad-tracked :class:`Tensor` attributes; sub-modules may
    be attributes or lists of modules. Iteration order follows attribute
    assignment order, which keeps names and optimizer state deterministic.
    """

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = np.zeros_like(p.data)

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.copy()

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters().values()))


def param(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape))


def zeros(shape):
    return param(np.zeros(shape))


def _check_last_axis(x, expected, what):
    if x.ndim == 0 or x.shape[-1] != expected:
        extent = x.shape[-1] if x.ndim else None
        raise ValueError(
            f"{what}: axis {x.ndim - 1 if x.ndim else 0} (last) of input with shape {x.shape} "
            f"has extent {extent}, expected {expected}")


class Mlp2(Module):
    """Two-layer perceptron ``W2 . relu(W1 . x + b1) + b2`` applied row-wise."""

    def __init__(self, d_in, d_hidden, d_out, rng):
        self.d_in, self.d_hidden, self.d_out = d_in, d_hidden, d_out
        self.W1 = uniform_init(rng, d_in, (d_in, d_hidden))
        self.b1 = zeros(d_hidden)
        self.W2 = uniform_init(rng, d_hidden, (d_hidden, d_out))
        self.b2 = zeros(d_out)

    def __call__(self, x):
        x = as_tensor(x)
        _check_last_axis(x, self.d_in, "Mlp2")
        return relu(x @ self.W1 + self.b1) @ self.W2 + self.b2


class ChannelMlp2(Module):
    """``C`` independent :class:`Mlp2` networks stored as stacked weights.

    Input ``[B, C, K, d_in]``; channel ``c`` of the input only ever meets the
    weights of network ``c``.
    """

    def __init__(self, n_channels, d_in, d_hidden, d_out, rng):
        self.n_channels = n_channels
        self.d_in, self.d_hidden, self.d_out = d_in, d_hidden, d_out
        self.W1 = uniform_init(rng, d_in, (n_channels, d_in, d_hidden))
        self.b1 = zeros((n_channels, d_hidden))
        self.W2 = uniform_init(rng, d_hidden, (n_channels, d_hidden, d_out))
        self.b2 = zeros((n_channels, d_out))

    def __call__(self, x):
        x = as_tensor(x)
        _check_last_axis(x, self.d_in, "ChannelMlp2")
        if x.ndim < 3 or x.shape[-3] != self.n_channels:
            raise ValueError(
                f"ChannelMlp2: axis -3 of input with shape {x.shape} must hold {self.n_channels} channels")
        hidden = relu(matmul(x, self.W1) + self.b1[:, None, :])
        return matmul(hidden, self.W2) + self.b2[:, None, :]

    def channel(self, c):
        """Weights of network ``c`` as a standalone :class:`Mlp2`."""
        net = Mlp2.__new__(Mlp2)
        net.d_in, net.d_hidden, net.d_out = self.d_in, self.d_hidden, self.d_out
        net.W1, net.b1 = getitem(self.W1, c), getitem(self.b1, c)
        net.W2, net.b2 = getitem(self.W2, c), getitem(self.b2, c)
        return net


class RmsNormLayer(Module):
    def __init__(self, dim, eps=1e-8):
        self.eps = eps
        self.gain = param(np.ones(dim))

    def __call__(self, x):
        return rms_norm(x, self.gain, self.eps)


class EmptySupportError(ValueError):
    pass


def masked_softmax(x, mask, axis=-1):
    """Softmax over the entries of ``x`` where ``mask`` is true.

    Masked-out entries come out as exactly 0. Every slice along ``axis``
    needs at least one unmasked entry.
    """
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if x.ndim == 0:
        raise ValueError("masked_softmax needs at least one axis")
    if not np.all(mask.any(axis=axis)):
        raise EmptySupportError("masked_softmax: a slice has no unmasked entries")
    peak = np.max(np.where(mask, x.data, -np.inf), axis=axis, keepdims=True)
    # Shifting by a constant leaves the softmax and its gradient unchanged.
    # Masked entries are zeroed before exp so they cannot overflow.
    e = where(mask, exp(where(mask, x - peak, 0.0)), 0.0)
    return e / tsum(e, axis=axis, keepdims=True)
