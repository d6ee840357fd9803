"""Decoders from channel representations ``[B, C, D_out]`` to forecasts ``[B, C, K]``.

Both decoders evaluate every query independently: the forecast for channel
``c`` at time ``q`` depends only on that channel's representation and ``q``.
"""
import numpy as np

from .autograd import Tensor, as_tensor, relu, tsum, where
from .config import ConfigError
from .nn import ChannelMlp2, Mlp2, Module, zeros


def sinusoidal_time_embedding(t, d_t, base=10000.0):
    """Interleaved ``[sin(w_j t), cos(w_j t)]`` pairs with ``w_j = base**(-2j/d_t)``.

    Works element-wise on arrays, appending an axis of length ``d_t``.
    """
    if d_t <= 0 or d_t % 2:
        raise ConfigError(f"time embedding width must be a positive even number, got {d_t}")
    t = np.asarray(t, dtype=np.float64)
    freqs = base ** (-2.0 * np.arange(d_t // 2) / d_t)
    angles = t[..., None] * freqs
    out = np.empty(t.shape + (d_t,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def _check(z, q_t, n_channels, width):
    if z.ndim != 3 or z.shape[1:] != (n_channels, width):
        raise ValueError(f"decoder expects Z of shape [B, {n_channels}, {width}], got {z.shape}")
    if q_t.shape[:2] != z.shape[:2]:
        raise ValueError(f"query times {q_t.shape} do not match Z {z.shape} on [B, C]")


class ConTp(Module):
    """Per-channel MLP turning a query time into readout weights over ``Z[b, c]``."""

    def __init__(self, n_channels, out_dim, hidden, rng):
        self.n_channels, self.out_dim = n_channels, out_dim
        self.f_qu = ChannelMlp2(n_channels, 1, hidden, out_dim, rng)
        self.b_out = zeros(n_channels)

    def __call__(self, z, q_t, q_mask):
        z = as_tensor(z)
        q_t = np.asarray(q_t, dtype=np.float64)
        _check(z, q_t, self.n_channels, self.out_dim)
        B, C, K = q_t.shape
        readout = self.f_qu(Tensor(q_t[..., None]))
        y = tsum(readout * z.reshape(B, C, 1, self.out_dim), axis=-1)
        return where(q_mask, y + self.b_out.reshape(C, 1), 0.0)


class MlpProjection(Module):
    """Shared MLP over ``[Z[b, c], embed(q)]`` producing a scalar forecast."""

    def __init__(self, n_channels, out_dim, hidden, time_dim, rng):
        if time_dim <= 0 or time_dim % 2:
            raise ConfigError(f"time embedding width must be a positive even number, got {time_dim}")
        self.n_channels, self.out_dim, self.time_dim = n_channels, out_dim, time_dim
        self.mlp = Mlp2(out_dim + time_dim, hidden, 1, rng)

    def __call__(self, z, q_t, q_mask):
        z = as_tensor(z)
        q_t = np.asarray(q_t, dtype=np.float64)
        _check(z, q_t, self.n_channels, self.out_dim)
        B, C, K = q_t.shape
        emb = Tensor(sinusoidal_time_embedding(q_t, self.time_dim))
        # First layer split into its Z and time-embedding column blocks; equal
        # to applying it to the concatenation.
        w_z = self.mlp.W1[: self.out_dim]
        w_t = self.mlp.W1[self.out_dim:]
        hidden = relu((z @ w_z).reshape(B, C, 1, -1) + emb @ w_t + self.mlp.b1)
        y = (hidden @ self.mlp.W2 + self.mlp.b2).reshape(B, C, K)
        return where(q_mask, y, 0.0)
