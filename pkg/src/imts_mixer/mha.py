"""Multi-head attention channel encoder (ablation alternative to ISCAM).

Each channel attends with one learned query vector over its observations,
encoded as ``[v, sinusoidal(t)]``. Heads split the feature axis; per head
the scaled dot-product scores are shared by that head's feature columns,
which lets the segment softmax pooling kernel compute all heads at once.
"""
import numpy as np

from .autograd import Tensor, getitem, relu, segment_softmax_pool, tsum, where
from .config import ConfigError
from .decoders import sinusoidal_time_embedding
from .iscam import PackedObservations, _single_channel_batch
from .nn import Module, param, uniform_init, zeros


class MhaEncoder(Module):
    def __init__(self, n_channels, dim, n_heads, time_dim, rng):
        if dim % n_heads:
            raise ConfigError(f"dim={dim} is not divisible by n_heads={n_heads}")
        if time_dim <= 0 or time_dim % 2:
            raise ConfigError(f"time embedding width must be a positive even number, got {time_dim}")
        self.n_channels, self.dim, self.n_heads, self.time_dim = n_channels, dim, n_heads, time_dim
        d_tuple = 1 + time_dim
        self.query = uniform_init(rng, dim, (n_channels, dim))
        # No key bias: it shifts all scores of a channel equally, which the
        # softmax ignores.
        self.W_k = uniform_init(rng, d_tuple, (d_tuple, dim))
        self.W_v = uniform_init(rng, d_tuple, (d_tuple, dim))
        self.b_v = zeros(dim)
        self.W_o = uniform_init(rng, dim, (dim, dim))
        self.b_o = zeros(dim)
        self.channel_bias = param(np.zeros((n_channels, dim)))

    @property
    def head_dim(self):
        return self.dim // self.n_heads

    def _attend(self, packed):
        tuples = np.concatenate(
            [packed.v[:, None], sinusoidal_time_embedding(packed.t, self.time_dim)], axis=-1)
        x = Tensor(tuples.reshape(-1, 1 + self.time_dim))
        keys = x @ self.W_k
        vals = x @ self.W_v + self.b_v
        q = getitem(self.query, packed.channel)
        n = packed.n_rows
        scores = tsum((keys * q).reshape(n, self.n_heads, self.head_dim), axis=-1)
        scores = scores * (1.0 / np.sqrt(self.head_dim))
        head_of_col = np.repeat(np.arange(self.n_heads), self.head_dim)
        expanded = getitem(scores, (slice(None), head_of_col))
        return segment_softmax_pool(expanded, vals, packed.offsets, return_weights=True)

    def pool(self, batch, return_weights=False):
        """Encodings ``[B, C, dim]`` before the channel bias; 0 for empty channels."""
        packed = PackedObservations(batch)
        B, C = packed.shape
        if C != self.n_channels:
            raise ValueError(f"batch has {C} channels, encoder was built for {self.n_channels}")
        attended, weights = self._attend(packed)
        out = attended + relu(attended @ self.W_o + self.b_o)
        out = where(packed.nonempty.reshape(-1, 1), out, 0.0).reshape(B, C, self.dim)
        if return_weights:
            return out, weights, packed
        return out

    def __call__(self, batch):
        return self.pool(batch) + self.channel_bias

    def attention_weights(self, batch):
        """Per-head attention weights as a dense ``[B, C, N_max, n_heads]`` array."""
        _, weights, packed = self.pool(batch, return_weights=True)
        out = np.zeros(batch.obs_mask.shape + (self.n_heads,))
        out[packed.batch_index, packed.channel, packed.position] = weights[:, ::self.head_dim]
        return out

    def attend_channel(self, obs_t, obs_v, mask, channel=0):
        """Raw attention output ``[dim]`` (heads concatenated) for one channel."""
        packed = PackedObservations(_single_channel_batch(obs_t, obs_v, mask))
        packed.channel = np.full_like(packed.channel, channel)
        attended, _ = self._attend(packed)
        return attended.reshape(self.dim)

    def encode_channel(self, obs_t, obs_v, mask, channel=0):
        """Full encoding ``[dim]`` of one channel, without the channel bias."""
        packed = PackedObservations(_single_channel_batch(obs_t, obs_v, mask))
        packed.channel = np.full_like(packed.channel, channel)
        attended, _ = self._attend(packed)
        out = attended + relu(attended @ self.W_o + self.b_o)
        return where(packed.nonempty.reshape(-1, 1), out, 0.0).reshape(self.dim)
