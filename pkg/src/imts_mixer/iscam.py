"""ISCAM: per-channel encoding of irregular observations into fixed-size vectors.

Each observation ``(t, v)`` is embedded as ``[v, t]`` by two MLPs: one gives
its feature vector, the other per-feature importance scores. Per feature, a
softmax over the channel's observations weights the features, and a learned
per-channel bias is added. A channel without observations encodes to its
bias alone.
"""
import numpy as np

from .autograd import Tensor, concatenate, getitem, segment_softmax_pool
from .nn import Module, Mlp2, param


class PackedObservations:
    """Observed entries of a batch gathered into contiguous per-channel runs.

    Rows are ordered by (instance, channel, position) so the rows of segment
    ``b * C + c`` are ``offsets[s]:offsets[s + 1]``. Only observed entries are
    packed, so extra padding in the batch cannot change anything downstream.
    """

    def __init__(self, batch):
        B, C, _ = batch.obs_mask.shape
        b_idx, c_idx, n_idx = np.nonzero(batch.obs_mask)
        self.shape = (B, C)
        self.batch_index = b_idx
        self.channel = c_idx
        self.position = n_idx
        self.t = batch.obs_t[b_idx, c_idx, n_idx]
        self.v = batch.obs_v[b_idx, c_idx, n_idx]
        counts = batch.obs_mask.sum(axis=-1).reshape(-1)
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.nonempty = (counts > 0).reshape(B, C)

    @property
    def n_rows(self):
        return self.t.size


def _single_channel_batch(obs_t, obs_v, mask):
    from .data import BatchedImts

    obs_t = np.asarray(obs_t, dtype=np.float64).reshape(1, 1, -1)
    obs_v = np.asarray(obs_v, dtype=np.float64).reshape(1, 1, -1)
    mask = np.asarray(mask, dtype=bool).reshape(1, 1, -1)
    if not (obs_t.shape == obs_v.shape == mask.shape):
        raise ValueError("obs_t, obs_v and mask must have the same length")
    empty = np.zeros((1, 1, 0))
    return BatchedImts(obs_t, obs_v, mask, empty, empty.astype(bool), empty)


class Iscam(Module):
    """Channel aggregation encoder producing ``[B, C, dim]``."""

    def __init__(self, n_channels, dim, hidden, rng, channel_specific=False):
        self.n_channels = n_channels
        self.dim = dim
        self.channel_specific = channel_specific
        if channel_specific:
            self.f_ote = [Mlp2(2, hidden, dim, rng) for _ in range(n_channels)]
            self.f_wa = [Mlp2(2, hidden, dim, rng) for _ in range(n_channels)]
        else:
            self.f_ote = Mlp2(2, hidden, dim, rng)
            self.f_wa = Mlp2(2, hidden, dim, rng)
        self.channel_bias = param(np.zeros((n_channels, dim)))

    def _embed(self, packed):
        x = Tensor(np.stack([packed.v, packed.t], axis=-1).reshape(-1, 2))
        if not self.channel_specific:
            return self.f_ote(x), self.f_wa(x)
        order = np.argsort(packed.channel, kind="stable")
        restore = np.argsort(order, kind="stable")
        hs, as_ = [], []
        for c in range(self.n_channels):
            rows = order[packed.channel[order] == c]
            xc = getitem(x, rows)
            hs.append(self.f_ote[c](xc))
            as_.append(self.f_wa[c](xc))
        return (getitem(concatenate(hs, axis=0), restore),
                getitem(concatenate(as_, axis=0), restore))

    def pool(self, batch, return_weights=False):
        """Aggregated encodings ``[B, C, dim]`` before the channel bias."""
        packed = PackedObservations(batch)
        B, C = packed.shape
        if C != self.n_channels:
            raise ValueError(f"batch has {C} channels, encoder was built for {self.n_channels}")
        h, a = self._embed(packed)
        pooled, weights = segment_softmax_pool(a, h, packed.offsets, return_weights=True)
        z = pooled.reshape(B, C, self.dim)
        if return_weights:
            return z, weights, packed
        return z

    def __call__(self, batch):
        return self.pool(batch) + self.channel_bias

    def aggregation_weights(self, batch):
        """Softmax weights as a dense ``[B, C, N_max, dim]`` array.

        Padding slots hold 0; over each channel's observed slots every
        feature column sums to 1.
        """
        _, weights, packed = self.pool(batch, return_weights=True)
        out = np.zeros(batch.obs_mask.shape + (self.dim,))
        out[packed.batch_index, packed.channel, packed.position] = weights
        return out

    def encode_channel(self, obs_t, obs_v, mask, channel=0):
        """Encoding ``[dim]`` of one channel's observations, without bias."""
        batch = _single_channel_batch(obs_t, obs_v, mask)
        packed = PackedObservations(batch)
        packed.channel = np.full_like(packed.channel, channel)
        h, a = self._embed(packed)
        return segment_softmax_pool(a, h, packed.offsets).reshape(self.dim)
