"""Mixer blocks over the ``[B, C, D]`` channel-encoding tensor."""
from .autograd import as_tensor, fit_width, relu, swapaxes
from .config import ConfigError
from .nn import Module, RmsNormLayer, uniform_init, zeros


class MixerBlock(Module):
    """Channel-mixing then feature-mixing step with RMSNorm and residuals.

    ``Z' = Z + relu(RMS_c(Z^T) W_c + b_c)^T`` mixes across channels, then
    ``out = P(Z) + P(Z') + relu(RMS_d(Z') W_d + b_d)``, where ``P`` truncates
    or zero-pads the feature axis when ``d_out != d_in``.
    """

    def __init__(self, n_channels, d_in, d_out, rng, eps=1e-8):
        self.n_channels, self.d_in, self.d_out = n_channels, d_in, d_out
        self.chan_norm = RmsNormLayer(n_channels, eps)
        self.chan_weight = uniform_init(rng, n_channels, (n_channels, n_channels))
        self.chan_bias = zeros(n_channels)
        self.dim_norm = RmsNormLayer(d_in, eps)
        self.dim_weight = uniform_init(rng, d_in, (d_in, d_out))
        self.dim_bias = zeros(d_out)

    def __call__(self, z):
        z = as_tensor(z)
        if z.ndim != 3 or z.shape[1:] != (self.n_channels, self.d_in):
            raise ValueError(
                f"MixerBlock expects [B, {self.n_channels}, {self.d_in}], got {z.shape}")
        zt = swapaxes(z, 1, 2)
        mixed = relu(self.chan_norm(zt) @ self.chan_weight + self.chan_bias)
        z_prime = z + swapaxes(mixed, 1, 2)
        feat = relu(self.dim_norm(z_prime) @ self.dim_weight + self.dim_bias)
        return fit_width(z, self.d_out) + fit_width(z_prime, self.d_out) + feat


class MixerStack(Module):
    """``n_blocks`` mixer blocks; the last one maps ``dim`` to ``out_dim``.

    With zero blocks the stack is the fixed width projection ``dim -> out_dim``.
    """

    def __init__(self, n_channels, dim, out_dim, n_blocks, rng, eps=1e-8):
        if n_blocks < 0 or dim <= 0 or out_dim <= 0 or n_channels <= 0:
            raise ConfigError(
                f"invalid mixer configuration: C={n_channels}, dim={dim}, out_dim={out_dim}, "
                f"n_blocks={n_blocks}")
        self.dim, self.out_dim = dim, out_dim
        self.blocks = [
            MixerBlock(n_channels, dim, out_dim if i == n_blocks - 1 else dim, rng, eps)
            for i in range(n_blocks)
        ]

    def __call__(self, z):
        z = as_tensor(z)
        if not self.blocks:
            return fit_width(z, self.out_dim)
        for block in self.blocks:
            z = block(z)
        return z
