"""Full forecasting model: channel encoder, mixer stack, query decoder."""
import numpy as np

from .autograd import no_grad
from .config import TrainConfig
from .decoders import ConTp, MlpProjection
from .iscam import Iscam
from .mha import MhaEncoder
from .mixer import MixerStack
from .nn import Module


class ImtsMixer(Module):
    def __init__(self, config: TrainConfig, n_channels: int, seed=None):
        self.config = config
        self.n_channels = n_channels
        rng = np.random.default_rng(config.seed if seed is None else seed)
        if config.encoder == "iscam":
            self.encoder = Iscam(n_channels, config.dim, config.mlp_hidden, rng,
                                 channel_specific=config.channel_specific_encoders)
        else:
            self.encoder = MhaEncoder(n_channels, config.dim, config.n_heads,
                                      config.time_embed_dim, rng)
        self.mixer = MixerStack(n_channels, config.dim, config.out_dim, config.n_blocks, rng,
                                eps=config.norm_eps)
        if config.decoder == "contp":
            self.decoder = ConTp(n_channels, config.out_dim, config.mlp_hidden, rng)
        else:
            self.decoder = MlpProjection(n_channels, config.out_dim, config.mlp_hidden,
                                         config.time_embed_dim, rng)

    def __call__(self, batch):
        z = self.encoder(batch)
        z = self.mixer(z)
        return self.decoder(z, batch.q_t, batch.q_mask)

    def predict(self, batch):
        with no_grad():
            return self(batch).data


def count_parameters(model):
    """Total learnable scalars and a per-module breakdown."""
    breakdown = {}
    for name, p in model.named_parameters():
        top = name.split(".", 1)[0]
        breakdown[top] = breakdown.get(top, 0) + p.size
    return sum(breakdown.values()), breakdown
