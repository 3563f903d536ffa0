"""Full forecaster: terrain graph + learned graph -> GCRN seq2seq."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
from torch import nn

from .gcrn import AttentionConfig, AugmentedState, GCRNDecoder, GCRNEncoder
from .graphs import HybridWeight, NodeEmbeddings, hybrid_adjacency
from .vit import VitConfig, VitEncoder, elevation_adjacency, standardize_patches
from .errors import ShapeError


@dataclass
class ModelConfig:
    num_nodes: int
    input_dim: int = 1
    hidden_dim: int = 32
    num_layers: int = 1
    horizon: int = 12
    embedding_dim: int = 10
    alpha: float = 0.5
    learn_alpha: bool = False
    use_elevation: bool = True
    conv_layers: int = 1
    seed: int = 0
    vit: VitConfig = field(default_factory=VitConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        vit = VitConfig(**d.pop("vit", {}))
        attention = AttentionConfig(**d.pop("attention", {}))
        return cls(vit=vit, attention=attention, **d)


def _seeded(seed, offset, build):
    # every component draws from its own stream so that dropping one (the
    # elevation branch) leaves the others' initial weights unchanged
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed * 1009 + offset)
        return build()


class HydroVision(nn.Module):
    """Hybrid-graph GCRN forecaster.

    ``patches`` are the raw ``(L, 16, 16)`` elevation tiles and
    ``station_patches`` the tile index of each station; both are required
    when ``config.use_elevation`` is set.
    """

    def __init__(self, config: ModelConfig, patches=None, station_patches=None):
        super().__init__()
        self.config = config
        seed = config.seed
        n, h = config.num_nodes, config.hidden_dim

        if config.use_elevation:
            if patches is None or station_patches is None:
                raise ShapeError("elevation branch needs patches and station patch indices")
            if len(station_patches) != n:
                raise ShapeError(f"{len(station_patches)} station patches for {n} nodes")
            self.register_buffer("patches", standardize_patches(patches))
            self.register_buffer("station_patches", torch.as_tensor(list(station_patches), dtype=torch.long))
            self.vit = _seeded(seed, 1, lambda: VitEncoder(config.vit).double())
            if config.vit.freeze:
                self.vit.requires_grad_(False)
        else:
            self.vit = None

        gen = torch.Generator().manual_seed(seed * 1009 + 2)
        self.node_embeddings = NodeEmbeddings(n, config.embedding_dim, generator=gen)
        self.hybrid_weight = HybridWeight(config.alpha, config.learn_alpha)
        self.encoder = _seeded(
            seed, 3, lambda: GCRNEncoder(config.input_dim, h, config.num_layers, config.conv_layers).double()
        )
        self.augment = _seeded(seed, 4, lambda: AugmentedState(h, config.attention).double())
        self.decoder = _seeded(
            seed, 5, lambda: GCRNDecoder(config.input_dim, h, config.num_layers, config.conv_layers).double()
        )
        self._elev_cache = None

    def elevation_adjacency(self):
        if self.vit is None:
            return None
        cacheable = not torch.is_grad_enabled() or self.config.vit.freeze
        key = tuple((p.data_ptr(), p._version) for p in self.vit.parameters())
        if cacheable and self._elev_cache is not None and self._elev_cache[0] == key:
            return self._elev_cache[1]
        tokens = self.vit(self.patches)
        adj = elevation_adjacency(tokens, self.station_patches, self.config.vit.similarity_temperature)
        if cacheable:
            adj = adj.detach()
            self._elev_cache = (key, adj)
        return adj

    def adjacencies(self):
        a_adaptive = self.node_embeddings()
        a_elevation = self.elevation_adjacency()
        if a_elevation is None:
            a_hybrid = a_adaptive
        else:
            a_hybrid = hybrid_adjacency(a_adaptive, a_elevation, self.hybrid_weight())
        return {"adaptive": a_adaptive, "elevation": a_elevation, "hybrid": a_hybrid}

    def forward(self, inputs, targets=None, sampling_prob=0.0, generator=None, adj=None):
        """``inputs`` ``(B, T_in, n, F)`` normalized; returns ``(B, horizon, n)``."""
        if inputs.shape[2] != self.config.num_nodes:
            raise ShapeError(
                f"model has {self.config.num_nodes} stations, batch has {inputs.shape[2]}"
            )
        if adj is None:
            adj = self.adjacencies()["hybrid"]
        seq, finals = self.encoder(inputs, adj)
        _, init = self.augment(seq, finals[-1])
        states = finals[:-1] + [init]
        return self.decoder(
            states, inputs[:, -1, :, 0], adj, self.config.horizon,
            targets=targets, sampling_prob=sampling_prob, generator=generator,
        )

    def parameter_groups(self):
        """Named parameter groups used for gradient checks and reporting."""
        groups = {
            "node_embeddings": list(self.node_embeddings.parameters()),
            "gcrn_gates": list(self.encoder.parameters()) + [
                p for c in self.decoder.cells for p in c.parameters()
            ],
            "attention": list(self.augment.parameters()),
            "output_head": list(self.decoder.head.parameters()),
        }
        if self.vit is not None:
            groups["vit_projection"] = list(self.vit.projection.parameters())
            groups["vit_blocks"] = list(self.vit.blocks.parameters())
        if self.config.learn_alpha:
            groups["alpha"] = list(self.hybrid_weight.parameters())
        return groups
