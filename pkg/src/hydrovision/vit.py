"""Patch transformer over the elevation raster and the station graph it induces."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError
from .terrain import PATCH_SIZE


@dataclass
class VitConfig:
    patch_size: int = PATCH_SIZE
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 8
    ffn_dim: int | None = None
    similarity_temperature: float | None = None
    freeze: bool = False

    def __post_init__(self):
        if self.embed_dim % self.num_heads:
            raise ShapeError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.embed_dim
        if self.similarity_temperature is None:
            self.similarity_temperature = math.sqrt(self.embed_dim)
        if self.similarity_temperature <= 0:
            raise ShapeError("similarity_temperature must be positive")

    def to_dict(self):
        return asdict(self)


def standardize_patches(patches):
    """Z-score all heights of one raster jointly; flat rasters map to zeros."""
    patches = torch.as_tensor(np.asarray(patches), dtype=torch.float64)
    std = patches.std(unbiased=False)
    if std == 0:
        std = torch.ones((), dtype=patches.dtype)
    return (patches - patches.mean()) / std


def embed_patches(patches, weight, bias=None):
    """Flatten each ``P x P`` tile and project it linearly: ``(L, P, P) -> (L, d)``.

    ``weight`` has shape ``(d, P*P)`` as in ``nn.Linear``; standardization is
    the caller's job (see ``standardize_patches``).
    """
    if patches.ndim != 3 or patches.shape[1:] != (PATCH_SIZE, PATCH_SIZE):
        raise ShapeError(f"expected (L, 16, 16) patches, got {tuple(patches.shape)}")
    return F.linear(patches.reshape(patches.shape[0], -1), weight, bias)


def positional_encoding(length, dim, dtype=torch.float64):
    """Sinusoidal table: sin on even columns, cos on odd, shape ``(length, dim)``."""
    if dim % 2:
        raise ShapeError(f"positional encoding needs an even dimension, got {dim}")
    pos = torch.arange(length, dtype=dtype)[:, None]
    freq = torch.pow(torch.tensor(10000.0, dtype=dtype), torch.arange(0, dim, 2, dtype=dtype) / dim)
    angles = pos / freq
    table = torch.empty(length, dim, dtype=dtype)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles)
    return table


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        if dim % num_heads:
            raise ShapeError(f"dim {dim} is not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, return_weights=False):
        *lead, L, d = x.shape
        h = self.num_heads
        q, k, v = self.qkv(x).reshape(*lead, L, 3, h, d // h).movedim(-3, 0).transpose(-3, -2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        weights = torch.softmax(scores, dim=-1)
        ctx = (weights @ v).transpose(-3, -2).reshape(*lead, L, d)
        out = self.out(ctx)
        return (out, weights) if return_weights else out


class EncoderBlock(nn.Module):
    """Pre-norm block: ``x + MHSA(LN(x))`` then ``x + FFN(LN(x))``."""

    def __init__(self, dim, num_heads, ffn_dim):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim))

    def forward(self, x, return_weights=False):
        a, w = self.attn(self.norm1(x), return_weights=True)
        x = x + a
        x = x + self.ffn(self.norm2(x))
        return (x, w) if return_weights else x


class VitEncoder(nn.Module):
    """Patch embedding + sinusoidal positions + stacked encoder blocks."""

    def __init__(self, config: VitConfig):
        super().__init__()
        self.config = config
        P = config.patch_size
        self.projection = nn.Linear(P * P, config.embed_dim)
        self.blocks = nn.ModuleList(
            EncoderBlock(config.embed_dim, config.num_heads, config.ffn_dim)
            for _ in range(config.num_layers)
        )

    def embed(self, patches):
        tokens = embed_patches(patches, self.projection.weight, self.projection.bias)
        return tokens + positional_encoding(tokens.shape[0], tokens.shape[1], tokens.dtype)

    def encode(self, x, return_weights=False):
        weights = []
        for block in self.blocks:
            x, w = block(x, return_weights=True)
            weights.append(w)
        return (x, weights) if return_weights else x

    def forward(self, patches, return_weights=False):
        """``patches`` are standardized ``(L, P, P)`` tiles; returns ``(L, d)`` tokens."""
        return self.encode(self.embed(patches), return_weights=return_weights)


def elevation_adjacency(tokens, station_patches, temperature):
    """Row-softmax of the scaled Gram matrix of the stations' patch tokens."""
    idx = torch.as_tensor(list(station_patches), dtype=torch.long)
    L = tokens.shape[0]
    if idx.numel() == 0:
        raise ShapeError("need at least one station")
    if int(idx.min()) < 0 or int(idx.max()) >= L:
        raise ShapeError(f"station patch index out of range [0, {L})")
    s = tokens[idx]
    return torch.softmax(s @ s.T / temperature, dim=-1)
