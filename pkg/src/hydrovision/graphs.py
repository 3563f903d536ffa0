"""Learned node-embedding graph and its convex fusion with the terrain graph."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ShapeError


def adaptive_adjacency(e1, e2):
    """``softmax(relu(e1 @ e2.T))`` over rows."""
    return torch.softmax(torch.relu(e1 @ e2.T), dim=-1)


def hybrid_adjacency(a_adaptive, a_elevation, alpha):
    """``alpha * a_adaptive + (1 - alpha) * a_elevation``.

    ``alpha`` may be a float or a 0-d tensor (learnable mode).
    """
    if a_adaptive.shape != a_elevation.shape:
        raise ShapeError(
            f"adjacency shapes differ: {tuple(a_adaptive.shape)} vs {tuple(a_elevation.shape)}"
        )
    if not torch.is_tensor(alpha) and not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * a_adaptive + (1 - alpha) * a_elevation


class NodeEmbeddings(nn.Module):
    def __init__(self, num_nodes, dim=10, generator=None):
        super().__init__()
        self.e1 = nn.Parameter(torch.rand(num_nodes, dim, generator=generator, dtype=torch.float64) - 0.5)
        self.e2 = nn.Parameter(torch.rand(num_nodes, dim, generator=generator, dtype=torch.float64) - 0.5)

    def forward(self):
        return adaptive_adjacency(self.e1, self.e2)


class HybridWeight(nn.Module):
    """Fixed ``alpha`` or a learnable one squashed through a sigmoid."""

    def __init__(self, alpha=0.5, learnable=False):
        super().__init__()
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        self.learnable = learnable
        if learnable:
            a = min(max(alpha, 1e-6), 1 - 1e-6)
            self.logit = nn.Parameter(torch.tensor(np.log(a / (1 - a)), dtype=torch.float64))
        else:
            self.alpha = float(alpha)

    def forward(self):
        return torch.sigmoid(self.logit) if self.learnable else self.alpha


def format_adjacency(matrix, decimals=6):
    """One row per line, space separated."""
    m = matrix.detach().cpu().numpy() if torch.is_tensor(matrix) else np.asarray(matrix)
    return "\n".join(" ".join(f"{v:.{decimals}f}" for v in row) for row in m) + "\n"


def write_adjacency(matrix, path, decimals=6):
    with open(path, "w") as fh:
        fh.write(format_adjacency(matrix, decimals))


def read_adjacency(path):
    return np.loadtxt(path, ndmin=2)
