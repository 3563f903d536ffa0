"""Graph-convolutional GRU encoder/decoder with sparse temporal attention."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
from torch import nn

from .errors import ShapeError


@dataclass
class AttentionConfig:
    num_heads: int = 8
    factor: float = 5.0
    exact_fallback: bool = False

    def to_dict(self):
        return asdict(self)


def graph_conv(adj, z, weight, bias=None, activation=None, hops=1):
    """``activation(adj^hops @ z @ weight + bias)`` for ``z`` of shape ``(B, n, in)``."""
    n = adj.shape[0]
    if adj.shape != (n, n) or z.shape[-2] != n:
        raise ShapeError(f"adjacency {tuple(adj.shape)} does not match node axis of {tuple(z.shape)}")
    if z.shape[-1] != weight.shape[0]:
        raise ShapeError(f"feature dim {z.shape[-1]} does not match weight rows {weight.shape[0]}")
    for _ in range(hops):
        z = torch.einsum("nm,...mi->...ni", adj, z)
    out = z @ weight
    if bias is not None:
        out = out + bias
    return out if activation is None else activation(out)


class GCRNCell(nn.Module):
    """GRU cell whose three gate transforms are graph convolutions with
    independent weights."""

    def __init__(self, input_dim, hidden_dim, hops=1):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.hops = hops
        rows = input_dim + hidden_dim
        self.w_r = nn.Parameter(torch.empty(rows, hidden_dim, dtype=torch.float64))
        self.w_u = nn.Parameter(torch.empty(rows, hidden_dim, dtype=torch.float64))
        self.w_c = nn.Parameter(torch.empty(rows, hidden_dim, dtype=torch.float64))
        self.c_r = nn.Parameter(torch.zeros(hidden_dim, dtype=torch.float64))
        self.c_u = nn.Parameter(torch.zeros(hidden_dim, dtype=torch.float64))
        self.c_c = nn.Parameter(torch.zeros(hidden_dim, dtype=torch.float64))
        for w in (self.w_r, self.w_u, self.w_c):
            nn.init.xavier_uniform_(w)

    def forward(self, x, h, adj, return_gates=False):
        if x.shape[-1] != self.input_dim or h.shape[-1] != self.hidden_dim:
            raise ShapeError(
                f"cell expects input dim {self.input_dim} and hidden dim {self.hidden_dim}, "
                f"got {x.shape[-1]} and {h.shape[-1]}"
            )
        xh = torch.cat([x, h], dim=-1)
        r = torch.sigmoid(graph_conv(adj, xh, self.w_r, self.c_r, hops=self.hops))
        u = torch.sigmoid(graph_conv(adj, xh, self.w_u, self.c_u, hops=self.hops))
        c = torch.tanh(graph_conv(adj, torch.cat([x, r * h], dim=-1), self.w_c, self.c_c, hops=self.hops))
        h_new = u * h + (1 - u) * c
        if return_gates:
            return h_new, {"r": r, "u": u, "c": c}
        return h_new


class GCRNEncoder(nn.Module):
    def __init__(self, input_dim, hidden_dim, num_layers=1, hops=1):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.cells = nn.ModuleList(
            GCRNCell(input_dim if i == 0 else hidden_dim, hidden_dim, hops) for i in range(num_layers)
        )

    def forward(self, inputs, adj):
        """Unroll from zero state.

        ``inputs`` is ``(B, T, n, F)``. Returns the top layer's hidden sequence
        ``(B, T, n, h)`` and the list of per-layer final states.
        """
        if inputs.ndim != 4 or inputs.shape[1] < 1:
            raise ShapeError(f"encoder expects (B, T>=1, n, F), got {tuple(inputs.shape)}")
        B, T, n, _ = inputs.shape
        seq = inputs
        finals = []
        for cell in self.cells:
            h = inputs.new_zeros(B, n, self.hidden_dim)
            outs = []
            for t in range(T):
                h = cell(seq[:, t], h, adj)
                outs.append(h)
            seq = torch.stack(outs, dim=1)
            finals.append(h)
        return seq, finals


def encode(inputs, adj, encoder: GCRNEncoder):
    seq, finals = encoder(inputs, adj)
    return seq, finals[-1]


def num_selected_queries(length, factor):
    return min(length, max(1, math.ceil(factor * math.log(length)))) if length > 1 else 1


def sparsity_measure(q, k):
    """``max_j(q.k_j/sqrt(d)) - mean_j(q.k_j/sqrt(d))`` for each query row."""
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return scores.amax(dim=-1) - scores.mean(dim=-1)


def probsparse_attention(q, k, v, factor=5.0, exact_fallback=False, return_weights=False):
    """Sparse self-attention over the second-to-last axis.

    Only the ``u = min(L, ceil(factor * ln L))`` queries with the largest
    sparsity measure attend; every other query returns the mean of ``v``
    (a uniform attention row). Leading axes are batch/head axes.
    """
    L = q.shape[-2]
    if L < 1:
        raise ShapeError("attention needs at least one position")
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    u = num_selected_queries(L, factor)
    if not exact_fallback and u < L:
        m = scores.amax(dim=-1) - scores.mean(dim=-1)
        top = m.topk(u, dim=-1).indices
        selected = torch.zeros_like(m, dtype=torch.bool).scatter(-1, top, True)
        weights = torch.where(selected[..., None], weights, torch.full_like(weights, 1.0 / L))
    out = weights @ v
    return (out, weights) if return_weights else out


def dense_attention(q, k, v):
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1) @ v


class TemporalAttention(nn.Module):
    """Multi-head sparse attention along time, independently for every node."""

    def __init__(self, hidden_dim, config: AttentionConfig):
        super().__init__()
        if hidden_dim % config.num_heads:
            raise ShapeError(f"hidden dim {hidden_dim} not divisible by {config.num_heads} heads")
        self.config = config
        self.query = nn.Linear(hidden_dim, hidden_dim)
        self.key = nn.Linear(hidden_dim, hidden_dim)
        self.value = nn.Linear(hidden_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, hidden_dim)

    def forward(self, seq, return_weights=False):
        """``seq`` is ``(B, T, n, h)``; returns contexts ``(B, T, n, h)``."""
        B, T, n, h = seq.shape
        heads = self.config.num_heads
        x = seq.transpose(1, 2)  # (B, n, T, h)

        def split(t):
            return t.reshape(B, n, T, heads, h // heads).transpose(2, 3)

        ctx, w = probsparse_attention(
            split(self.query(x)), split(self.key(x)), split(self.value(x)),
            factor=self.config.factor, exact_fallback=self.config.exact_fallback,
            return_weights=True,
        )
        ctx = self.out(ctx.transpose(2, 3).reshape(B, n, T, h)).transpose(1, 2)
        return (ctx, w) if return_weights else ctx


class AugmentedState(nn.Module):
    """Concatenate the last encoder state with its attention context and
    project back to the hidden size to seed the decoder."""

    def __init__(self, hidden_dim, config: AttentionConfig):
        super().__init__()
        self.attention = TemporalAttention(hidden_dim, config)
        self.projection = nn.Linear(2 * hidden_dim, hidden_dim)

    def forward(self, seq, h_last):
        context = self.attention(seq)[:, -1]
        if context.shape != h_last.shape:
            raise ShapeError(f"context {tuple(context.shape)} vs state {tuple(h_last.shape)}")
        H = torch.cat([h_last, context], dim=-1)
        return H, self.projection(H)


class GCRNDecoder(nn.Module):
    def __init__(self, input_dim, hidden_dim, num_layers=1, hops=1):
        super().__init__()
        self.cells = nn.ModuleList(
            GCRNCell(input_dim if i == 0 else hidden_dim, hidden_dim, hops) for i in range(num_layers)
        )
        self.head = nn.Linear(hidden_dim, 1)

    def forward(self, states, first_input, adj, horizon, targets=None, sampling_prob=0.0, generator=None):
        """Autoregressive rollout.

        ``states`` holds one ``(B, n, h)`` tensor per layer, ``first_input`` is
        ``(B, n)``. At each later step the true previous value from
        ``targets`` (``(B, horizon, n)``) is fed with probability
        ``sampling_prob``, else the model's own previous prediction.
        """
        if horizon < 1:
            raise ShapeError("horizon must be >= 1")
        if not 0.0 <= sampling_prob <= 1.0:
            raise ValueError(f"sampling_prob must lie in [0, 1], got {sampling_prob}")
        if sampling_prob > 0 and targets is None:
            raise ValueError("ground truth is required when sampling_prob > 0")
        states = list(states)
        x = first_input[..., None]
        preds = []
        for t in range(horizon):
            inp = x
            for i, cell in enumerate(self.cells):
                states[i] = cell(inp, states[i], adj)
                inp = states[i]
            y = self.head(inp).squeeze(-1)
            preds.append(y)
            if t + 1 < horizon and sampling_prob > 0 and (
                sampling_prob >= 1.0 or torch.rand((), generator=generator).item() < sampling_prob
            ):
                x = targets[:, t][..., None]
            else:
                x = y[..., None]
        return torch.stack(preds, dim=1)


def decode(decoder, init_state, first_input, adj, horizon=12, targets=None, sampling_prob=0.0, generator=None):
    states = init_state if isinstance(init_state, (list, tuple)) else [init_state]
    return decoder(states, first_input, adj, horizon, targets, sampling_prob, generator)
