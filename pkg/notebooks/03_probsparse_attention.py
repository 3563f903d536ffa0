"""
Sparse temporal attention
=========================

Shows which queries the sparsity score keeps, and how far the sparse result
is from full attention as the number of kept queries grows.
"""

# %%
import math

import torch

from hydrovision.gcrn import dense_attention, num_selected_queries, probsparse_attention, sparsity_measure

torch.manual_seed(0)
L, d = 48, 16
q, k, v = (torch.randn(L, d, dtype=torch.float64) for _ in range(3))

# %% [markdown]
# The score is the gap between a query's largest scaled dot product and its
# mean. Peaked queries score high; near-uniform ones score low and are
# replaced by the mean of the values.

# %%
m = sparsity_measure(q, k)
u = num_selected_queries(L, 5.0)
print(f"L={L}: keep u={u} queries (c ln L = {5 * math.log(L):.1f})")
print("top scores", m.topk(5).values.numpy().round(3))

# %%
dense = dense_attention(q, k, v)
for factor in (0.5, 1.0, 2.0, 5.0, 20.0):
    out = probsparse_attention(q, k, v, factor=factor)
    u = num_selected_queries(L, factor)
    print(f"c={factor:5.1f}  u={u:3d}  max |sparse - dense| = {(out - dense).abs().max():.4f}")
