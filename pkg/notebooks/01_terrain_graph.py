"""
From elevation tiles to a station graph
=======================================

Walks a synthetic scenario through the terrain half of the model: raster,
16x16 patches, transformer tokens, and the station-to-station adjacency read
off token similarity.
"""

# %%
import numpy as np
import torch

from hydrovision import synth
from hydrovision.terrain import patchify, station_patch_indices
from hydrovision.vit import VitConfig, VitEncoder, elevation_adjacency, standardize_patches

np.set_printoptions(precision=3, suppress=True)

# %% [markdown]
# A scenario bundles a smooth random raster, six stations and the coupling
# matrix that generated their series. Row i weights each neighbour by how far
# it lies below station i, so the lowest station has a uniform row.

# %%
sc = synth.generate(n=6, T=730, seed=7)
print("raster", sc.raster.heights.shape, "cell size", sc.raster.cell_size)
print("station elevations", sc.raster.heights[sc.station_cells[:, 0], sc.station_cells[:, 1]])
print("oracle coupling\n", sc.oracle_adjacency)

# %% [markdown]
# Tiles are cut row-major from the north-west corner; each station maps to
# the tile that contains it.

# %%
grid = patchify(sc.raster)
idx = station_patch_indices(sc.raster, grid, sc.stations)
print("tile grid", grid.grid_shape, "station tiles", idx)

# %% [markdown]
# An untrained encoder already gives a valid row-stochastic graph. Training
# moves it, since the encoder is fitted jointly with the forecaster.

# %%
torch.manual_seed(0)
vit = VitEncoder(VitConfig()).double()
with torch.no_grad():
    tokens = vit(standardize_patches(grid.patches))
    a_elev = elevation_adjacency(tokens, idx, VitConfig().similarity_temperature)
print("tokens", tuple(tokens.shape))
print("elevation adjacency\n", a_elev.numpy())
print("row sums", a_elev.sum(1).numpy())

# %%
try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    fig, ax = plt.subplots(1, 3, figsize=(12, 4))
    ax[0].imshow(sc.raster.heights, cmap="terrain")
    ax[0].scatter(sc.station_cells[:, 1], sc.station_cells[:, 0], c="k", s=15)
    ax[0].set_title("terrain and stations")
    ax[1].imshow(sc.oracle_adjacency, vmin=0)
    ax[1].set_title("oracle coupling")
    ax[2].imshow(a_elev.numpy(), vmin=0)
    ax[2].set_title("untrained elevation graph")
    fig.tight_layout()
