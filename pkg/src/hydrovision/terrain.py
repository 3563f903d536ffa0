"""Elevation rasters: ASCII grid IO, pooling, 16x16 patching, station lookup.

Coordinates use a raster-aligned planar frame: ``x`` grows east, ``y`` grows
south (image convention), and ``origin`` is the top-left corner of the top-left
cell. A cell ``(row, col)`` covers ``origin + (col, row) * cell_size``.
When an ESRI grid is read, ``y = -northing`` so geographic data maps onto
this frame without flipping rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import TerrainError

PATCH_SIZE = 16
_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass(frozen=True)
class ElevationRaster:
    heights: np.ndarray
    cell_size: float = 1.0
    origin: tuple = (0.0, 0.0)
    nodata_value: float = -9999.0

    @property
    def shape(self):
        return self.heights.shape

    @property
    def extent(self):
        """``(x_min, y_min, x_max, y_max)`` in the raster frame."""
        H, W = self.heights.shape
        x0, y0 = self.origin
        return (x0, y0, x0 + W * self.cell_size, y0 + H * self.cell_size)


@dataclass(frozen=True)
class PatchGrid:
    patches: np.ndarray      # (L, P, P)
    grid_shape: tuple
    patch_size: int = PATCH_SIZE

    def __len__(self):
        return self.patches.shape[0]


def fill_nodata(heights, nodata_mask):
    """Replace masked cells with their nearest valid cell (Euclidean).

    Ties go to the smaller row, then the smaller column.
    """
    if not nodata_mask.any():
        return heights
    valid = np.argwhere(~nodata_mask)
    if valid.size == 0:
        raise TerrainError("raster contains only nodata cells")
    tree = cKDTree(valid)
    out = heights.copy()
    holes = np.argwhere(nodata_mask)
    dist, _ = tree.query(holes, k=1)
    for (r, c), d in zip(holes, dist):
        cands = valid[tree.query_ball_point((r, c), d + 1e-9)]
        rr, cc = min(map(tuple, cands))
        out[r, c] = heights[rr, cc]
    return out


def read_ascii_grid(path) -> ElevationRaster:
    """Parse an ESRI ASCII grid (six header lines, north row first)."""
    path = Path(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = {}
    i = 0
    while i < len(lines) and len(header) < len(_HEADER_KEYS):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0].lower()
        if key not in _HEADER_KEYS:
            break
        if len(parts) != 2:
            raise TerrainError(f"{path}: malformed header line {lines[i]!r}")
        header[key] = float(parts[1])
        i += 1
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise TerrainError(f"{path}: header key(s) missing: {missing}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    rows = [ln.split() for ln in lines[i:] if ln.strip()]
    if len(rows) != nrows:
        raise TerrainError(f"{path}: header declares nrows={nrows} but found {len(rows)} rows")
    for r, row in enumerate(rows):
        if len(row) != ncols:
            raise TerrainError(
                f"{path}: row {r} has {len(row)} values, header declares ncols={ncols}"
            )
    try:
        heights = np.array(rows, dtype=np.float64)
    except ValueError:
        raise TerrainError(f"{path}: non-numeric raster value") from None

    nodata = header["nodata_value"]
    heights = fill_nodata(heights, heights == nodata)
    cs = header["cellsize"]
    origin = (header["xllcorner"], -(header["yllcorner"] + nrows * cs))
    return ElevationRaster(heights, cs, origin, nodata)


load_raster = read_ascii_grid


def write_ascii_grid(raster: ElevationRaster, path, decimals=4):
    H, W = raster.heights.shape
    cs = raster.cell_size
    xll = raster.origin[0]
    yll = -raster.origin[1] - H * cs
    with open(path, "w") as fh:
        fh.write(f"ncols {W}\nnrows {H}\n")
        fh.write(f"xllcorner {xll:.6f}\nyllcorner {yll:.6f}\n")
        fh.write(f"cellsize {cs:.6f}\nNODATA_value {raster.nodata_value:g}\n")
        for row in raster.heights:
            fh.write(" ".join(f"{v:.{decimals}f}" for v in row))
            fh.write("\n")


def downsample(raster: ElevationRaster, factor: int) -> ElevationRaster:
    """Block-mean pooling. Trailing rows/columns that do not fill a block are dropped."""
    factor = int(factor)
    if factor < 1:
        raise TerrainError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return raster
    H, W = raster.heights.shape
    if factor > H or factor > W:
        raise TerrainError(f"downsample factor {factor} exceeds raster shape {(H, W)}")
    h, w = H // factor, W // factor
    blocks = raster.heights[: h * factor, : w * factor].reshape(h, factor, w, factor)
    return replace(raster, heights=blocks.mean(axis=(1, 3)), cell_size=raster.cell_size * factor)


def patchify(raster: ElevationRaster, patch_size=PATCH_SIZE) -> PatchGrid:
    """Cut into non-overlapping tiles in row-major order, edge-replicating the
    bottom and right borders up to a multiple of ``patch_size``."""
    heights = np.asarray(raster.heights, dtype=np.float64)
    H, W = heights.shape
    if H == 0 or W == 0:
        raise TerrainError("cannot patchify an empty raster")
    rows, cols = math.ceil(H / patch_size), math.ceil(W / patch_size)
    padded = np.pad(heights, ((0, rows * patch_size - H), (0, cols * patch_size - W)), mode="edge")
    tiles = (
        padded.reshape(rows, patch_size, cols, patch_size)
        .transpose(0, 2, 1, 3)
        .reshape(rows * cols, patch_size, patch_size)
    )
    return PatchGrid(tiles, (rows, cols), patch_size)


def unpatchify(grid: PatchGrid, shape):
    rows, cols = grid.grid_shape
    P = grid.patch_size
    full = grid.patches.reshape(rows, cols, P, P).transpose(0, 2, 1, 3).reshape(rows * P, cols * P)
    return full[: shape[0], : shape[1]]


def coord_to_cell(raster: ElevationRaster, coord):
    x, y = coord
    x0, y0, x1, y1 = raster.extent
    if not (x0 <= x < x1 and y0 <= y < y1):
        raise TerrainError(f"coordinate {tuple(coord)} lies outside raster extent {raster.extent}")
    col = int((x - x0) // raster.cell_size)
    row = int((y - y0) // raster.cell_size)
    H, W = raster.heights.shape
    return min(row, H - 1), min(col, W - 1)


def station_patch_index(raster: ElevationRaster, grid: PatchGrid, coord) -> int:
    row, col = coord_to_cell(raster, coord)
    P = grid.patch_size
    return (row // P) * grid.grid_shape[1] + col // P


def station_patch_indices(raster, grid, coords):
    return [station_patch_index(raster, grid, c) for c in coords]
