"""Synthetic terrain + station series whose coupling is set by elevation.

The generated coupling matrix is known exactly, which gives a ground truth
for checking that terrain information helps the forecaster.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import StationSeries, write_series, write_station_meta
from .errors import DataError
from .graphs import write_adjacency
from .terrain import PATCH_SIZE, ElevationRaster, write_ascii_grid

SELF_WEIGHT = 0.8
MIX_WEIGHT = 0.2
SEASON_DAYS = 365.0
# daily seasonal forcing in meters; keeps the annual cycle well above the noise
SEASONAL_AMPLITUDE = 0.02
START_DATE = dt.date(1981, 1, 1)


@dataclass(frozen=True)
class SynthScenario:
    raster: ElevationRaster
    stations: np.ndarray          # (n, 2) planar coordinates
    station_cells: np.ndarray     # (n, 2) (row, col)
    oracle_adjacency: np.ndarray  # (n, n)
    series: StationSeries
    seed: int


def gaussian_terrain(rng, size=64, bumps=6, relief=1.0, base=200.0):
    """Sum of seeded 2-D Gaussian bumps on a ``size x size`` grid, in meters."""
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    z = np.full((size, size), base)
    for _ in range(bumps):
        r0, c0 = rng.uniform(0, size, 2)
        width = rng.uniform(size / 12, size / 3)
        amp = rng.uniform(20.0, 100.0) * relief
        z += amp * np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2 * width**2))
    return z


def oracle_adjacency(elevations, scale):
    """``W_ij ~ exp(max(0, e_i - e_j) / scale)``, rows normalised."""
    e = np.asarray(elevations, dtype=np.float64)
    if scale <= 0:
        scale = 1.0
    w = np.exp(np.maximum(0.0, e[:, None] - e[None, :]) / scale)
    return w / w.sum(axis=1, keepdims=True)


def simulate(x0, adjacency, steps, noise=0.01, seasonal_amplitude=SEASONAL_AMPLITUDE, phases=None, rng=None):
    """Roll ``x[t+1] = 0.8 x[t] + 0.2 W x[t] + seasonal + noise`` for ``steps`` rows."""
    n = len(x0)
    phases = np.zeros(n) if phases is None else np.asarray(phases)
    out = np.empty((steps, n))
    out[0] = x0
    for t in range(steps - 1):
        season = seasonal_amplitude * np.sin(2 * np.pi * (t + 1) / SEASON_DAYS + phases)
        eps = rng.standard_normal(n) * noise if noise > 0 else 0.0
        out[t + 1] = SELF_WEIGHT * out[t] + MIX_WEIGHT * (adjacency @ out[t]) + season + eps
    return out


def _place_stations(rng, n, size):
    # one station per 16x16 tile while tiles last, so the terrain tokens differ
    tiles_per_side = -(-size // PATCH_SIZE)
    n_tiles = tiles_per_side**2
    if n > size * size:
        raise DataError(f"cannot place {n} stations on {size * size} distinct cells")
    if n <= n_tiles:
        cells = []
        for tile in rng.choice(n_tiles, size=n, replace=False):
            tr, tc = divmod(int(tile), tiles_per_side)
            r = tr * PATCH_SIZE + rng.integers(0, min(PATCH_SIZE, size - tr * PATCH_SIZE))
            c = tc * PATCH_SIZE + rng.integers(0, min(PATCH_SIZE, size - tc * PATCH_SIZE))
            cells.append((r, c))
        return np.array(cells)
    flat = rng.choice(size * size, size=n, replace=False)
    return np.stack(np.divmod(flat, size), axis=1)


def generate(n=6, T=2000, seed=0, size=64, cell_size=10.0, relief=1.0, noise=0.01,
             seasonal_amplitude=SEASONAL_AMPLITUDE, x0=None) -> SynthScenario:
    """Build a reproducible scenario with ``n`` stations and ``T`` daily steps."""
    if n < 2:
        raise DataError(f"need at least 2 stations, got {n}")
    if T < 100:
        raise DataError(f"need at least 100 time steps, got {T}")
    rng = np.random.default_rng(seed)
    heights = gaussian_terrain(rng, size, relief=relief)
    raster = ElevationRaster(heights, cell_size, (0.0, 0.0), -9999.0)
    cells = _place_stations(rng, n, size)
    coords = (cells[:, ::-1] + 0.5) * cell_size + np.asarray(raster.origin)
    elev = heights[cells[:, 0], cells[:, 1]]
    adj = oracle_adjacency(elev, heights.std())

    start = rng.uniform(0.5, 2.0, n) if x0 is None else np.broadcast_to(np.asarray(x0, dtype=np.float64), (n,))
    values = simulate(start, adj, T, noise, seasonal_amplitude, rng=rng)
    timestamps = tuple(START_DATE + dt.timedelta(days=k) for k in range(T))
    ids = tuple(f"S{i + 1:02d}" for i in range(n))
    series = StationSeries(timestamps, values, ids, coords)
    return SynthScenario(raster, coords, cells, adj, series, seed)


def write_scenario(scenario: SynthScenario, out_dir):
    """Write ``terrain.asc``, ``series.csv``, ``stations.csv`` and ``oracle_adj.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ascii_grid(scenario.raster, out / "terrain.asc")
    write_series(scenario.series, out / "series.csv")
    write_station_meta(scenario.series, out / "stations.csv")
    write_adjacency(scenario.oracle_adjacency, out / "oracle_adj.txt")
    return out
