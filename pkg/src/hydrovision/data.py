"""Station series ingestion, gap filling, splitting, scaling and windowing.

All functions here are pure: they never mutate their inputs and return new
objects, so they can be shared freely between threads.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ImputationError

ONE_DAY = dt.timedelta(days=1)


@dataclass(frozen=True)
class StationSeries:
    """Daily levels for ``n`` stations, ``values[t, s]`` in meters."""

    timestamps: tuple
    values: np.ndarray
    station_ids: tuple
    station_coords: np.ndarray
    missing_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D (T, n), got shape {values.shape}")
        n = values.shape[1]
        if len(self.station_ids) != n:
            raise DataError(
                f"{n} value columns but {len(self.station_ids)} station ids"
            )
        if len(self.timestamps) != values.shape[0]:
            raise DataError(
                f"{values.shape[0]} rows but {len(self.timestamps)} timestamps"
            )
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if b <= a:
                raise DataError(f"timestamps not strictly increasing at {b}")
        coords = np.asarray(self.station_coords, dtype=np.float64).reshape(n, 2)
        mask = self.missing_mask
        mask = np.isnan(values) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != values.shape:
            raise DataError("missing_mask shape does not match values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "station_coords", coords)
        object.__setattr__(self, "missing_mask", mask)
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        object.__setattr__(self, "station_ids", tuple(self.station_ids))

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_stations(self):
        return self.values.shape[1]

    def segment(self, start, stop):
        return replace(
            self,
            timestamps=self.timestamps[start:stop],
            values=self.values[start:stop].copy(),
            missing_mask=self.missing_mask[start:stop].copy(),
        )


def _read_station_meta(path):
    ids, coords = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["station_id", "x", "y"]:
            raise DataError(f"{path}: header must be 'station_id,x,y', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected 3")
            sid = row[0].strip()
            try:
                coords.append((float(row[1]), float(row[2])))
            except ValueError:
                raise DataError(f"{path}: row {lineno} has non-numeric coordinates") from None
            if sid in ids:
                raise DataError(f"{path}: duplicate station id {sid!r} on row {lineno}")
            ids.append(sid)
    if not ids:
        raise DataError(f"{path}: no stations listed")
    return ids, np.array(coords, dtype=np.float64)


def load_series(path, station_meta_path) -> StationSeries:
    """Read a ``date,<id_1>,...,<id_n>`` CSV plus its ``station_id,x,y`` table.

    Columns are reordered to follow the metadata file. Empty or ``nan`` cells
    become missing. Calendar days absent from the CSV are inserted as fully
    missing rows so that the result always has a unit daily step.
    """
    path, station_meta_path = Path(path), Path(station_meta_path)
    meta_ids, coords = _read_station_meta(station_meta_path)

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "date":
            raise DataError(f"{path}: first header column must be 'date'")
        columns = [h.strip() for h in header[1:]]
        unknown = [c for c in columns if c not in meta_ids]
        if unknown:
            raise DataError(f"{path}: column(s) {unknown} have no metadata row")
        absent = [s for s in meta_ids if s not in columns]
        if absent:
            raise DataError(f"{path}: station(s) {absent} listed in metadata but not in series")
        order = [columns.index(s) for s in meta_ids]

        dates, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            try:
                date = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise DataError(f"{path}: row {lineno}: malformed date {row[0]!r}") from None
            vals = []
            for col, cell in zip(columns, row[1:]):
                cell = cell.strip()
                if cell == "":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {col!r}: non-numeric value {cell!r}"
                    ) from None
            dates.append(date)
            rows.append([vals[i] for i in order])

    if not dates:
        raise DataError(f"{path}: no data rows")
    for a, b in zip(dates, dates[1:]):
        if b <= a:
            raise DataError(f"{path}: dates not strictly increasing at {b.isoformat()}")

    raw = np.array(rows, dtype=np.float64)
    total = (dates[-1] - dates[0]).days + 1
    values = np.full((total, len(meta_ids)), np.nan)
    offsets = [(d - dates[0]).days for d in dates]
    values[offsets] = raw
    timestamps = tuple(dates[0] + k * ONE_DAY for k in range(total))
    return StationSeries(timestamps, values, tuple(meta_ids), coords)


def write_series(series: StationSeries, path, decimals=6):
    """Write ``series`` in the same CSV layout ``load_series`` reads.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_series_rows(series, path, decimals)
        return
    with open(path, "w", newline="") as fh:
        _write_series_rows(series, fh, decimals)


def _write_series_rows(series, fh, decimals):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["date", *series.station_ids])
    for date, row, miss in zip(series.timestamps, series.values, series.missing_mask):
        w.writerow(
            [date.isoformat()]
            + ["" if m else f"{v:.{decimals}f}" for v, m in zip(row, miss)]
        )


def write_station_meta(series: StationSeries, path, decimals=3):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "x", "y"])
        for sid, (x, y) in zip(series.station_ids, series.station_coords):
            w.writerow([sid, f"{x:.{decimals}f}", f"{y:.{decimals}f}"])


def _shift_year(date, years):
    try:
        return date.replace(year=date.year + years)
    except ValueError:
        # Feb 29 -> Feb 28
        return date.replace(year=date.year + years, day=28)


def impute_missing(series: StationSeries, weights=(0.5, 0.5)) -> StationSeries:
    """Fill gaps from the same calendar day one year before and after.

    With both neighbours observed the fill is ``w_prev * prev + w_next * next``;
    with only one, that value is copied. Neighbours are looked up in the
    observed data only, so the result does not depend on fill order.
    """
    if not series.missing_mask.any():
        return series
    w_prev, w_next = weights
    index = {d: i for i, d in enumerate(series.timestamps)}
    observed = ~series.missing_mask
    values = series.values.copy()

    for t, s in zip(*np.nonzero(series.missing_mask)):
        date = series.timestamps[t]
        neighbours = []
        for years in (-1, 1):
            j = index.get(_shift_year(date, years))
            neighbours.append(series.values[j, s] if j is not None and observed[j, s] else None)
        prev, nxt = neighbours
        if prev is not None and nxt is not None:
            values[t, s] = w_prev * prev + w_next * nxt
        elif prev is not None:
            values[t, s] = prev
        elif nxt is not None:
            values[t, s] = nxt
        else:
            raise ImputationError(
                f"cannot impute {date.isoformat()} at station {series.station_ids[s]!r}: "
                "no observation one year before or after"
            )
    return replace(series, values=values, missing_mask=np.zeros_like(series.missing_mask))


def split_points(T, fractions=(0.7, 0.1, 0.2)):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise DataError(f"expected three split fractions, got {fractions}")
    if any(f <= 0 for f in fractions):
        raise DataError(f"split fractions must all be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {sum(fractions)!r}")
    # tolerance keeps e.g. 100 * 0.7 = 70.00000000000001 -> 70 and 10 * 0.8 -> 8
    a = math.floor(T * fractions[0] + 1e-9)
    b = math.floor(T * (fractions[0] + fractions[1]) + 1e-9)
    return a, b


def chronological_split(series: StationSeries, fractions=(0.7, 0.1, 0.2)):
    """Cut ``series`` into contiguous train / validation / test segments."""
    a, b = split_points(len(series), fractions)
    return series.segment(0, a), series.segment(a, b), series.segment(b, len(series))


@dataclass(frozen=True)
class NormStats:
    """Per-station z-score statistics (population std)."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_normalizer(train) -> NormStats:
    values = train.values if isinstance(train, StationSeries) else np.asarray(train, dtype=np.float64)
    if values.shape[0] == 0:
        raise DataError("cannot fit normalizer on an empty series")
    if np.isnan(values).any():
        raise DataError("cannot fit normalizer on a series with missing values; impute first")
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    if np.any(std <= 0):
        bad = np.flatnonzero(std <= 0).tolist()
        raise DataError(f"station column(s) {bad} are constant over the training split")
    return NormStats(mean, std)


@dataclass(frozen=True)
class WindowedDataset:
    inputs: np.ndarray   # (S, T_in, n, F)
    targets: np.ndarray  # (S, T_out, n)

    def __len__(self):
        return self.inputs.shape[0]


def make_windows(series, input_len=12, horizon=12) -> WindowedDataset:
    """Stride-1 sliding windows; targets follow their inputs directly."""
    values = series.values if isinstance(series, StationSeries) else np.asarray(series, dtype=np.float64)
    T = values.shape[0]
    need = input_len + horizon
    if input_len < 1 or horizon < 1:
        raise DataError("input_len and horizon must be positive")
    if T < need:
        raise DataError(f"series of length {T} is shorter than input_len + horizon = {need}")
    S = T - need + 1
    idx = np.arange(S)[:, None]
    inputs = values[idx + np.arange(input_len)]
    targets = values[idx + input_len + np.arange(horizon)]
    return WindowedDataset(inputs[..., None].copy(), targets.copy())
