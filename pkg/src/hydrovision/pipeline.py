"""End-to-end orchestration: run config, checkpoints, training, scoring, forecasting."""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import data as D
from . import terrain as TR
from .errors import ConfigError, DataError, HydroVisionError
from .gcrn import AttentionConfig
from .graphs import write_adjacency
from .model import HydroVision, ModelConfig
from .train import TrainConfig, evaluate, train, write_history, persistence_predictor
from .vit import VitConfig

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "HYDROVISION-CKPT-1"


@dataclass
class DataPaths:
    series: str = "series.csv"
    stations: str = "stations.csv"
    raster: str = "terrain.asc"


@dataclass
class TerrainOptions:
    downsample: int = 1


@dataclass
class WindowOptions:
    input_len: int = 12
    horizon: int = 12


@dataclass
class PrepOptions:
    split: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    imputation_weights: list = field(default_factory=lambda: [0.5, 0.5])


@dataclass
class GraphOptions:
    alpha: float = 0.5
    learn_alpha: bool = False
    use_elevation: bool = True
    embedding_dim: int = 10
    conv_layers: int = 1


@dataclass
class GcrnOptions:
    hidden_dim: int = 32
    num_layers: int = 1


@dataclass
class RunConfig:
    data: DataPaths = field(default_factory=DataPaths)
    terrain: TerrainOptions = field(default_factory=TerrainOptions)
    window: WindowOptions = field(default_factory=WindowOptions)
    prep: PrepOptions = field(default_factory=PrepOptions)
    vit: VitConfig = field(default_factory=VitConfig)
    graph: GraphOptions = field(default_factory=GraphOptions)
    gcrn: GcrnOptions = field(default_factory=GcrnOptions)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "run"

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, raw, base_dir=None):
        """Build from a nested mapping; absent keys take defaults (and are logged)."""
        try:
            cfg = _fill(cls, raw or {}, "")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if base_dir is not None:
            base = Path(base_dir)
            for f in dataclasses.fields(DataPaths):
                p = Path(getattr(cfg.data, f.name))
                if not p.is_absolute():
                    setattr(cfg.data, f.name, str(base / p))
            if not Path(cfg.out_dir).is_absolute():
                cfg.out_dir = str(base / cfg.out_dir)
        return cfg

    def model_config(self, num_nodes):
        g = self.graph
        return ModelConfig(
            num_nodes=num_nodes, input_dim=1, hidden_dim=self.gcrn.hidden_dim,
            num_layers=self.gcrn.num_layers, horizon=self.window.horizon,
            embedding_dim=g.embedding_dim, alpha=g.alpha, learn_alpha=g.learn_alpha,
            use_elevation=g.use_elevation, conv_layers=g.conv_layers, seed=self.train.seed,
            vit=dataclasses.replace(self.vit), attention=dataclasses.replace(self.attention),
        )


def _section_type(f):
    factory = f.default_factory
    if factory is not dataclasses.MISSING and dataclasses.is_dataclass(factory):
        return factory
    return None


def _fill(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {prefix.rstrip('.') or '<root>'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {prefix.rstrip('.') or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        sub = _section_type(f)
        if sub is not None:
            kwargs[name] = _fill(sub, raw.get(name, {}), f"{prefix}{name}.")
        elif name in raw:
            kwargs[name] = raw[name]
        else:
            log.info("config: %s%s not set, using default", prefix, name)
    return cls(**kwargs)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return RunConfig.from_dict(raw, base_dir=path.parent)


@dataclass
class PreparedData:
    series: D.StationSeries
    stats: D.NormStats
    train: D.WindowedDataset
    val: D.WindowedDataset
    test: D.WindowedDataset
    segments: tuple


def _normalized_windows(segment, stats, window):
    normed = stats.apply(segment.values)
    return D.make_windows(normed, window.input_len, window.horizon)


def prepare_series(series, cfg: RunConfig, stats=None) -> PreparedData:
    series = D.impute_missing(series, tuple(cfg.prep.imputation_weights))
    tr, va, te = D.chronological_split(series, cfg.prep.split)
    if stats is None:
        stats = D.fit_normalizer(tr)
    return PreparedData(
        series, stats,
        _normalized_windows(tr, stats, cfg.window),
        _normalized_windows(va, stats, cfg.window),
        _normalized_windows(te, stats, cfg.window),
        (tr, va, te),
    )


def prepare_terrain(raster_path, coords, downsample_factor=1):
    raster = TR.downsample(TR.read_ascii_grid(raster_path), downsample_factor)
    grid = TR.patchify(raster)
    return raster, grid, TR.station_patch_indices(raster, grid, coords)


def build_model(cfg: RunConfig, series: D.StationSeries):
    mcfg = cfg.model_config(series.n_stations)
    if mcfg.use_elevation:
        _, grid, idx = prepare_terrain(cfg.data.raster, series.station_coords, cfg.terrain.downsample)
        return HydroVision(mcfg, grid.patches, idx)
    return HydroVision(mcfg)


def _atomic_write(path, writer):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def save_checkpoint(path, model: HydroVision, cfg: RunConfig, stats: D.NormStats, station_ids):
    with torch.no_grad():
        adj = model.adjacencies()
    blob = {
        "magic": CHECKPOINT_MAGIC,
        "run_config": cfg.to_json(),
        "model_config": json.dumps(dataclasses.asdict(model.config)),
        "station_ids": list(station_ids),
        "norm_stats": stats.to_dict(),
        "num_patches": int(model.patches.shape[0]) if model.vit is not None else 0,
        "state_dict": model.state_dict(),
        "a_elevation": None if adj["elevation"] is None else adj["elevation"].clone(),
    }
    _atomic_write(path, lambda tmp: torch.save(blob, tmp))


@dataclass
class Checkpoint:
    model: HydroVision
    run_config: RunConfig
    stats: D.NormStats
    station_ids: list
    a_elevation: object


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint {path} does not exist")
    try:
        blob = torch.load(path, weights_only=True)
    except Exception as exc:  # torch raises several unrelated types for junk files
        raise DataError(f"{path}: unreadable checkpoint ({exc.__class__.__name__})") from None
    if not isinstance(blob, dict) or blob.get("magic") != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    mcfg = ModelConfig.from_dict(json.loads(blob["model_config"]))
    patches = idx = None
    if mcfg.use_elevation:
        patches = np.zeros((blob["num_patches"], mcfg.vit.patch_size, mcfg.vit.patch_size))
        idx = [0] * mcfg.num_nodes
    model = HydroVision(mcfg, patches, idx)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    run_cfg = RunConfig.from_dict(json.loads(blob["run_config"]))
    return Checkpoint(model, run_cfg, D.NormStats.from_dict(blob["norm_stats"]),
                      list(blob["station_ids"]), blob["a_elevation"])


@dataclass
class TrainingRun:
    model: HydroVision
    prepared: PreparedData
    result: object
    history: list
    out_dir: Path


def run_training(cfg: RunConfig, on_epoch=None) -> TrainingRun:
    """load -> impute -> split -> normalize -> window -> graphs -> train -> write artifacts."""
    for f in dataclasses.fields(DataPaths):
        p = Path(getattr(cfg.data, f.name))
        if f.name == "raster" and not cfg.graph.use_elevation:
            continue
        if not p.is_file():
            raise ConfigError(f"data.{f.name}: {p} does not exist")
    series = D.load_series(cfg.data.series, cfg.data.stations)
    prepared = prepare_series(series, cfg)
    model = build_model(cfg, series)
    result, history = train(model, prepared.train, prepared.val, cfg.train, on_epoch=on_epoch)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.pt", model, cfg, prepared.stats, series.station_ids)
    write_history(history, out / "history.jsonl")
    with open(out / "train_steps.jsonl", "w") as fh:
        for i, v in enumerate(result.step_losses):
            fh.write(json.dumps({"step": i, "loss": v}) + "\n")
    (out / "config.json").write_text(cfg.to_json())
    with torch.no_grad():
        adj = model.adjacencies()
    for name in ("adaptive", "elevation", "hybrid"):
        if adj[name] is not None:
            write_adjacency(adj[name], out / f"adj_{name}.txt")
    return TrainingRun(model, prepared, result, history, out)


def _load_data_dir(data):
    data = Path(data)
    if data.is_dir():
        series_path, meta_path = data / "series.csv", data / "stations.csv"
    else:
        series_path, meta_path = data, data.parent / "stations.csv"
    for p in (series_path, meta_path):
        if not p.is_file():
            raise DataError(f"{p} does not exist")
    return D.load_series(series_path, meta_path)


def _check_stations(ckpt: Checkpoint, series):
    if list(series.station_ids) != list(ckpt.station_ids):
        raise DataError(
            f"checkpoint stations {ckpt.station_ids} do not match data stations {list(series.station_ids)}"
        )


def evaluate_checkpoint(ckpt: Checkpoint, data, predictor="model"):
    """Score the test segment of ``data`` (directory or series CSV)."""
    series = _load_data_dir(data)
    _check_stations(ckpt, series)
    prepared = prepare_series(series, ckpt.run_config, stats=ckpt.stats)
    horizon = ckpt.model.config.horizon
    if predictor == "model":
        fn = ckpt.model
    elif predictor == "persistence":
        fn = persistence_predictor(horizon)
    elif predictor == "oracle":
        fn = _oracle_predictor(prepared.test)
    else:
        raise ConfigError(f"unknown predictor {predictor!r}")
    report = evaluate(fn, prepared.test, ckpt.stats, num_nodes=ckpt.model.config.num_nodes)
    return report, prepared


def _oracle_predictor(dataset):
    # test hook: returns the true targets for each batch, matched by inputs
    lookup = {dataset.inputs[i].tobytes(): dataset.targets[i] for i in range(len(dataset))}

    def predict(inputs):
        arr = inputs.detach().cpu().numpy()
        return torch.as_tensor(np.stack([lookup[a.tobytes()] for a in arr]))

    return predict


def forecast(ckpt: Checkpoint, data, horizon=None):
    """Forecast ``horizon`` days past the end of ``data`` in meters.

    Returns ``(dates, values)`` with ``values`` shaped ``(horizon, n)``.
    """
    trained = ckpt.model.config.horizon
    horizon = trained if horizon is None else int(horizon)
    if horizon < 1 or horizon > trained:
        raise ConfigError(f"horizon must be in [1, {trained}], got {horizon}")
    series = _load_data_dir(data)
    _check_stations(ckpt, series)
    series = D.impute_missing(series, tuple(ckpt.run_config.prep.imputation_weights))
    T_in = ckpt.run_config.window.input_len
    if len(series) < T_in:
        raise DataError(f"need at least {T_in} rows to forecast, got {len(series)}")
    window = ckpt.stats.apply(series.values[-T_in:])
    with torch.no_grad():
        pred = ckpt.model(torch.as_tensor(window[None, :, :, None]))
    values = ckpt.stats.invert(pred[0, :horizon].numpy())
    last = series.timestamps[-1]
    dates = [last + dt.timedelta(days=k + 1) for k in range(horizon)]
    return dates, values


def write_forecast(path, dates, values, station_ids):
    s = D.StationSeries(tuple(dates), values, tuple(station_ids), np.zeros((len(station_ids), 2)))
    D.write_series(s, path)


def plot_forecasts(ckpt: Checkpoint, prepared: PreparedData, out_dir):
    """Per-station test-set plots of 1-step and last-step forecasts vs actual."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    test = prepared.test
    with torch.no_grad():
        pred = ckpt.model(torch.as_tensor(test.inputs)).numpy()
    pred = ckpt.stats.invert(pred)
    actual = ckpt.stats.invert(test.targets)
    H = pred.shape[1]
    paths = []
    for s, sid in enumerate(ckpt.station_ids):
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(actual[:, 0, s], label="actual", color="k", lw=1)
        ax.plot(pred[:, 0, s], label="1-day", lw=1)
        ax.plot(np.arange(H - 1, H - 1 + len(pred)), pred[:, -1, s], label=f"{H}-day", lw=1)
        ax.set_title(f"station {sid}")
        ax.set_ylabel("level (m)")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        p = Path(out_dir) / f"forecast_{sid}.png"
        fig.savefig(p, dpi=100)
        plt.close(fig)
        paths.append(p)
    return paths


__all__ = [
    "CHECKPOINT_MAGIC", "RunConfig", "load_run_config", "prepare_series", "prepare_terrain",
    "build_model", "save_checkpoint", "load_checkpoint", "run_training", "evaluate_checkpoint",
    "forecast", "write_forecast", "HydroVisionError",
]
