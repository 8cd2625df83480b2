"""Gridded time-series ingestion and preprocessing.

Turns raw per-day feature grids plus a scalar target series into windowed
training samples: mean imputation of missing values, cyclic encoding of
the coordinate axes, static-feature broadcasting, 7-day sliding windows,
min-max target normalization, and an interleaved train/validation split.

All functions are pure over value-semantic data; missing values are IEEE
NaN in the float64 payload.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor_core

CYCLIC_FEATURE_NAMES = ("sin_lat", "cos_lat", "sin_lon", "cos_lon")


class PipelineError(ValueError):
    pass


class InvalidCoordinateError(PipelineError):
    pass


class CannotImputeError(PipelineError):
    pass


class DegenerateRangeError(PipelineError):
    pass


class InsufficientHistoryError(PipelineError):
    pass


class InvalidWindowError(PipelineError):
    pass


class TooFewSamplesError(PipelineError):
    pass


@dataclass
class PipelineConfig:
    window_len: int = 7
    split_frac: float = 0.8
    seed: int = 0
    impute_mode: str = "per_channel"  # per_channel | global
    normalize_scope: str = "train"    # train | full


@dataclass
class GridSeries:
    """A daily stack of H x W x C feature grids with a scalar target series.

    dynamic: (T, H, W, C_d); static: (H, W, C_s); target: (T,) with NaN as
    the missing marker. lat_axis runs north to south (descending degrees).
    """

    dates: list[dt.date]
    dynamic: np.ndarray
    static: np.ndarray
    lat_axis: np.ndarray
    lon_axis: np.ndarray
    feature_names: list[str]
    target: np.ndarray

    def __post_init__(self):
        self.dynamic = np.asarray(self.dynamic, dtype=np.float64)
        self.static = np.asarray(self.static, dtype=np.float64)
        self.lat_axis = np.asarray(self.lat_axis, dtype=np.float64)
        self.lon_axis = np.asarray(self.lon_axis, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        t, h, w, cd = self.dynamic.shape
        if len(self.dates) != t or self.target.shape != (t,):
            raise PipelineError("dates, dynamic and target lengths disagree")
        if self.static.shape[:2] != (h, w):
            raise PipelineError("static grid does not match the dynamic grid")
        if self.lat_axis.shape != (h,) or self.lon_axis.shape != (w,):
            raise PipelineError("coordinate axes do not match the grid")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise PipelineError(f"dates must be consecutive days; gap at {a} -> {b}")
        for axis, name in ((self.lat_axis, "lat_axis"), (self.lon_axis, "lon_axis")):
            d = np.diff(axis)
            if axis.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
                raise PipelineError(f"{name} must be strictly monotone")
        if len(self.feature_names) != cd + self.static.shape[2]:
            raise PipelineError("feature_names must cover dynamic + static channels")

    @property
    def all_feature_names(self) -> list[str]:
        return list(self.feature_names) + list(CYCLIC_FEATURE_NAMES)


@dataclass
class WindowedDataset:
    """Sliding-window samples: inputs[i] covers days i..i+Wn-1 and
    targets[i] is day i+Wn."""

    inputs: np.ndarray          # (N, Wn, H, W, C)
    targets: np.ndarray         # (N,)
    target_dates: list[dt.date]
    window_len: int
    feature_names: list[str] = field(default_factory=list)
    lat_axis: np.ndarray | None = None
    lon_axis: np.ndarray | None = None

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class SplitPlan:
    train_idx: list[int]
    val_idx: list[int]
    seed: int


def cyclic_encode(lat, lon):
    """Map coordinates onto the unit circle with 90/180-degree periods.

    Returns (sin_lat, cos_lat, sin_lon, cos_lon). Note the latitude period
    of 90 degrees makes latitudes 90 degrees apart indistinguishable; the
    encoding is applied exactly as defined.
    """
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise InvalidCoordinateError("latitude/longitude must be finite")
    a = 2.0 * np.pi * lat / 90.0
    b = 2.0 * np.pi * lon / 180.0
    return np.sin(a), np.cos(a), np.sin(b), np.cos(b)


def cyclic_channels(lat_axis: np.ndarray, lon_axis: np.ndarray) -> np.ndarray:
    """Four H x W static channels: sin/cos of lat per row, of lon per column."""
    sin_lat, cos_lat, sin_lon, cos_lon = cyclic_encode(lat_axis, lon_axis)
    h, w = lat_axis.shape[0], lon_axis.shape[0]
    out = np.empty((h, w, 4), dtype=np.float64)
    out[:, :, 0] = sin_lat[:, None]
    out[:, :, 1] = cos_lat[:, None]
    out[:, :, 2] = sin_lon[None, :]
    out[:, :, 3] = cos_lon[None, :]
    return out


def fill_missing(t: np.ndarray) -> np.ndarray:
    """Replace every NaN with the mean of the tensor's finite entries."""
    t = np.asarray(t, dtype=np.float64)
    finite = np.isfinite(t)
    if not finite.any():
        raise CannotImputeError("all entries missing; no mean to impute with")
    if finite.all():
        return t.copy()
    out = t.copy()
    out[~finite] = t[finite].mean()
    return out


def fill_missing_per_channel(t: np.ndarray) -> np.ndarray:
    """Apply fill_missing independently to each trailing-axis channel."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    for c in range(t.shape[-1]):
        try:
            out[..., c] = fill_missing(t[..., c])
        except CannotImputeError:
            raise CannotImputeError(f"channel {c} has no finite entries")
    return out


def impute(t: np.ndarray, mode: str = "per_channel") -> np.ndarray:
    if mode == "global":
        return fill_missing(t)
    if mode == "per_channel":
        return fill_missing_per_channel(t)
    raise ValueError(f"unknown impute mode {mode!r}")


def broadcast_static(static: np.ndarray, window_len: int) -> np.ndarray:
    """Repeat an H x W x C_s grid along a new leading time axis."""
    if window_len < 1:
        raise InvalidWindowError(f"window length must be >= 1, got {window_len}")
    static = np.asarray(static, dtype=np.float64)
    return np.broadcast_to(static, (window_len,) + static.shape).copy()


def normalize_target(y: np.ndarray, fit_idx=None):
    """Min-max normalize a series to [0, 1]; NaNs pass through.

    fit_idx restricts the entries the min/max are computed from (e.g. the
    training samples). Returns (normalized, min, max).
    """
    y = np.asarray(y, dtype=np.float64)
    fit = y if fit_idx is None else y[np.asarray(fit_idx, dtype=int)]
    fit = fit[np.isfinite(fit)]
    if fit.size == 0:
        raise DegenerateRangeError("no finite target values to normalize from")
    lo, hi = float(fit.min()), float(fit.max())
    if not hi > lo:
        raise DegenerateRangeError(f"constant target series (min == max == {lo})")
    return (y - lo) / (hi - lo), lo, hi


def denormalize_target(y: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.asarray(y, dtype=np.float64) * (hi - lo) + lo


def assemble_channels(gs: GridSeries) -> np.ndarray:
    """Full per-day channel stack (T, H, W, C_d + C_s + 4)."""
    t, h, w, _ = gs.dynamic.shape
    cyc = cyclic_channels(gs.lat_axis, gs.lon_axis)
    parts = [gs.dynamic]
    if gs.static.shape[2]:
        parts.append(np.broadcast_to(gs.static, (t, h, w, gs.static.shape[2])))
    parts.append(np.broadcast_to(cyc, (t, h, w, 4)))
    return np.concatenate(parts, axis=3)


def make_windows(gs: GridSeries, window_len: int = 7) -> WindowedDataset:
    """Cut N = T - Wn samples; sample i sees days i..i+Wn-1, targets day i+Wn."""
    t_total = gs.dynamic.shape[0]
    if window_len < 1:
        raise InvalidWindowError(f"window length must be >= 1, got {window_len}")
    if t_total <= window_len:
        raise InsufficientHistoryError(
            f"need more than {window_len} days of history, got {t_total}")
    base = assemble_channels(gs)
    n = t_total - window_len
    win = sliding_window_view(base, window_len, axis=0)       # (T-Wn+1, H, W, C, Wn)
    inputs = np.moveaxis(win, -1, 1)[:n]                      # view, no copy
    return WindowedDataset(
        inputs=inputs,
        targets=gs.target[window_len:].copy(),
        target_dates=list(gs.dates[window_len:]),
        window_len=window_len,
        feature_names=gs.all_feature_names,
        lat_axis=gs.lat_axis.copy(),
        lon_axis=gs.lon_axis.copy(),
    )


def drop_missing_targets(ds: WindowedDataset) -> WindowedDataset:
    """Remove every sample whose target is NaN, preserving order."""
    keep = np.isfinite(ds.targets)
    if keep.all():
        return ds
    idx = np.flatnonzero(keep)
    return WindowedDataset(
        inputs=ds.inputs[idx],
        targets=ds.targets[idx],
        target_dates=[ds.target_dates[i] for i in idx],
        window_len=ds.window_len,
        feature_names=ds.feature_names,
        lat_axis=ds.lat_axis,
        lon_axis=ds.lon_axis,
    )


def split_dataset(ds_or_n, frac: float = 0.8, seed: int = 0) -> SplitPlan:
    """Deterministic interleaved split: every 5th sample (offset = seed mod 5)
    goes to validation until the quota round((1-frac)*N) is met.

    If the offset's stride walk runs out before the quota (small N, large
    offset), the walk continues on the other residues in a fixed spread
    order, so validation indices stay distributed over the whole range.
    """
    n = ds_or_n if isinstance(ds_or_n, int) else len(ds_or_n)
    if n < 5:
        raise TooFewSamplesError(f"need at least 5 samples to split, got {n}")
    if not 0.0 < frac < 1.0:
        raise ValueError(f"split fraction must be in (0, 1), got {frac}")
    stride = max(2, round(1.0 / (1.0 - frac)))
    quota = round((1.0 - frac) * n)
    offset = seed % stride
    residues = [(offset + k) % stride for k in (0, 2, 4, 1, 3)][:stride] if stride == 5 \
        else [(offset + k) % stride for k in range(stride)]
    chosen: list[int] = []
    taken = set()
    for r in residues:
        for i in range(r, n, stride):
            if len(chosen) >= quota:
                break
            if i not in taken:
                chosen.append(i)
                taken.add(i)
        if len(chosen) >= quota:
            break
    val = sorted(chosen)
    train = [i for i in range(n) if i not in taken]
    return SplitPlan(train_idx=train, val_idx=val, seed=seed)


# ---------------------------------------------------------------------------
# dataset IO
# ---------------------------------------------------------------------------

_DAY_FILE = re.compile(r"^(\d{4}-\d{2}-\d{2})\.csv$")


def _parse_cell(s: str) -> float:
    s = s.strip()
    if not s or s == "NaN":
        return math.nan
    return float(s)


def _read_grid_csv(path: Path):
    """One lat,lon,<features...> CSV -> (lat values, lon values, rows)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["lat", "lon"]:
            raise PipelineError(f"{path.name}: expected lat,lon leading columns")
        names = header[2:]
        rows = []
        for rec in reader:
            if not rec:
                continue
            lat, lon = float(rec[0]), float(rec[1])
            rows.append((lat, lon, [_parse_cell(v) for v in rec[2:]]))
    return names, rows


def _grid_from_rows(rows, lat_axis, lon_axis, n_feat, path):
    lat_pos = {v: i for i, v in enumerate(lat_axis)}
    lon_pos = {v: i for i, v in enumerate(lon_axis)}
    grid = np.full((len(lat_axis), len(lon_axis), n_feat), np.nan)
    seen = np.zeros((len(lat_axis), len(lon_axis)), dtype=bool)
    for lat, lon, vals in rows:
        if lat not in lat_pos or lon not in lon_pos:
            raise PipelineError(f"{path.name}: coordinate ({lat}, {lon}) is off-grid")
        i, j = lat_pos[lat], lon_pos[lon]
        grid[i, j, :] = vals
        seen[i, j] = True
    if not seen.all():
        raise PipelineError(f"{path.name}: grid has uncovered cells")
    return grid


def _read_target_csv(path: Path):
    dates, values = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["date", "value"]:
            raise PipelineError("target.csv must have columns date,value")
        for rec in reader:
            if not rec:
                continue
            dates.append(dt.date.fromisoformat(rec[0]))
            values.append(_parse_cell(rec[1]))
    return dates, np.asarray(values, dtype=np.float64)


def load_csv_dataset(root) -> GridSeries:
    """Directory of per-day YYYY-MM-DD.csv grids + static.csv + target.csv."""
    root = Path(root)
    day_files = sorted(p for p in root.iterdir() if _DAY_FILE.match(p.name))
    if not day_files:
        raise PipelineError(f"no per-day CSV grids in {root}")
    dyn_names, first_rows = _read_grid_csv(day_files[0])
    lat_axis = np.array(sorted({r[0] for r in first_rows}, reverse=True))
    lon_axis = np.array(sorted({r[1] for r in first_rows}))
    dynamic = []
    dates = []
    for p in day_files:
        names, rows = _read_grid_csv(p)
        if names != dyn_names:
            raise PipelineError(f"{p.name}: feature columns differ from first day")
        dynamic.append(_grid_from_rows(rows, lat_axis, lon_axis, len(dyn_names), p))
        dates.append(dt.date.fromisoformat(_DAY_FILE.match(p.name).group(1)))
    dynamic = np.stack(dynamic)

    static_path = root / "static.csv"
    if static_path.exists():
        st_names, st_rows = _read_grid_csv(static_path)
        static = _grid_from_rows(st_rows, lat_axis, lon_axis, len(st_names), static_path)
    else:
        st_names, static = [], np.zeros(dynamic.shape[1:3] + (0,))

    t_dates, values = _read_target_csv(root / "target.csv")
    lookup = dict(zip(t_dates, values))
    target = np.array([lookup.get(d, np.nan) for d in dates])
    return GridSeries(dates=dates, dynamic=dynamic, static=static,
                      lat_axis=lat_axis, lon_axis=lon_axis,
                      feature_names=dyn_names + st_names, target=target)


def save_binary_dataset(root, gs: GridSeries) -> None:
    """Binary layout: dynamic/static/lat/lon tensor files + target.csv +
    features.json. Bit-exact round trip."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    tensor_core.write_tensor(root / "dynamic.htt", gs.dynamic)
    tensor_core.write_tensor(root / "static.htt", gs.static)
    tensor_core.write_tensor(root / "lat.htt", gs.lat_axis)
    tensor_core.write_tensor(root / "lon.htt", gs.lon_axis)
    n_dyn = gs.dynamic.shape[3]
    with open(root / "features.json", "w") as f:
        json.dump({"dynamic": gs.feature_names[:n_dyn],
                   "static": gs.feature_names[n_dyn:]}, f, indent=1)
    with open(root / "target.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["date", "value"])
        for d, v in zip(gs.dates, gs.target):
            writer.writerow([d.isoformat(), "NaN" if not np.isfinite(v) else repr(float(v))])


def load_binary_dataset(root) -> GridSeries:
    root = Path(root)
    dynamic = tensor_core.read_tensor(root / "dynamic.htt")
    static = tensor_core.read_tensor(root / "static.htt")
    lat_axis = tensor_core.read_tensor(root / "lat.htt")
    lon_axis = tensor_core.read_tensor(root / "lon.htt")
    with open(root / "features.json") as f:
        names = json.load(f)
    dates, target = _read_target_csv(root / "target.csv")
    return GridSeries(dates=dates, dynamic=dynamic, static=static,
                      lat_axis=lat_axis, lon_axis=lon_axis,
                      feature_names=list(names["dynamic"]) + list(names["static"]),
                      target=target)


def load_dataset(root) -> GridSeries:
    """Binary layout if dynamic.htt is present, otherwise per-day CSVs."""
    root = Path(root)
    if (root / "dynamic.htt").exists():
        return load_binary_dataset(root)
    return load_csv_dataset(root)


def prepare(gs: GridSeries, cfg: PipelineConfig):
    """Full preprocessing: impute, window, drop NaN targets, split, normalize.

    Returns (dataset, plan, (target_min, target_max)); dataset targets are
    normalized with constants fitted on the training split by default.
    """
    filled = GridSeries(
        dates=gs.dates,
        dynamic=impute(gs.dynamic, cfg.impute_mode),
        static=impute(gs.static, cfg.impute_mode) if gs.static.shape[2] else gs.static,
        lat_axis=gs.lat_axis, lon_axis=gs.lon_axis,
        feature_names=gs.feature_names, target=gs.target,
    )
    ds = drop_missing_targets(make_windows(filled, cfg.window_len))
    plan = split_dataset(len(ds), frac=cfg.split_frac, seed=cfg.seed)
    fit_idx = None if cfg.normalize_scope == "full" else plan.train_idx
    ds.targets, lo, hi = normalize_target(ds.targets, fit_idx)
    return ds, plan, (lo, hi)
