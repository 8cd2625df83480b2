"""Aggregation of per-sample attention records into interpretive products:
monthly feature means, seasonal top-k features, spatial mean maps, and
top-percentile location masks, plus CSV/JSON/PGM export.

A sample belongs to the month/season of its target date (the day the
prediction explains), not of its window start.
"""

from __future__ import annotations

import calendar
import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SEASONS = ("Winter", "PreMonsoon", "Monsoon", "PostMonsoon")

MONTH_NAMES = tuple(calendar.month_name[m] for m in range(1, 13))


@dataclass
class SeasonCalendar:
    """Total mapping month number (1-12) -> season name."""

    month_to_season: dict[int, str] = field(default_factory=lambda: {
        12: "Winter", 1: "Winter", 2: "Winter",
        3: "PreMonsoon", 4: "PreMonsoon", 5: "PreMonsoon",
        6: "Monsoon", 7: "Monsoon", 8: "Monsoon", 9: "Monsoon",
        10: "PostMonsoon", 11: "PostMonsoon",
    })

    def __post_init__(self):
        if sorted(self.month_to_season) != list(range(1, 13)):
            raise ValueError("season calendar must map all 12 months")
        unknown = set(self.month_to_season.values()) - set(SEASONS)
        if unknown:
            raise ValueError(f"unknown season names {unknown}")


DEFAULT_CALENDAR = SeasonCalendar()


def season_of(date, cal: SeasonCalendar = DEFAULT_CALENDAR) -> str:
    return cal.month_to_season[date.month]


@dataclass
class FeatureAttentionRow:
    period: str
    feature: str
    mean_weight: float
    n_samples: int


@dataclass
class FeatureAttentionTable:
    rows: list[FeatureAttentionRow]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["period", "feature", "mean_weight", "n_samples"])
            for r in self.rows:
                w.writerow([r.period, r.feature, repr(r.mean_weight), r.n_samples])

    @staticmethod
    def read_csv(path) -> "FeatureAttentionTable":
        rows = []
        with open(path, newline="") as f:
            reader = csv.reader(f)
            next(reader)
            for rec in reader:
                rows.append(FeatureAttentionRow(rec[0], rec[1], float(rec[2]), int(rec[3])))
        return FeatureAttentionTable(rows)


@dataclass
class SpatialMeanMap:
    grid: np.ndarray           # (H, W) mean attention
    period: str
    lat_axis: np.ndarray
    lon_axis: np.ndarray
    feature: str | None = None

    def to_json(self) -> str:
        return json.dumps({
            "period": self.period,
            "feature": self.feature,
            "lat": [float(v) for v in self.lat_axis],
            "lon": [float(v) for v in self.lon_axis],
            "grid": [[float(v) for v in row] for row in self.grid],
        })


def _records_in_period(records, period: str, cal: SeasonCalendar):
    """period is a season name or an English month name."""
    if period in SEASONS:
        return [r for r in records if season_of(r.target_date, cal) == period]
    if period in MONTH_NAMES:
        month = MONTH_NAMES.index(period) + 1
        return [r for r in records if r.target_date.month == month]
    raise KeyError(f"unknown period {period!r}")


def monthly_feature_means(records, feature_names=None) -> FeatureAttentionTable:
    """Mean feature-attention weight per calendar month; empty months are
    omitted."""
    if not records:
        raise ValueError("no attention records to aggregate")
    n_feat = records[0].beta.shape[0]
    names = list(feature_names) if feature_names else [f"feature_{i}" for i in range(n_feat)]
    rows = []
    for month in range(1, 13):
        betas = [r.beta for r in records if r.target_date.month == month]
        if not betas:
            continue
        mean = np.mean(np.stack(betas), axis=0)
        for c in range(n_feat):
            rows.append(FeatureAttentionRow(
                period=MONTH_NAMES[month - 1], feature=names[c],
                mean_weight=float(mean[c]), n_samples=len(betas)))
    return FeatureAttentionTable(rows)


def period_feature_means(records, period: str, cal: SeasonCalendar = DEFAULT_CALENDAR,
                         feature_names=None) -> FeatureAttentionTable:
    """Mean beta per feature over one month or season, sorted descending."""
    sel = _records_in_period(records, period, cal)
    if not sel:
        raise KeyError(f"no records in period {period!r}")
    n_feat = sel[0].beta.shape[0]
    names = list(feature_names) if feature_names else [f"feature_{i}" for i in range(n_feat)]
    mean = np.mean(np.stack([r.beta for r in sel]), axis=0)
    order = sorted(range(n_feat), key=lambda c: (-mean[c], c))
    rows = [FeatureAttentionRow(period=period, feature=names[c],
                                mean_weight=float(mean[c]), n_samples=len(sel))
            for c in order]
    return FeatureAttentionTable(rows)


def seasonal_top_k(records, cal: SeasonCalendar = DEFAULT_CALENDAR, k: int = 5,
                   feature_names=None) -> dict[str, list[tuple[str, float]]]:
    """Per season: the k features with the highest mean attention weight,
    ties broken by feature index ascending."""
    out = {}
    for season in SEASONS:
        table = period_feature_means(records, season, cal, feature_names)
        n_feat = len(table.rows)
        kk = k
        if kk > n_feat:
            warnings.warn(f"k={k} exceeds {n_feat} features; truncating")
            kk = n_feat
        out[season] = [(r.feature, r.mean_weight) for r in table.rows[:kk]]
    return out


def spatial_mean_map(records, period: str, cal: SeasonCalendar = DEFAULT_CALENDAR,
                     feature_idx: int | None = None,
                     feature_names=None) -> SpatialMeanMap:
    """Mean spatial attention over a period's records and their windows.

    With feature_idx given, each record's alpha is weighted by that
    feature's beta, yielding the per-feature influence map.
    """
    sel = _records_in_period(records, period, cal)
    if not sel:
        raise KeyError(f"no records in period {period!r}")
    acc = np.zeros_like(sel[0].alpha[0])
    for r in sel:
        a = r.alpha.mean(axis=0)
        if feature_idx is not None:
            a = a * r.beta[feature_idx]
        acc += a
    feature = None
    if feature_idx is not None:
        names = list(feature_names) if feature_names else None
        feature = names[feature_idx] if names else f"feature_{feature_idx}"
    return SpatialMeanMap(grid=acc / len(sel), period=period,
                          lat_axis=sel[0].lat_axis, lon_axis=sel[0].lon_axis,
                          feature=feature)


def top_percentile_locations(smap: SpatialMeanMap, pct: float = 20.0) -> np.ndarray:
    """Boolean H x W mask marking the ceil(pct% of H*W) highest-mean cells;
    ties broken by row-major index ascending."""
    if not 0.0 < pct <= 100.0:
        raise ValueError(f"percentile must lie in (0, 100], got {pct}")
    grid = np.asarray(smap.grid, dtype=np.float64)
    n_cells = grid.size
    n_sel = math.ceil(pct / 100.0 * n_cells)
    order = np.argsort(-grid.reshape(-1), kind="stable")
    mask = np.zeros(n_cells, dtype=bool)
    mask[order[:n_sel]] = True
    return mask.reshape(grid.shape)


def combined_attention(record, x_window: np.ndarray) -> np.ndarray:
    """The attention-weighted input alpha * beta * x for one sample."""
    from .model import apply_attention
    return apply_attention(x_window, record.alpha, record.beta)


def mask_to_rows(mask: np.ndarray, lat_axis, lon_axis):
    rows = []
    for i, j in np.argwhere(mask):
        rows.append((int(i), int(j), float(lat_axis[i]), float(lon_axis[j])))
    return rows


def write_mask_csv(path, mask: np.ndarray, lat_axis, lon_axis):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "col", "lat", "lon"])
        for row in mask_to_rows(mask, lat_axis, lon_axis):
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3])])


def grid_to_pgm(grid: np.ndarray) -> bytes:
    """8-bit binary PGM: linear min-max scale to 0..255; a constant grid
    maps to 128 everywhere."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        pixels = np.rint((grid - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.full((h, w), 128, dtype=np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def export(product, fmt: str, path) -> None:
    """Write a table, map, or mask in csv, json, or pgm form."""
    path = Path(path)
    if isinstance(product, FeatureAttentionTable):
        if fmt != "csv":
            raise ValueError("feature tables export as csv")
        product.write_csv(path)
        return
    if isinstance(product, SpatialMeanMap):
        if fmt == "json":
            path.write_text(product.to_json())
        elif fmt == "csv":
            with open(path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["row", "col", "lat", "lon", "mean_weight"])
                for i in range(product.grid.shape[0]):
                    for j in range(product.grid.shape[1]):
                        w.writerow([i, j, repr(float(product.lat_axis[i])),
                                    repr(float(product.lon_axis[j])),
                                    repr(float(product.grid[i, j]))])
        elif fmt == "pgm":
            path.write_bytes(grid_to_pgm(product.grid))
        else:
            raise ValueError(f"unknown map format {fmt!r}")
        return
    raise TypeError(f"cannot export {type(product).__name__}")
