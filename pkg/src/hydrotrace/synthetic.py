"""Synthetic gridded datasets with planted feature/region/lag structure.

Each channel is a sum of (temporal sinusoid x spatial Gaussian bump)
components plus white noise; component frequencies are spaced apart so
channels stay mutually decorrelated. The target is a lagged, weighted
region mean of the planted channels plus observation noise, min-max
normalized. The generative recipe is emitted as a machine-readable oracle
so tests can verify recovery against ground truth.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .grid_pipeline import GridSeries

N_COMPONENTS = 4
FIELD_NOISE = 0.05


class PlantConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class Plant:
    channel: int
    region: tuple[int, int, int, int]  # row0, col0, height, width
    lag: int
    weight: float


@dataclass
class PlantConfig:
    h: int = 24
    w: int = 24
    c: int = 8
    t_total: int = 730
    planted: list[Plant] = field(default_factory=lambda: [
        Plant(channel=3, region=(4, 14, 6, 6), lag=2, weight=1.0)])
    noise_sigma: float = 0.02
    seasonal_period: int = 365
    seed: int = 0
    window_len: int = 7
    start_date: dt.date = dt.date(2015, 1, 1)

    def validate(self):
        if min(self.h, self.w, self.c, self.t_total) < 1:
            raise PlantConfigError("dims", "grid and time extents must be positive")
        if not self.planted:
            raise PlantConfigError("planted", "at least one planted channel required")
        for i, p in enumerate(self.planted):
            r0, c0, rh, rw = p.region
            if not (0 <= p.channel < self.c):
                raise PlantConfigError(f"planted[{i}].channel",
                                       f"{p.channel} outside 0..{self.c - 1}")
            if r0 < 0 or c0 < 0 or rh < 1 or rw < 1 or r0 + rh > self.h or c0 + rw > self.w:
                raise PlantConfigError(f"planted[{i}].region",
                                       f"{p.region} not inside the {self.h}x{self.w} grid")
            if not 0 <= p.lag < self.window_len:
                raise PlantConfigError(f"planted[{i}].lag",
                                       f"{p.lag} must lie in 0..window_len-1")
            if not np.isfinite(p.weight):
                raise PlantConfigError(f"planted[{i}].weight", "must be finite")
        if self.noise_sigma < 0:
            raise PlantConfigError("noise_sigma", "must be >= 0")

    def to_dict(self):
        return {
            "h": self.h, "w": self.w, "c": self.c, "t_total": self.t_total,
            "planted": [{"channel": p.channel, "region": list(p.region),
                         "lag": p.lag, "weight": p.weight} for p in self.planted],
            "noise_sigma": self.noise_sigma, "seasonal_period": self.seasonal_period,
            "seed": self.seed, "window_len": self.window_len,
            "start_date": self.start_date.isoformat(),
        }

    @staticmethod
    def from_dict(d: dict) -> "PlantConfig":
        cfg = PlantConfig(
            h=int(d.get("h", 24)), w=int(d.get("w", 24)), c=int(d.get("c", 8)),
            t_total=int(d.get("t_total", 730)),
            planted=[Plant(channel=int(p["channel"]), region=tuple(p["region"]),
                           lag=int(p["lag"]), weight=float(p["weight"]))
                     for p in d["planted"]] if "planted" in d else
            PlantConfig().planted,
            noise_sigma=float(d.get("noise_sigma", 0.02)),
            seasonal_period=int(d.get("seasonal_period", 365)),
            seed=int(d.get("seed", 0)),
            window_len=int(d.get("window_len", 7)))
        if "start_date" in d:
            cfg.start_date = dt.date.fromisoformat(d["start_date"])
        return cfg


def _component_tables(cfg: PlantConfig, rng: np.random.Generator):
    """Deterministic per-channel component parameters.

    Frequencies take distinct slots 0.5 cycles apart so no two components
    share a period; each planted channel's first bump is centered on its
    region so the region carries a distinctive local signal.
    """
    planted_by_channel = {p.channel: p for p in cfg.planted}
    comps = []
    for c in range(cfg.c):
        channel_comps = []
        for k in range(N_COMPONENTS):
            slot = c * N_COMPONENTS + k
            freq = 1.0 + 0.5 * slot + float(rng.uniform(0.0, 0.2))
            amp = float(rng.uniform(0.5, 1.5))
            phase = float(rng.uniform(0.0, 2.0 * np.pi))
            if k == 0 and c in planted_by_channel:
                r0, c0, rh, rw = planted_by_channel[c].region
                ci, cj = r0 + (rh - 1) / 2.0, c0 + (rw - 1) / 2.0
                width = max(rh, rw) / 2.0
                rng.uniform(0.0, 1.0, size=3)  # keep the draw count fixed
            else:
                ci = float(rng.uniform(0, cfg.h - 1))
                cj = float(rng.uniform(0, cfg.w - 1))
                width = float(rng.uniform(2.0, 6.0))
            channel_comps.append({"freq": freq, "amp": amp, "phase": phase,
                                  "center": (ci, cj), "width": width})
        comps.append(channel_comps)
    return comps


def _render_field(cfg: PlantConfig, comps, rng: np.random.Generator) -> np.ndarray:
    t_axis = np.arange(cfg.t_total, dtype=np.float64)
    ii, jj = np.meshgrid(np.arange(cfg.h), np.arange(cfg.w), indexing="ij")
    out = np.zeros((cfg.t_total, cfg.h, cfg.w, cfg.c))
    for c in range(cfg.c):
        for comp in comps[c]:
            wave = comp["amp"] * np.sin(
                2.0 * np.pi * comp["freq"] * t_axis / cfg.seasonal_period + comp["phase"])
            ci, cj = comp["center"]
            bump = np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2.0 * comp["width"] ** 2))
            out[:, :, :, c] += wave[:, None, None] * bump[None, :, :]
    out += FIELD_NOISE * rng.standard_normal(out.shape)
    return out


def _raw_target(cfg: PlantConfig, features: np.ndarray) -> np.ndarray:
    """Lagged weighted region means; entries with no lagged source are NaN."""
    t_total = features.shape[0]
    y = np.zeros(t_total)
    max_lag = max(p.lag for p in cfg.planted)
    for p in cfg.planted:
        r0, c0, rh, rw = p.region
        region_mean = features[:, r0:r0 + rh, c0:c0 + rw, p.channel].mean(axis=(1, 2))
        y[p.lag:] += p.weight * region_mean[:t_total - p.lag]
    y[:max_lag] = np.nan
    return y


def generate(cfg: PlantConfig):
    """Build the dataset and its ground-truth description.

    Returns (GridSeries, oracle dict). Identical configs (same seed) yield
    byte-identical arrays.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    comps = _component_tables(cfg, rng)
    dynamic = _render_field(cfg, comps, rng)
    y = _raw_target(cfg, dynamic)
    finite = np.isfinite(y)
    if cfg.noise_sigma > 0:
        noise = rng.normal(0.0, cfg.noise_sigma, size=cfg.t_total)
        y[finite] += noise[finite]
    lo, hi = float(np.min(y[finite])), float(np.max(y[finite]))
    y = (y - lo) / (hi - lo)

    dates = [cfg.start_date + dt.timedelta(days=int(t)) for t in range(cfg.t_total)]
    lat_axis = 31.0 - 0.1 * np.arange(cfg.h)
    lon_axis = 90.0 + 0.1 * np.arange(cfg.w)
    gs = GridSeries(
        dates=dates, dynamic=dynamic,
        static=np.zeros((cfg.h, cfg.w, 0)),
        lat_axis=lat_axis, lon_axis=lon_axis,
        feature_names=[f"feat_{i:02d}" for i in range(cfg.c)],
        target=y)
    oracle = {
        "config": cfg.to_dict(),
        "target_min": lo,
        "target_max": hi,
        "components": comps,
    }
    return gs, oracle


def oracle_target(cfg: PlantConfig, features: np.ndarray, raw: bool = False) -> np.ndarray:
    """Recompute the target from the generative formula by plain per-day
    loops, independently of generate's vectorized path.

    With raw=True the unnormalized series is returned (useful when edits
    to the features collapse the range).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (cfg.t_total, cfg.h, cfg.w, cfg.c):
        raise ValueError(f"features shape {features.shape} does not match config")
    max_lag = max(p.lag for p in cfg.planted)
    y = np.empty(cfg.t_total)
    for t in range(cfg.t_total):
        if t < max_lag:
            y[t] = np.nan
            continue
        total = 0.0
        for p in cfg.planted:
            r0, c0, rh, rw = p.region
            acc = 0.0
            for i in range(r0, r0 + rh):
                for j in range(c0, c0 + rw):
                    acc += features[t - p.lag, i, j, p.channel]
            total += p.weight * acc / (rh * rw)
        y[t] = total
    if raw:
        return y
    finite = np.isfinite(y)
    lo, hi = float(np.min(y[finite])), float(np.max(y[finite]))
    if not hi > lo:
        raise ValueError("degenerate target range; use raw=True")
    return (y - lo) / (hi - lo)


def write_oracle(path, oracle: dict) -> None:
    with open(path, "w") as f:
        json.dump(oracle, f, indent=1, sort_keys=True)
