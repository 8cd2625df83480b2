"""Streamflow evaluation statistics and performance categories.

Four metrics over an observed/predicted series pair:

    NSE   = 1 - sum((O - P)^2) / sum((O - Obar)^2)
    PBIAS = 100 * sum(P - O) / sum(O)        (positive = overestimation)
    RSR   = RMSE / S_obs, RMSE with divisor n, S_obs with divisor n-1
    R^2   = squared Pearson correlation of O and P

PBIAS uses the P-O numerator; much of the watershed-model literature uses
O-P, which flips the sign. `pbias(..., convention="literature")` selects
the flipped form. RSR deliberately mixes the divisor-n RMSE with the
divisor-(n-1) standard deviation; both choices are part of the contract.

Category bands (VeryGood/Good/Satisfactory/Unsatisfactory) ship as a
versioned table adapted from watershed-model evaluation guidelines, with
the PBIAS Satisfactory bound at |15.5|.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Degenerate input for a metric (constant series, zero sums)."""


@dataclass
class MetricSeries:
    observed: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=np.float64)
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        if self.observed.shape != self.predicted.shape:
            raise MetricError("observed and predicted lengths differ")
        if self.observed.ndim != 1 or self.observed.size < 2:
            raise MetricError("need 1-D series of length >= 2")
        if not (np.all(np.isfinite(self.observed)) and np.all(np.isfinite(self.predicted))):
            raise MetricError("series must be finite; drop missing values first")


def _as_series(ms) -> MetricSeries:
    return ms if isinstance(ms, MetricSeries) else MetricSeries(*ms)


def nse(ms) -> float:
    """Nash-Sutcliffe efficiency: 1 is a perfect match, 0 matches the
    observation mean."""
    ms = _as_series(ms)
    o, p = ms.observed, ms.predicted
    den = float(np.sum((o - o.mean()) ** 2))
    if den == 0.0:
        raise MetricError("constant observations: NSE undefined")
    return 1.0 - float(np.sum((o - p) ** 2)) / den


def pbias(ms, convention: str = "paper") -> float:
    """Percent bias; positive means overestimation under the default
    convention, the "literature" convention flips the sign."""
    ms = _as_series(ms)
    o, p = ms.observed, ms.predicted
    den = float(np.sum(o))
    if den == 0.0:
        raise MetricError("observations sum to zero: PBIAS undefined")
    value = 100.0 * float(np.sum(p - o)) / den
    if convention == "paper":
        return value
    if convention == "literature":
        return -value
    raise ValueError(f"unknown PBIAS convention {convention!r}")


def rsr(ms) -> float:
    """RMSE (divisor n) over the sample standard deviation (divisor n-1)."""
    ms = _as_series(ms)
    o, p = ms.observed, ms.predicted
    n = o.size
    s_obs_sq = float(np.sum((o - o.mean()) ** 2)) / (n - 1)
    if s_obs_sq == 0.0:
        raise MetricError("zero observation variance: RSR undefined")
    rmse = np.sqrt(float(np.sum((p - o) ** 2)) / n)
    return float(rmse / np.sqrt(s_obs_sq))


def r_squared(ms) -> float:
    """Square of the Pearson correlation between observed and predicted."""
    ms = _as_series(ms)
    o, p = ms.observed, ms.predicted
    od, pd_ = o - o.mean(), p - p.mean()
    so = float(np.sqrt(np.mean(od ** 2)))
    sp = float(np.sqrt(np.mean(pd_ ** 2)))
    if so == 0.0 or sp == 0.0:
        raise MetricError("constant series: correlation undefined")
    r = float(np.mean(od * pd_)) / (so * sp)
    return r * r


CATEGORIES = ("VeryGood", "Good", "Satisfactory", "Unsatisfactory")

# Versioned classification table. Bounds are (lo, hi] unless noted; PBIAS
# classifies |value|; RSR VeryGood includes its lower edge.
CLASSIFICATION_BANDS = {
    "version": "watershed-bands-v1",
    "nse": [("VeryGood", 0.80, None), ("Good", 0.70, 0.80),
            ("Satisfactory", 0.50, 0.70)],
    "rsr": [("VeryGood", None, 0.50), ("Good", 0.50, 0.60),
            ("Satisfactory", 0.60, 0.70)],
    "pbias": [("VeryGood", None, 5.0), ("Good", 5.0, 10.0),
              ("Satisfactory", 10.0, 15.5)],
    "r2": [("VeryGood", 0.85, None), ("Good", 0.75, 0.85),
           ("Satisfactory", 0.60, 0.75)],
}

_METRIC_ALIASES = {
    "nse": "nse", "pbias": "pbias", "rsr": "rsr",
    "r2": "r2", "r^2": "r2", "r_squared": "r2",
}


def classify(metric: str, value: float) -> str:
    """Map a metric value to its performance category."""
    key = _METRIC_ALIASES.get(metric.lower())
    if key is None:
        raise ValueError(f"unknown metric name {metric!r}")
    if not np.isfinite(value):
        raise MetricError(f"cannot classify non-finite {metric} value")
    if key == "nse":
        v = value
        for cat, lo, hi in CLASSIFICATION_BANDS["nse"]:
            if v > lo and (hi is None or v <= hi) and v <= 1.0:
                return cat
        return "Unsatisfactory"
    if key == "r2":
        v = value
        for cat, lo, hi in CLASSIFICATION_BANDS["r2"]:
            if v > lo and (hi is None or v <= hi) and v <= 1.0:
                return cat
        return "Unsatisfactory"
    if key == "rsr":
        v = value
        if v < 0:
            raise MetricError("RSR cannot be negative")
        for cat, lo, hi in CLASSIFICATION_BANDS["rsr"]:
            if (lo is None or v > lo) and v <= hi:
                return cat
        return "Unsatisfactory"
    # PBIAS bands apply to the magnitude; VeryGood is strict (< 5), the
    # others include their lower edge.
    v = abs(value)
    if v < 5.0:
        return "VeryGood"
    if v < 10.0:
        return "Good"
    if v <= 15.5:
        return "Satisfactory"
    return "Unsatisfactory"


@dataclass
class MetricReport:
    nse: float
    pbias: float
    rsr: float
    r2: float
    ratings: dict[str, str]

    def to_json(self) -> str:
        payload = {name: {"value": getattr(self, name), "category": self.ratings[name]}
                   for name in ("nse", "pbias", "rsr", "r2")}
        return json.dumps(payload, indent=1, sort_keys=True)

    def to_table(self) -> str:
        lines = [f"{'metric':<8}{'value':>12}  category",
                 "-" * 36]
        for name, label in (("nse", "NSE"), ("r2", "R2"),
                            ("pbias", "PBIAS"), ("rsr", "RSR")):
            lines.append(f"{label:<8}{getattr(self, name):>12.4f}  {self.ratings[name]}")
        return "\n".join(lines)

    @staticmethod
    def from_json(text: str) -> "MetricReport":
        d = json.loads(text)
        return MetricReport(
            nse=d["nse"]["value"], pbias=d["pbias"]["value"],
            rsr=d["rsr"]["value"], r2=d["r2"]["value"],
            ratings={k: d[k]["category"] for k in ("nse", "pbias", "rsr", "r2")})


def evaluate(observed, predicted, pbias_convention: str = "paper") -> MetricReport:
    """All four metrics plus categories for one prediction/observation pair."""
    ms = MetricSeries(observed, predicted)
    values = {
        "nse": nse(ms),
        "pbias": pbias(ms, convention=pbias_convention),
        "rsr": rsr(ms),
        "r2": r_squared(ms),
    }
    ratings = {name: classify(name, v) for name, v in values.items()}
    return MetricReport(**values, ratings=ratings)
