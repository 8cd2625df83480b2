"""Read-only HTTP JSON API over a trained run's attention store.

The store (alpha/beta tensors plus a JSON index, as written by the
attention command) is loaded once and never mutated; every request is
idempotent and side-effect free, so identical requests return
byte-identical bodies regardless of concurrency.

A natural-language layer is a declared extension point only: POST /v1/ask
answers 501 so external-model integrations have a stable mount point.
"""

from __future__ import annotations

import datetime as dt
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import analytics, tensor_core
from .analytics import (DEFAULT_CALENDAR, MONTH_NAMES, SEASONS,
                        SeasonCalendar, season_of)
from .model import AttentionRecord

SCHEMA_VERSION = "1"


class StoreError(ValueError):
    pass


@dataclass
class AttentionStore:
    alpha: np.ndarray            # (N, T, H, W)
    beta: np.ndarray             # (N, C)
    dates: list[dt.date]
    feature_names: list[str]
    lat_axis: np.ndarray
    lon_axis: np.ndarray
    run_id: str
    calendar: SeasonCalendar

    def __post_init__(self):
        if self.alpha.shape[0] != self.beta.shape[0] or \
                self.alpha.shape[0] != len(self.dates):
            raise StoreError("record counts disagree across store members")
        if len(self.feature_names) != self.beta.shape[1]:
            raise StoreError("feature names do not match beta width")
        self._records = [AttentionRecord(
            alpha=self.alpha[i], beta=self.beta[i], target_date=self.dates[i],
            lat_axis=self.lat_axis, lon_axis=self.lon_axis)
            for i in range(self.alpha.shape[0])]

    @property
    def records(self) -> list[AttentionRecord]:
        return self._records

    def __len__(self):
        return self.alpha.shape[0]


def load_store(root) -> AttentionStore:
    root = Path(root)
    with open(root / "index.json") as f:
        index = json.load(f)
    return AttentionStore(
        alpha=tensor_core.read_tensor(root / "alpha.htt"),
        beta=tensor_core.read_tensor(root / "beta.htt"),
        dates=[dt.date.fromisoformat(d) for d in index["dates"]],
        feature_names=list(index["feature_names"]),
        lat_axis=np.asarray(index["lat"], dtype=np.float64),
        lon_axis=np.asarray(index["lon"], dtype=np.float64),
        run_id=str(index["run_id"]),
        calendar=DEFAULT_CALENDAR)


# ---------------------------------------------------------------------------
# request handling
# ---------------------------------------------------------------------------

def _json_bytes(payload: dict) -> bytes:
    body = dict(payload)
    body.setdefault("schema_version", SCHEMA_VERSION)
    return json.dumps(body, sort_keys=True).encode("utf-8")


class _BadRequest(Exception):
    def __init__(self, status: int, error: str, detail: str = ""):
        self.status = status
        self.error = error
        self.detail = detail


def _one(params: dict, key: str, required: bool = True) -> str | None:
    vals = params.get(key)
    if not vals:
        if required:
            raise _BadRequest(400, "missing parameter", f"{key} is required")
        return None
    return vals[0]


def _resolve_period(params: dict, store: AttentionStore) -> str:
    kind = _one(params, "period")
    value = _one(params, "value")
    if kind == "season":
        if value not in SEASONS:
            raise _BadRequest(404, "unknown period",
                              f"season {value!r} not one of {list(SEASONS)}")
    elif kind == "month":
        if value not in MONTH_NAMES:
            raise _BadRequest(404, "unknown period",
                              f"month {value!r} not one of {list(MONTH_NAMES)}")
    else:
        raise _BadRequest(400, "malformed query",
                          "period must be 'month' or 'season'")
    return value


def _period_records(store: AttentionStore, period: str):
    if period in SEASONS:
        sel = [r for r in store.records
               if season_of(r.target_date, store.calendar) == period]
    else:
        month = MONTH_NAMES.index(period) + 1
        sel = [r for r in store.records if r.target_date.month == month]
    if not sel:
        raise _BadRequest(404, "empty period", f"no records in {period!r}")
    return sel


def handle_request(store: AttentionStore | None, method: str, path: str,
                   query: str):
    """Pure request dispatcher: returns (status, content_type, body bytes)."""
    params = parse_qs(query, keep_blank_values=True)
    try:
        if store is None:
            return 503, "application/json", _json_bytes(
                {"error": "store not loaded", "detail": "service is starting"})
        if method == "POST":
            if path == "/v1/ask":
                return 501, "application/json", _json_bytes(
                    {"error": "not implemented",
                     "detail": "natural-language queries are an extension point"})
            raise _BadRequest(404, "unknown endpoint", path)
        if path == "/v1/health":
            return 200, "application/json", _json_bytes(
                {"status": "ok", "run_id": store.run_id, "n_records": len(store)})
        if path == "/v1/attention/features":
            return _features(store, params)
        if path == "/v1/attention/top-features":
            return _top_features(store, params)
        if path == "/v1/attention/spatial":
            return _spatial(store, params)
        if path == "/v1/attention/daily":
            return _daily(store, params)
        raise _BadRequest(404, "unknown endpoint", path)
    except _BadRequest as exc:
        return exc.status, "application/json", _json_bytes(
            {"error": exc.error, "detail": exc.detail})


def _features(store, params):
    period = _resolve_period(params, store)
    table = analytics.period_feature_means(store.records, period,
                                           store.calendar, store.feature_names)
    rows = [{"period": r.period, "feature": r.feature,
             "mean_weight": r.mean_weight, "n_samples": r.n_samples}
            for r in table.rows]
    return 200, "application/json", _json_bytes({"rows": rows})


def _top_features(store, params):
    period = _resolve_period(params, store)
    k_raw = _one(params, "k", required=False) or "5"
    try:
        k = int(k_raw)
    except ValueError:
        raise _BadRequest(400, "malformed query", f"k must be an integer, got {k_raw!r}")
    if k <= 0:
        raise _BadRequest(400, "malformed query", "k must be positive")
    table = analytics.period_feature_means(store.records, period,
                                           store.calendar, store.feature_names)
    rows = [{"rank": i + 1, "feature": r.feature, "mean_weight": r.mean_weight}
            for i, r in enumerate(table.rows[:min(k, len(table.rows))])]
    return 200, "application/json", _json_bytes({"period": period, "rows": rows})


def _spatial(store, params):
    period = _resolve_period(params, store)
    fmt = _one(params, "format", required=False) or "json"
    if fmt not in ("json", "pgm"):
        raise _BadRequest(400, "malformed query", f"unknown format {fmt!r}")
    _period_records(store, period)
    smap = analytics.spatial_mean_map(store.records, period, store.calendar)
    top_pct = _one(params, "top_pct", required=False)
    if top_pct is not None:
        try:
            pct = float(top_pct)
        except ValueError:
            raise _BadRequest(400, "malformed query", "top_pct must be numeric")
        if not 0.0 < pct <= 100.0:
            raise _BadRequest(400, "malformed query", "top_pct must lie in (0, 100]")
        mask = analytics.top_percentile_locations(smap, pct)
        if fmt == "pgm":
            body = analytics.grid_to_pgm(mask.astype(np.float64))
            return 200, "image/x-portable-graymap", body
        cells = [{"row": r, "col": c, "lat": la, "lon": lo}
                 for r, c, la, lo in analytics.mask_to_rows(
                     mask, store.lat_axis, store.lon_axis)]
        return 200, "application/json", _json_bytes(
            {"period": period, "top_pct": pct, "cells": cells})
    if fmt == "pgm":
        return 200, "image/x-portable-graymap", analytics.grid_to_pgm(smap.grid)
    return 200, "application/json", json.dumps(
        {"schema_version": SCHEMA_VERSION, "period": smap.period,
         "feature": smap.feature,
         "lat": [float(v) for v in smap.lat_axis],
         "lon": [float(v) for v in smap.lon_axis],
         "grid": [[float(v) for v in row] for row in smap.grid]},
        sort_keys=True).encode("utf-8")


def _daily(store, params):
    try:
        d_from = dt.date.fromisoformat(_one(params, "from"))
        d_to = dt.date.fromisoformat(_one(params, "to"))
    except ValueError:
        raise _BadRequest(400, "malformed query", "dates must be YYYY-MM-DD")
    if d_from > d_to:
        raise _BadRequest(400, "malformed query", "from must not exceed to")
    feats_raw = _one(params, "features")
    feats = [s for s in feats_raw.split(",") if s]
    name_to_idx = {n: i for i, n in enumerate(store.feature_names)}
    unknown = [f for f in feats if f not in name_to_idx]
    if unknown:
        raise _BadRequest(404, "unknown feature",
                          f"{unknown} not in {store.feature_names}")
    include_spatial = (_one(params, "spatial", required=False) or "") in ("1", "true")
    rows = []
    for r in store.records:
        if not d_from <= r.target_date <= d_to:
            continue
        for f in feats:
            c = name_to_idx[f]
            row = {"date": r.target_date.isoformat(), "feature": f,
                   "beta": float(r.beta[c])}
            if include_spatial:
                row["spatial_mean"] = float(r.alpha.mean() * r.beta[c])
            rows.append(row)
    return 200, "application/json", _json_bytes(
        {"from": d_from.isoformat(), "to": d_to.isoformat(), "rows": rows})


class _Handler(BaseHTTPRequestHandler):
    store: AttentionStore | None = None
    protocol_version = "HTTP/1.1"

    def _respond(self, status, ctype, body):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        url = urlparse(self.path)
        self._respond(*handle_request(self.store, "GET", url.path, url.query))

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            self.rfile.read(length)
        url = urlparse(self.path)
        self._respond(*handle_request(self.store, "POST", url.path, url.query))

    def log_message(self, fmt, *args):  # quiet by default
        pass


def make_server(store: AttentionStore | None, port: int = 0) -> ThreadingHTTPServer:
    handler = type("StoreHandler", (_Handler,), {"store": store})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(store: AttentionStore, port: int) -> None:
    server = make_server(store, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()


def serve_background(store: AttentionStore | None, port: int = 0):
    """Start in a daemon thread; returns (server, bound_port)."""
    server = make_server(store, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, server.server_address[1]
