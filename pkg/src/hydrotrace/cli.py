"""Operator entry points: synth, train, tune, evaluate, attention, serve.

Configuration comes from one JSON file (--config); command-line flags win
over file values. Exit codes: 0 success, 2 usage or configuration error,
3 numeric failure (diverged training). HYDROTRACE_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytics, metrics, tensor_core
from .grid_pipeline import (PipelineConfig, PipelineError, load_dataset,
                            prepare, split_dataset)
from .model import (HyperParams, extract_attention, init_params,
                    load_checkpoint, save_checkpoint)
from .synthetic import PlantConfig, PlantConfigError, generate, write_oracle
from .training import (DEFAULT_SEARCH_SPACE, DivergedError, SearchFailedError,
                       TrainConfig, predict, random_search, train)

log = logging.getLogger("hydrotrace")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _setup_logging():
    level = os.environ.get("HYDROTRACE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_fingerprint(root) -> str:
    """Content hash over the dataset directory, order-independent."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(bytes.fromhex(_sha256_file(p)))
    return h.hexdigest()


@dataclass
class RunManifest:
    run_id: str
    seed: int
    config: dict
    dataset_fingerprint: str
    artifacts: dict = field(default_factory=dict)
    created_utc: str = ""

    def add(self, name: str, path: Path):
        self.artifacts[name] = {"path": str(path), "sha256": _sha256_file(path)}

    def write(self, path):
        with open(path, "w") as f:
            json.dump({"run_id": self.run_id, "seed": self.seed,
                       "config": self.config,
                       "dataset_fingerprint": self.dataset_fingerprint,
                       "artifacts": self.artifacts,
                       "created_utc": self.created_utc}, f, indent=1, sort_keys=True)

    def verify(self) -> bool:
        return all(_sha256_file(Path(a["path"])) == a["sha256"]
                   for a in self.artifacts.values())


def _pipeline_config(cfg: dict, seed: int) -> PipelineConfig:
    return PipelineConfig(
        window_len=int(cfg.get("window_len", 7)),
        split_frac=float(cfg.get("split_frac", 0.8)),
        seed=seed,
        impute_mode=str(cfg.get("impute_mode", "per_channel")),
        normalize_scope=str(cfg.get("normalize_scope", "train")))


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    fields = ("batch_size", "max_epochs", "es_patience", "lr_patience",
              "lr_factor", "min_lr", "base_lr", "loss", "search_trials")
    kwargs = {k: cfg[k] for k in fields if k in cfg}
    return TrainConfig(seed=seed, **kwargs)


def _hyper(cfg: dict, channels: int, base_lr: float) -> HyperParams:
    return HyperParams(
        channels=channels,
        kernel_size=int(cfg.get("kernel_size", 3)),
        attn_kernel_size=int(cfg.get("attn_kernel_size", 3)),
        spatial_activation=str(cfg.get("spatial_activation", "sigmoid")),
        base_lr=base_lr)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg_dict = _load_config(args.config)
    synth_cfg = cfg_dict.get("synthetic", cfg_dict)
    plant = PlantConfig.from_dict(synth_cfg) if synth_cfg else PlantConfig()
    if args.seed is not None:
        plant.seed = args.seed
    gs, oracle = generate(plant)
    out = Path(args.out)
    from .grid_pipeline import save_binary_dataset
    save_binary_dataset(out, gs)
    write_oracle(out / "oracle.json", oracle)
    log.info("synthetic dataset written to %s (fingerprint %s)", out,
             dataset_fingerprint(out)[:12])
    print(out)
    return EXIT_OK


def _load_and_prepare(data_dir, cfg_dict, seed):
    gs = load_dataset(data_dir)
    pipe_cfg = _pipeline_config(cfg_dict.get("pipeline", {}), seed)
    ds, plan, (lo, hi) = prepare(gs, pipe_cfg)
    return ds, plan, (lo, hi), pipe_cfg


def cmd_train(args) -> int:
    cfg_dict = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg_dict.get("seed", 0))
    ds, plan, (lo, hi), pipe_cfg = _load_and_prepare(args.data, cfg_dict, seed)
    tcfg = _train_config(cfg_dict.get("training", {}), seed)
    if args.max_epochs is not None:
        tcfg.max_epochs = args.max_epochs
    if args.base_lr is not None:
        tcfg.base_lr = args.base_lr
    channels = ds.inputs.shape[4]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    trials = args.trials if args.trials is not None else 0
    if trials:
        space = cfg_dict.get("search_space", DEFAULT_SEARCH_SPACE)
        result = random_search(ds, plan, space, trials=trials, seed=seed,
                               base_cfg=tcfg)
        result.write_log(out / "trials.csv")
        p_star, history = result.best_params, result.best_history
    else:
        hyper = _hyper(cfg_dict.get("model", {}), channels, tcfg.base_lr)
        p0 = init_params(channels, hyper, seed=seed)
        p_star, history = train(ds, plan, tcfg, p0)

    ckpt = out / "checkpoint.htm"
    extra = {"pipeline": {"window_len": pipe_cfg.window_len,
                          "split_frac": pipe_cfg.split_frac,
                          "seed": pipe_cfg.seed,
                          "impute_mode": pipe_cfg.impute_mode,
                          "normalize_scope": pipe_cfg.normalize_scope},
             "target_norm": [lo, hi]}
    save_checkpoint(ckpt, p_star, feature_names=ds.feature_names, seed=seed,
                    extra=extra)
    history.write_csv(out / "history.csv")

    fp = dataset_fingerprint(args.data)
    manifest = RunManifest(
        run_id=hashlib.sha256(f"{fp}:{seed}".encode()).hexdigest()[:12],
        seed=seed, config=cfg_dict, dataset_fingerprint=fp,
        created_utc=dt.datetime.now(dt.timezone.utc).isoformat())
    manifest.add("checkpoint", ckpt)
    manifest.add("history", out / "history.csv")
    if trials:
        manifest.add("trials", out / "trials.csv")
    manifest.write(out / "manifest.json")
    print(ckpt)
    return EXIT_OK


def cmd_tune(args) -> int:
    if args.trials is None:
        args.trials = 10
    return cmd_train(args)


def cmd_evaluate(args) -> int:
    cfg_dict = _load_config(args.config)
    params, header = load_checkpoint(args.checkpoint)
    pipe = header.get("pipeline", {})
    seed = args.seed if args.seed is not None else int(pipe.get("seed", 0))
    ds, plan, _, _ = _load_and_prepare(args.data, {"pipeline": pipe}, seed)
    if ds.inputs.shape[4] != params.hyper.channels:
        print(f"error: checkpoint expects {params.hyper.channels} channels, "
              f"dataset has {ds.inputs.shape[4]}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    y = np.asarray(ds.targets)
    for split_name, idx in (("train", plan.train_idx), ("validation", plan.val_idx)):
        y_hat = predict(params, ds.inputs, idx)
        report = metrics.evaluate(y[np.asarray(idx, dtype=int)], y_hat)
        (out / f"metrics_{split_name}.json").write_text(report.to_json())
        (out / f"metrics_{split_name}.txt").write_text(report.to_table() + "\n")
        print(f"{split_name}:")
        print(report.to_table())
    return EXIT_OK


def cmd_attention(args) -> int:
    params, header = load_checkpoint(args.checkpoint)
    pipe = header.get("pipeline", {})
    seed = args.seed if args.seed is not None else int(pipe.get("seed", 0))
    ds, plan, _, _ = _load_and_prepare(args.data, {"pipeline": pipe}, seed)
    if ds.inputs.shape[4] != params.hyper.channels:
        print(f"error: checkpoint expects {params.hyper.channels} channels, "
              f"dataset has {ds.inputs.shape[4]}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = extract_attention(params, ds)

    alpha = np.stack([r.alpha for r in records])
    beta = np.stack([r.beta for r in records])
    tensor_core.write_tensor(out / "alpha.htt", alpha)
    tensor_core.write_tensor(out / "beta.htt", beta)

    fp = dataset_fingerprint(args.data)
    run_id = hashlib.sha256(f"{fp}:{seed}".encode()).hexdigest()[:12]
    index = {
        "schema_version": 1,
        "run_id": run_id,
        "n_records": len(records),
        "dates": [r.target_date.isoformat() for r in records],
        "feature_names": ds.feature_names,
        "lat": [float(v) for v in ds.lat_axis],
        "lon": [float(v) for v in ds.lon_axis],
    }
    (out / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))

    names = ds.feature_names
    monthly = analytics.monthly_feature_means(records, names)
    analytics.export(monthly, "csv", out / "monthly_feature_means.csv")
    top5 = analytics.seasonal_top_k(records, k=5, feature_names=names)
    with open(out / "seasonal_top5.csv", "w", newline="") as f:
        import csv as _csv
        w = _csv.writer(f)
        w.writerow(["season", "rank", "feature", "mean_weight"])
        for season, entries in top5.items():
            for rank, (feat, weight) in enumerate(entries, 1):
                w.writerow([season, rank, feat, repr(weight)])
    present = {analytics.season_of(r.target_date) for r in records}
    for season in analytics.SEASONS:
        if season not in present:
            continue
        smap = analytics.spatial_mean_map(records, season)
        analytics.export(smap, "csv", out / f"spatial_{season}.csv")
        analytics.export(smap, "json", out / f"spatial_{season}.json")
        analytics.export(smap, "pgm", out / f"spatial_{season}.pgm")
        mask = analytics.top_percentile_locations(smap, 20.0)
        analytics.write_mask_csv(out / f"mask_top20_{season}.csv", mask,
                                 ds.lat_axis, ds.lon_axis)
    print(out)
    return EXIT_OK


def cmd_serve(args) -> int:
    from . import service
    store = service.load_store(args.store)
    log.info("serving attention store %s on port %d", args.store, args.port)
    service.serve(store, args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydrotrace",
        description="Dual-attention ConvLSTM streamflow model toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="master RNG seed")
        p.add_argument("--out", required=True, help="output directory")

    p_synth = sub.add_parser("synth", help="generate a planted synthetic dataset")
    common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    for name, fn, hlp in (("train", cmd_train, "train a model"),
                          ("tune", cmd_tune, "random hyperparameter search")):
        p = sub.add_parser(name, help=hlp)
        common(p)
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--trials", type=int, default=None,
                       help="random-search trials (train: off by default)")
        p.add_argument("--max-epochs", type=int, default=None)
        p.add_argument("--base-lr", type=float, default=None)
        p.set_defaults(func=fn)

    p_eval = sub.add_parser("evaluate", help="metric reports for a checkpoint")
    common(p_eval)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_att = sub.add_parser("attention", help="extract attention store + analytics")
    common(p_att)
    p_att.add_argument("--data", required=True)
    p_att.add_argument("--checkpoint", required=True)
    p_att.set_defaults(func=cmd_attention)

    p_serve = sub.add_parser("serve", help="read-only attention query service")
    p_serve.add_argument("--store", required=True, help="attention store directory")
    p_serve.add_argument("--port", type=int, default=7861)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, PlantConfigError, FileNotFoundError, KeyError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergedError, SearchFailedError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
