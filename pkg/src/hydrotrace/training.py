"""Training: losses, exact reverse-mode gradients, Adam, early stopping,
learning-rate reduction on plateau, and seeded random hyperparameter search.

The training objective is MSE by default; model selection uses validation
MAE. An epoch with relative validation improvement below 1e-4 counts as a
plateau for both the early-stopping and LR-reduction counters.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .model import (HyperParams, ModelParams, forward_batch, forward_graph,
                    init_params, params_from_dict, params_to_dict)


class DivergedError(RuntimeError):
    """Loss or gradients left the finite range."""


class SearchFailedError(RuntimeError):
    """Every random-search trial diverged."""


@dataclass
class TrainConfig:
    batch_size: int = 8
    max_epochs: int = 200
    es_patience: int = 10
    lr_patience: int = 5
    lr_factor: float = 0.5
    min_lr: float = 1e-5
    base_lr: float = 1e-3
    seed: int = 0
    loss: str = "mse"
    search_trials: int = 10
    improvement_rtol: float = 1e-4
    grad_clip: float | None = None  # optional +-clamp, off by default

    def __post_init__(self):
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError("lr_factor must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.search_trials < 1:
            raise ValueError("search_trials must be >= 1")
        if self.loss not in ("mse", "mae"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_mae: float
    lr: float
    event: str = ""


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "val_loss", "val_mae", "lr", "event"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss),
                            repr(r.val_mae), repr(r.lr), r.event])


def loss(kind: str, y_hat, y) -> float:
    """Mean squared or mean absolute error over two equal-length series."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape or y.size == 0:
        raise ValueError(f"series shapes disagree: {y_hat.shape} vs {y.shape}")
    if kind == "mse":
        return float(np.mean((y_hat - y) ** 2))
    if kind == "mae":
        return float(np.mean(np.abs(y_hat - y)))
    raise ValueError(f"unknown loss {kind!r}")


def gradients(params: ModelParams, x_batch: np.ndarray, y_batch: np.ndarray,
              loss_kind: str = "mse"):
    """Exact reverse-mode gradients of the batch loss for every learnable.

    Returns (grads dict keyed like params_to_dict, loss value).
    """
    pv = {name: ad.Var(arr) for name, arr in params_to_dict(params).items()}
    x = ad.as_var(np.asarray(x_batch, dtype=np.float64))
    y = ad.as_var(np.asarray(y_batch, dtype=np.float64))
    y_hat, _, _ = forward_graph(x, pv, params.hyper)
    resid = ad.sub(y_hat, y)
    if loss_kind == "mse":
        objective = ad.vmean(ad.mul(resid, resid))
    elif loss_kind == "mae":
        objective = ad.vmean(ad.vabs(resid))
    else:
        raise ValueError(f"unknown loss {loss_kind!r}")
    value = float(objective.value)
    if not np.isfinite(value):
        raise DivergedError(f"non-finite loss {value}")
    objective.backward()
    grads = {name: (v.grad if v.grad is not None else np.zeros_like(v.value))
             for name, v in pv.items()}
    return grads, value


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam(param_dict: dict) -> AdamState:
    return AdamState(m={k: np.zeros_like(v) for k, v in param_dict.items()},
                     v={k: np.zeros_like(v) for k, v in param_dict.items()},
                     t=0)


def adam_step(param_dict: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update with bias correction. Pure: returns new dicts/state."""
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in param_dict.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise DivergedError(f"non-finite gradient for {k}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(m=new_m, v=new_v, t=t)


def predict(params: ModelParams, inputs, idx=None, batch_size: int = 64) -> np.ndarray:
    """y_hat for the given sample index list (all samples when idx is None)."""
    if idx is None:
        idx = np.arange(inputs.shape[0])
    idx = np.asarray(idx, dtype=int)
    out = np.empty(idx.shape[0], dtype=np.float64)
    for s in range(0, idx.shape[0], batch_size):
        chunk = idx[s:s + batch_size]
        out[s:s + chunk.shape[0]] = forward_batch(inputs[chunk], params)[0]
    return out


def train(ds, plan, cfg: TrainConfig, p0: ModelParams):
    """Seeded mini-batch training with plateau LR reduction and early
    stopping; returns the best-validation-loss parameters seen, not the
    last ones, plus the per-epoch history."""
    train_idx = np.asarray(plan.train_idx, dtype=int)
    val_idx = np.asarray(plan.val_idx, dtype=int)
    if train_idx.size == 0:
        raise ValueError("empty training split")
    y = np.asarray(ds.targets, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)

    pd = params_to_dict(p0)
    state = init_adam(pd)
    lr = cfg.base_lr
    history = TrainHistory()
    best_pd = {k: v.copy() for k, v in pd.items()}
    best_val = float("inf")
    es_wait = lr_wait = 0

    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(train_idx)
        total, seen = 0.0, 0
        params_now = params_from_dict(pd, p0.hyper)
        for s in range(0, perm.size, cfg.batch_size):
            batch = perm[s:s + cfg.batch_size]
            grads, batch_loss = gradients(params_now, ds.inputs[batch], y[batch],
                                          cfg.loss)
            if cfg.grad_clip is not None:
                grads = {k: np.clip(g, -cfg.grad_clip, cfg.grad_clip)
                         for k, g in grads.items()}
            pd, state = adam_step(pd, grads, state, lr)
            params_now = params_from_dict(pd, p0.hyper)
            total += batch_loss * batch.size
            seen += batch.size
        train_loss = total / seen

        val_hat = predict(params_now, ds.inputs, val_idx)
        val_loss = loss(cfg.loss, val_hat, y[val_idx])
        val_mae = loss("mae", val_hat, y[val_idx])
        if not np.isfinite(val_loss):
            raise DivergedError(f"non-finite validation loss at epoch {epoch}")

        improved = val_loss < best_val * (1.0 - cfg.improvement_rtol)
        events = []
        if improved:
            best_val = val_loss
            best_pd = {k: v.copy() for k, v in pd.items()}
            history.best_epoch = epoch
            history.best_val_loss = val_loss
            es_wait = lr_wait = 0
        else:
            es_wait += 1
            lr_wait += 1
            if lr_wait >= cfg.lr_patience and lr > cfg.min_lr:
                lr = max(lr * cfg.lr_factor, cfg.min_lr)
                lr_wait = 0
                events.append("lr-reduced")
            if es_wait >= cfg.es_patience:
                events.append("early-stopped")
        history.records.append(EpochRecord(
            epoch=epoch, train_loss=train_loss, val_loss=val_loss,
            val_mae=val_mae, lr=lr, event=";".join(events)))
        if "early-stopped" in events:
            break

    return params_from_dict(best_pd, p0.hyper), history


DEFAULT_SEARCH_SPACE = {
    "base_lr": [1e-2, 3e-3, 1e-3, 3e-4],
    "kernel_size": [3, 5],
    "attn_kernel_size": [3, 5],
    "loss": ["mse"],
}


@dataclass
class TrialResult:
    trial: int
    seed: int
    config: dict
    val_mae: float
    epochs_run: int


@dataclass
class SearchResult:
    best_trial: int
    best_config: dict
    best_params: ModelParams
    best_val_mae: float
    trials: list[TrialResult]
    best_history: TrainHistory | None = None

    def write_log(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["trial", "seed", "config_json", "val_mae", "epochs_run"])
            for t in self.trials:
                w.writerow([t.trial, t.seed, json.dumps(t.config, sort_keys=True),
                            repr(t.val_mae), t.epochs_run])


def _draw(space_value, rng):
    """Tuples are bounded continuous ranges; lists are categorical choices."""
    if isinstance(space_value, tuple):
        lo, hi = space_value
        return float(rng.uniform(lo, hi))
    return space_value[int(rng.integers(len(space_value)))]


def random_search(ds, plan, space: dict | None = None, trials: int = 10,
                  seed: int = 0, base_cfg: TrainConfig | None = None):
    """Independent seeded trials over the space; argmin validation MAE wins,
    ties broken by earlier trial index."""
    space = dict(space or DEFAULT_SEARCH_SPACE)
    if not space or any(len(v) == 0 for v in space.values()):
        raise ValueError("search space must be nonempty in every dimension")
    base_cfg = base_cfg or TrainConfig()
    master = np.random.default_rng(seed)
    draws = []
    for t in range(trials):
        config = {k: _draw(v, master) for k, v in sorted(space.items())}
        trial_seed = int(master.integers(0, 2**31 - 1))
        draws.append((config, trial_seed))

    channels = ds.inputs.shape[4]
    results: list[TrialResult] = []
    best = None
    for t, (config, trial_seed) in enumerate(draws):
        hyper = HyperParams(
            channels=channels,
            kernel_size=int(config.get("kernel_size", 3)),
            attn_kernel_size=int(config.get("attn_kernel_size", 3)),
            base_lr=float(config.get("base_lr", base_cfg.base_lr)))
        cfg = replace(base_cfg, base_lr=hyper.base_lr,
                      loss=str(config.get("loss", base_cfg.loss)), seed=trial_seed)
        p0 = init_params(channels, hyper, seed=trial_seed)
        try:
            p_best, hist = train(ds, plan, cfg, p0)
            val_hat = predict(p_best, ds.inputs, plan.val_idx)
            val_mae = loss("mae", val_hat, np.asarray(ds.targets)[plan.val_idx])
            epochs = len(hist.records)
        except DivergedError:
            p_best, hist, val_mae, epochs = None, None, float("inf"), 0
        results.append(TrialResult(trial=t, seed=trial_seed, config=config,
                                   val_mae=val_mae, epochs_run=epochs))
        if p_best is not None and (best is None or val_mae < best[1]):
            best = (t, val_mae, config, p_best, hist)
    if best is None:
        raise SearchFailedError("all search trials diverged")
    return SearchResult(best_trial=best[0], best_config=best[2],
                        best_params=best[3], best_val_mae=best[1],
                        trials=results, best_history=best[4])
