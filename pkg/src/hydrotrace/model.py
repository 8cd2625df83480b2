"""The dual-attention depthwise ConvLSTM streamflow network.

Pipeline per sample: feature attention (softmax over channels) and
time-distributed spatial attention (conv + sigmoid per timestep) weight
the input tensor elementwise; a depthwise ConvLSTM (one hidden map per
channel, no cross-channel mixing) runs over the window; the last hidden
state is average-pooled per channel and mapped to a scalar by a linear
readout.

The forward pass is written once, in autodiff ops; inference wraps it in
no_grad so training and extraction share identical numerics.
"""

from __future__ import annotations

import datetime as dt
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import convlstm_kernels as ck
from . import tensor_core
from .tensor_core import Kernel2D, ShapeError

GATES = ("i", "f", "c", "o")

PARAM_ORDER = (
    "spatial.kernel", "spatial.bias", "feature.w",
    "convlstm.w_xi", "convlstm.w_hi", "convlstm.w_xf", "convlstm.w_hf",
    "convlstm.w_xc", "convlstm.w_hc", "convlstm.w_xo", "convlstm.w_ho",
    "convlstm.b_i", "convlstm.b_f", "convlstm.b_c", "convlstm.b_o",
    "readout.w", "readout.b",
)

CHECKPOINT_MAGIC = b"HTM1"


@dataclass
class HyperParams:
    channels: int
    kernel_size: int = 3        # ConvLSTM gate kernels, K x K
    attn_kernel_size: int = 3   # spatial attention kernel, odd
    spatial_activation: str = "sigmoid"  # sigmoid | softmax_hw
    base_lr: float = 1e-3

    def to_dict(self):
        return {"channels": self.channels, "kernel_size": self.kernel_size,
                "attn_kernel_size": self.attn_kernel_size,
                "spatial_activation": self.spatial_activation,
                "base_lr": self.base_lr}


@dataclass
class SpatialAttentionParams:
    conv: Kernel2D

    def __post_init__(self):
        kh, kw = self.conv.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("spatial attention kernel must have odd extents")


@dataclass
class FeatureAttentionParams:
    w: np.ndarray  # (C, C): maps the per-channel descriptor to C logits


@dataclass
class DepthwiseConvLSTMParams:
    """Per-channel gate kernels (C, K, K) and per-channel scalar biases (C,).

    Stored stacked across channels so the forward pass can run all channels
    in one depthwise convolution; channel c of every array is that
    channel's own cell.
    """

    w_xi: np.ndarray
    w_hi: np.ndarray
    w_xf: np.ndarray
    w_hf: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray


@dataclass
class CellParams:
    """One channel's ConvLSTM cell: eight K x K kernels, four scalar biases."""

    w_xi: np.ndarray
    w_hi: np.ndarray
    w_xf: np.ndarray
    w_hf: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    b_i: float
    b_f: float
    b_c: float
    b_o: float


@dataclass
class ReadoutParams:
    w: np.ndarray  # (C,)
    b: float


@dataclass
class ModelParams:
    spatial: SpatialAttentionParams
    feature: FeatureAttentionParams
    convlstm: DepthwiseConvLSTMParams
    readout: ReadoutParams
    hyper: HyperParams

    def channel_cell(self, c: int) -> CellParams:
        p = self.convlstm
        return CellParams(
            w_xi=p.w_xi[c], w_hi=p.w_hi[c], w_xf=p.w_xf[c], w_hf=p.w_hf[c],
            w_xc=p.w_xc[c], w_hc=p.w_hc[c], w_xo=p.w_xo[c], w_ho=p.w_ho[c],
            b_i=float(p.b_i[c]), b_f=float(p.b_f[c]),
            b_c=float(p.b_c[c]), b_o=float(p.b_o[c]))


@dataclass
class AttentionRecord:
    """Per-sample attention: spatial weights over the window and the
    feature simplex, tied to the predicted day and the grid axes."""

    alpha: np.ndarray  # (T, H, W), each entry in (0, 1)
    beta: np.ndarray   # (C,), sums to 1
    target_date: dt.date | None = None
    lat_axis: np.ndarray | None = None
    lon_axis: np.ndarray | None = None

    def validate(self, tol: float = 1e-9):
        if not np.all((self.alpha > 0.0) & (self.alpha < 1.0)):
            raise ValueError("alpha entries must lie strictly in (0, 1)")
        if abs(float(self.beta.sum()) - 1.0) > tol:
            raise ValueError("beta must sum to 1")


def init_params(channels: int, hyper: HyperParams | None = None,
                seed: int = 0) -> ModelParams:
    """Uniform [-s, s] init with s = 1/sqrt(fan_in), deterministic per seed."""
    hyper = hyper or HyperParams(channels=channels)
    if hyper.channels != channels:
        raise ShapeError("hyper.channels disagrees with requested channels")
    k, ka = hyper.kernel_size, hyper.attn_kernel_size
    rng = np.random.default_rng(seed)

    def u(scale, *shape):
        return rng.uniform(-scale, scale, size=shape)

    s_gate = 1.0 / np.sqrt(k * k)
    conv = Kernel2D(u(1.0 / np.sqrt(ka * ka), ka, ka), float(u(1.0 / np.sqrt(ka * ka))))
    feature = FeatureAttentionParams(w=u(1.0 / np.sqrt(channels), channels, channels))
    gates = {}
    for src in ("x", "h"):
        for g in GATES:
            gates[f"w_{src}{g}"] = u(s_gate, channels, k, k)
    biases = {f"b_{g}": u(s_gate, channels) for g in GATES}
    convlstm = DepthwiseConvLSTMParams(**gates, **biases)
    readout = ReadoutParams(w=u(1.0 / np.sqrt(channels), channels),
                            b=float(u(1.0 / np.sqrt(channels))))
    return ModelParams(spatial=SpatialAttentionParams(conv=conv), feature=feature,
                       convlstm=convlstm, readout=readout, hyper=hyper)


# ---------------------------------------------------------------------------
# parameter flattening (shared by the optimizer, checkpoints, gradients)
# ---------------------------------------------------------------------------

def params_to_dict(p: ModelParams) -> dict[str, np.ndarray]:
    d = {
        "spatial.kernel": p.spatial.conv.weights,
        "spatial.bias": np.asarray(p.spatial.conv.bias, dtype=np.float64),
        "feature.w": p.feature.w,
        "readout.w": p.readout.w,
        "readout.b": np.asarray(p.readout.b, dtype=np.float64),
    }
    for g in GATES:
        d[f"convlstm.w_x{g}"] = getattr(p.convlstm, f"w_x{g}")
        d[f"convlstm.w_h{g}"] = getattr(p.convlstm, f"w_h{g}")
        d[f"convlstm.b_{g}"] = getattr(p.convlstm, f"b_{g}")
    return {name: np.asarray(d[name], dtype=np.float64) for name in PARAM_ORDER}


def params_from_dict(d: dict[str, np.ndarray], hyper: HyperParams) -> ModelParams:
    conv = Kernel2D(d["spatial.kernel"].copy(), float(d["spatial.bias"]))
    gates = {f"w_{src}{g}": d[f"convlstm.w_{src}{g}"].copy()
             for src in ("x", "h") for g in GATES}
    biases = {f"b_{g}": d[f"convlstm.b_{g}"].copy() for g in GATES}
    return ModelParams(
        spatial=SpatialAttentionParams(conv=conv),
        feature=FeatureAttentionParams(w=d["feature.w"].copy()),
        convlstm=DepthwiseConvLSTMParams(**gates, **biases),
        readout=ReadoutParams(w=d["readout.w"].copy(), b=float(d["readout.b"])),
        hyper=hyper)


def copy_params(p: ModelParams) -> ModelParams:
    return params_from_dict(params_to_dict(p), p.hyper)


# ---------------------------------------------------------------------------
# forward graph
# ---------------------------------------------------------------------------

def _lift(params: ModelParams) -> dict[str, ad.Var]:
    return {name: ad.Var(arr) for name, arr in params_to_dict(params).items()}


def forward_graph(x: ad.Var, pv: dict[str, ad.Var], hyper: HyperParams):
    """Batched forward on the tape. x: (B, T, H, W, C) Var.

    Returns (y_hat (B,), alpha (B, T, H, W), beta (B, C)) Vars.
    """
    b, t, h, w, c = x.shape

    # Feature attention: per-channel global mean -> C logits -> softmax.
    desc = ad.vmean(x, axis=(1, 2, 3))                 # (B, C)
    beta = ad.vsoftmax(ad.linear(desc, pv["feature.w"]), axis=-1)

    # Spatial attention, time-distributed over the channel-mean grid.
    xm = ad.vmean(x, axis=4)                           # (B, T, H, W)
    pre = ad.conv2d_same(xm, pv["spatial.kernel"], pv["spatial.bias"])
    if hyper.spatial_activation == "sigmoid":
        alpha = ad.vsigmoid(pre)
    elif hyper.spatial_activation == "softmax_hw":
        flat = ad.reshape(pre, (b, t, h * w))
        alpha = ad.reshape(ad.vsoftmax(flat, axis=-1), (b, t, h, w))
    else:
        raise ValueError(f"unknown spatial activation {hyper.spatial_activation!r}")

    # Attention-weighted input: out = alpha * beta * x, broadcast over axes.
    x_att = ad.mul(ad.mul(ad.reshape(alpha, (b, t, h, w, 1)),
                          ad.reshape(beta, (b, 1, 1, 1, c))), x)

    hid = _convlstm_last_hidden(x_att, pv)
    pooled = ad.vmean(hid, axis=(1, 2))                # (B, C)
    y_hat = ad.readout(pooled, pv["readout.w"], pv["readout.b"])
    return y_hat, alpha, beta


def _convlstm_last_hidden(x_att: ad.Var, pv: dict[str, ad.Var]) -> ad.Var:
    """Hidden state after the last window day, (B, H, W, C).

    Uses the compiled fused recurrence when available, falling back to the
    same computation spelled out in tape ops.
    """
    if ck.HAS_FUSED:
        return _convlstm_fused_op(x_att, pv)
    b, t, h, w, c = x_att.shape
    hid = ad.as_var(np.zeros((b, h, w, c)))
    cell = ad.as_var(np.zeros((b, h, w, c)))
    for step in range(t):
        xt = ad.index(x_att, (slice(None), step))
        pre = {g: ad.add(ad.add(ad.depthwise_conv2d_same(xt, pv[f"convlstm.w_x{g}"]),
                                ad.depthwise_conv2d_same(hid, pv[f"convlstm.w_h{g}"])),
                         pv[f"convlstm.b_{g}"])
               for g in GATES}
        gi, gf = ad.vsigmoid(pre["i"]), ad.vsigmoid(pre["f"])
        gc, go = ad.vtanh(pre["c"]), ad.vsigmoid(pre["o"])
        cell = ad.add(ad.mul(gf, cell), ad.mul(gi, gc))
        hid = ad.mul(go, ad.vtanh(cell))
    return hid


def _convlstm_fused_op(x_att: ad.Var, pv: dict[str, ad.Var]) -> ad.Var:
    x_val = np.ascontiguousarray(x_att.value)
    wx = np.stack([pv[f"convlstm.w_x{g}"].value for g in GATES])
    wh = np.stack([pv[f"convlstm.w_h{g}"].value for g in GATES])
    bias = np.stack([pv[f"convlstm.b_{g}"].value for g in GATES])
    hids, cells, gates, tanhc = ck.fused_forward(x_val, wx, wh, bias)
    out = hids[:, -1].copy()
    parents = (x_att,) + tuple(pv[f"convlstm.w_x{g}"] for g in GATES) \
        + tuple(pv[f"convlstm.w_h{g}"] for g in GATES) \
        + tuple(pv[f"convlstm.b_{g}"] for g in GATES)

    def vjp(g):
        dx, dwx, dwh, db = ck.fused_backward(
            x_val, wx, wh, gates, cells, hids, tanhc, np.ascontiguousarray(g))
        return (dx,) + tuple(dwx[i] for i in range(4)) \
            + tuple(dwh[i] for i in range(4)) + tuple(db[i] for i in range(4))

    return ad._make(out, parents, vjp)


def forward_batch(x: np.ndarray, params: ModelParams):
    """Inference on a batch: (y_hat (B,), alpha (B,T,H,W), beta (B,C))."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 5:
        raise ShapeError(f"expected (B, T, H, W, C) input, got shape {x.shape}")
    if x.shape[4] != params.hyper.channels:
        raise ShapeError(f"model expects {params.hyper.channels} channels, "
                         f"input has {x.shape[4]}")
    with ad.no_grad():
        y, alpha, beta = forward_graph(ad.as_var(x), _lift(params), params.hyper)
    return y.value, alpha.value, beta.value


def forward(x_window: np.ndarray, params: ModelParams,
            target_date: dt.date | None = None,
            lat_axis=None, lon_axis=None):
    """Single-sample forward: returns (y_hat, AttentionRecord)."""
    x_window = np.asarray(x_window, dtype=np.float64)
    y, alpha, beta = forward_batch(x_window[None], params)
    record = AttentionRecord(alpha=alpha[0], beta=beta[0],
                             target_date=target_date,
                             lat_axis=lat_axis, lon_axis=lon_axis)
    return float(y[0]), record


def extract_attention(params: ModelParams, ds, batch_size: int = 32):
    """One AttentionRecord per sample, in target-date order."""
    records = []
    n = len(ds)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        _, alpha, beta = forward_batch(np.asarray(ds.inputs[start:stop]), params)
        for i in range(stop - start):
            records.append(AttentionRecord(
                alpha=alpha[i], beta=beta[i],
                target_date=ds.target_dates[start + i],
                lat_axis=ds.lat_axis, lon_axis=ds.lon_axis))
    return records


# ---------------------------------------------------------------------------
# contract-level layer operations (numpy in, numpy out)
# ---------------------------------------------------------------------------

def spatial_attention(x_t: np.ndarray, p: SpatialAttentionParams,
                      activation: str = "sigmoid") -> np.ndarray:
    """Channel-mean reduce an H x W x C grid, convolve, squash to (0, 1)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.ndim != 3:
        raise ShapeError(f"expected (H, W, C), got {x_t.shape}")
    pre = tensor_core.conv2d(x_t.mean(axis=2), p.conv, mode="same")
    if activation == "sigmoid":
        return tensor_core.sigmoid(pre)
    if activation == "softmax_hw":
        return tensor_core.softmax(pre.reshape(-1), axis=0).reshape(pre.shape)
    raise ValueError(f"unknown spatial activation {activation!r}")


def feature_attention(x_window: np.ndarray, p: FeatureAttentionParams) -> np.ndarray:
    """Softmax over C logits from the per-channel global-mean descriptor."""
    x_window = np.asarray(x_window, dtype=np.float64)
    if x_window.ndim != 4:
        raise ShapeError(f"expected (T, H, W, C), got {x_window.shape}")
    desc = x_window.mean(axis=(0, 1, 2))
    return tensor_core.softmax(p.w @ desc, axis=0)


def apply_attention(x: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """out[t,i,j,c] = alpha[t,i,j] * beta[c] * x[t,i,j,c]."""
    x = np.asarray(x, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if alpha.shape != x.shape[:3] or beta.shape != (x.shape[3],):
        raise ShapeError(f"attention shapes {alpha.shape}/{beta.shape} do not "
                         f"conform to input {x.shape}")
    return alpha[..., None] * beta * x


def depthwise_convlstm_step(x_t_c: np.ndarray, h_prev: np.ndarray,
                            c_prev: np.ndarray, p_c: CellParams):
    """One ConvLSTM step for a single channel; all convs same-mode.

    i = sig(Wxi*x + Whi*h + bi), f = sig(Wxf*x + Whf*h + bf),
    cc = tanh(Wxc*x + Whc*h + bc), o = sig(Wxo*x + Who*h + bo),
    c = f.c_prev + i.cc, h = o.tanh(c).
    """
    x_t_c = np.asarray(x_t_c, dtype=np.float64)
    if x_t_c.shape != h_prev.shape or x_t_c.shape != c_prev.shape:
        raise ShapeError("input, hidden and cell grids must share one shape")
    corr = tensor_core.corr2d_same
    gi = tensor_core.sigmoid(corr(x_t_c, p_c.w_xi) + corr(h_prev, p_c.w_hi) + p_c.b_i)
    gf = tensor_core.sigmoid(corr(x_t_c, p_c.w_xf) + corr(h_prev, p_c.w_hf) + p_c.b_f)
    cc = np.tanh(corr(x_t_c, p_c.w_xc) + corr(h_prev, p_c.w_hc) + p_c.b_c)
    go = tensor_core.sigmoid(corr(x_t_c, p_c.w_xo) + corr(h_prev, p_c.w_ho) + p_c.b_o)
    c = gf * c_prev + gi * cc
    h = go * np.tanh(c)
    return h, c


def depthwise_convlstm_forward(x: np.ndarray, p: DepthwiseConvLSTMParams) -> np.ndarray:
    """Run every channel's cell over the window; concatenate hidden maps.

    x: (T, H, W, C) -> (T, H, W, C). Channel c of the output depends only
    on channel c of the input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"expected (T, H, W, C), got {x.shape}")
    t, h, w, c = x.shape
    if p.w_xi.shape[0] != c:
        raise ShapeError(f"params built for {p.w_xi.shape[0]} channels, input has {c}")
    out = np.empty_like(x)
    hid = np.zeros((h, w, c))
    cell = np.zeros((h, w, c))
    dw = tensor_core.depthwise_corr2d_same
    for step in range(t):
        xt = x[step]
        gi = tensor_core.sigmoid(dw(xt, p.w_xi) + dw(hid, p.w_hi) + p.b_i)
        gf = tensor_core.sigmoid(dw(xt, p.w_xf) + dw(hid, p.w_hf) + p.b_f)
        gc = np.tanh(dw(xt, p.w_xc) + dw(hid, p.w_hc) + p.b_c)
        go = tensor_core.sigmoid(dw(xt, p.w_xo) + dw(hid, p.w_ho) + p.b_o)
        cell = gf * cell + gi * gc
        hid = go * np.tanh(cell)
        out[step] = hid
    return out


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, feature_names=None,
                    seed: int | None = None, extra: dict | None = None) -> None:
    """Magic HTM1, u32 header length, JSON header, then each parameter
    tensor in the binary tensor format, in PARAM_ORDER."""
    d = params_to_dict(params)
    header = {
        "schema_version": 1,
        "hyper": params.hyper.to_dict(),
        "param_order": list(PARAM_ORDER),
        "shapes": {name: list(d[name].shape) for name in PARAM_ORDER},
        "feature_names": list(feature_names) if feature_names else None,
        "seed": seed,
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in PARAM_ORDER:
            f.write(tensor_core.tensor_to_bytes(d[name]))


def load_checkpoint(path):
    """Returns (ModelParams, header dict)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a model checkpoint: bad magic")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + hlen].decode("utf-8"))
    offset = 8 + hlen
    d = {}
    for name in header["param_order"]:
        arr = tensor_core.tensor_from_bytes(data[offset:])
        d[name] = arr
        offset += 4 + 4 + 8 * arr.ndim + 8 * arr.size
    hyper = HyperParams(**header["hyper"])
    return params_from_dict(d, hyper), header
