"""Dense float64 tensor primitives: 2-D convolution, activations,
attention broadcast products, and the binary tensor file format.

All public operations are pure functions over numpy arrays and preserve
float64 throughout; no mixed precision anywhere in the package.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

try:
    from numba import njit as _njit
    _HAS_NUMBA = True
except ImportError:  # pure-numpy fallbacks below compute identical results
    _HAS_NUMBA = False

TENSOR_MAGIC = b"HTT1"


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an operation."""


@dataclass
class Kernel2D:
    """A 2-D convolution kernel with a scalar bias.

    Odd spatial sizes are required in "same" mode so the kernel can be
    centered on every output cell.
    """

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise ShapeError(f"kernel must be 2-D and non-empty, got shape {self.weights.shape}")
        self.bias = float(self.bias)


def corr2d_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Cross-correlation, valid extent, over the last two axes of x.

    y(i,j) = sum_{m,n} x(i+m, j+n) * k(m,n), output (H-M+1) x (W-N+1).
    Top-left anchored, no kernel flip. Accumulated tap-by-tap in row-major
    kernel order, so summation order per output element is fixed.
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    kh, kw = k.shape
    if x.shape[-2] < kh or x.shape[-1] < kw:
        raise ShapeError(f"kernel {k.shape} larger than input {x.shape[-2:]}")
    oh, ow = x.shape[-2] - kh + 1, x.shape[-1] - kw + 1
    out = np.zeros(x.shape[:-2] + (oh, ow))
    for m in range(kh):
        for n in range(kw):
            out += k[m, n] * x[..., m:m + oh, n:n + ow]
    return out


def corr2d_same(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Cross-correlation with symmetric zero padding; output shape == input.

    Requires odd kernel extents. Operates over the last two axes of x, so
    leading batch/time axes pass through unchanged.
    """
    k = np.asarray(k, dtype=np.float64)
    if k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise ShapeError(f"same-mode convolution needs odd kernel extents, got {k.shape}")
    ph, pw = (k.shape[0] - 1) // 2, (k.shape[1] - 1) // 2
    x = np.asarray(x, dtype=np.float64)
    pad = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    return corr2d_valid(np.pad(x, pad), k)


# Compiled inner loops. Accumulation per output element runs over kernel
# taps in row-major (m, n) order, matching the numpy fallbacks bit for bit;
# out-of-bounds taps are the zero padding and contribute nothing.

if _HAS_NUMBA:

    @_njit(cache=True, nogil=True)
    def _dw_same_kernel(x, kernels, ph, pw):
        nb, hh, ww, cc = x.shape
        kh, kw = kernels.shape[1], kernels.shape[2]
        out = np.zeros((nb, hh, ww, cc))
        for b in range(nb):
            for i in range(hh):
                for m in range(kh):
                    ii = i + m - ph
                    if ii < 0 or ii >= hh:
                        continue
                    for j in range(ww):
                        for n in range(kw):
                            jj = j + n - pw
                            if jj < 0 or jj >= ww:
                                continue
                            for c in range(cc):
                                out[b, i, j, c] += x[b, ii, jj, c] * kernels[c, m, n]
        return out

    @_njit(cache=True, nogil=True)
    def _dw_grad_kernel(g, x, kh, kw, ph, pw):
        nb, hh, ww, cc = x.shape
        gk = np.zeros((cc, kh, kw))
        for b in range(nb):
            for i in range(hh):
                for m in range(kh):
                    ii = i + m - ph
                    if ii < 0 or ii >= hh:
                        continue
                    for j in range(ww):
                        for n in range(kw):
                            jj = j + n - pw
                            if jj < 0 or jj >= ww:
                                continue
                            for c in range(cc):
                                gk[c, m, n] += g[b, i, j, c] * x[b, ii, jj, c]
        return gk


def depthwise_corr2d_same(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Per-channel same-mode cross-correlation, channels last.

    x: (..., H, W, C); kernels: (C, kh, kw) with odd kh, kw.
    Channel c of the output depends only on channel c of the input.
    """
    kernels = np.ascontiguousarray(kernels, dtype=np.float64)
    kh, kw = kernels.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"same-mode convolution needs odd kernel extents, got {(kh, kw)}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 3:
        raise ShapeError(f"expected (..., H, W, C), got {x.shape}")
    if kernels.shape[0] != x.shape[-1]:
        raise ShapeError(f"{kernels.shape[0]} kernels for {x.shape[-1]} channels")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    if _HAS_NUMBA:
        lead = x.shape[:-3]
        flat = np.ascontiguousarray(x).reshape((-1,) + x.shape[-3:])
        out = _dw_same_kernel(flat, kernels, ph, pw)
        return out.reshape(lead + x.shape[-3:])
    pad = [(0, 0)] * (x.ndim - 3) + [(ph, ph), (pw, pw), (0, 0)]
    xp = np.pad(x, pad)
    oh, ow = x.shape[-3], x.shape[-2]
    out = np.zeros(x.shape)
    for m in range(kh):
        for n in range(kw):
            out += xp[..., m:m + oh, n:n + ow, :] * kernels[:, m, n]
    return out


def depthwise_kernel_grad(g: np.ndarray, x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Adjoint of depthwise_corr2d_same with respect to the kernels.

    gk[c,m,n] = sum over batch and positions of g[...,i,j,c] * xpad[...,i+m,j+n,c].
    """
    g = np.asarray(g, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    if _HAS_NUMBA:
        flat_g = np.ascontiguousarray(g).reshape((-1,) + g.shape[-3:])
        flat_x = np.ascontiguousarray(x).reshape((-1,) + x.shape[-3:])
        return _dw_grad_kernel(flat_g, flat_x, kh, kw, ph, pw)
    pad = [(0, 0)] * (x.ndim - 3) + [(ph, ph), (pw, pw), (0, 0)]
    xp = np.pad(x, pad)
    oh, ow = x.shape[-3], x.shape[-2]
    cc = x.shape[-1]
    gk = np.zeros((cc, kh, kw))
    for m in range(kh):
        for n in range(kw):
            prod = g * xp[..., m:m + oh, n:n + ow, :]
            gk[:, m, n] = prod.reshape(-1, cc).sum(axis=0)
    return gk


def conv2d(x: np.ndarray, k: Kernel2D, mode: str = "valid") -> np.ndarray:
    """2-D convolution of an H x W grid with a kernel and scalar bias.

    "valid" computes the cross-correlation sum anchored at the top-left,
    shrinking the output to (H-M+1) x (W-N+1); "same" zero-pads so the
    output matches the input and the kernel is centered (odd sizes only).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"conv2d expects a 2-D grid, got shape {x.shape}")
    if mode == "valid":
        return corr2d_valid(x, k.weights) + k.bias
    if mode == "same":
        return corr2d_same(x, k.weights) + k.bias
    raise ValueError(f"unknown conv2d mode {mode!r}")


def sigmoid(z: np.ndarray) -> np.ndarray:
    # 0.5 * (1 + tanh(z/2)) == 1 / (1 + exp(-z)); branchless and stable.
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * np.tanh(0.5 * z) + 0.5


def softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    zs = z - np.max(z, axis=axis, keepdims=True)
    ez = np.exp(zs)
    return ez / np.sum(ez, axis=axis, keepdims=True)


def apply_activation(kind: str, z: np.ndarray, axis: int | None = None) -> np.ndarray:
    """sigmoid | tanh elementwise, or softmax along a required axis."""
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "tanh":
        return np.tanh(np.asarray(z, dtype=np.float64))
    if kind == "softmax":
        if axis is None:
            raise ValueError("softmax requires an axis")
        return softmax(z, axis)
    raise ValueError(f"unknown activation {kind!r}")


def broadcast_mul(x: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """out[b,t,i,j,c] = alpha[b,t,i,j,0] * beta[b,0,0,0,c] * x[b,t,i,j,c]."""
    x = np.asarray(x, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if x.ndim != 5 or alpha.ndim != 5 or beta.ndim != 5:
        raise ShapeError("broadcast_mul expects rank-5 operands")
    if alpha.shape != x.shape[:4] + (1,):
        raise ShapeError(f"alpha shape {alpha.shape} does not conform to x {x.shape}")
    if beta.shape != (x.shape[0], 1, 1, 1, x.shape[4]):
        raise ShapeError(f"beta shape {beta.shape} does not conform to x {x.shape}")
    return alpha * beta * x


def _as_c_f64(arr) -> np.ndarray:
    # np.ascontiguousarray would promote rank-0 tensors to rank 1
    arr = np.asarray(arr, dtype=np.float64)
    return arr if arr.flags.c_contiguous else arr.copy(order="C")


def write_tensor(path, arr: np.ndarray) -> None:
    """Write a float64 tensor: magic HTT1, u32 rank, rank x u64 extents,
    then the row-major little-endian payload. Bit-exact round trip.
    """
    arr = _as_c_f64(arr)
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        for extent in arr.shape:
            f.write(struct.pack("<Q", extent))
        f.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    return tensor_from_bytes(data)


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    head = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    head += b"".join(struct.pack("<Q", e) for e in arr.shape)
    return head + arr.astype("<f8", copy=False).tobytes(order="C")


def tensor_from_bytes(data: bytes) -> np.ndarray:
    if data[:4] != TENSOR_MAGIC:
        raise ValueError("not a tensor file: bad magic")
    (rank,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{rank}Q", data, 8) if rank else ()
    offset = 8 + 8 * rank
    count = int(np.prod(shape)) if rank else 1
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
    return flat.reshape(shape).astype(np.float64, copy=True)
