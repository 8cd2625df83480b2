"""Fused depthwise-ConvLSTM time loop: compiled forward and
backpropagation-through-time kernels.

The whole recurrence runs as two compiled calls instead of hundreds of
array ops, which is where nearly all training time goes. Per output
element the arithmetic matches the layer-by-layer path: convolution taps
accumulate in row-major kernel order, gate pre-activations group as
(x-conv + h-conv) + bias, and the sigmoid uses the same tanh identity.
Gradients here are hand-derived; the finite-difference suite checks them
against central differences.

Everything below requires numba; `HAS_FUSED` gates usage so the pure
autodiff fallback can take over when it is missing.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
    HAS_FUSED = True
except ImportError:
    HAS_FUSED = False

    def njit(*a, **k):  # pragma: no cover
        def wrap(f):
            return f
        return wrap


@njit(cache=True, nogil=True)
def _dw_acc(out, src, k, ph, pw):
    """out[b,i,j,c] += same-mode depthwise correlation of src with k."""
    nb, hh, ww, cc = src.shape
    kh, kw = k.shape[1], k.shape[2]
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
                            out[b, i, j, c] += src[b, ii, jj, c] * k[c, m, n]


@njit(cache=True, nogil=True)
def _dw_kgrad_acc(gk, g, src, ph, pw):
    """gk[c,m,n] += sum_bij g[b,i,j,c] * srcpad[b,i+m,j+n,c]."""
    nb, hh, ww, cc = src.shape
    kh, kw = gk.shape[1], gk.shape[2]
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
                            gk[c, m, n] += g[b, i, j, c] * src[b, ii, jj, c]


@njit(cache=True, nogil=True)
def fused_forward(x, wx, wh, bias):
    """Run the gate recurrence over the window.

    x: (B,T,H,W,C); wx, wh: (4,C,kh,kw) in gate order i,f,c,o; bias: (4,C).
    Returns (hids, cells, gates, tanhc) with gates shaped (4,B,T,H,W,C).
    """
    nb, nt, hh, ww, cc = x.shape
    kh, kw = wx.shape[2], wx.shape[3]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    gates = np.empty((4, nb, nt, hh, ww, cc))
    cells = np.empty((nb, nt, hh, ww, cc))
    hids = np.empty((nb, nt, hh, ww, cc))
    tanhc = np.empty((nb, nt, hh, ww, cc))
    h_prev = np.zeros((nb, hh, ww, cc))
    c_prev = np.zeros((nb, hh, ww, cc))
    pre_x = np.empty((nb, hh, ww, cc))
    pre_h = np.empty((nb, hh, ww, cc))
    for t in range(nt):
        xt = np.ascontiguousarray(x[:, t])
        for g in range(4):
            pre_x[:] = 0.0
            pre_h[:] = 0.0
            _dw_acc(pre_x, xt, wx[g], ph, pw)
            _dw_acc(pre_h, h_prev, wh[g], ph, pw)
            for b in range(nb):
                for i in range(hh):
                    for j in range(ww):
                        for c in range(cc):
                            z = (pre_x[b, i, j, c] + pre_h[b, i, j, c]) + bias[g, c]
                            if g == 2:  # cell candidate uses tanh
                                gates[g, b, t, i, j, c] = np.tanh(z)
                            else:
                                gates[g, b, t, i, j, c] = 0.5 * np.tanh(0.5 * z) + 0.5
        for b in range(nb):
            for i in range(hh):
                for j in range(ww):
                    for c in range(cc):
                        cv = gates[1, b, t, i, j, c] * c_prev[b, i, j, c] + \
                            gates[0, b, t, i, j, c] * gates[2, b, t, i, j, c]
                        tc = np.tanh(cv)
                        hv = gates[3, b, t, i, j, c] * tc
                        cells[b, t, i, j, c] = cv
                        tanhc[b, t, i, j, c] = tc
                        hids[b, t, i, j, c] = hv
                        c_prev[b, i, j, c] = cv
                        h_prev[b, i, j, c] = hv
    return hids, cells, gates, tanhc


@njit(cache=True, nogil=True)
def fused_backward(x, wx, wh, gates, cells, hids, tanhc, dh_last):
    """BPTT through the recurrence given the loss gradient at the final
    hidden state. Returns (dx, dwx, dwh, dbias)."""
    nb, nt, hh, ww, cc = x.shape
    kh, kw = wx.shape[2], wx.shape[3]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    wx_flip = np.ascontiguousarray(wx[:, :, ::-1, ::-1])
    wh_flip = np.ascontiguousarray(wh[:, :, ::-1, ::-1])
    dx = np.zeros((nb, nt, hh, ww, cc))
    dwx = np.zeros((4, cc, kh, kw))
    dwh = np.zeros((4, cc, kh, kw))
    dbias = np.zeros((4, cc))
    dh = dh_last.copy()
    dc = np.zeros((nb, hh, ww, cc))
    dpre = np.empty((4, nb, hh, ww, cc))
    zeros_hw = np.zeros((nb, hh, ww, cc))
    for t in range(nt - 1, -1, -1):
        for b in range(nb):
            for i in range(hh):
                for j in range(ww):
                    for c in range(cc):
                        gi = gates[0, b, t, i, j, c]
                        gf = gates[1, b, t, i, j, c]
                        gc = gates[2, b, t, i, j, c]
                        go = gates[3, b, t, i, j, c]
                        tc = tanhc[b, t, i, j, c]
                        dhe = dh[b, i, j, c]
                        dce = dc[b, i, j, c] + dhe * go * (1.0 - tc * tc)
                        c_prev = cells[b, t - 1, i, j, c] if t > 0 else 0.0
                        dpre[0, b, i, j, c] = dce * gc * gi * (1.0 - gi)
                        dpre[1, b, i, j, c] = dce * c_prev * gf * (1.0 - gf)
                        dpre[2, b, i, j, c] = dce * gi * (1.0 - gc * gc)
                        dpre[3, b, i, j, c] = dhe * tc * go * (1.0 - go)
                        dc[b, i, j, c] = dce * gf
        xt = np.ascontiguousarray(x[:, t])
        h_prev = np.ascontiguousarray(hids[:, t - 1]) if t > 0 else zeros_hw
        dh[:] = 0.0
        dx_t = np.zeros((nb, hh, ww, cc))
        for g in range(4):
            dpg = np.ascontiguousarray(dpre[g])
            _dw_acc(dx_t, dpg, wx_flip[g], ph, pw)
            _dw_acc(dh, dpg, wh_flip[g], ph, pw)
            _dw_kgrad_acc(dwx[g], dpg, xt, ph, pw)
            _dw_kgrad_acc(dwh[g], dpg, h_prev, ph, pw)
            for c in range(cc):
                s = 0.0
                for b in range(nb):
                    for i in range(hh):
                        for j in range(ww):
                            s += dpg[b, i, j, c]
                dbias[g, c] += s
        dx[:, t] = dx_t
    return dx, dwx, dwh, dbias
