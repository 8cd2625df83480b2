"""Hand-unrolled scalar forward pass for a 2x2 grid, T=1, C=1 model.

Written before the main model code and kept independent of it: only the
`math` module, plain floats, and explicitly expanded sums. Every conv
output cell is spelled out term by term so a mistake in the package's
vectorized forward cannot hide here.

Conventions checked against the layer definitions:
  - 3x3 "same" convolution, zero padding of one ring, cross-correlation
    (no kernel flip), kernel anchored at its center.
  - spatial attention: sigmoid(conv(x) + bias), one weight per grid cell.
  - feature attention: softmax over a single channel == 1.0.
  - ConvLSTM gates with h_prev = c_prev = 0.
  - readout: global average pool of the last hidden state, then w*pool + b.
"""

import math


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def conv3x3_same_2x2(x, k, bias):
    """x: [[x00,x01],[x10,x11]], k: 3x3 nested list. Returns 2x2 nested list.

    Each output cell is the explicit sum of the kernel taps that land on
    real (non-padding) input cells.
    """
    x00, x01 = x[0][0], x[0][1]
    x10, x11 = x[1][0], x[1][1]
    y00 = x00 * k[1][1] + x01 * k[1][2] + x10 * k[2][1] + x11 * k[2][2] + bias
    y01 = x00 * k[1][0] + x01 * k[1][1] + x10 * k[2][0] + x11 * k[2][1] + bias
    y10 = x00 * k[0][1] + x01 * k[0][2] + x10 * k[1][1] + x11 * k[1][2] + bias
    y11 = x00 * k[0][0] + x01 * k[0][1] + x10 * k[1][0] + x11 * k[1][1] + bias
    return [[y00, y01], [y10, y11]]


def hand_forward(x, spatial_kernel, spatial_bias, k_xi, k_xc, k_xf, k_xo,
                 b_i, b_f, b_c, b_o, readout_w, readout_b):
    """Scalar-by-scalar forward for one 2x2 sample, one timestep, one channel.

    x: 2x2 nested list (the single channel at the single timestep).
    Hidden-state kernels are irrelevant because h_prev is identically zero
    at the first (and only) timestep, so they are not parameters here.
    Returns (y_hat, alpha 2x2 nested list, beta list of length 1).
    """
    # Feature attention over one channel: softmax of a single logit.
    beta = [1.0]

    # Spatial attention: conv + sigmoid on the (channel-mean == identity) grid.
    a_pre = conv3x3_same_2x2(x, spatial_kernel, spatial_bias)
    alpha = [[sigmoid(a_pre[i][j]) for j in range(2)] for i in range(2)]

    # Attention-weighted input.
    xa = [[alpha[i][j] * beta[0] * x[i][j] for j in range(2)] for i in range(2)]

    # ConvLSTM step with h_prev = c_prev = 0.
    pre_i = conv3x3_same_2x2(xa, k_xi, b_i)
    pre_f = conv3x3_same_2x2(xa, k_xf, b_f)
    pre_c = conv3x3_same_2x2(xa, k_xc, b_c)
    pre_o = conv3x3_same_2x2(xa, k_xo, b_o)
    h = [[0.0, 0.0], [0.0, 0.0]]
    for i in range(2):
        for j in range(2):
            gate_i = sigmoid(pre_i[i][j])
            gate_o = sigmoid(pre_o[i][j])
            cand = math.tanh(pre_c[i][j])
            # f * c_prev vanishes; kept implicit since c_prev == 0.
            cell = gate_i * cand
            h[i][j] = gate_o * math.tanh(cell)

    pooled = (h[0][0] + h[0][1] + h[1][0] + h[1][1]) / 4.0
    y_hat = readout_w[0] * pooled + readout_b
    return y_hat, alpha, beta
