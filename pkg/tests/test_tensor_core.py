import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrotrace import tensor_core as tc


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 7))
        k = tc.Kernel2D(np.ones((1, 1)))
        np.testing.assert_array_equal(tc.conv2d(x, k, "valid"), x)
        np.testing.assert_array_equal(tc.conv2d(x, k, "same"), x)

    def test_valid_single_impulse_expansion(self):
        # 4x4 zeros with a 1 at (2,2) in 1-indexed terms; hand expansion of
        # y(i,j) = sum_mn x(i+m-1, j+n-1) k(m,n) puts the flipped kernel
        # around the impulse.
        x = np.zeros((4, 4))
        x[1, 1] = 1.0
        a, b, c, d = 1.0, 2.0, 3.0, 4.0
        k = tc.Kernel2D(np.array([[a, b], [c, d]]))
        y = tc.conv2d(x, k, "valid")
        assert y.shape == (3, 3)
        expected = np.zeros((3, 3))
        expected[0, 0] = d
        expected[0, 1] = c
        expected[1, 0] = b
        expected[1, 1] = a
        np.testing.assert_array_equal(y, expected)

    def test_same_constant_grid_border_counts(self):
        c = 2.5
        y = tc.conv2d(np.full((5, 6), c), tc.Kernel2D(np.ones((3, 3))), "same")
        assert y[2, 3] == pytest.approx(9 * c)
        for corner in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
            assert y[corner] == pytest.approx(4 * c)
        assert y[0, 2] == pytest.approx(6 * c)

    def test_bias_added_everywhere(self):
        y = tc.conv2d(np.zeros((4, 4)), tc.Kernel2D(np.zeros((3, 3)), bias=1.5), "same")
        np.testing.assert_array_equal(y, np.full((4, 4), 1.5))

    def test_valid_matches_explicit_loops(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(8, 9))
        kw = rng.normal(size=(3, 2))
        y = tc.conv2d(x, tc.Kernel2D(kw), "valid")
        for i in range(y.shape[0]):
            for j in range(y.shape[1]):
                acc = 0.0
                for m in range(3):
                    for n in range(2):
                        acc += x[i + m, j + n] * kw[m, n]
                assert y[i, j] == pytest.approx(acc, abs=1e-12)

    def test_kernel_larger_than_input(self):
        with pytest.raises(tc.ShapeError):
            tc.conv2d(np.zeros((2, 2)), tc.Kernel2D(np.ones((3, 3))), "valid")

    def test_even_kernel_rejected_in_same_mode(self):
        with pytest.raises(tc.ShapeError):
            tc.conv2d(np.zeros((4, 4)), tc.Kernel2D(np.ones((2, 2))), "same")

    def test_linearity(self):
        rng = np.random.default_rng(2)
        k = tc.Kernel2D(rng.normal(size=(3, 3)))
        x, y = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        a, b = 1.7, -0.4
        lhs = tc.conv2d(a * x + b * y, k, "valid")
        rhs = a * tc.conv2d(x, k, "valid") + b * tc.conv2d(y, k, "valid")
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    @given(kh=st.sampled_from([1, 3, 5]), kw=st.sampled_from([1, 3, 5]),
           h=st.integers(1, 9), w=st.integers(1, 9))
    @settings(max_examples=40, deadline=None)
    def test_same_mode_preserves_shape(self, kh, kw, h, w):
        rng = np.random.default_rng(kh * 100 + kw * 10 + h + w)
        out = tc.conv2d(rng.normal(size=(h, w)),
                        tc.Kernel2D(rng.normal(size=(kh, kw))), "same")
        assert out.shape == (h, w)


class TestDepthwise:
    def test_matches_per_channel_conv(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 6, 6, 3))
        ks = rng.normal(size=(3, 3, 3))
        out = tc.depthwise_corr2d_same(x, ks)
        for c in range(3):
            ref = tc.corr2d_same(x[..., c], ks[c])
            np.testing.assert_allclose(out[..., c], ref, atol=1e-12)

    def test_channel_count_mismatch(self):
        with pytest.raises(tc.ShapeError):
            tc.depthwise_corr2d_same(np.zeros((2, 4, 4, 3)), np.zeros((2, 3, 3)))

    def test_kernel_grad_matches_brute_force(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 5, 5, 2))
        g = rng.normal(size=(2, 5, 5, 2))
        gk = tc.depthwise_kernel_grad(g, x, 3, 3)
        xp = np.pad(x, [(0, 0), (1, 1), (1, 1), (0, 0)])
        for c in range(2):
            for m in range(3):
                for n in range(3):
                    ref = np.sum(g[..., c] * xp[:, m:m + 5, n:n + 5, c])
                    assert gk[c, m, n] == pytest.approx(ref, rel=1e-12)


class TestActivations:
    def test_sigmoid_tanh_at_zero(self):
        assert tc.apply_activation("sigmoid", np.array(0.0)) == pytest.approx(0.5)
        assert tc.apply_activation("tanh", np.array(0.0)) == pytest.approx(0.0)

    def test_softmax_symmetry(self):
        np.testing.assert_allclose(tc.apply_activation("softmax", np.zeros(2), axis=0),
                                   [0.5, 0.5], atol=1e-15)

    def test_softmax_ln2(self):
        out = tc.apply_activation("softmax", np.array([np.log(2.0), 0.0]), axis=0)
        np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-12)

    def test_softmax_requires_axis(self):
        with pytest.raises(ValueError):
            tc.apply_activation("softmax", np.zeros(3))

    def test_softmax_empty_axis(self):
        with pytest.raises(tc.ShapeError):
            tc.softmax(np.zeros((2, 0)), axis=1)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_softmax_simplex_and_shift_invariance(self, logits):
        z = np.array(logits)
        s = tc.softmax(z, axis=0)
        assert np.all(s > 0)
        assert abs(s.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(tc.softmax(z + 7.3, axis=0), s, atol=1e-12)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=16))
    @settings(max_examples=60, deadline=None)
    def test_sigmoid_open_interval(self, zs):
        out = tc.sigmoid(np.array(zs))
        assert np.all(out > 0.0) and np.all(out < 1.0)


class TestBroadcastMul:
    def _shapes(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 4, 5, 6))
        alpha = rng.uniform(0.1, 0.9, size=(2, 3, 4, 5, 1))
        beta = rng.uniform(0.1, 0.9, size=(2, 1, 1, 1, 6))
        return x, alpha, beta

    def test_identity_with_ones(self):
        x, _, _ = self._shapes()
        out = tc.broadcast_mul(x, np.ones(x.shape[:4] + (1,)),
                               np.ones((x.shape[0], 1, 1, 1, x.shape[4])))
        np.testing.assert_array_equal(out, x)

    def test_uniform_beta_scales(self):
        x, _, _ = self._shapes()
        c = x.shape[4]
        out = tc.broadcast_mul(x, np.ones(x.shape[:4] + (1,)),
                               np.full((x.shape[0], 1, 1, 1, c), 1.0 / c))
        np.testing.assert_allclose(out, x / c, atol=1e-15)

    def test_zero_alpha_zeroes_all_channels(self):
        x, alpha, beta = self._shapes()
        alpha[0, 1, 2, 3, 0] = 0.0
        out = tc.broadcast_mul(x, alpha, beta)
        np.testing.assert_array_equal(out[0, 1, 2, 3, :], np.zeros(x.shape[4]))

    def test_elementwise_definition(self):
        x, alpha, beta = self._shapes()
        out = tc.broadcast_mul(x, alpha, beta)
        b, t, i, j, c = 1, 2, 3, 4, 5
        assert out[b, t, i, j, c] == pytest.approx(
            alpha[b, t, i, j, 0] * beta[b, 0, 0, 0, c] * x[b, t, i, j, c])

    def test_shape_errors(self):
        x, alpha, beta = self._shapes()
        with pytest.raises(tc.ShapeError):
            tc.broadcast_mul(x, alpha[:, :1], beta)
        with pytest.raises(tc.ShapeError):
            tc.broadcast_mul(x, alpha, beta[..., :2])


class TestTensorFile:
    @given(shape=st.lists(st.integers(0, 4), min_size=0, max_size=4))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_shapes(self, tmp_path_factory, shape):
        path = tmp_path_factory.mktemp("htt") / "t.htt"
        rng = np.random.default_rng(42)
        arr = rng.normal(size=tuple(shape))
        tc.write_tensor(path, arr)
        back = tc.read_tensor(path)
        assert back.shape == arr.shape
        np.testing.assert_array_equal(back, arr)

    def test_bit_exact_payload(self, tmp_path):
        arr = np.array([0.1, -0.0, np.pi, 1e-308, 1e308])
        path = tmp_path / "t.htt"
        tc.write_tensor(path, arr)
        back = tc.read_tensor(path)
        assert back.tobytes() == arr.tobytes()

    def test_header_layout(self, tmp_path):
        path = tmp_path / "t.htt"
        tc.write_tensor(path, np.zeros((2, 3)))
        raw = path.read_bytes()
        assert raw[:4] == b"HTT1"
        assert int.from_bytes(raw[4:8], "little") == 2
        assert int.from_bytes(raw[8:16], "little") == 2
        assert int.from_bytes(raw[16:24], "little") == 3
        assert len(raw) == 24 + 6 * 8

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.htt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            tc.read_tensor(path)
