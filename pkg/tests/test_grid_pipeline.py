import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrotrace import grid_pipeline as gp


def make_series(t_total=12, h=3, w=4, cd=2, cs=1, seed=0, target=None):
    rng = np.random.default_rng(seed)
    dates = [dt.date(2015, 1, 1) + dt.timedelta(days=i) for i in range(t_total)]
    return gp.GridSeries(
        dates=dates,
        dynamic=rng.normal(size=(t_total, h, w, cd)),
        static=rng.normal(size=(h, w, cs)),
        lat_axis=30.0 - 0.5 * np.arange(h),
        lon_axis=90.0 + 0.5 * np.arange(w),
        feature_names=[f"dyn_{i}" for i in range(cd)] + [f"st_{i}" for i in range(cs)],
        target=rng.uniform(size=t_total) if target is None else np.asarray(target, float),
    )


class TestCyclicEncode:
    def test_origin(self):
        np.testing.assert_allclose(gp.cyclic_encode(0.0, 0.0), (0, 1, 0, 1), atol=1e-15)

    def test_quarter_turns(self):
        s_lat, c_lat, s_lon, c_lon = gp.cyclic_encode(22.5, 90.0)
        assert s_lat == pytest.approx(1.0)
        assert c_lat == pytest.approx(0.0, abs=1e-12)
        assert s_lon == pytest.approx(0.0, abs=1e-12)
        assert c_lon == pytest.approx(-1.0)

    @given(lat=st.floats(-90, 90), lon=st.floats(-180, 180))
    @settings(max_examples=60, deadline=None)
    def test_periodicity_and_unit_circle(self, lat, lon):
        base = gp.cyclic_encode(lat, lon)
        shifted = gp.cyclic_encode(lat + 90.0, lon + 180.0)
        np.testing.assert_allclose(base, shifted, atol=1e-9)
        assert base[0] ** 2 + base[1] ** 2 == pytest.approx(1.0, abs=1e-12)
        assert base[2] ** 2 + base[3] ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(gp.InvalidCoordinateError):
            gp.cyclic_encode(float("nan"), 0.0)
        with pytest.raises(gp.InvalidCoordinateError):
            gp.cyclic_encode(0.0, float("inf"))


class TestFillMissing:
    def test_mean_imputation(self):
        out = gp.fill_missing(np.array([1.0, np.nan, 3.0]))
        np.testing.assert_array_equal(out, [1.0, 2.0, 3.0])

    def test_all_finite_noop(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(gp.fill_missing(x), x)

    def test_all_missing_rejected(self):
        with pytest.raises(gp.CannotImputeError):
            gp.fill_missing(np.array([np.nan, np.nan]))

    @given(st.lists(st.one_of(st.floats(-100, 100), st.none()),
                    min_size=2, max_size=30))
    @settings(max_examples=60, deadline=None)
    def test_mean_preserved(self, raw):
        x = np.array([np.nan if v is None else v for v in raw])
        finite = np.isfinite(x)
        if not finite.any():
            return
        out = gp.fill_missing(x)
        assert np.isfinite(out).all()
        assert out.mean() == pytest.approx(x[finite].mean(), abs=1e-12)

    def test_per_channel_mode(self):
        x = np.array([[1.0, 10.0], [np.nan, np.nan], [3.0, 30.0]])
        out = gp.impute(x, "per_channel")
        np.testing.assert_allclose(out[1], [2.0, 20.0])
        glob = gp.impute(x, "global")
        assert glob[1, 0] == pytest.approx(11.0)  # mean of {1,10,3,30}


class TestNormalizeTarget:
    def test_basic(self):
        y, lo, hi = gp.normalize_target(np.array([2.0, 4.0, 6.0]))
        np.testing.assert_allclose(y, [0.0, 0.5, 1.0])
        assert (lo, hi) == (2.0, 6.0)

    def test_already_unit(self):
        y, lo, hi = gp.normalize_target(np.array([0.0, 0.25, 1.0]))
        np.testing.assert_allclose(y, [0.0, 0.25, 1.0])

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=50) * 7 + 3
        yn, lo, hi = gp.normalize_target(y)
        np.testing.assert_allclose(gp.denormalize_target(yn, lo, hi), y, atol=1e-12)

    def test_nan_passthrough(self):
        y, _, _ = gp.normalize_target(np.array([1.0, np.nan, 3.0]))
        assert np.isnan(y[1]) and y[0] == 0.0 and y[2] == 1.0

    def test_constant_rejected(self):
        with pytest.raises(gp.DegenerateRangeError):
            gp.normalize_target(np.full(4, 2.0))

    def test_fit_subset(self):
        y = np.array([0.0, 5.0, 10.0, 20.0])
        yn, lo, hi = gp.normalize_target(y, fit_idx=[0, 2])
        assert (lo, hi) == (0.0, 10.0)
        assert yn[3] == pytest.approx(2.0)  # outside fit range extrapolates


class TestBroadcastStatic:
    def test_constant(self):
        out = gp.broadcast_static(np.full((2, 2, 1), 5.0), 7)
        assert out.shape == (7, 2, 2, 1)
        assert np.all(out == 5.0)

    def test_window_one_identity(self):
        static = np.random.default_rng(1).normal(size=(3, 3, 2))
        np.testing.assert_array_equal(gp.broadcast_static(static, 1)[0], static)

    def test_slices_identical(self):
        static = np.random.default_rng(2).normal(size=(2, 2, 1))
        out = gp.broadcast_static(static, 3)
        for t in range(3):
            np.testing.assert_array_equal(out[t], static)

    def test_zero_window_rejected(self):
        with pytest.raises(gp.InvalidWindowError):
            gp.broadcast_static(np.zeros((2, 2, 1)), 0)


class TestMakeWindows:
    def test_counts_and_alignment(self):
        gs = make_series(t_total=10)
        ds = gp.make_windows(gs, 7)
        assert len(ds) == 3
        assert ds.target_dates[0] == gs.dates[7]
        np.testing.assert_array_equal(ds.targets, gs.target[7:])

    def test_single_sample(self):
        assert len(gp.make_windows(make_series(t_total=8), 7)) == 1

    def test_boundary_error(self):
        with pytest.raises(gp.InsufficientHistoryError):
            gp.make_windows(make_series(t_total=7), 7)

    def test_channel_assembly(self):
        gs = make_series(t_total=9, cd=2, cs=1)
        ds = gp.make_windows(gs, 7)
        assert ds.inputs.shape[-1] == 2 + 1 + 4
        assert ds.feature_names[-4:] == list(gp.CYCLIC_FEATURE_NAMES)
        # dynamic content at window sample 1, day offset 2 is source day 3
        np.testing.assert_array_equal(ds.inputs[1, 2, :, :, :2], gs.dynamic[3])
        # static channel constant across window days
        np.testing.assert_array_equal(ds.inputs[0, 0, :, :, 2], gs.static[:, :, 0])
        np.testing.assert_array_equal(ds.inputs[0, 6, :, :, 2], gs.static[:, :, 0])
        # cyclic channels lie on the unit circle
        sin_lat = ds.inputs[0, 0, :, :, 3]
        cos_lat = ds.inputs[0, 0, :, :, 4]
        np.testing.assert_allclose(sin_lat**2 + cos_lat**2, 1.0, atol=1e-12)

    @given(t_total=st.integers(8, 40), wn=st.integers(1, 7))
    @settings(max_examples=25, deadline=None)
    def test_window_count_property(self, t_total, wn):
        if t_total <= wn:
            return
        ds = gp.make_windows(make_series(t_total=t_total), wn)
        assert len(ds) == t_total - wn
        for i in (0, len(ds) - 1):
            assert (ds.target_dates[i] - dt.date(2015, 1, 1)).days == i + wn


class TestDropMissingTargets:
    def test_removes_rows(self):
        gs = make_series(t_total=10, target=[0.1] * 7 + [0.1, np.nan, 0.3])
        ds = gp.drop_missing_targets(gp.make_windows(gs, 7))
        assert len(ds) == 2
        assert [d.day for d in ds.target_dates] == [8, 10]

    def test_no_missing_unchanged(self):
        ds = gp.make_windows(make_series(t_total=10), 7)
        assert gp.drop_missing_targets(ds) is ds

    @given(missing=st.sets(st.integers(0, 29), max_size=12))
    @settings(max_examples=25, deadline=None)
    def test_count_matches_direct_scan(self, missing):
        t_total, wn = 37, 7
        target = np.random.default_rng(3).uniform(size=t_total)
        for m in missing:
            target[wn + m] = np.nan
        gs = make_series(t_total=t_total, target=target)
        ds = gp.drop_missing_targets(gp.make_windows(gs, wn))
        expected = (t_total - wn) - sum(1 for m in missing if wn + m < t_total)
        assert len(ds) == expected
        assert np.isfinite(ds.targets).all()


class TestSplitDataset:
    def test_documented_example(self):
        plan = gp.split_dataset(10, seed=4)  # offset 4
        assert plan.val_idx == [4, 9]
        assert plan.train_idx == [0, 1, 2, 3, 5, 6, 7, 8]

    def test_minimum_size(self):
        plan = gp.split_dataset(5, seed=0)
        assert len(plan.val_idx) == 1

    def test_determinism(self):
        a = gp.split_dataset(103, seed=11)
        b = gp.split_dataset(103, seed=11)
        assert a.val_idx == b.val_idx and a.train_idx == b.train_idx

    def test_too_few(self):
        with pytest.raises(gp.TooFewSamplesError):
            gp.split_dataset(4, seed=0)

    @given(n=st.integers(5, 400), seed=st.integers(0, 50))
    @settings(max_examples=60, deadline=None)
    def test_invariants(self, n, seed):
        plan = gp.split_dataset(n, seed=seed)
        val, train = plan.val_idx, plan.train_idx
        assert len(val) == round(0.2 * n)
        assert sorted(val + train) == list(range(n))
        assert not set(val) & set(train)
        if len(val) > 1:
            gaps = np.diff(val)
            assert gaps.max() <= 2 * n / len(val)


class TestDatasetIO:
    def test_csv_round_trip(self, tmp_path):
        gs = make_series(t_total=9, h=2, w=3, cd=2, cs=1)
        root = tmp_path / "csvds"
        root.mkdir()
        for t, d in enumerate(gs.dates):
            lines = ["lat,lon,dyn_0,dyn_1"]
            for i, la in enumerate(gs.lat_axis):
                for j, lo in enumerate(gs.lon_axis):
                    lines.append(f"{la},{lo},{float(gs.dynamic[t,i,j,0])!r},{float(gs.dynamic[t,i,j,1])!r}")
            (root / f"{d.isoformat()}.csv").write_text("\n".join(lines) + "\n")
        lines = ["lat,lon,st_0"]
        for i, la in enumerate(gs.lat_axis):
            for j, lo in enumerate(gs.lon_axis):
                lines.append(f"{la},{lo},{float(gs.static[i,j,0])!r}")
        (root / "static.csv").write_text("\n".join(lines) + "\n")
        rows = ["date,value"] + [f"{d.isoformat()},{float(v)!r}" for d, v in zip(gs.dates, gs.target)]
        (root / "target.csv").write_text("\n".join(rows) + "\n")

        back = gp.load_csv_dataset(root)
        np.testing.assert_allclose(back.dynamic, gs.dynamic, atol=1e-15)
        np.testing.assert_allclose(back.static, gs.static, atol=1e-15)
        np.testing.assert_allclose(back.target, gs.target, atol=1e-15)
        assert back.feature_names == gs.feature_names
        assert back.dates == gs.dates
        assert back.lat_axis[0] > back.lat_axis[-1]  # north to south

    def test_csv_missing_markers(self, tmp_path):
        root = tmp_path / "csvds"
        root.mkdir()
        (root / "2015-01-01.csv").write_text(
            "lat,lon,f\n1.0,2.0,NaN\n1.0,3.0,\n0.0,2.0,5.0\n0.0,3.0,1.0\n")
        (root / "target.csv").write_text("date,value\n2015-01-01,0.5\n")
        gs = gp.load_csv_dataset(root)
        assert math.isnan(gs.dynamic[0, 0, 0, 0])  # lat 1.0 is row 0 (north)
        assert math.isnan(gs.dynamic[0, 0, 1, 0])
        assert gs.dynamic[0, 1, 0, 0] == 5.0

    def test_binary_round_trip_bit_exact(self, tmp_path):
        gs = make_series(t_total=9, target=[0.1] * 8 + [np.nan])
        root = tmp_path / "binds"
        gp.save_binary_dataset(root, gs)
        back = gp.load_binary_dataset(root)
        assert back.dynamic.tobytes() == gs.dynamic.tobytes()
        assert back.static.tobytes() == gs.static.tobytes()
        # NaN round-trips through the CSV target as a NaN marker
        assert np.isnan(back.target[-1])
        np.testing.assert_array_equal(back.target[:-1], gs.target[:-1])
        assert back.dates == gs.dates
        assert gp.load_dataset(root).feature_names == gs.feature_names

    def test_incomplete_grid_rejected(self, tmp_path):
        root = tmp_path / "csvds"
        root.mkdir()
        (root / "2015-01-01.csv").write_text("lat,lon,f\n1.0,2.0,0.5\n1.0,3.0,0.5\n0.0,2.0,1.0\n")
        (root / "target.csv").write_text("date,value\n2015-01-01,0.5\n")
        with pytest.raises(gp.PipelineError):
            gp.load_csv_dataset(root)


class TestPrepare:
    def test_full_pipeline(self):
        rng = np.random.default_rng(9)
        target = rng.uniform(1.0, 9.0, size=40)
        target[13] = np.nan
        gs = make_series(t_total=40, target=target)
        gs.dynamic[3, 1, 2, 0] = np.nan
        ds, plan, (lo, hi) = gp.prepare(gs, gp.PipelineConfig(seed=1))
        assert len(ds) == 40 - 7 - 1
        assert np.isfinite(ds.inputs).all()
        assert len(plan.train_idx) + len(plan.val_idx) == len(ds)
        train_targets = np.asarray(ds.targets)[plan.train_idx]
        assert train_targets.min() == pytest.approx(0.0)
        assert train_targets.max() == pytest.approx(1.0)
