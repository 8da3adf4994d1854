"""Nominal families, anomaly injection, and the dataset builders."""
import numpy as np
import pytest

from tsunet.errors import ConfigError, DataError
from tsunet.series import ANOMALY_KINDS, CLASS_INDEX, mask_runs, runs_to_mask
from tsunet.synth import (AnomalySpec, NominalFamily, default_anomaly_spec,
                          gen_nominal, inject_anomaly, make_pretraining_set,
                          make_shape_task_set)


def autocorr(x, lag):
    x = x - x.mean()
    denom = float((x * x).sum())
    return float((x[:-lag] * x[lag:]).sum()) / denom


class TestNominalFamilies:
    def test_same_seed_is_bit_identical(self):
        for name in ("smooth", "piecewise_linear", "piecewise_constant", "pulse"):
            a = gen_nominal(NominalFamily(name, cyclic=True), 512, seed=11)
            b = gen_nominal(NominalFamily(name, cyclic=True), 512, seed=11)
            np.testing.assert_array_equal(a.values, b.values)
            assert a.meta == b.meta

    def test_values_finite_and_mask_zero(self):
        for name in ("smooth", "piecewise_linear", "piecewise_constant", "pulse"):
            for cyclic in (False, True):
                s = gen_nominal(NominalFamily(name, cyclic), 256, seed=3)
                assert np.isfinite(s.values).all()
                assert s.mask.sum() == 0
                assert s.length == 256

    def test_cyclic_smooth_autocorrelation_peaks_at_period(self):
        hits = 0
        for seed in range(10):
            s = gen_nominal(NominalFamily("smooth", cyclic=True), 1024, seed=seed)
            p = int(round(s.meta["period"]))
            x = s.values[:, 0].astype(np.float64)
            if autocorr(x, p) > autocorr(x, max(1, p // 2)):
                hits += 1
        assert hits >= 9

    def test_piecewise_constant_level_count(self):
        for seed in range(8):
            s = gen_nominal(NominalFamily("piecewise_constant"), 512, seed=seed)
            distinct = np.unique(s.values[:, 0]).size
            assert distinct <= s.meta["knot_count"]

    def test_too_short_length_rejected(self):
        with pytest.raises(DataError):
            gen_nominal(NominalFamily("smooth"), 32, seed=0)

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigError):
            NominalFamily("sawtooth")


class TestInjection:
    def test_zero_duration_rejected(self):
        with pytest.raises(ConfigError):
            AnomalySpec("additive_outlier", (0, 3), (4.0, 8.0))

    def test_outlier_stands_out_robustly(self):
        s = gen_nominal(NominalFamily("smooth"), 512, seed=21)
        spec = AnomalySpec("additive_outlier", (1, 1), (8.0, 8.0))
        out = inject_anomaly(s, spec, seed=5)
        (marked,) = np.flatnonzero(out.mask[:, 0])
        x = out.values[:, 0].astype(np.float64)
        lo, hi = max(0, marked - 16), min(len(x), marked + 17)
        neighborhood = np.delete(x[lo:hi], marked - lo)
        med = np.median(neighborhood)
        mad = np.median(np.abs(neighborhood - med))
        assert abs(x[marked] - med) > 4.0 * mad

    def test_values_outside_window_bit_identical(self):
        for kind in ANOMALY_KINDS:
            s = gen_nominal(NominalFamily("smooth", cyclic=True), 512, seed=31)
            spec = default_anomaly_spec(kind, 512, period=s.meta.get("period"))
            out = inject_anomaly(s, spec, seed=9)
            k = CLASS_INDEX[kind]
            window = out.mask[:, k].astype(bool)
            assert window.any()
            np.testing.assert_array_equal(out.values[~window], s.values[~window])
            # only the injected class column is marked
            other = [c for c in range(3) if c != k]
            assert out.mask[:, other].sum() == 0

    def test_volatility_change_raises_local_variance(self):
        s = gen_nominal(NominalFamily("smooth"), 1024, seed=41)
        spec = AnomalySpec("volatility_change", (128, 128), (5.0, 5.0))
        out = inject_anomaly(s, spec, seed=3)
        window = out.mask[:, 1].astype(bool)
        diff = np.diff(out.values[:, 0].astype(np.float64))
        base = np.diff(s.values[:, 0].astype(np.float64))
        inside = diff[window[:-1]]
        assert np.std(inside) > 2.0 * np.std(base[window[:-1]])

    def test_volatility_change_on_flat_series_adds_noise(self):
        s = gen_nominal(NominalFamily("piecewise_constant"), 512, seed=51)
        spec = AnomalySpec("volatility_change", (64, 64), (4.0, 4.0))
        out = inject_anomaly(s, spec, seed=7)
        window = out.mask[:, 1].astype(bool)
        assert np.std(out.values[window, 0]) > 0.0

    def test_cyclic_violation_needs_cyclic_series(self):
        s = gen_nominal(NominalFamily("smooth", cyclic=False), 512, seed=61)
        spec = AnomalySpec("cyclic_violation", (32, 64), (2.0, 3.0))
        with pytest.raises(DataError):
            inject_anomaly(s, spec, seed=1)

    def test_oversized_duration_rejected(self):
        s = gen_nominal(NominalFamily("smooth"), 128, seed=71)
        spec = AnomalySpec("additive_outlier", (500, 600), (4.0, 8.0))
        with pytest.raises(DataError):
            inject_anomaly(s, spec, seed=1)

    def test_mask_meta_consistency(self):
        s = gen_nominal(NominalFamily("smooth", cyclic=True), 1024, seed=81)
        for kind, seed in (("additive_outlier", 1), ("volatility_change", 2),
                           ("cyclic_violation", 3)):
            spec = default_anomaly_spec(kind, 1024, period=s.meta.get("period"))
            s = inject_anomaly(s, spec, seed=seed)
        rebuilt = runs_to_mask(s.meta["anomalies"], s.length, s.classes)
        np.testing.assert_array_equal(rebuilt, s.mask)


class TestPretrainingSet:
    def test_deterministic(self):
        a = make_pretraining_set(20, length=256, seed=5)
        b = make_pretraining_set(20, length=256, seed=5)
        for s, t in zip(a, b):
            np.testing.assert_array_equal(s.values, t.values)
            np.testing.assert_array_equal(s.mask, t.mask)

    def test_class_balance_on_default_seed(self):
        samples = make_pretraining_set(500, length=256, seed=0)
        presence = np.zeros(3)
        for s in samples:
            presence += s.mask.max(axis=0)
        presence /= len(samples)
        assert (presence >= 0.2).all(), presence

    def test_anomaly_free_fraction_roughly_ten_percent(self):
        samples = make_pretraining_set(500, length=256, seed=0)
        free = sum(1 for s in samples if s.mask.sum() == 0)
        assert 0.04 <= free / len(samples) <= 0.18

    def test_cyclic_violation_labels_only_on_cyclic_meta(self):
        samples = make_pretraining_set(200, length=256, seed=1)
        for s in samples:
            if s.mask[:, CLASS_INDEX["cyclic_violation"]].any():
                assert s.meta["cyclic"] is True

    def test_mask_meta_consistency_across_set(self):
        samples = make_pretraining_set(64, length=256, seed=2)
        for s in samples:
            rebuilt = runs_to_mask(s.meta["anomalies"], s.length, s.classes)
            np.testing.assert_array_equal(rebuilt, s.mask)

    def test_n_zero_rejected(self):
        with pytest.raises(ConfigError):
            make_pretraining_set(0)


class TestShapeTaskSet:
    def test_deterministic(self):
        a = make_shape_task_set(12, length=256, seed=3)
        b = make_shape_task_set(12, length=256, seed=3)
        for s, t in zip(a, b):
            np.testing.assert_array_equal(s.values, t.values)
            np.testing.assert_array_equal(s.mask, t.mask)

    def test_single_class_with_marked_inserts(self):
        samples = make_shape_task_set(32, length=256, seed=4)
        for s in samples:
            assert s.classes == 1
            assert s.mask.any(), "every sample needs at least one inserted window"

    def test_insert_family_differs_from_base(self):
        samples = make_shape_task_set(48, length=256, seed=5)
        for s in samples:
            assert s.meta["inserts"], "sample lost all inserts"
            for ins in s.meta["inserts"]:
                assert ins["family"] != s.meta["family"]

    def test_desk_scale_generates_quickly(self):
        import time
        t0 = time.monotonic()
        samples = make_shape_task_set(128, length=1024, seed=6)
        elapsed = time.monotonic() - t0
        assert len(samples) == 128
        assert elapsed < 10.0

    def test_n_one_rejected(self):
        with pytest.raises(ConfigError):
            make_shape_task_set(1)


def test_mask_runs_round_trip():
    rng = np.random.default_rng(0)
    mask = (rng.random((64, 3)) < 0.3).astype(np.uint8)
    np.testing.assert_array_equal(runs_to_mask(mask_runs(mask), 64, 3), mask)
