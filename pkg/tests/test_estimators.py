"""The sklearn-facing estimator surface."""
import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tsunet.arch import UNet, save_model
from tsunet.errors import DataError
from tsunet.estimators import StreamingDetector, TimeSeriesSegmenter

from helpers import desk_spec


def tiny_data(n=8, length=64, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, length, 1)).astype(np.float32)
    y = np.zeros((n, length, classes), dtype=np.uint8)
    for i in range(n):
        s = int(rng.integers(0, length - 12))
        y[i, s : s + 10, i % classes] = 1
        x[i, s : s + 10, 0] += 3.0
    return x, y


@pytest.fixture
def segmenter_params():
    return dict(input_length=64, classes=2, depth=3, base_width=4,
                epochs=2, val_fraction=0.0, seed=1)


class TestTimeSeriesSegmenter:
    def test_get_set_params_round_trip(self, segmenter_params):
        est = TimeSeriesSegmenter(**segmenter_params)
        params = est.get_params()
        assert params["depth"] == 3
        est.set_params(epochs=5)
        assert est.epochs == 5

    def test_clone_preserves_configuration(self, segmenter_params):
        est = TimeSeriesSegmenter(**segmenter_params)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_fit_predict_shapes(self, segmenter_params):
        x, y = tiny_data()
        est = TimeSeriesSegmenter(**segmenter_params).fit(x, y)
        probs = est.predict_proba(x)
        assert probs.shape == (8, 64, 2)
        masks = est.predict(x)
        assert masks.shape == (8, 64, 2)
        assert set(np.unique(masks)) <= {0, 1}
        assert 0.0 <= est.score(x, y) <= 1.0

    def test_predict_before_fit_raises(self, segmenter_params):
        est = TimeSeriesSegmenter(**segmenter_params)
        with pytest.raises(NotFittedError):
            est.predict(np.zeros((1, 64, 1)))

    def test_wrong_length_rejected(self, segmenter_params):
        x, y = tiny_data(length=32)
        est = TimeSeriesSegmenter(**segmenter_params)
        with pytest.raises(DataError):
            est.fit(x, y)

    def test_class_count_mismatch_rejected(self, segmenter_params):
        x, y = tiny_data(classes=3)
        est = TimeSeriesSegmenter(**segmenter_params)
        with pytest.raises(DataError):
            est.fit(x, y)

    def test_transfer_from_model_path(self, tmp_path, segmenter_params):
        base = UNet(desk_spec(classes=3), seed=0)
        path = tmp_path / "base.tsu"
        save_model(base, path)
        x, y = tiny_data(classes=1)
        est = TimeSeriesSegmenter(**{**segmenter_params, "classes": 1,
                                     "base_model": str(path),
                                     "strategy": "multipliers"})
        est.fit(x, y)
        assert est.model_.spec.classes == 1

    def test_transfer_freeze_strategy(self, segmenter_params):
        base = UNet(desk_spec(classes=3), seed=0)
        x, y = tiny_data(classes=1)
        est = TimeSeriesSegmenter(**{**segmenter_params, "classes": 1,
                                     "base_model": base, "strategy": "freeze"})
        est.fit(x, y)
        assert est.model_.spec.classes == 1

    def test_history_recorded(self, segmenter_params):
        x, y = tiny_data()
        est = TimeSeriesSegmenter(**segmenter_params).fit(x, y)
        assert len(est.history_) == 2


class TestStreamingDetector:
    def test_detects_events_on_stream(self):
        model = UNet(desk_spec(), seed=0)
        det = StreamingDetector(model=model, snapshot_length=64, coverage=2,
                                threshold=0.5)
        stream = np.random.default_rng(0).normal(size=(300, 1))
        events = det.fit().predict(stream)
        assert isinstance(events, list)
        probs = det.predict_proba(stream)
        assert probs.shape == (300, 2)

    def test_model_path_accepted(self, tmp_path):
        model = UNet(desk_spec(), seed=0)
        path = tmp_path / "m.tsu"
        save_model(model, path)
        det = StreamingDetector(model=str(path), snapshot_length=64)
        probs = det.predict_proba(np.zeros((200, 1)))
        assert probs.shape == (200, 2)

    def test_get_params_surface(self):
        det = StreamingDetector(coverage=5)
        assert det.get_params()["coverage"] == 5
        assert clone(det).coverage == 5
