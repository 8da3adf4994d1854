"""Dataset directories, CSV interchange, manifest hashing."""
import numpy as np
import pytest

from tsunet.dataio import (dataset_arrays, load_dataset, load_series_csv,
                           manifest_hash, read_events_jsonl, save_dataset,
                           save_series_csv, write_events_jsonl)
from tsunet.errors import DataError, FormatError
from tsunet.stream import AnomalyEvent
from tsunet.synth import make_pretraining_set


def test_npz_round_trip_bit_identical(tmp_path):
    samples = make_pretraining_set(6, length=128, seed=3)
    save_dataset(samples, tmp_path / "ds", "pretrain", {"n": 6, "seed": 3})
    loaded, manifest = load_dataset(tmp_path / "ds")
    assert len(loaded) == 6
    for a, b in zip(samples, loaded):
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.mask, b.mask)
    assert manifest["classes"] == 3


def test_dataset_files_byte_identical_across_runs(tmp_path):
    for d in ("a", "b"):
        samples = make_pretraining_set(4, length=128, seed=9)
        save_dataset(samples, tmp_path / d, "pretrain", {"n": 4, "seed": 9})
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes(), name


def test_manifest_hash_stable(tmp_path):
    hashes = []
    for d in ("a", "b"):
        samples = make_pretraining_set(5, length=128, seed=1)
        m = save_dataset(samples, tmp_path / d, "pretrain", {"n": 5, "seed": 1})
        hashes.append(manifest_hash(m))
    assert hashes[0] == hashes[1]


def test_csv_round_trip(tmp_path):
    samples = make_pretraining_set(3, length=128, seed=2)
    save_dataset(samples, tmp_path / "ds", "pretrain", {"n": 3}, fmt="csv")
    loaded, _ = load_dataset(tmp_path / "ds")
    for a, b in zip(samples, loaded):
        np.testing.assert_allclose(a.values, b.values, rtol=1e-6)
        np.testing.assert_array_equal(a.mask, b.mask)


def test_series_csv_with_missing_values(tmp_path):
    values = np.array([[1.0], [np.nan], [3.0]])
    path = tmp_path / "s.csv"
    save_series_csv(path, values)
    v, mask, t = load_series_csv(path)
    assert mask is None
    assert np.isnan(v[1, 0])
    np.testing.assert_array_equal(t, [0, 1, 2])


def test_csv_without_value_columns_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        load_series_csv(path)


def test_missing_manifest_rejected(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_non_dataset_manifest_rejected(tmp_path):
    (tmp_path / "manifest.json").write_text('{"format": "other"}')
    with pytest.raises(FormatError):
        load_dataset(tmp_path)


def test_dataset_arrays_shapes():
    samples = make_pretraining_set(4, length=128, seed=5)
    x, y = dataset_arrays(samples)
    assert x.shape == (4, 128, 1) and x.dtype == np.float32
    assert y.shape == (4, 128, 3) and y.dtype == np.uint8


def test_events_jsonl_round_trip(tmp_path):
    events = [AnomalyEvent(3, 10, 0, 0.875), AnomalyEvent(40, 44, 2, 0.6)]
    path = tmp_path / "events.jsonl"
    write_events_jsonl(path, events)
    back = read_events_jsonl(path)
    assert [e.to_dict() for e in back] == [e.to_dict() for e in events]
