"""Dataset directories, CSV interchange, and run artifacts.

A dataset directory holds ``manifest.json`` (recipes, seeds, per-sample
metadata) plus one file per sample, either ``.npz`` (binary, default) or
``.csv`` with columns ``t, v1..vC, m1..mM``. Manifests contain only
JSON-native scalars and relative paths, so their canonical hash is a stable
fingerprint of the whole dataset.
"""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np
import pandas as pd

from .errors import DataError, FormatError
from .series import LabeledSeries

MANIFEST_NAME = "manifest.json"
DATASET_FORMAT = "tsunet-dataset"
DATASET_VERSION = 1


def _pyify(obj):
    """Convert numpy scalars/arrays into JSON-native values, recursively."""
    if isinstance(obj, dict):
        return {str(k): _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_pyify(v) for v in obj.tolist()]
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_pyify(obj), sort_keys=True, separators=(",", ":"))


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(canonical_json(manifest).encode()).hexdigest()


def save_dataset(samples, out_dir, task, params, fmt="npz") -> dict:
    """Write samples + manifest to ``out_dir``; returns the manifest dict."""
    if fmt not in ("npz", "csv"):
        raise DataError(f"unknown dataset format {fmt!r}")
    if not samples:
        raise DataError("refusing to write an empty dataset")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        fname = f"sample_{i:05d}.{fmt}"
        path = os.path.join(out_dir, fname)
        if fmt == "npz":
            with open(path, "wb") as fh:
                np.savez(fh, values=s.values, mask=s.mask)
        else:
            save_series_csv(path, s.values, s.mask)
        entries.append({"file": fname, "meta": _pyify(s.meta)})
    first = samples[0]
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "task": task,
        "params": _pyify(params),
        "length": int(first.length),
        "channels": int(first.channels),
        "classes": int(first.classes),
        "file_format": fmt,
        "samples": entries,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        json.dump(_pyify(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = os.path.join(dataset_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"no {MANIFEST_NAME} in {dataset_dir}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path} is not a {DATASET_FORMAT} manifest")
    return manifest


def load_dataset(dataset_dir):
    """Read a dataset directory; returns (samples, manifest)."""
    manifest = load_manifest(dataset_dir)
    if not manifest.get("samples"):
        raise DataError(f"dataset {dataset_dir} is empty")
    samples = []
    for entry in manifest["samples"]:
        path = os.path.join(dataset_dir, entry["file"])
        if entry["file"].endswith(".npz"):
            with np.load(path) as data:
                values, mask = data["values"], data["mask"]
        else:
            values, mask, _ = load_series_csv(path, classes=manifest["classes"])
        samples.append(LabeledSeries(values, mask, dict(entry.get("meta", {}))))
    return samples, manifest


def dataset_arrays(samples):
    """Stack samples into model-ready arrays (X float32, Y uint8)."""
    if not samples:
        raise DataError("empty sample list")
    x = np.stack([s.values for s in samples]).astype(np.float32)
    y = np.stack([s.mask for s in samples]).astype(np.uint8)
    return x, y


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def save_series_csv(path, values, mask=None, t=None):
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    cols = {"t": np.arange(len(values)) if t is None else np.asarray(t)}
    for c in range(values.shape[1]):
        cols[f"v{c + 1}"] = values[:, c]
    if mask is not None:
        mask = np.asarray(mask)
        for m in range(mask.shape[1]):
            cols[f"m{m + 1}"] = mask[:, m].astype(int)
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.9g")


def load_series_csv(path, classes=None):
    """Read ``t, v1..vC[, m1..mM]``; returns (values, mask or None, t).

    Values come back float64 (NaN allowed, handled downstream); mask columns
    are optional.
    """
    try:
        df = pd.read_csv(path)
    except Exception as exc:
        raise DataError(f"cannot read CSV {path}: {exc}") from exc
    vcols = sorted((c for c in df.columns if c.startswith("v") and c[1:].isdigit()),
                   key=lambda c: int(c[1:]))
    mcols = sorted((c for c in df.columns if c.startswith("m") and c[1:].isdigit()),
                   key=lambda c: int(c[1:]))
    if not vcols:
        raise DataError(f"{path} has no value columns v1..vC")
    values = df[vcols].to_numpy(dtype=np.float64)
    mask = None
    if mcols:
        mask = df[mcols].to_numpy()
        if not np.isin(mask, (0, 1)).all():
            raise DataError(f"{path} mask columns must be binary")
        mask = mask.astype(np.uint8)
        if classes is not None and mask.shape[1] != classes:
            raise DataError(f"{path} has {mask.shape[1]} mask columns, expected {classes}")
    t = df["t"].to_numpy() if "t" in df.columns else np.arange(len(df))
    return values, mask, t


# ---------------------------------------------------------------------------
# run artifacts
# ---------------------------------------------------------------------------

def write_events_jsonl(path, events):
    with open(path, "w") as fh:
        for ev in events:
            fh.write(canonical_json(ev.to_dict()) + "\n")


def read_events_jsonl(path):
    from .stream import AnomalyEvent

    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            events.append(AnomalyEvent(int(rec["start"]), int(rec["end"]),
                                       int(rec["class"]), float(rec["score"])))
    return events


def write_history_csv(path, history):
    pd.DataFrame(history, columns=["epoch", "train_loss", "val_loss", "val_iou"]) \
        .to_csv(path, index=False)
