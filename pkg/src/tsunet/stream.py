"""Streaming inference: snapshot planning, resampling, normalization, ensembling.

A long stream is processed by taking overlapping fixed-length snapshots,
resampling each to the model input length, running the model, resampling the
probabilities back, and averaging every snapshot's vote per time point.
Events are maximal above-threshold runs with small gaps merged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .validation import as_series


@dataclass(frozen=True)
class SnapshotPlan:
    """Window length and spacing for snapshotting a stream."""

    snapshot_length: int
    stride: int
    model_input_length: int = 1024

    def __post_init__(self):
        if self.snapshot_length < 2:
            raise ConfigError(f"snapshot_length must be >= 2, got {self.snapshot_length}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.model_input_length < 2:
            raise ConfigError("model_input_length must be >= 2")

    @property
    def coverage(self) -> int:
        """Evaluation count for interior points: ceil(snapshot/stride)."""
        return math.ceil(self.snapshot_length / self.stride)


def plan_snapshots(stream_length: int, plan: SnapshotPlan, force=False):
    """Window list (start, end) at offsets 0, stride, 2*stride, ...

    The final window is aligned to the stream end so every point is covered
    at least once. A stride larger than the snapshot leaves gaps and is
    rejected unless forced.
    """
    snap, stride = plan.snapshot_length, plan.stride
    if stream_length < snap:
        raise DataError(
            f"stream length {stream_length} is shorter than one snapshot ({snap})")
    if stride > snap and not force:
        raise ConfigError(
            f"stride {stride} > snapshot {snap} leaves uncovered gaps (force to allow)")
    starts = list(range(0, stream_length - snap + 1, stride))
    if starts[-1] + snap < stream_length:
        starts.append(stream_length - snap)
    return [(s, s + snap) for s in starts]


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def resample(series, target_len: int):
    """Resample values along time: bin means down, linear interpolation up.

    Downsampling averages over ``target_len`` equal contiguous bins
    (fractional bin edges handled exactly via the cumulative sum), so
    constant series and series means are preserved.
    """
    x = np.asarray(series)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    if n < 2 or target_len < 2:
        raise DataError("resample needs source and target lengths >= 2")
    if target_len == n:
        out = x.copy()
    elif target_len < n:
        if n % target_len == 0:
            f = n // target_len
            out = x.reshape(target_len, f, x.shape[1]).mean(axis=1)
        else:
            edges = np.linspace(0.0, n, target_len + 1)
            grid = np.arange(n + 1, dtype=np.float64)
            width = n / target_len
            cols = []
            for c in range(x.shape[1]):
                cum = np.concatenate(([0.0], np.cumsum(x[:, c], dtype=np.float64)))
                at_edges = np.interp(edges, grid, cum)
                cols.append(np.diff(at_edges) / width)
            out = np.stack(cols, axis=1).astype(x.dtype)
    else:
        pos = np.linspace(0.0, n - 1.0, target_len)
        grid = np.arange(n, dtype=np.float64)
        out = np.stack([np.interp(pos, grid, x[:, c].astype(np.float64))
                        for c in range(x.shape[1])], axis=1).astype(x.dtype)
    return out[:, 0] if squeeze else out


def resample_mask(mask, target_len: int):
    """Resample binary masks: max over bin when shrinking, nearest when growing."""
    m = np.asarray(mask)
    squeeze = m.ndim == 1
    if squeeze:
        m = m[:, None]
    n = m.shape[0]
    if target_len == n:
        out = m.copy()
    elif target_len < n:
        if n % target_len == 0:
            f = n // target_len
            out = m.reshape(target_len, f, m.shape[1]).max(axis=1)
        else:
            edges = np.linspace(0.0, n, target_len + 1)
            out = np.zeros((target_len, m.shape[1]), dtype=m.dtype)
            for i in range(target_len):
                j_lo = int(np.floor(edges[i]))
                if j_lo + 1 <= edges[i]:
                    j_lo += 1
                j_hi = int(np.ceil(edges[i + 1])) - 1
                if j_hi >= edges[i + 1]:
                    j_hi -= 1
                j_hi = min(j_hi, n - 1)
                out[i] = m[j_lo : j_hi + 1].max(axis=0)
    else:
        idx = np.rint(np.linspace(0.0, n - 1.0, target_len)).astype(int)
        out = m[idx].copy()
    return out[:, 0] if squeeze else out


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalizationSpec:
    """Fixed user-pinned scale, or per-snapshot standardization.

    Fixed mode keeps detection on one magnitude scale across all snapshots;
    per-snapshot mode normalizes every snapshot independently (dynamic
    scale), which changes what counts as anomalous.
    """

    mode: str = "fixed"
    center: float | np.ndarray = 0.0
    scale: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.mode not in ("fixed", "per_snapshot"):
            raise ConfigError(f"unknown normalization mode {self.mode!r}")
        if self.mode == "fixed" and np.any(np.asarray(self.scale) <= 0):
            raise ConfigError("fixed normalization needs scale > 0")


def normalize(snapshot, spec: NormalizationSpec):
    """Apply the normalization spec per channel; returns a new array."""
    x = np.asarray(snapshot, dtype=np.float64)
    if spec.mode == "fixed":
        return (x - spec.center) / spec.scale
    mean = x.mean(axis=0, keepdims=True)
    std = x.std(axis=0, keepdims=True)
    return (x - mean) / (std + 1e-8)


# ---------------------------------------------------------------------------
# ensembling and events
# ---------------------------------------------------------------------------

def ensemble(probs_per_window, windows, stream_length: int, rule="mean"):
    """Combine per-window probabilities into per-point scores.

    Returns (probs [stream_length, K], coverage counts [stream_length]).
    Uncovered points (possible only under forced gap plans) carry NaN.
    """
    if rule not in ("mean", "max"):
        raise ConfigError(f"unknown ensemble rule {rule!r}")
    if len(probs_per_window) != len(windows):
        raise DataError("one probability block per window required")
    k = np.asarray(probs_per_window[0]).shape[1]
    acc = np.zeros((stream_length, k), dtype=np.float64)
    counts = np.zeros(stream_length, dtype=np.int64)
    for (s, e), p in zip(windows, probs_per_window):
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (e - s, k):
            raise DataError(f"window ({s},{e}) expects probs shape {(e - s, k)}, "
                            f"got {p.shape}")
        if rule == "mean":
            acc[s:e] += p
        else:
            acc[s:e] = np.maximum(acc[s:e], p)
        counts[s:e] += 1
    covered = counts > 0
    out = np.full((stream_length, k), np.nan)
    if rule == "mean":
        out[covered] = acc[covered] / counts[covered, None]
    else:
        out[covered] = acc[covered]
    return out, counts


@dataclass(frozen=True)
class AnomalyEvent:
    """A detected interval in stream coordinates; end is inclusive."""

    start: int
    end: int
    class_id: int
    score: float

    def __post_init__(self):
        if self.start > self.end:
            raise DataError(f"event start {self.start} > end {self.end}")

    def to_dict(self):
        return {"start": self.start, "end": self.end,
                "class": self.class_id, "score": self.score}


def extract_events(probs, threshold=0.5, min_len=2, merge_gap=2):
    """Above-threshold runs per class, gap-merged and length-filtered.

    Runs separated by <= merge_gap points merge into one; runs shorter than
    min_len are dropped. Scores average the probabilities over the final
    interval. NaN (uncovered) points never trigger.
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[:, None]
    events = []
    for k in range(probs.shape[1]):
        col = probs[:, k]
        with np.errstate(invalid="ignore"):
            above = col >= threshold
        edges = np.flatnonzero(np.diff(np.concatenate(([False], above, [False]))))
        runs = [(int(s), int(e - 1)) for s, e in zip(edges[::2], edges[1::2])]
        merged = []
        for s, e in runs:
            if merged and s - merged[-1][1] - 1 <= merge_gap:
                merged[-1] = (merged[-1][0], e)
            else:
                merged.append((s, e))
        for s, e in merged:
            if e - s + 1 < min_len:
                continue
            score = float(np.nanmean(col[s : e + 1]))
            events.append(AnomalyEvent(s, e, k, score))
    events.sort(key=lambda ev: (ev.class_id, ev.start))
    return events


# ---------------------------------------------------------------------------
# missing values and the full pipeline
# ---------------------------------------------------------------------------

def fill_missing(values):
    """Linearly interpolate NaNs per channel; returns (filled, imputed mask)."""
    x = as_series(values, dtype=np.float64)
    imputed = ~np.isfinite(x)
    if not imputed.any():
        return x, imputed
    filled = x.copy()
    grid = np.arange(x.shape[0], dtype=np.float64)
    for c in range(x.shape[1]):
        bad = imputed[:, c]
        if bad.all():
            raise DataError(f"channel {c} has no finite values")
        if bad.any():
            filled[bad, c] = np.interp(grid[bad], grid[~bad], x[~bad, c])
    return filled, imputed


@dataclass
class DetectionResult:
    events: list
    probs: np.ndarray          # (stream_length, K) ensembled probabilities
    coverage: np.ndarray       # (stream_length,) windows covering each point
    imputed: np.ndarray        # (stream_length, C) missing-value flags


def detect(model, values, *, snapshot_length=None, coverage=3, stride=None,
           norm: NormalizationSpec | None = None, threshold=0.5, min_len=2,
           merge_gap=2, rule="mean", force=False) -> DetectionResult:
    """Run the full streaming pipeline of a trained model over a raw stream."""
    filled, imputed = fill_missing(values)
    if filled.shape[1] != model.spec.channels:
        raise DataError(f"stream has {filled.shape[1]} channels, "
                        f"model expects {model.spec.channels}")
    snap = int(snapshot_length or model.spec.input_length)
    if stride is None:
        if coverage < 1:
            raise ConfigError("coverage must be >= 1")
        stride = max(1, snap // int(coverage))
    plan = SnapshotPlan(snap, int(stride), model.spec.input_length)
    windows = plan_snapshots(filled.shape[0], plan, force=force)
    norm = norm or NormalizationSpec()
    probs_per_window = []
    for s, e in windows:
        snap_x = normalize(resample(filled[s:e], plan.model_input_length), norm)
        probs = model.forward(snap_x[None, :, :], train=False)[0]
        probs_per_window.append(resample(probs, e - s))
    pointwise, counts = ensemble(probs_per_window, windows, filled.shape[0], rule=rule)
    events = extract_events(pointwise, threshold=threshold,
                            min_len=min_len, merge_gap=merge_gap)
    return DetectionResult(events, pointwise, counts, imputed)
