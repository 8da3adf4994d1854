"""Core sample container shared by the data generator, augmentation, and training."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

#: Anomaly class order used everywhere a 3-class mask appears.
ANOMALY_KINDS = ("additive_outlier", "volatility_change", "cyclic_violation")
CLASS_INDEX = {kind: i for i, kind in enumerate(ANOMALY_KINDS)}


@dataclass
class LabeledSeries:
    """A series of values with a per-class binary segmentation mask.

    values: float array of shape (length, channels).
    mask:   uint8 array of shape (length, classes), entries in {0, 1}.
    meta:   provenance dict (family, cyclic flag, period, seed, anomaly
            descriptors). ``meta["anomalies"]`` always mirrors the mask: it is
            the run-length decomposition of the stored mask columns.
    """

    values: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if self.values.ndim != 2:
            raise DataError(f"values must be (length, channels), got shape {self.values.shape}")
        if self.mask.ndim != 2:
            raise DataError(f"mask must be (length, classes), got shape {self.mask.shape}")
        if self.mask.shape[0] != self.values.shape[0]:
            raise DataError(
                f"mask length {self.mask.shape[0]} != values length {self.values.shape[0]}"
            )
        if not np.isin(self.mask, (0, 1)).all():
            raise DataError("mask entries must be 0 or 1")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def classes(self) -> int:
        return self.mask.shape[1]

    def copy(self) -> "LabeledSeries":
        import copy as _copy

        return LabeledSeries(self.values.copy(), self.mask.copy(), _copy.deepcopy(self.meta))


def mask_runs(mask: np.ndarray) -> list[dict]:
    """Run-length decomposition of a binary mask into anomaly descriptors.

    Returns one ``{"kind_index", "start", "end"}`` dict per maximal run of
    ones, with ``end`` inclusive, ordered by class then start.
    """
    mask = np.asarray(mask)
    runs = []
    for k in range(mask.shape[1]):
        col = mask[:, k].astype(np.int8)
        edges = np.flatnonzero(np.diff(np.concatenate(([0], col, [0]))))
        for s, e in zip(edges[::2], edges[1::2]):
            runs.append({"kind_index": int(k), "start": int(s), "end": int(e - 1)})
    return runs


def runs_to_mask(runs: list[dict], length: int, classes: int) -> np.ndarray:
    """Inverse of :func:`mask_runs`: paint descriptors back into a mask."""
    mask = np.zeros((length, classes), dtype=np.uint8)
    for r in runs:
        mask[r["start"] : r["end"] + 1, r["kind_index"]] = 1
    return mask
