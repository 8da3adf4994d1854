"""Synthetic corpus generation: nominal series families and anomaly injection.

The generator produces four nominal families (smooth, piecewise linear,
piecewise constant, pulse-like), each in cyclic and non-cyclic variants, and
injects three anomaly types with per-class masks: additive outliers,
temporary volatility changes, and violations of cyclic patterns.

Nothing here comes from a closed-form reference; every family is an explicit
recipe, versioned via RECIPE_VERSION so a generated corpus is citable. All
randomness flows through numpy Generators seeded from (master seed, sample
index), so datasets are bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import augment as _augment
from .errors import ConfigError, DataError
from .series import ANOMALY_KINDS, CLASS_INDEX, LabeledSeries, mask_runs

RECIPE_VERSION = "1"
FAMILIES = ("smooth", "piecewise_linear", "piecewise_constant", "pulse")

MIN_LENGTH = 64
#: families that carry observation noise (piecewise_constant stays exact so
#: its level count is testable and volatility injection adds its own noise)
_NOISY_FAMILIES = ("smooth", "piecewise_linear", "pulse")


@dataclass(frozen=True)
class NominalFamily:
    """A nominal series family: name, cyclicity, and recipe parameters."""

    name: str
    cyclic: bool = False
    params: tuple = ()  # reserved for recipe overrides, (key, value) pairs

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ConfigError(f"unknown family {self.name!r}, know {FAMILIES}")


@dataclass(frozen=True)
class AnomalySpec:
    """Injection request: kind, duration range (points), intensity range.

    Intensity is measured in multiples of the local scale for outliers, and
    as the deviation scale factor for volatility changes and amplitude-mode
    cyclic violations.
    """

    kind: str
    duration: tuple
    intensity: tuple

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(f"unknown anomaly kind {self.kind!r}")
        lo, hi = self.duration
        if lo < 1 or hi < lo:
            raise ConfigError(f"duration range must satisfy 1 <= lo <= hi, got {self.duration}")
        ilo, ihi = self.intensity
        if ilo <= 0 or ihi < ilo:
            raise ConfigError(f"intensity range must be positive, got {self.intensity}")


def default_anomaly_spec(kind, length, period=None) -> AnomalySpec:
    """Sensible injection ranges for a given series length."""
    if kind == "additive_outlier":
        return AnomalySpec(kind, (1, max(2, length // 128)), (4.0, 12.0))
    if kind == "volatility_change":
        return AnomalySpec(kind, (max(16, length // 16), max(32, length // 6)), (2.5, 6.0))
    if kind == "cyclic_violation":
        if period is None:
            raise ConfigError("cyclic_violation spec needs the series period")
        p = int(round(period))
        lo = max(8, min(p, length // 3))
        hi = max(lo, min(2 * p, length // 3))
        return AnomalySpec(kind, (lo, hi), (2.0, 3.0))
    raise ConfigError(f"unknown anomaly kind {kind!r}")


# ---------------------------------------------------------------------------
# nominal recipes
# ---------------------------------------------------------------------------

def _pick_period(rng, length):
    hi = max(33, length // 4)
    return int(rng.integers(32, hi + 1))


def _spline_drift(rng, length, amp):
    n_knots = int(rng.integers(4, 8))
    kx = np.linspace(0, length - 1, n_knots)
    ky = amp * rng.uniform(-1, 1, n_knots)
    return CubicSpline(kx, ky)(np.arange(length))


def _smooth(rng, length, cyclic):
    t = np.arange(length, dtype=np.float64)
    amp = rng.uniform(0.5, 2.0)
    x = np.zeros(length)
    meta = {}
    if cyclic:
        period = _pick_period(rng, length)
        for h in range(1, int(rng.integers(1, 4)) + 1):
            a = amp * rng.uniform(0.5, 1.0) / h
            x += a * np.sin(2 * np.pi * h * t / period + rng.uniform(0, 2 * np.pi))
        x += _spline_drift(rng, length, 0.2 * amp)
        meta["period"] = float(period)
    else:
        for _ in range(int(rng.integers(2, 6))):
            freq = rng.uniform(1.0, 6.0)
            a = amp * rng.uniform(0.2, 1.0)
            x += a * np.sin(2 * np.pi * freq * t / length + rng.uniform(0, 2 * np.pi))
        x += _spline_drift(rng, length, amp)
    return x, amp, meta


def _interior_knots(rng, n, lo, hi):
    """Sorted unique integer knots strictly inside (lo, hi)."""
    span = hi - lo - 1
    n = max(1, min(n, span))
    return lo + 1 + np.sort(rng.choice(span, size=n, replace=False))


def _piecewise_linear(rng, length, cyclic):
    amp = rng.uniform(0.5, 2.0)
    meta = {}
    if cyclic:
        period = _pick_period(rng, length)
        inner = _interior_knots(rng, int(rng.integers(2, 6)), 0, period)
        kx = np.concatenate(([0], inner, [period]))
        ky = amp * rng.uniform(-1, 1, len(kx))
        ky[-1] = ky[0]  # matching endpoints keep the tiled pattern continuous
        pattern = np.interp(np.arange(period), kx, ky)
        x = pattern[np.arange(length) % period]
        meta["period"] = float(period)
    else:
        inner = _interior_knots(rng, int(rng.integers(3, 12)), 0, length - 1)
        kx = np.concatenate(([0], inner, [length - 1]))
        ky = amp * rng.uniform(-1, 1, len(kx))
        x = np.interp(np.arange(length), kx, ky)
    return x, amp, meta


def _piecewise_constant(rng, length, cyclic):
    amp = rng.uniform(0.5, 2.0)
    meta = {}
    if cyclic:
        period = _pick_period(rng, length)
        n_seg = int(rng.integers(2, 6))
        cuts = _interior_knots(rng, n_seg - 1, 0, period)
        levels = amp * rng.uniform(-1, 1, n_seg)
        pattern = levels[np.searchsorted(cuts, np.arange(period), side="right")]
        x = pattern[np.arange(length) % period]
        meta["period"] = float(period)
    else:
        n_seg = int(rng.integers(3, 9))
        cuts = _interior_knots(rng, n_seg - 1, 0, length - 1)
        levels = amp * rng.uniform(-1, 1, n_seg)
        x = levels[np.searchsorted(cuts, np.arange(length), side="right")]
    meta["knot_count"] = int(n_seg)
    return x, amp, meta


def _pulse(rng, length, cyclic):
    t = np.arange(length, dtype=np.float64)
    amp = rng.uniform(0.5, 2.0)
    x = np.full(length, amp * rng.uniform(-0.3, 0.3))
    width = rng.uniform(2.0, max(3.0, length / 24))
    pamp = amp * rng.uniform(0.7, 1.5) * (1.0 if rng.random() < 0.8 else -1.0)
    rect = rng.random() < 0.5
    meta = {}
    if cyclic:
        lo = max(32, int(3 * width) + 1)
        period = int(rng.integers(lo, max(lo + 1, length // 4) + 1))
        centers = np.arange(rng.uniform(0, period), length, period)
        meta["period"] = float(period)
    else:
        centers = rng.uniform(0, length, int(rng.integers(2, 7)))
    for c in centers:
        if rect:
            x[np.abs(t - c) <= width / 2] += pamp
        else:
            x += pamp * np.exp(-0.5 * ((t - c) / (width / 2)) ** 2)
    return x, amp, meta


_RECIPES = {
    "smooth": _smooth,
    "piecewise_linear": _piecewise_linear,
    "piecewise_constant": _piecewise_constant,
    "pulse": _pulse,
}


def _gen_values(family_name, cyclic, length, rng):
    """One nominal channel as float64 plus recipe metadata."""
    x, amp, meta = _RECIPES[family_name](rng, length, cyclic)
    if family_name in _NOISY_FAMILIES:
        x = x + rng.normal(0.0, amp * rng.uniform(0.01, 0.04), length)
    meta.update({"family": family_name, "cyclic": bool(cyclic), "amplitude": float(amp)})
    return x, meta


def gen_nominal(family: NominalFamily, length: int, seed, classes: int = 3) -> LabeledSeries:
    """Generate one nominal series (all-zero mask), deterministic in seed."""
    if length < MIN_LENGTH:
        raise DataError(f"length must be >= {MIN_LENGTH}, got {length}")
    rng = np.random.default_rng(seed)
    x, meta = _gen_values(family.name, family.cyclic, length, rng)
    meta["recipe_version"] = RECIPE_VERSION
    meta["anomalies"] = []
    return LabeledSeries(x[:, None].astype(np.float32),
                         np.zeros((length, classes), dtype=np.uint8), meta)


# ---------------------------------------------------------------------------
# anomaly injection
# ---------------------------------------------------------------------------

def _moving_average(x, m):
    m = max(3, m | 1)  # odd window
    padded = np.pad(x, (m // 2, m // 2), mode="reflect")
    kernel = np.full(m, 1.0 / m)
    return np.convolve(padded, kernel, mode="valid")


def _local_scale(x, start, end):
    """Robust deviation scale around the local median near [start, end)."""
    margin = 4 * (end - start) + 16
    ctx = x[max(0, start - margin): min(len(x), end + margin)]
    med = np.median(ctx)
    mad = 1.4826 * np.median(np.abs(ctx - med))
    global_scale = max(float(np.std(x)), 1e-3)
    return max(float(mad), 0.05 * global_scale, 1e-3)


def inject_anomaly(series: LabeledSeries, spec: AnomalySpec, seed) -> LabeledSeries:
    """Return a copy of the series with one anomaly injected and masked.

    Values change only inside the chosen window; the mask column for the
    anomaly kind is set exactly on that window. Injection targets a single
    (randomly chosen) channel.
    """
    rng = np.random.default_rng(seed)
    out = series.copy()
    L = out.length
    if spec.kind == "cyclic_violation" and not out.meta.get("cyclic"):
        raise DataError("cyclic_violation requires a cyclic series")
    dur_lo, dur_hi = spec.duration
    if dur_lo > L:
        raise DataError(f"anomaly duration {dur_lo} does not fit length {L}")
    d = int(rng.integers(dur_lo, min(dur_hi, L) + 1))
    start = int(rng.integers(0, L - d + 1))
    end = start + d
    ch = int(rng.integers(0, out.channels))
    x = out.values[:, ch].astype(np.float64)
    window = x[start:end]
    intensity = float(rng.uniform(*spec.intensity))
    global_scale = max(float(np.std(x)), 1e-3)

    if spec.kind == "additive_outlier":
        scale = _local_scale(x, start, end)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        bump = sign * intensity * scale
        if d == 1 or rng.random() < 0.5:
            window = window + bump
        else:  # brief level shift, half-sine ramped edges
            shape = np.clip(2.5 * np.sin(np.pi * np.linspace(0.1, 0.9, d)), 0.0, 1.0)
            window = window + bump * shape
    elif spec.kind == "volatility_change":
        # trend from context beyond the window edges, so edge deviations stay real
        m = max(3, d // 8)
        lo, hi = max(0, start - m), min(L, end + m)
        trend = _moving_average(x[lo:hi], m)[start - lo : start - lo + d]
        dev = window - trend
        rms = float(np.sqrt(np.mean(dev ** 2)))
        floor = 0.04 * global_scale
        window = trend + dev * intensity
        if rms < floor:
            window = window + rng.normal(0.0, intensity * floor, d)
    else:  # cyclic_violation
        period = max(2, int(round(out.meta["period"])))
        mode = int(rng.integers(0, 3))
        if mode == 0:  # half-period phase shift
            src = (np.arange(start, end) - period // 2) % L
            window = x[src]
        elif mode == 1:  # amplitude break
            factor = intensity if rng.random() < 0.5 else float(rng.uniform(0.1, 0.35))
            mu = float(np.mean(window))
            window = mu + (window - mu) * factor
        else:  # pattern swap: flat segment with faint noise
            window = np.full(d, float(np.mean(window))) + \
                rng.normal(0.0, 0.05 * global_scale, d)

    out.values[start:end, ch] = window.astype(out.values.dtype)
    k = CLASS_INDEX[spec.kind]
    if k >= out.classes:
        raise DataError(f"mask has {out.classes} classes, cannot mark class {k}")
    out.mask[start:end, k] = 1
    out.meta.setdefault("injected", []).append({
        "kind": spec.kind, "start": int(start), "end": int(end - 1),
        "intensity": intensity, "channel": ch,
    })
    out.meta["anomalies"] = mask_runs(out.mask)
    return out


# ---------------------------------------------------------------------------
# dataset builders
# ---------------------------------------------------------------------------

#: sampling mix for the pretraining corpus (documented distribution)
PRETRAIN_MIX = {
    "anomaly_free_fraction": 0.1,
    "cyclic_probability": 0.5,
    "anomaly_count_choices": (1, 2, 3),
    # kind weights given the sample's cyclicity
    "kind_weights_cyclic": (0.3, 0.3, 0.4),
    "kind_weights_noncyclic": (0.5, 0.5),
    "augment_probability": 0.4,
}

_NOMINAL_AUG_OPS = ("crop_resample", "time_warp", "add_trend", "jitter")


def _augment_nominal(sample, kinds_possible, rng):
    """Paper-style nominal augmentation, restricted to label-safe ops."""
    for op_kind in _NOMINAL_AUG_OPS:
        if not all(_augment.check_invariance(op_kind, k) for k in kinds_possible):
            continue
        if rng.random() < PRETRAIN_MIX["augment_probability"]:
            sample = _augment.apply(_augment.AugmentOp(op_kind), sample,
                                    seed=int(rng.integers(2 ** 63)))
    return sample


def make_pretraining_set(n, length=1024, seed=0, classes=3) -> list[LabeledSeries]:
    """The three-task pretraining corpus: nominal variety + injected anomalies.

    Roughly 10% of samples stay anomaly-free; anomalous samples receive 1-3
    injections with kinds drawn from the mix in PRETRAIN_MIX (cyclic
    violations only on cyclic series). Deterministic in (n, length, seed).
    """
    if n < 1:
        raise ConfigError(f"need n >= 1, got {n}")
    if classes < len(ANOMALY_KINDS):
        raise ConfigError(f"pretraining needs >= {len(ANOMALY_KINDS)} classes")
    samples = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        family = FAMILIES[int(rng.integers(len(FAMILIES)))]
        cyclic = bool(rng.random() < PRETRAIN_MIX["cyclic_probability"])
        sample = gen_nominal(NominalFamily(family, cyclic), length,
                             seed=[seed, i, 1], classes=classes)
        kinds_possible = ANOMALY_KINDS if cyclic else ANOMALY_KINDS[:2]
        sample = _augment_nominal(sample, kinds_possible, rng)
        if rng.random() >= PRETRAIN_MIX["anomaly_free_fraction"]:
            weights = (PRETRAIN_MIX["kind_weights_cyclic"] if cyclic
                       else PRETRAIN_MIX["kind_weights_noncyclic"])
            count = int(rng.choice(PRETRAIN_MIX["anomaly_count_choices"]))
            for _ in range(count):
                kind = str(rng.choice(kinds_possible, p=weights))
                spec = default_anomaly_spec(kind, length,
                                            period=sample.meta.get("period"))
                sample = inject_anomaly(sample, spec, seed=int(rng.integers(2 ** 63)))
        sample.meta["index"] = i
        samples.append(sample)
    return samples


_SHAPE_AUG_OPS = ("jitter", "add_trend", "linear_op", "reverse", "time_warp")


def make_shape_task_set(n, length=1024, seed=0) -> list[LabeledSeries]:
    """Unusual-shape task: a base family with 1-3 windows from another family.

    Single anomaly class (M=1) marking the inserted windows. Augmentation
    (value ops plus mask-transported index ops) diversifies behaviors.
    """
    if n < 2:
        raise ConfigError(f"need n >= 2 for a train/test split, got {n}")
    samples = []
    for i in range(n):
        rng = np.random.default_rng([seed, 7, i])
        base = FAMILIES[int(rng.integers(len(FAMILIES)))]
        cyclic = bool(rng.random() < 0.5)
        sample = gen_nominal(NominalFamily(base, cyclic), length,
                             seed=[seed, 7, i, 1], classes=1)
        x = sample.values[:, 0].astype(np.float64)
        inserts = []
        occupied = []
        margin = max(4, length // 32)
        for _ in range(int(rng.integers(1, 4))):
            others = [f for f in FAMILIES if f != base]
            other = others[int(rng.integers(len(others)))]
            w = int(rng.integers(length // 16, length // 6 + 1))
            placed = None
            for _attempt in range(8):
                s = int(rng.integers(margin, length - w - margin + 1))
                if all(s + w + 4 <= o_s or s >= o_e + 4 for o_s, o_e in occupied):
                    placed = s
                    break
            if placed is None:
                continue
            pat_rng = np.random.default_rng([seed, 7, i, 2, len(inserts)])
            pattern, _ = _gen_values(other, False, w, pat_rng)
            local = x[placed: placed + w]
            pat = pattern - pattern.mean()
            ratio = (np.std(local) + 0.1 * np.std(x)) / max(np.std(pat), 1e-6)
            pat = pat * float(np.clip(ratio, 0.3, 2.0))
            x[placed: placed + w] = local.mean() + pat
            sample.mask[placed: placed + w, 0] = 1
            occupied.append((placed, placed + w))
            inserts.append({"family": other, "start": placed, "end": placed + w - 1})
        sample.values[:, 0] = x.astype(sample.values.dtype)
        sample.meta["inserts"] = inserts
        for op_kind in _SHAPE_AUG_OPS:
            if rng.random() < 0.35:
                sample = _augment.apply(_augment.AugmentOp(op_kind), sample,
                                        seed=int(rng.integers(2 ** 63)))
        sample.meta["anomalies"] = mask_runs(sample.mask)
        sample.meta["index"] = i
        samples.append(sample)
    return samples
