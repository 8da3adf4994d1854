"""Label-invariant augmentation operators applied jointly to values and masks.

Index-mapping ops (crop+resample, time warp, zoom, reverse) transport the
mask through exactly the temporal mapping used for the values: each mask
column is linearly interpolated at the same source positions and re-binarized
at 0.5. Value-only ops (jitter, add trend, linear op) never touch the mask.

Whether an op may be applied to data carrying a given anomaly kind is decided
by an explicit invariance table (plain data, overridable per policy). The
only pairing ruled out on principle is mutation across series on data labeled
with cyclic-pattern violations, since splicing another series into a periodic
one manufactures exactly that anomaly; time warp and zoom against cyclic
violations are excluded as conservative defaults (both distort or pad the
local period). All parameter ranges here are package defaults, not reference
values.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .series import LabeledSeries, mask_runs

OP_KINDS = ("crop_resample", "jitter", "time_warp", "zoom", "add_trend",
            "reverse", "linear_op", "mutate_pair")

#: ops whose output index t' reads source position u(t'); everything else is value-only
INDEX_MAPPING_OPS = ("crop_resample", "time_warp", "zoom", "reverse")

DEFAULT_PARAMS = {
    "crop_resample": {"frac": (0.5, 0.95)},
    "jitter": {"sigma": (0.01, 0.08)},
    "time_warp": {"segments": (3, 6), "max_shift": 0.25},
    "zoom": {"factor": (0.6, 1.6)},
    "add_trend": {"amp": (0.1, 0.6)},
    "reverse": {},
    "linear_op": {"scale": (0.5, 2.0), "offset": (-0.5, 0.5)},
    "mutate_pair": {"frac": (0.1, 0.4)},
}

#: jitter sigma cap in robust-scale units, kept well below the additive
#: outlier intensity floor (4.0 local scales) so jitter cannot mimic one
JITTER_SIGMA_CAP = 1.0

DEFAULT_EXCLUSIONS = frozenset({
    ("mutate_pair", "cyclic_violation"),
    ("time_warp", "cyclic_violation"),
    ("zoom", "cyclic_violation"),
})


@dataclass(frozen=True)
class AugmentOp:
    """One augmentation operator: kind plus parameter-range overrides."""

    kind: str
    params: dict = field(default_factory=dict)
    safe_for: frozenset | None = None  # explicit invariance override

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ConfigError(f"unknown augment op {self.kind!r}, know {OP_KINDS}")

    def param(self, name):
        return self.params.get(name, DEFAULT_PARAMS[self.kind][name])


def check_invariance(op, anomaly_kind, exclusions=None) -> bool:
    """True when the op keeps labels valid on data with this anomaly kind."""
    if isinstance(op, AugmentOp):
        if op.safe_for is not None:
            return anomaly_kind in op.safe_for
        kind = op.kind
    else:
        kind = op
    table = DEFAULT_EXCLUSIONS if exclusions is None else exclusions
    return (kind, anomaly_kind) not in table


# ---------------------------------------------------------------------------
# transport machinery
# ---------------------------------------------------------------------------

def _robust_scale(values):
    med = np.median(values)
    mad = 1.4826 * np.median(np.abs(values - med))
    return max(float(mad), 0.1 * float(np.std(values)), 1e-6)


def _transport(values, mask, u, in_range=None):
    """Resample values and mask at (monotone) source positions u."""
    L = len(values)
    grid = np.arange(L, dtype=np.float64)
    uc = np.clip(u, 0.0, L - 1.0)
    new_values = np.stack(
        [np.interp(uc, grid, values[:, c].astype(np.float64))
         for c in range(values.shape[1])], axis=1)
    new_mask = np.stack(
        [np.interp(uc, grid, mask[:, m].astype(np.float64)) >= 0.5
         for m in range(mask.shape[1])], axis=1)
    if in_range is not None:
        new_mask &= in_range[:, None]
    return new_values.astype(values.dtype), new_mask.astype(np.uint8)


def _scale_period(meta, slope):
    if "period" in meta:
        meta["period"] = float(meta["period"] / slope)


# ---------------------------------------------------------------------------
# the operators
# ---------------------------------------------------------------------------

def _crop_resample(sample, rng, op):
    L = sample.length
    lo, hi = op.param("frac")
    w = max(2, int(round(rng.uniform(lo, hi) * L)))
    w = min(w, L)
    s = int(rng.integers(0, L - w + 1))
    u = s + np.linspace(0.0, w - 1.0, L)
    values, mask = _transport(sample.values, sample.mask, u)
    slope = (w - 1.0) / (L - 1.0)
    _scale_period(sample.meta, slope)
    return values, mask, {"start": s, "width": w}


def _time_warp(sample, rng, op):
    L = sample.length
    seg_lo, seg_hi = op.param("segments")
    max_shift = op.param("max_shift")
    m = int(rng.integers(seg_lo, seg_hi + 1))
    knots_out = np.linspace(0.0, L - 1.0, m + 1)
    seg = (L - 1.0) / m
    offsets = rng.uniform(-max_shift, max_shift, m + 1) * seg
    offsets[0] = offsets[-1] = 0.0
    knots_src = knots_out + offsets  # slopes stay within [1-2*max_shift, 1+2*max_shift]
    u = np.interp(np.arange(L, dtype=np.float64), knots_out, knots_src)
    values, mask = _transport(sample.values, sample.mask, u)
    if "period" in sample.meta:
        sample.meta["period_distorted"] = True
    return values, mask, {"segments": m}


def _zoom(sample, rng, op):
    L = sample.length
    z = float(rng.uniform(*op.param("factor")))
    mid = (L - 1.0) / 2.0
    u = (np.arange(L, dtype=np.float64) - mid) / z + mid
    in_range = (u >= 0.0) & (u <= L - 1.0)  # zoom-out pads by edge values, mask 0
    values, mask = _transport(sample.values, sample.mask, u, in_range=in_range)
    _scale_period(sample.meta, 1.0 / z)
    return values, mask, {"factor": z}


def _reverse(sample, rng, op):
    return sample.values[::-1].copy(), sample.mask[::-1].copy(), {}


def _jitter(sample, rng, op):
    lo, hi = op.param("sigma")
    sigma = min(float(rng.uniform(lo, hi)), JITTER_SIGMA_CAP)
    scale = _robust_scale(sample.values)
    noise = rng.normal(0.0, sigma * scale, sample.values.shape)
    return (sample.values + noise.astype(sample.values.dtype),
            sample.mask.copy(), {"sigma": sigma})


def _add_trend(sample, rng, op):
    L, C = sample.values.shape
    lo, hi = op.param("amp")
    scale = _robust_scale(sample.values)
    t = np.linspace(-1.0, 1.0, L)
    values = sample.values.copy()
    for c in range(C):
        a = float(rng.uniform(lo, hi)) * scale * (1.0 if rng.random() < 0.5 else -1.0)
        trend = a * t if rng.random() < 0.5 else a * (t ** 2 - 1.0 / 3.0)
        values[:, c] += trend.astype(values.dtype)
    return values, sample.mask.copy(), {}


def _linear_op(sample, rng, op):
    alpha = float(rng.uniform(*op.param("scale")))
    beta = float(rng.uniform(*op.param("offset"))) * _robust_scale(sample.values)
    return (sample.values * alpha + beta).astype(sample.values.dtype), \
        sample.mask.copy(), {"scale": alpha, "offset": beta}


def _mutate_pair(sample, rng, op, partner):
    if partner is None:
        raise DataError("mutate_pair needs a partner sample")
    if partner.values.shape != sample.values.shape or partner.mask.shape != sample.mask.shape:
        raise DataError(
            f"partner shape {partner.values.shape}/{partner.mask.shape} does not match "
            f"{sample.values.shape}/{sample.mask.shape}")
    L = sample.length
    lo, hi = op.param("frac")
    w = max(1, int(round(rng.uniform(lo, hi) * L)))
    s = int(rng.integers(0, L - w + 1))
    values = sample.values.copy()
    mask = sample.mask.copy()
    values[s : s + w] = partner.values[s : s + w]
    mask[s : s + w] = partner.mask[s : s + w]
    return values, mask, {"start": s, "width": w}


def apply(op: AugmentOp | str, sample: LabeledSeries, seed, partner=None) -> LabeledSeries:
    """Apply one augmentation op; deterministic in (op, seed).

    Output length always equals input length (length-changing ops resample
    back). The mask rides through the identical index mapping and
    ``meta["anomalies"]`` is refreshed from the transported mask.
    """
    if isinstance(op, str):
        op = AugmentOp(op)
    rng = np.random.default_rng(seed)
    out = sample.copy()
    if op.kind == "mutate_pair":
        values, mask, used = _mutate_pair(out, rng, op, partner)
    else:
        fn = {"crop_resample": _crop_resample, "time_warp": _time_warp,
              "zoom": _zoom, "reverse": _reverse, "jitter": _jitter,
              "add_trend": _add_trend, "linear_op": _linear_op}[op.kind]
        values, mask, used = fn(out, rng, op)
    out.values = values
    out.mask = mask
    out.meta.setdefault("augments", []).append({"kind": op.kind, **used})
    out.meta["anomalies"] = mask_runs(mask)
    return out


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------

@dataclass
class AugmentPolicy:
    """A weighted set of ops plus invariance overrides, JSON round-trippable."""

    ops: list
    weights: list
    max_ops_per_sample: int = 2
    exclusions: frozenset = DEFAULT_EXCLUSIONS

    def __post_init__(self):
        if len(self.ops) != len(self.weights):
            raise ConfigError("ops and weights must have equal length")
        if not self.ops:
            raise ConfigError("policy needs at least one op")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ConfigError("weights must be nonnegative with positive sum")

    @classmethod
    def default(cls):
        kinds = ("crop_resample", "jitter", "time_warp", "zoom", "add_trend",
                 "reverse", "linear_op")
        return cls(ops=[AugmentOp(k) for k in kinds], weights=[1.0] * len(kinds))

    @classmethod
    def from_json(cls, source):
        if isinstance(source, (str, bytes)):
            data = json.loads(source)
        else:
            data = source
        ops, weights = [], []
        for entry in data["ops"]:
            safe = entry.get("safe_for")
            ops.append(AugmentOp(entry["kind"], entry.get("params", {}),
                                 frozenset(safe) if safe is not None else None))
            weights.append(float(entry.get("weight", 1.0)))
        exclusions = set(DEFAULT_EXCLUSIONS)
        for op_kind, anomaly in data.get("allow", []):
            exclusions.discard((op_kind, anomaly))
        for op_kind, anomaly in data.get("deny", []):
            exclusions.add((op_kind, anomaly))
        return cls(ops=ops, weights=weights,
                   max_ops_per_sample=int(data.get("max_ops_per_sample", 2)),
                   exclusions=frozenset(exclusions))

    def to_json(self) -> str:
        return json.dumps({
            "ops": [{"kind": op.kind, "params": op.params,
                     "safe_for": sorted(op.safe_for) if op.safe_for is not None else None,
                     "weight": w} for op, w in zip(self.ops, self.weights)],
            "deny": sorted(list(p) for p in self.exclusions - DEFAULT_EXCLUSIONS),
            "allow": sorted(list(p) for p in DEFAULT_EXCLUSIONS - self.exclusions),
            "max_ops_per_sample": self.max_ops_per_sample,
        }, indent=2, sort_keys=True)

    def disallowed_pairs(self, anomaly_kinds):
        """(op, anomaly kind) pairs in this policy the table forbids."""
        bad = []
        for op in self.ops:
            for kind in anomaly_kinds:
                if not check_invariance(op, kind, self.exclusions):
                    bad.append((op.kind, kind))
        return bad


def apply_policy(policy: AugmentPolicy, sample: LabeledSeries, seed,
                 anomaly_kinds=(), partner=None, force=False) -> LabeledSeries:
    """Apply up to max_ops_per_sample policy ops, refusing unsafe pairs.

    With force=False, ops that are not label-invariant for any of
    ``anomaly_kinds`` are filtered out before selection.
    """
    rng = np.random.default_rng(seed)
    usable = []
    for op, w in zip(policy.ops, policy.weights):
        if force or all(check_invariance(op, k, policy.exclusions)
                        for k in anomaly_kinds):
            usable.append((op, w))
    if not usable:
        raise DataError("no policy op is label-invariant for this dataset; "
                        "use force to override")
    ops, weights = zip(*usable)
    p = np.asarray(weights, dtype=np.float64)
    p /= p.sum()
    n_ops = int(rng.integers(1, policy.max_ops_per_sample + 1))
    out = sample
    for _ in range(n_ops):
        op = ops[int(rng.choice(len(ops), p=p))]
        if op.kind == "mutate_pair" and partner is None:
            continue
        out = apply(op, out, seed=int(rng.integers(2 ** 63)), partner=partner)
    return out
