"""Network construction, forward/backward orchestration, serialization, transplants.

Two architectures are provided. The univariate/plain model ("unet") encodes
the input through ``depth`` sections of two conv+BN+ReLU blocks with max
pooling in between, then decodes through ``depth-1`` sections of upsample +
skip concat + two blocks, ending in a 1x1-conv head. The multivariate
transfer model ("munet") slices the input channels apart, runs an independent
copy of encoder sections 1..depth-1 per channel, concatenates the per-channel
features before a shared final encoding section, and decodes exactly like the
plain model with skips taken from the per-channel encoder outputs
concatenated across channels.

Skip connections tap the pre-pool output of each encoding section so that
lengths match at every decoder level; decoder concat order is (upsampled deep
features, then skip features).
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .layers import (batchnorm_backward, batchnorm_forward, concat_backward,
                     concat_forward, concat_many_backward, concat_many_forward,
                     conv1d_backward, conv1d_forward, maxpool1d_backward,
                     maxpool1d_forward, relu_backward, relu_forward,
                     sigmoid_backward, sigmoid_forward, softmax_backward,
                     softmax_forward, upsample1d_backward, upsample1d_forward)
from .optim import Param
from .validation import check_batch_for_model

MULTI_LABEL = "multi_label"
SINGLE_LABEL = "single_label"

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


@dataclass(frozen=True)
class ArchSpec:
    """Complete description of a network; everything else derives from it."""

    kind: str = "unet"
    input_length: int = 1024
    channels: int = 1
    classes: int = 3
    label_mode: str = MULTI_LABEL
    depth: int = 5
    base_width: int = 16
    pool: int = 4
    kernel: int = 3

    def __post_init__(self):
        if self.kind not in ("unet", "munet"):
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.label_mode not in (MULTI_LABEL, SINGLE_LABEL):
            raise ConfigError(f"unknown label mode {self.label_mode!r}")
        if self.depth < 2:
            raise ConfigError(f"depth must be >= 2, got {self.depth}")
        if self.classes < 1 or self.channels < 1 or self.base_width < 1:
            raise ConfigError("classes, channels, and base_width must be >= 1")
        if self.pool < 2:
            raise ConfigError(f"pool size must be >= 2, got {self.pool}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd and >= 1, got {self.kernel}")
        div = self.pool ** (self.depth - 1)
        if self.input_length % div != 0:
            raise ConfigError(
                f"input_length {self.input_length} not divisible by pool^(depth-1) = {div}"
            )
        if self.kind == "munet" and self.channels < 2:
            raise ConfigError("munet requires at least 2 channels")

    def section_width(self, f: int) -> int:
        """Filter count of encoding section f (1-based): base_width * 2^(f-1)."""
        return self.base_width * 2 ** (f - 1)

    def section_length(self, f: int) -> int:
        """Activation length inside encoding section f (1-based)."""
        return self.input_length // self.pool ** (f - 1)

    @property
    def out_channels(self) -> int:
        """Head output depth: M for multi-label, M+1 for single-label."""
        return self.classes if self.label_mode == MULTI_LABEL else self.classes + 1

    @property
    def n_sections(self) -> int:
        """Top-level section count in flow order (encoders, decoders, head)."""
        return 2 * self.depth


def _he_uniform(rng, kernel, cin, cout, dtype):
    limit = math.sqrt(6.0 / (kernel * cin))
    return rng.uniform(-limit, limit, size=(kernel, cin, cout)).astype(dtype)


class ConvBNRelu:
    """conv -> batch norm -> ReLU with chained hand-written backward."""

    def __init__(self, kernel, cin, cout, rng, dtype):
        self.w = Param(_he_uniform(rng, kernel, cin, cout, dtype))
        self.b = Param(np.zeros(cout, dtype=dtype))
        self.gamma = Param(np.ones(cout, dtype=dtype))
        self.beta = Param(np.zeros(cout, dtype=dtype))
        self.running_mean = np.zeros(cout, dtype=dtype)
        self.running_var = np.ones(cout, dtype=dtype)
        self._cache = None

    def forward(self, x, train):
        h, c_conv = conv1d_forward(x, self.w.value, self.b.value)
        h, c_bn = batchnorm_forward(h, self.gamma.value, self.beta.value,
                                    self.running_mean, self.running_var,
                                    momentum=BN_MOMENTUM, eps=BN_EPS, train=train)
        out, c_relu = relu_forward(h)
        self._cache = (c_conv, c_bn, c_relu)
        return out

    def backward(self, dout):
        c_conv, c_bn, c_relu = self._cache
        dh = relu_backward(dout, c_relu)
        dh, dgamma, dbeta = batchnorm_backward(dh, c_bn)
        dx, dw, db = conv1d_backward(dh, c_conv)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        self.w.grad += dw
        self.b.grad += db
        return dx

    def named_params(self):
        return [("conv_w", self.w), ("conv_b", self.b),
                ("bn_gamma", self.gamma), ("bn_beta", self.beta)]

    def named_stats(self):
        return [("bn_mean", self.running_mean), ("bn_var", self.running_var)]

    def set_stat(self, name, value):
        dst = {"bn_mean": self.running_mean, "bn_var": self.running_var}[name]
        if dst.shape != value.shape:
            raise FormatError(f"running stat {name} shape {value.shape} != {dst.shape}")
        dst[...] = value


class Section:
    """An encoding or decoding section: two conv+BN+ReLU blocks."""

    def __init__(self, kernel, cin, cout, rng, dtype):
        self.block1 = ConvBNRelu(kernel, cin, cout, rng, dtype)
        self.block2 = ConvBNRelu(kernel, cout, cout, rng, dtype)

    def forward(self, x, train):
        return self.block2.forward(self.block1.forward(x, train), train)

    def backward(self, dout):
        return self.block1.backward(self.block2.backward(dout))

    def blocks(self):
        return [("block1", self.block1), ("block2", self.block2)]


class OutputHead:
    """1x1 convolution plus sigmoid (multi-label) or channel softmax."""

    def __init__(self, cin, cout, label_mode, rng, dtype):
        self.w = Param(_he_uniform(rng, 1, cin, cout, dtype))
        self.b = Param(np.zeros(cout, dtype=dtype))
        self.label_mode = label_mode
        self._cache = None

    def forward(self, x, train):
        h, c_conv = conv1d_forward(x, self.w.value, self.b.value)
        if self.label_mode == MULTI_LABEL:
            out, c_act = sigmoid_forward(h)
        else:
            out, c_act = softmax_forward(h)
        self._cache = (c_conv, c_act)
        return out

    def backward(self, dout):
        c_conv, c_act = self._cache
        if self.label_mode == MULTI_LABEL:
            dh = sigmoid_backward(dout, c_act)
        else:
            dh = softmax_backward(dout, c_act)
        dx, dw, db = conv1d_backward(dh, c_conv)
        self.w.grad += dw
        self.b.grad += db
        return dx

    def blocks(self):
        return [("", self)]

    def named_params(self):
        return [("conv_w", self.w), ("conv_b", self.b)]

    def named_stats(self):
        return []

    def set_stat(self, name, value):  # pragma: no cover - head has no stats
        raise FormatError(f"output head has no running stat {name}")


class _ModelBase:
    """Shared bookkeeping: named parameters, state snapshots, freezing."""

    spec: ArchSpec
    dtype: np.dtype

    def sections(self):
        """Ordered (name, section) pairs following the Fig-style flow order."""
        raise NotImplementedError

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    # -- parameter plumbing -------------------------------------------------

    def named_params(self):
        out = []
        for sec_name, sec in self.sections():
            for blk_name, blk in sec.blocks():
                prefix = f"{sec_name}/{blk_name}" if blk_name else sec_name
                for p_name, p in blk.named_params():
                    out.append((f"{prefix}/{p_name}", p))
        return out

    def named_stats(self):
        out = []
        for sec_name, sec in self.sections():
            for blk_name, blk in sec.blocks():
                prefix = f"{sec_name}/{blk_name}" if blk_name else sec_name
                for s_name, s in blk.named_stats():
                    out.append((f"{prefix}/{s_name}", s))
        return out

    def named_arrays(self):
        """Parameters then running stats, interleaved per block, fixed order."""
        out = []
        for sec_name, sec in self.sections():
            for blk_name, blk in sec.blocks():
                prefix = f"{sec_name}/{blk_name}" if blk_name else sec_name
                for p_name, p in blk.named_params():
                    out.append((f"{prefix}/{p_name}", p.value))
                for s_name, s in blk.named_stats():
                    out.append((f"{prefix}/{s_name}", s))
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def param_count(self):
        return sum(p.value.size for p in self.params())

    # -- state snapshots ----------------------------------------------------

    def get_state(self):
        """Copy of every parameter value and running statistic, by name."""
        return {name: arr.copy() for name, arr in self.named_arrays()}

    def set_state(self, state):
        for name, arr in self.named_arrays():
            if name not in state:
                raise FormatError(f"state missing array {name}")
            src = np.asarray(state[name], dtype=arr.dtype)
            if src.shape != arr.shape:
                raise FormatError(f"state array {name} shape {src.shape} != {arr.shape}")
            arr[...] = src

    def state_hash(self):
        import hashlib

        h = hashlib.sha256()
        for name, arr in self.named_arrays():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    # -- freezing / per-section learning rates -------------------------------

    def section_map(self):
        """Map top-level section name -> list of Params in it."""
        out = {}
        for sec_name, sec in self.sections():
            params = []
            for _, blk in sec.blocks():
                params.extend(p for _, p in blk.named_params())
            out[sec_name] = params
        return out

    def match_sections(self, selector):
        """Section names matching a selector.

        A selector is either a full section name ("enc1", "ch0/enc2", "out")
        or a bare encoder/decoder name that matches every per-channel stack
        ("enc1" matches "ch*/enc1" on the multivariate model).
        """
        names = [n for n, _ in self.sections()]
        if selector in names:
            return [selector]
        matched = [n for n in names if n.endswith("/" + selector)]
        if not matched:
            raise ConfigError(f"unknown section {selector!r}; known: {names}")
        return matched

    def set_frozen(self, selectors, frozen=True):
        smap = self.section_map()
        for sel in selectors:
            for name in self.match_sections(sel):
                for p in smap[name]:
                    p.frozen = frozen

    def unfreeze_all(self):
        for p in self.params():
            p.frozen = False


class UNet(_ModelBase):
    """Plain encoder/decoder segmentation network."""

    kind = "unet"

    def __init__(self, spec: ArchSpec, seed=0, dtype=np.float32):
        if spec.kind != "unet":
            raise ConfigError(f"UNet requires kind='unet', got {spec.kind!r}")
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        d, k = spec.depth, spec.kernel
        self.encoders = []
        cin = spec.channels
        for f in range(1, d + 1):
            self.encoders.append(Section(k, cin, spec.section_width(f), rng, self.dtype))
            cin = spec.section_width(f)
        self.decoders = []  # deepest first: dec(depth-1) ... dec1
        for f in range(d - 1, 0, -1):
            cin = spec.section_width(f + 1) + spec.section_width(f)
            self.decoders.append(Section(k, cin, spec.section_width(f), rng, self.dtype))
        self.head = OutputHead(spec.section_width(1), spec.out_channels,
                               spec.label_mode, rng, self.dtype)
        self._pool_caches = None
        self._concat_caches = None

    def sections(self):
        d = self.spec.depth
        out = [(f"enc{f}", self.encoders[f - 1]) for f in range(1, d + 1)]
        out += [(f"dec{d - 1 - i}", self.decoders[i]) for i in range(d - 1)]
        out.append(("out", self.head))
        return out

    def forward(self, x, train=False):
        x = check_batch_for_model(x, self.spec, dtype=self.dtype)
        d, pool = self.spec.depth, self.spec.pool
        skips = []
        self._pool_caches = []
        self._concat_caches = []
        h = x
        for f in range(d):
            h = self.encoders[f].forward(h, train)
            if f < d - 1:
                skips.append(h)
                h, pc = maxpool1d_forward(h, pool)
                self._pool_caches.append(pc)
        for i, dec in enumerate(self.decoders):
            h, up_cache = upsample1d_forward(h, pool)
            h, cc = concat_forward(h, skips[-(i + 1)])
            self._concat_caches.append((up_cache, cc))
            h = dec.forward(h, train)
        return self.head.forward(h, train)

    def backward(self, dout):
        d, pool = self.spec.depth, self.spec.pool
        dh = self.head.backward(dout)
        dskips = [None] * (d - 1)
        for i in range(len(self.decoders) - 1, -1, -1):
            dh = self.decoders[i].backward(dh)
            up_cache, cc = self._concat_caches[i]
            dh, dskip = concat_backward(dh, cc)
            dskips[d - 2 - i] = dskip
            dh = upsample1d_backward(dh, up_cache)
        for f in range(d - 1, -1, -1):
            if f < d - 1:
                dh = maxpool1d_backward(dh, self._pool_caches[f])
                dh = dh + dskips[f]
            dh = self.encoders[f].backward(dh)
        return dh


class MUNet(_ModelBase):
    """Multivariate variant: per-channel encoders merged before a shared bottleneck."""

    kind = "munet"

    def __init__(self, spec: ArchSpec, seed=0, dtype=np.float32):
        if spec.kind != "munet":
            raise ConfigError(f"MUNet requires kind='munet', got {spec.kind!r}")
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        d, k, C = spec.depth, spec.kernel, spec.channels
        self.channel_encoders = []
        for _ in range(C):
            stack = []
            cin = 1
            for f in range(1, d):
                stack.append(Section(k, cin, spec.section_width(f), rng, self.dtype))
                cin = spec.section_width(f)
            self.channel_encoders.append(stack)
        self.shared = Section(k, C * spec.section_width(d - 1), spec.section_width(d),
                              rng, self.dtype)
        self.decoders = []
        for f in range(d - 1, 0, -1):
            cin = spec.section_width(f + 1) + C * spec.section_width(f)
            self.decoders.append(Section(k, cin, spec.section_width(f), rng, self.dtype))
        self.head = OutputHead(spec.section_width(1), spec.out_channels,
                               spec.label_mode, rng, self.dtype)
        self._pool_caches = None
        self._merge_caches = None
        self._concat_caches = None
        self._skip_widths = None

    def sections(self):
        d, C = self.spec.depth, self.spec.channels
        out = []
        for c in range(C):
            out += [(f"ch{c}/enc{f}", self.channel_encoders[c][f - 1])
                    for f in range(1, d)]
        out.append((f"enc{d}", self.shared))
        out += [(f"dec{d - 1 - i}", self.decoders[i]) for i in range(d - 1)]
        out.append(("out", self.head))
        return out

    def forward(self, x, train=False):
        x = check_batch_for_model(x, self.spec, dtype=self.dtype)
        d, pool, C = self.spec.depth, self.spec.pool, self.spec.channels
        per_level_skips = [[] for _ in range(d - 1)]  # level f-1 -> per-channel outputs
        bottleneck_parts = []
        self._pool_caches = [[None] * (d - 1) for _ in range(C)]
        self._concat_caches = []
        for c in range(C):
            h = np.ascontiguousarray(x[:, :, c : c + 1])
            for f in range(d - 1):
                h = self.channel_encoders[c][f].forward(h, train)
                per_level_skips[f].append(h)
                h, pc = maxpool1d_forward(h, pool)
                self._pool_caches[c][f] = pc
            bottleneck_parts.append(h)
        h, self._merge_caches = concat_many_forward(bottleneck_parts)
        h = self.shared.forward(h, train)
        skips = []
        self._skip_widths = []
        for f in range(d - 1):
            merged, widths = concat_many_forward(per_level_skips[f])
            skips.append(merged)
            self._skip_widths.append(widths)
        for i, dec in enumerate(self.decoders):
            h, up_cache = upsample1d_forward(h, pool)
            h, cc = concat_forward(h, skips[-(i + 1)])
            self._concat_caches.append((up_cache, cc))
            h = dec.forward(h, train)
        return self.head.forward(h, train)

    def backward(self, dout):
        d, pool, C = self.spec.depth, self.spec.pool, self.spec.channels
        dh = self.head.backward(dout)
        dskips = [None] * (d - 1)
        for i in range(len(self.decoders) - 1, -1, -1):
            dh = self.decoders[i].backward(dh)
            up_cache, cc = self._concat_caches[i]
            dh, dskip = concat_backward(dh, cc)
            dskips[d - 2 - i] = dskip
            dh = upsample1d_backward(dh, up_cache)
        dh = self.shared.backward(dh)
        dparts = concat_many_backward(dh, self._merge_caches)
        dskip_parts = [concat_many_backward(dskips[f], self._skip_widths[f])
                       for f in range(d - 1)]
        dx = np.zeros((dout.shape[0], self.spec.input_length, C), dtype=dout.dtype)
        for c in range(C):
            dh = dparts[c]
            for f in range(d - 2, -1, -1):
                dh = maxpool1d_backward(dh, self._pool_caches[c][f])
                dh = dh + dskip_parts[f][c]
                dh = self.channel_encoders[c][f].backward(dh)
            dx[:, :, c] = dh[:, :, 0]
        return dx


def build_model(spec: ArchSpec, seed=0, dtype=np.float32):
    """Build the model named by spec.kind."""
    if spec.kind == "unet":
        return UNet(spec, seed=seed, dtype=dtype)
    return MUNet(spec, seed=seed, dtype=dtype)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

MAGIC = b"TSU1"
FORMAT_VERSION = 1
_KIND_CODE = {"unet": 0, "munet": 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}
_MODE_CODE = {MULTI_LABEL: 0, SINGLE_LABEL: 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}


def _spec_header(spec: ArchSpec) -> bytes:
    return struct.pack("<4sHBB7I", MAGIC, FORMAT_VERSION,
                       _KIND_CODE[spec.kind], _MODE_CODE[spec.label_mode],
                       spec.input_length, spec.channels, spec.classes,
                       spec.depth, spec.base_width, spec.pool, spec.kernel)


def model_file_size(model) -> int:
    """Exact size in bytes of the serialized model file."""
    arrays = model.named_arrays()
    size = len(_spec_header(model.spec)) + 4
    for name, arr in arrays:
        size += 2 + len(name.encode()) + 1 + 4 * arr.ndim + 4 * arr.size
    return size


def save_model(model, path):
    """Write the model to ``path``: spec header + named float32 arrays.

    The on-disk format is always little-endian float32; a float64
    verification model is downcast on save.
    """
    arrays = model.named_arrays()
    buf = io.BytesIO()
    buf.write(_spec_header(model.spec))
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        enc = name.encode()
        buf.write(struct.pack("<H", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    data = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated model file while reading {what}")
    return data


def load_model(path, dtype=np.float32):
    """Read a model file written by :func:`save_model`."""
    with open(path, "rb") as fh:
        head = _read_exact(fh, struct.calcsize("<4sHBB7I"), "header")
        magic, version, kind_c, mode_c, L, C, M, depth, bw, pool, kernel = \
            struct.unpack("<4sHBB7I", head)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        if kind_c not in _KIND_NAME or mode_c not in _MODE_NAME:
            raise FormatError("unknown kind or label mode code")
        try:
            spec = ArchSpec(kind=_KIND_NAME[kind_c], input_length=L, channels=C,
                            classes=M, label_mode=_MODE_NAME[mode_c], depth=depth,
                            base_width=bw, pool=pool, kernel=kernel)
        except ConfigError as exc:
            raise FormatError(f"embedded spec invalid: {exc}") from exc
        (n_arrays,) = struct.unpack("<I", _read_exact(fh, 4, "array count"))
        state = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "array name").decode()
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims"))
            count = int(np.prod(shape)) if ndim else 1
            raw = _read_exact(fh, 4 * count, f"array {name}")
            state[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(dtype)
        if fh.read(1):
            raise FormatError("trailing bytes after last array")
    model = build_model(spec, seed=0, dtype=dtype)
    expected = [name for name, _ in model.named_arrays()]
    if set(expected) != set(state):
        missing = set(expected) - set(state)
        extra = set(state) - set(expected)
        raise FormatError(f"array names do not match spec (missing {sorted(missing)}, "
                          f"unexpected {sorted(extra)})")
    model.set_state(state)
    return model


# ---------------------------------------------------------------------------
# transplants
# ---------------------------------------------------------------------------

def _copy_section(dst: Section, src: Section):
    for (_, dblk), (_, sblk) in zip(dst.blocks(), src.blocks()):
        for (dname, dp), (_, sp) in zip(dblk.named_params(), sblk.named_params()):
            if dp.value.shape != sp.value.shape:
                raise ConfigError(f"section shape mismatch at {dname}: "
                                  f"{dp.value.shape} vs {sp.value.shape}")
            dp.value[...] = sp.value
        for (sname, _), (_, sstat) in zip(dblk.named_stats(), sblk.named_stats()):
            dblk.set_stat(sname, np.asarray(sstat, dtype=dblk.running_mean.dtype))


def transplant_unet_to_unet(pretrained: UNet, target_spec: ArchSpec, seed=0):
    """New model from target_spec with sections 1..2*depth-1 copied; fresh head.

    target_spec may differ from the source spec only in classes/label_mode.
    """
    if not isinstance(pretrained, UNet):
        raise ConfigError("source model must be a plain unet")
    if target_spec.kind != "unet":
        raise ConfigError("target spec must be kind='unet'")
    src = pretrained.spec
    if replace(src, classes=target_spec.classes, label_mode=target_spec.label_mode) != target_spec:
        raise ConfigError("specs may differ only in classes / label_mode "
                          f"(source {src}, target {target_spec})")
    model = UNet(target_spec, seed=seed, dtype=pretrained.dtype)
    for dst, srcsec in zip(model.encoders, pretrained.encoders):
        _copy_section(dst, srcsec)
    for dst, srcsec in zip(model.decoders, pretrained.decoders):
        _copy_section(dst, srcsec)
    return model


def transplant_unet_to_munet(pretrained: UNet, target_spec: ArchSpec, seed=0):
    """Copy pretrained enc1..enc(depth-1) into every per-channel encoder stack.

    The shared final encoding section, decoders, and head are freshly
    initialized (seeded). Running statistics travel with the copied sections
    so per-channel encoder activations match the source bit for bit.
    """
    if not isinstance(pretrained, UNet):
        raise ConfigError("source model must be a plain unet")
    if pretrained.spec.channels != 1:
        raise ConfigError("source model must be univariate")
    if target_spec.kind != "munet":
        raise ConfigError("target spec must be kind='munet'")
    src = pretrained.spec
    for field_name in ("depth", "base_width", "pool", "kernel"):
        if getattr(src, field_name) != getattr(target_spec, field_name):
            raise ConfigError(f"{field_name} mismatch: source "
                              f"{getattr(src, field_name)}, target "
                              f"{getattr(target_spec, field_name)}")
    model = MUNet(target_spec, seed=seed, dtype=pretrained.dtype)
    for stack in model.channel_encoders:
        for dst, srcsec in zip(stack, pretrained.encoders[: src.depth - 1]):
            _copy_section(dst, srcsec)
    return model


def section_ordinal(name: str, depth: int) -> int:
    """Flow-order ordinal of a top-level section, 1..2*depth.

    Encoders come first (enc1..encD -> 1..D), then decoders deepest-first
    (dec(D-1)..dec1 -> D+1..2D-1), then the output section (2D). Per-channel
    encoder stacks share the ordinal of their section ("ch3/enc2" -> 2).
    """
    base = name.split("/")[-1]
    if base == "out":
        return 2 * depth
    idx = int(base[3:])
    if base.startswith("enc"):
        return idx
    if base.startswith("dec"):
        return 2 * depth - idx
    raise ConfigError(f"cannot map section {name!r} to an ordinal")
