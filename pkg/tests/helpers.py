"""Shared oracles and factories for the test suite.

The oracles here are deliberately naive (nested loops, direct enumeration) so
they stay independent of the vectorized implementations they check.
"""
import numpy as np

from tsunet.arch import ArchSpec, build_model


def brute_conv1d(x, w, b):
    """Direct sliding-window convolution with explicit zero padding."""
    B, L, cin = x.shape
    K, _, F = w.shape
    pad = (K - 1) // 2
    out = np.zeros((B, L, F), dtype=np.float64)
    for bi in range(B):
        for t in range(L):
            for f in range(F):
                acc = 0.0
                for k in range(K):
                    src = t + k - pad
                    if 0 <= src < L:
                        for c in range(cin):
                            acc += x[bi, src, c] * w[k, c, f]
                out[bi, t, f] = acc + b[f]
    return out


def brute_dice(probs, target, eps=1.0):
    """Per-(batch, class) soft Dice loss via plain python loops."""
    B, L, K = probs.shape
    total = 0.0
    for b in range(B):
        for k in range(K):
            inter = sum(float(probs[b, t, k]) * float(target[b, t, k]) for t in range(L))
            psum = sum(float(probs[b, t, k]) for t in range(L))
            gsum = sum(float(target[b, t, k]) for t in range(L))
            total += (2.0 * inter + eps) / (psum + gsum + eps)
    return 1.0 - total / (B * K)


def brute_iou(pred, true):
    """Counting-loop IoU per class over flattened leading axes."""
    k = pred.shape[-1]
    p = pred.reshape(-1, k)
    t = true.reshape(-1, k)
    out = []
    for c in range(k):
        inter = union = 0
        for i in range(p.shape[0]):
            a, b = bool(p[i, c]), bool(t[i, c])
            inter += a and b
            union += a or b
        out.append(inter / union if union else 1.0)
    return np.array(out)


def desk_spec(**overrides):
    """Small spec used for fast whole-network checks."""
    base = dict(kind="unet", input_length=64, channels=1, classes=2,
                label_mode="multi_label", depth=3, base_width=4, pool=4, kernel=3)
    base.update(overrides)
    return ArchSpec(**base)


def desk_model(seed=0, dtype=np.float64, **overrides):
    return build_model(desk_spec(**overrides), seed=seed, dtype=dtype)


def random_batch(spec, batch=2, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(batch, spec.input_length, spec.channels)).astype(dtype)


def random_mask(spec, batch=2, seed=1):
    rng = np.random.default_rng(seed)
    return (rng.random((batch, spec.input_length, spec.classes)) < 0.2).astype(np.uint8)
