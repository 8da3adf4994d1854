"""Trainable parameters and the Adam optimizer."""
from __future__ import annotations

import numpy as np


class Param:
    """A trainable array with its gradient and Adam moment state.

    ``lr_multiplier`` scales the effective learning rate of this parameter
    (used by the per-section fine-tuning strategy); ``frozen`` makes
    :func:`adam_step` skip the parameter entirely, leaving value, moments,
    and step count untouched.
    """

    __slots__ = ("value", "grad", "adam_m", "adam_v", "step_count", "lr_multiplier", "frozen")

    def __init__(self, value, lr_multiplier=1.0, frozen=False):
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0
        self.lr_multiplier = float(lr_multiplier)
        self.frozen = bool(frozen)

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        flags = []
        if self.frozen:
            flags.append("frozen")
        if self.lr_multiplier != 1.0:
            flags.append(f"lr_mult={self.lr_multiplier}")
        extra = ", ".join([""] + flags) if flags else ""
        return f"Param(shape={tuple(self.value.shape)}, dtype={self.value.dtype}{extra})"


def adam_step(params, base_lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction over an iterable of Params.

    Effective learning rate per parameter is base_lr * lr_multiplier.
    Frozen parameters are skipped; step counts increment only for updated
    parameters.
    """
    for p in params:
        if p.frozen:
            continue
        p.step_count += 1
        t = p.step_count
        g = p.grad
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        mhat = p.adam_m / (1.0 - beta1 ** t)
        vhat = p.adam_v / (1.0 - beta2 ** t)
        p.value -= (base_lr * p.lr_multiplier) * mhat / (np.sqrt(vhat) + eps)
