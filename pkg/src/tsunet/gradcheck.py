"""Central finite-difference oracles for verifying hand-written backward passes.

These are deliberately independent of the analytic gradients they check:
plain loops over elements, two function evaluations per element.
"""
from __future__ import annotations

import numpy as np


def numerical_gradient(f, x, h=1e-5):
    """Gradient of scalar-valued ``f`` at array ``x`` by central differences.

    ``f`` receives the (temporarily perturbed) array and must return a float.
    ``x`` is restored before returning. Use float64 arrays for meaningful
    tolerances.
    """
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
        it.iternext()
    return grad


def rel_error(a, b, floor=1e-12):
    """Max-norm relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = np.abs(a - b).max() if a.size else 0.0
    den = max(np.abs(a).max() if a.size else 0.0,
              np.abs(b).max() if b.size else 0.0,
              floor)
    return float(num / den)
