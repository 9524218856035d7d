"""Shared test helpers: central finite differences against tape gradients."""

import numpy as np

from scenefit import diffcore


def finite_difference(tape, bindings, targets, h=1e-5):
    """Central-difference gradient of the tape root (summed if non-scalar)
    with respect to each target leaf, one coordinate at a time."""
    grads = {}
    for name in targets:
        base = np.asarray(bindings[name], dtype=np.float64)
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        for k in range(base.size):
            for sgn in (1.0, -1.0):
                shifted = base.copy().reshape(-1)
                shifted[k] += sgn * h
                b = dict(bindings)
                b[name] = shifted.reshape(base.shape)
                val = np.sum(diffcore.evaluate(tape, b))
                flat[k] += sgn * val / (2.0 * h)
        grads[name] = g
    return grads


def relative_error(a, b, floor=1e-8):
    """Max elementwise relative error with an absolute floor so that
    near-zero pairs do not blow up the ratio."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
