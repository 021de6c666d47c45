"""Independent reference computations used by the test-suite."""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` with respect to array ``x``.

    ``x`` is perturbed in place and restored.
    """
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    """Max abs difference, normalised by the larger of the two max magnitudes."""
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def truncnorm_std(std, trunc):
    """Std of N(0, std^2) restricted to +-trunc*std (closed form)."""
    from math import erf, exp, pi, sqrt

    phi = exp(-0.5 * trunc * trunc) / sqrt(2 * pi)
    mass = erf(trunc / sqrt(2))
    return std * sqrt(1 - 2 * trunc * phi / mass)
