"""Spike nonlinearity and its piecewise-linear pseudo-derivative.

``surrogate_derivative`` is the triangular function ``gamma * max(0, 1 - |v|)``
that stands in for the derivative of the Heaviside step during BPTT.
``smooth_spike`` is its antiderivative (zero for ``v <= -1``); a forward pass
that uses it instead of the hard step is a smooth system whose exact gradient
is what BPTT computes, which is how the gradient code is validated against
finite differences.
"""

import numpy as np


def heaviside(v):
    """Strict step: ``1`` where ``v > 0``, else ``0``."""
    return (np.asarray(v) > 0).astype(np.float64)


def surrogate_derivative(v, gamma):
    """Pseudo-derivative ``gamma * max(0, 1 - |v|)`` of the spike w.r.t. ``v``."""
    return gamma * np.maximum(0.0, 1.0 - np.abs(v))


def smooth_spike(v, gamma):
    """Antiderivative of :func:`surrogate_derivative`, saturating at ``gamma``."""
    v = np.clip(np.asarray(v, dtype=np.float64), -1.0, 1.0)
    lower = 0.5 * (1.0 + v) ** 2
    upper = 1.0 - 0.5 * (1.0 - v) ** 2
    return gamma * np.where(v <= 0.0, lower, upper)
