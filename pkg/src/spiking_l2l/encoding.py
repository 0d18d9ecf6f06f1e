"""Gaussian population coding of analog values into input spike trains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class PopulationCode:
    """``n_units`` Gaussian tuning curves with evenly spaced preferred values.

    The tuning width is ``sigma_scale * (m_max - m_min) / 1000``.
    """

    m_min: float
    m_max: float
    n_units: int = 100
    r_max: float = 200.0
    sigma_scale: float = 1.0

    def __post_init__(self):
        if not self.m_max > self.m_min:
            raise ConfigurationError("m_max must exceed m_min", ["m_min", "m_max"])
        if self.n_units < 2:
            raise ConfigurationError("need at least two units", ["n_units"])
        if not self.sigma_scale > 0:
            raise ConfigurationError("sigma_scale must be positive", ["sigma_scale"])

    @property
    def preferred(self) -> np.ndarray:
        return np.linspace(self.m_min, self.m_max, self.n_units)

    @property
    def sigma(self) -> float:
        return self.sigma_scale * (self.m_max - self.m_min) / 1000.0


def rates(code: PopulationCode, z) -> np.ndarray:
    """Rates in Hz, shape ``z.shape + (n_units,)``."""
    z = np.asarray(z, dtype=np.float64)[..., None]
    return code.r_max * np.exp(-((code.preferred - z) ** 2) / (2.0 * code.sigma ** 2))


def spikes_from_rates(rate_hz, duration_steps: int, rng, dt_ms: float = 1.0) -> np.ndarray:
    """Bernoulli spikes with per-bin probability ``min(1, rate * dt)``.

    Returns a boolean raster of shape ``(duration_steps,) + rate_hz.shape``.
    """
    rate_hz = np.asarray(rate_hz, dtype=np.float64)
    if np.any(rate_hz < 0):
        raise ConfigurationError("rates must be non-negative")
    p = np.minimum(1.0, rate_hz * dt_ms / 1000.0)
    return rng.random((duration_steps,) + rate_hz.shape) < p


def decode(code: PopulationCode, r) -> np.ndarray:
    """Rate-weighted mean of preferred values."""
    r = np.asarray(r, dtype=np.float64)
    return (r @ code.preferred) / r.sum(axis=-1)
