"""Task families: second-order Volterra filters, target networks, sines."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PERIODS_S = (0.323, 0.5)
K2_SCALE = 14.0
K2_TIME_UNIT_S = 0.01


def task_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for ``(seed, *keys)``, e.g. ``(master seed, task index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


# -- Volterra ---------------------------------------------------------------

def sigma_matrix(u: float, v: float) -> np.ndarray:
    s = math.sqrt(1.0 + u * u + v * v)
    return np.array([[s + u, v], [v, s - u]])


def first_order_kernel(a, b, n_bins, dt_s=1e-3):
    """Sum of two exponentials ``a_n exp(-t / b_n)``, scaled to unit L1 norm."""
    t = np.arange(n_bins) * dt_s
    raw = sum(a_n * np.exp(-t / b_n) for a_n, b_n in zip(a, b))
    return raw / np.sum(np.abs(raw))


def second_order_kernel(u, v, n_bins, dt_s=1e-3, time_unit_s=K2_TIME_UNIT_S, scale=K2_SCALE):
    """Gaussian bell ``exp(-t^T Sigma^-1 t / 24)`` at the origin, entries summing to ``scale``.

    Lags are expressed in multiples of ``time_unit_s`` before entering the
    quadratic form.
    """
    t = np.arange(n_bins) * dt_s / time_unit_s
    s = math.sqrt(1.0 + u * u + v * v)
    # Sigma has unit determinant, so its inverse is the adjugate.
    p11, p12, p22 = s - u, -v, s + u
    quad = (p11 * t[:, None] ** 2 + 2.0 * p12 * t[:, None] * t[None, :]
            + p22 * t[None, :] ** 2)
    raw = np.exp(-quad / 24.0)
    return raw / raw.sum() * scale


@dataclass(frozen=True)
class VolterraTask:
    a: tuple[float, float]
    b: tuple[float, float]
    u: float
    v: float
    amplitudes: tuple[float, float]
    phases: tuple[float, float]
    periods: tuple[float, float] = PERIODS_S
    n_bins: int = 500
    dt_s: float = 1e-3
    k2_time_unit: float = K2_TIME_UNIT_S

    @cached_property
    def sigma(self) -> np.ndarray:
        return sigma_matrix(self.u, self.v)

    @cached_property
    def k1(self) -> np.ndarray:
        return first_order_kernel(self.a, self.b, self.n_bins, self.dt_s)

    @cached_property
    def k2(self) -> np.ndarray:
        return second_order_kernel(self.u, self.v, self.n_bins, self.dt_s, self.k2_time_unit)

    def to_dict(self) -> dict:
        return {k: (list(val) if isinstance(val, tuple) else val) for k, val in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "VolterraTask":
        return cls(**{k: (tuple(val) if isinstance(val, list) else val) for k, val in d.items()})


def sample_volterra(rng, n_bins=500, dt_s=1e-3, k2_time_unit=K2_TIME_UNIT_S) -> VolterraTask:
    while True:
        a = tuple(rng.uniform(-1.0, 1.0, 2))
        b = tuple(rng.uniform(0.1, 0.3, 2))
        t = np.arange(n_bins) * dt_s
        if np.sum(np.abs(sum(a_n * np.exp(-t / b_n) for a_n, b_n in zip(a, b)))) >= 1e-6:
            break
    u, v = rng.uniform(-12.0, 12.0, 2)
    amps = tuple(rng.uniform(0.5, 1.0, 2))
    phases = tuple(rng.uniform(0.0, math.pi / 2, 2))
    return VolterraTask(a=tuple(map(float, a)), b=tuple(map(float, b)), u=float(u), v=float(v),
                        amplitudes=tuple(map(float, amps)), phases=tuple(map(float, phases)),
                        n_bins=n_bins, dt_s=dt_s, k2_time_unit=k2_time_unit)


def gen_input(task: VolterraTask, n_steps: int, start: int = 0) -> np.ndarray:
    """Sum of two sines sampled every ``dt_s`` from step ``start``."""
    t = (start + np.arange(n_steps)) * task.dt_s
    return sum(A * np.sin(2.0 * math.pi * t / T + phi)
               for A, T, phi in zip(task.amplitudes, task.periods, task.phases))


def volterra_filter(k1, k2, x, chunk=4096) -> np.ndarray:
    """Discrete second-order Volterra response with ``x(t) = 0`` for ``t < 0``."""
    x = np.asarray(x, dtype=np.float64)
    k1 = np.asarray(k1, dtype=np.float64)
    k2 = np.asarray(k2, dtype=np.float64)
    n = len(x)
    y = np.convolve(x, k1)[:n]
    lags = k2.shape[0]
    padded = np.concatenate([np.zeros(lags - 1), x])
    # row t holds x(t), x(t-1), ..., x(t-lags+1)
    windows = sliding_window_view(padded, lags)[:, ::-1]
    for s in range(0, n, chunk):
        w = windows[s:s + chunk]
        y[s:s + chunk] += np.einsum("ti,ti->t", w @ k2, w)
    return y


def apply_volterra(task: VolterraTask, x) -> np.ndarray:
    return volterra_filter(task.k1, task.k2, x)


# -- Target networks --------------------------------------------------------

def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class TargetNetwork:
    """2-10-1 sigmoidal network; 20 hidden weights, 10 biases, 10 output weights."""

    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray
    output_sigmoid: bool = True

    @property
    def n_params(self) -> int:
        return self.w_hidden.size + self.b_hidden.size + self.w_out.size

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.w_hidden.ravel(), self.b_hidden, self.w_out])

    def to_dict(self) -> dict:
        return {"w_hidden": self.w_hidden.tolist(), "b_hidden": self.b_hidden.tolist(),
                "w_out": self.w_out.tolist(), "output_sigmoid": self.output_sigmoid}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetNetwork":
        return cls(np.asarray(d["w_hidden"]), np.asarray(d["b_hidden"]), np.asarray(d["w_out"]),
                   d.get("output_sigmoid", True))


def sample_target_network(rng, n_hidden=10, output_sigmoid=True) -> TargetNetwork:
    return TargetNetwork(w_hidden=rng.uniform(-1.0, 1.0, (n_hidden, 2)),
                         b_hidden=rng.uniform(-1.0, 1.0, n_hidden),
                         w_out=rng.uniform(-1.0, 1.0, n_hidden),
                         output_sigmoid=output_sigmoid)


def eval_tn(tn: TargetNetwork, x1, x2):
    x = np.stack(np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float)), axis=-1)
    hidden = logistic(x @ tn.w_hidden.T + tn.b_hidden)
    out = hidden @ tn.w_out
    return logistic(out) if tn.output_sigmoid else out


# -- Sines ------------------------------------------------------------------

@dataclass(frozen=True)
class SineTask:
    amplitude: float
    phase: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SineTask":
        return cls(**d)


def sample_sine(rng, amplitude_range=(0.1, 5.0)) -> SineTask:
    return SineTask(amplitude=float(rng.uniform(*amplitude_range)),
                    phase=float(rng.uniform(0.0, 2.0 * math.pi)))


def eval_sine(task: SineTask, x):
    return task.amplitude * np.sin(np.asarray(x, dtype=np.float64) + task.phase)
