"""Discrete-time recurrent network of leaky integrate-and-fire neurons.

The membrane recurrence per step ``t`` (all quantities per neuron) is::

    v(t)   = (V(t) - v_th) / v_th                 normalized potential
    z(t)   = [refrac(t) == 0] * H(v(t))           spike, strict v > 0
    I(t)   = W_in u(t) + sum_d W_rec^(d) z(t - d)  delayed recurrent input
    V(t+1) = rho V(t) + (1 - rho) R_m I(t) - v_th z(t)
    h(t)   = kappa h(t-1) + z(t)                  readout trace

``W_rec^(d)`` holds the synapses whose integer delay is ``d`` steps. A spike
emitted at step ``t`` therefore enters the postsynaptic current at step
``t + d`` and moves the membrane at ``t + d + 1``. Refractory neurons keep
integrating but cannot spike for ``refractory / dt`` steps after a spike.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalDivergence
from .surrogate import smooth_spike

PAPER_RHO = 0.368


@dataclass(frozen=True)
class NeuronConstants:
    """Fixed neuron constants. Times are in milliseconds.

    ``rho`` follows ``exp(-dt / tau_m)`` unless ``rho_override`` is given;
    the override exists so the literal ``rho = 0.368`` configuration can be
    run alongside the formula.
    """

    dt: float = 1.0
    tau_m: float = 20.0
    v_th: float = 0.02
    refractory: float = 5.0
    gamma: float = 0.4
    tau_readout: float = 20.0
    r_m: float = 1.0
    rho_override: float | None = None
    detach_reset: bool = False

    def __post_init__(self):
        bad = []
        if not self.dt > 0:
            bad.append("dt")
        if not self.tau_m > 0:
            bad.append("tau_m")
        if not self.tau_readout > 0:
            bad.append("tau_readout")
        if not self.v_th > 0:
            bad.append("v_th")
        if not self.refractory >= 0:
            bad.append("refractory")
        if not self.gamma > 0:
            bad.append("gamma")
        if self.rho_override is not None and not 0.0 < self.rho_override < 1.0:
            bad.append("rho_override")
        if bad:
            raise ConfigurationError(f"invalid neuron constants: {', '.join(bad)}", bad)

    @property
    def rho(self) -> float:
        if self.rho_override is not None:
            return float(self.rho_override)
        return math.exp(-self.dt / self.tau_m)

    @property
    def kappa(self) -> float:
        return math.exp(-self.dt / self.tau_readout)

    @property
    def refractory_steps(self) -> int:
        return int(round(self.refractory / self.dt))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NeuronConstants":
        return cls(**d)


def _zero_diagonal(w):
    w = np.array(w, dtype=np.float64)
    np.fill_diagonal(w, 0.0)
    return w


@dataclass(frozen=True, eq=False)
class ReservoirParams:
    """Input, recurrent and readout weights plus the frozen synaptic delays.

    Shapes: ``w_in`` (N, n_inputs), ``w_rec`` (N, N) with zero diagonal,
    ``w_out`` (n_outputs, n_features), ``delays`` (N, N) integer steps.
    ``w_out`` is the readout initialization when the inner loop adapts it.
    """

    w_in: np.ndarray
    w_rec: np.ndarray
    w_out: np.ndarray
    delays: np.ndarray

    TRAINABLE = ("w_in", "w_rec", "w_out")

    def __post_init__(self):
        w_in = np.array(self.w_in, dtype=np.float64, ndmin=2)
        w_rec = np.array(self.w_rec, dtype=np.float64, ndmin=2)
        w_out = np.array(self.w_out, dtype=np.float64, ndmin=2)
        delays = np.array(self.delays, ndmin=2)
        n = w_rec.shape[0]
        if w_rec.shape != (n, n):
            raise ConfigurationError(f"w_rec must be square, got {w_rec.shape}", ["w_rec"])
        if w_in.shape[0] != n:
            raise ConfigurationError(
                f"w_in has {w_in.shape[0]} rows for {n} neurons", ["w_in"])
        if delays.shape != (n, n):
            raise ConfigurationError(f"delays shape {delays.shape} != {(n, n)}", ["delays"])
        if not np.issubdtype(delays.dtype, np.integer):
            if not np.all(delays == np.round(delays)):
                raise ConfigurationError("delays must be integer steps", ["delays"])
        delays = delays.astype(np.int64)
        if delays.size and delays.min() < 0:
            raise ConfigurationError("delays must be non-negative", ["delays"])
        if np.any(np.diag(w_rec) != 0.0):
            raise ConfigurationError("w_rec must have a zero diagonal", ["w_rec"])
        for name, arr in (("w_in", w_in), ("w_rec", w_rec), ("w_out", w_out)):
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} has non-finite entries", [name])
        for name, arr in (("w_in", w_in), ("w_rec", w_rec), ("w_out", w_out), ("delays", delays)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_neurons(self) -> int:
        return self.w_rec.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.w_in.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.w_out.shape[0]

    @property
    def n_features(self) -> int:
        return self.w_out.shape[1]

    @property
    def max_delay(self) -> int:
        return int(self.delays.max()) if self.delays.size else 0

    def replace(self, **arrays) -> "ReservoirParams":
        return dataclasses.replace(self, **arrays)

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.TRAINABLE}

    def delay_blocks(self) -> list[tuple[int, np.ndarray]]:
        """``(d, W_d)`` pairs with ``W_d = w_rec`` masked to delay ``d``; empty masks skipped."""
        blocks = []
        for d in range(self.max_delay + 1):
            mask = self.delays == d
            np.fill_diagonal(mask, False)
            if mask.any():
                blocks.append((d, np.where(mask, self.w_rec, 0.0)))
        return blocks

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in ("w_in", "w_rec", "w_out", "delays"):
            arr = np.ascontiguousarray(getattr(self, name))
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()


def uniform_delays(n_neurons, delay_steps):
    """Every synapse gets the same delay."""
    return np.full((n_neurons, n_neurons), int(delay_steps), dtype=np.int64)


def random_delays(n_neurons, max_delay_steps, rng):
    """Independent uniform integer delays in ``{0, ..., max_delay_steps}``."""
    return rng.integers(0, max_delay_steps + 1, size=(n_neurons, n_neurons)).astype(np.int64)


def glorot_uniform(n_out, n_in, rng):
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def init_params(n_neurons, n_inputs, n_outputs, n_features, delays, rng, *,
                w_in_std=1.0 / math.sqrt(3.0), w_rec_std=None):
    """Gaussian input/recurrent weights and a Glorot-uniform readout.

    ``w_rec_std`` defaults to ``1 / sqrt(n_neurons)``.
    """
    if w_rec_std is None:
        w_rec_std = 1.0 / math.sqrt(n_neurons)
    w_in = rng.normal(0.0, w_in_std, size=(n_neurons, n_inputs))
    w_rec = _zero_diagonal(rng.normal(0.0, w_rec_std, size=(n_neurons, n_neurons)))
    w_out = glorot_uniform(n_outputs, n_features, rng)
    return ReservoirParams(w_in=w_in, w_rec=w_rec, w_out=w_out, delays=delays)


@dataclass
class NetworkState:
    """Per-neuron state, optionally with leading batch axes.

    ``buffer[d]`` holds the spikes emitted ``d`` steps before the most recent
    step, so its depth is ``max_delay + 1``.
    """

    v: np.ndarray
    refrac: np.ndarray
    buffer: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, params: ReservoirParams, batch_shape=()) -> "NetworkState":
        shape = tuple(batch_shape) + (params.n_neurons,)
        return cls(
            v=np.zeros(shape),
            refrac=np.zeros(shape, dtype=np.int64),
            buffer=np.zeros((params.max_delay + 1,) + shape),
            h=np.zeros(shape),
        )

    def copy(self) -> "NetworkState":
        return NetworkState(self.v.copy(), self.refrac.copy(), self.buffer.copy(), self.h.copy())

    def take(self, index) -> "NetworkState":
        """Select batch entries (``index`` applies to the leading batch axis)."""
        return NetworkState(self.v[index].copy(), self.refrac[index].copy(),
                            self.buffer[:, index].copy(), self.h[index].copy())

    def equals(self, other: "NetworkState") -> bool:
        return all(np.array_equal(a, b) for a, b in
                   zip((self.v, self.refrac, self.buffer, self.h),
                       (other.v, other.refrac, other.buffer, other.h)))


def _check_dims(state, params, u):
    n = params.n_neurons
    if state.v.shape[-1] != n or state.h.shape[-1] != n or state.refrac.shape[-1] != n:
        raise ConfigurationError(f"state sized for {state.v.shape[-1]} neurons, params for {n}")
    if state.buffer.shape[0] != params.max_delay + 1:
        raise ConfigurationError(
            f"spike buffer depth {state.buffer.shape[0]} != max_delay + 1 = {params.max_delay + 1}")
    if u.shape[-1] != params.n_inputs:
        raise ConfigurationError(f"input has {u.shape[-1]} channels, w_in expects {params.n_inputs}")


def advance(state, params, consts, u, *, blocks=None, smooth=False, t=None):
    """One simulation step; returns ``(new_state, z, v_norm, gate)``.

    ``gate`` marks neurons outside their refractory period. With
    ``smooth=True`` the emitted ``z`` is the smooth surrogate spike, while
    refractoriness still follows the hard threshold crossing.
    """
    u = np.asarray(u, dtype=np.float64)
    if blocks is None:
        _check_dims(state, params, u)
        blocks = params.delay_blocks()
    thr = consts.v_th
    v_norm = (state.v - thr) / thr
    gate = state.refrac == 0
    fired = gate & (v_norm > 0.0)
    if smooth:
        z = gate * smooth_spike(v_norm, consts.gamma)
    else:
        z = fired.astype(np.float64)

    buffer = np.concatenate([z[None], state.buffer[:-1]], axis=0)
    current = u @ params.w_in.T
    for d, w_d in blocks:
        current = current + buffer[d] @ w_d.T

    rho = consts.rho
    v_new = rho * state.v + (1.0 - rho) * consts.r_m * current - thr * z
    if not np.all(np.isfinite(v_new)):
        raise NumericalDivergence("non-finite membrane potential", step=t)
    refrac = np.where(fired, consts.refractory_steps, np.maximum(state.refrac - 1, 0))
    h = consts.kappa * state.h + z
    return NetworkState(v_new, refrac, buffer, h), z, v_norm, gate


def step(state: NetworkState, params: ReservoirParams, consts: NeuronConstants, input_vec):
    """Advance the network by one ``dt``; returns ``(new_state, spikes)``."""
    new_state, z, _, _ = advance(state, params, consts, input_vec)
    return new_state, z


Hook = Callable[[int, np.ndarray, NetworkState, np.ndarray], None]


def run_episode(params, consts, inputs, hooks: Sequence[Hook] = (), *, state=None, seed=None):
    """Simulate a single (unbatched) input stream of shape ``(T, n_inputs)``.

    Each hook is called after every step as ``hook(t, u_t, state, spikes)``;
    the inner loop uses this to interleave readout predictions and updates.
    """
    from .records import EpisodeRecord

    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    if inputs.shape[0] < 1:
        raise ConfigurationError("input stream must have at least one step")
    if state is None:
        state = NetworkState.zeros(params)
    _check_dims(state, params, inputs[0])
    blocks = params.delay_blocks()
    n_steps = inputs.shape[0]
    spikes = np.zeros((n_steps, params.n_neurons), dtype=bool)
    traces = np.zeros((n_steps, params.n_neurons), dtype=np.float32)
    for t in range(n_steps):
        state, z, _, _ = advance(state, params, consts, inputs[t], blocks=blocks, t=t)
        spikes[t] = z > 0
        traces[t] = state.h
        for hook in hooks:
            hook(t, inputs[t], state, z)
    record = EpisodeRecord(inputs=inputs.astype(np.float32), spikes=spikes, traces=traces,
                           dt=consts.dt, seed=-1 if seed is None else int(seed))
    return record
