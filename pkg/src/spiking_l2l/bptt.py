"""Tape recording and reverse-mode BPTT through the LIF recurrence.

All tape arrays are time-major: ``(T, B, ...)``. The backward pass runs the
adjoint recurrence of :mod:`spiking_l2l.neuron`::

    dI(t) = (1 - rho) R_m dV(t+1)
    a(t)  = dL/dz(t) + sum_d W_d^T dI(t+d) - v_th dV(t+1)   # last term unless detach_reset
    dV(t) = rho dV(t+1) + a(t) * gate(t) * psi(v(t)) / v_th

with ``psi`` the surrogate derivative. The initial state of the window is a
constant, which is what truncates the gradient at window boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError, ContractViolation, NumericalDivergence
from .neuron import NetworkState, ReservoirParams, advance
from .surrogate import surrogate_derivative

__all__ = ["Tape", "record", "backward", "clip_by_global_norm", "global_norm",
           "surrogate_derivative", "trace_forward", "trace_backward"]


@dataclass
class Tape:
    """Forward trajectory of one truncation window for a batch of streams."""

    inputs: np.ndarray        # (T, B, n_in)
    v: np.ndarray             # (T, B, N) normalized potential at spike decision
    gate: np.ndarray          # (T, B, N) bool, outside refractory period
    z: np.ndarray             # (T, B, N) emitted spikes (smooth values if smooth)
    initial_state: NetworkState
    final_state: NetworkState
    horizon: int
    smooth: bool = False
    step_offset: int = 0

    def __post_init__(self):
        for name in ("inputs", "v", "gate", "z"):
            if getattr(self, name).shape[0] != self.horizon:
                raise ContractViolation(
                    f"tape field {name} has {getattr(self, name).shape[0]} records, "
                    f"horizon is {self.horizon}")

    @property
    def batch_size(self) -> int:
        return self.z.shape[1]

    def prehistory(self, max_delay: int) -> np.ndarray:
        """Spikes ``z(-D) .. z(-1)`` carried in from before the window, oldest first."""
        if max_delay == 0:
            return self.z[:0]
        return self.initial_state.buffer[:max_delay][::-1]


def record(params: ReservoirParams, consts, inputs, state: NetworkState | None = None, *,
           smooth=False, dtype=np.float32, step_offset=0) -> Tape:
    """Run the network over time-major ``inputs`` of shape ``(T, B, n_in)``."""
    inputs = np.asarray(inputs)
    if inputs.ndim != 3:
        raise ConfigurationError(f"inputs must be (T, B, n_in), got shape {inputs.shape}")
    t_len, batch, _ = inputs.shape
    if t_len < 1:
        raise ConfigurationError("empty input stream")
    if state is None:
        state = NetworkState.zeros(params, (batch,))
    if state.v.shape[:-1] != (batch,):
        raise ConfigurationError(f"state batch {state.v.shape[:-1]} != input batch {batch}")
    if inputs.shape[2] != params.n_inputs:
        raise ConfigurationError(
            f"input has {inputs.shape[2]} channels, w_in expects {params.n_inputs}")
    if state.buffer.shape[0] != params.max_delay + 1 or state.v.shape[-1] != params.n_neurons:
        raise ConfigurationError("state does not match params")
    n = params.n_neurons
    blocks = params.delay_blocks()
    v_rec = np.empty((t_len, batch, n), dtype=dtype)
    gate_rec = np.empty((t_len, batch, n), dtype=bool)
    z_rec = np.empty((t_len, batch, n), dtype=np.float64 if smooth else dtype)
    initial = state
    for t in range(t_len):
        state, z, v_norm, gate = advance(state, params, consts, inputs[t], blocks=blocks,
                                         smooth=smooth, t=step_offset + t)
        v_rec[t] = v_norm
        gate_rec[t] = gate
        z_rec[t] = z
    return Tape(inputs=inputs.astype(dtype, copy=False), v=v_rec, gate=gate_rec, z=z_rec, initial_state=initial,
                final_state=state, horizon=t_len, smooth=smooth, step_offset=step_offset)


def backward(tape: Tape, params: ReservoirParams, consts, grad_z, grad_w_out=None):
    """Gradients of the loss w.r.t. ``w_in``, ``w_rec`` (and ``w_out`` if supplied).

    ``grad_z`` is the direct loss gradient w.r.t. every recorded spike,
    shape ``(T, B, N)``; everything flowing through the recurrence is added
    here. ``grad_w_out`` comes from the readout's own backward pass.
    """
    grad_z = np.asarray(grad_z, dtype=np.float64)
    if grad_z.shape != tape.z.shape:
        raise ContractViolation(f"grad_z shape {grad_z.shape} != tape shape {tape.z.shape}")
    t_len, batch, n = tape.z.shape
    blocks = params.delay_blocks()
    rho = consts.rho
    thr = consts.v_th
    in_scale = (1.0 - rho) * consts.r_m
    reset = 0.0 if consts.detach_reset else thr

    dz_dv = tape.gate * surrogate_derivative(tape.v.astype(np.float64), consts.gamma) / thr
    d_current = np.zeros((t_len, batch, n))
    dv_next = np.zeros((batch, n))
    for t in range(t_len - 1, -1, -1):
        d_current[t] = in_scale * dv_next
        a = grad_z[t] - reset * dv_next
        for d, w_d in blocks:
            if t + d < t_len:
                a = a + d_current[t + d] @ w_d
        dv_next = rho * dv_next + a * dz_dv[t]
        if not np.all(np.isfinite(dv_next)):
            raise NumericalDivergence("non-finite gradient", step=tape.step_offset + t)

    flat_di = d_current.reshape(-1, n)
    g_in = flat_di.T @ tape.inputs.reshape(-1, tape.inputs.shape[2]).astype(np.float64)
    d_max = params.max_delay
    z_full = np.concatenate([tape.prehistory(d_max).astype(np.float64),
                             tape.z.astype(np.float64)], axis=0)
    g_rec = np.zeros((n, n))
    for d, _ in blocks:
        shifted = z_full[d_max - d:d_max - d + t_len].reshape(-1, n)
        mask = params.delays == d
        g_rec += np.where(mask, flat_di.T @ shifted, 0.0)
    np.fill_diagonal(g_rec, 0.0)
    grads = {"w_in": g_in, "w_rec": g_rec,
             "w_out": np.zeros_like(params.w_out) if grad_w_out is None
             else np.asarray(grad_w_out, dtype=np.float64)}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalDivergence(f"non-finite gradient for {name}", step=tape.step_offset)
    return grads


def trace_forward(z, kappa, h0):
    """``h(t) = kappa h(t-1) + z(t)`` along axis 0 starting from ``h0``."""
    zi = kappa * np.asarray(h0, dtype=np.float64)[None]
    h, _ = lfilter([1.0], [1.0, -kappa], np.asarray(z, dtype=np.float64), axis=0, zi=zi)
    return h


def trace_backward(grad_h, kappa):
    """Adjoint of :func:`trace_forward` w.r.t. ``z``."""
    rev = lfilter([1.0], [1.0, -kappa], np.asarray(grad_h, dtype=np.float64)[::-1], axis=0)
    return rev[::-1]


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> dict:
    """Rescale all gradients jointly so their L2 norm is at most ``max_norm``."""
    if not max_norm > 0:
        raise ConfigurationError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}
