"""Inner loop: linear readout, readout plasticity and stepped episodes.

Two readout feature kinds are supported:

* ``"trace"``: at every simulation step the readout sees ``[u(t), h(t)]``,
  the external input concatenated with the exponentially filtered spikes.
  With plasticity enabled the weights follow the accumulated delta rule
  ``dW = eta * sum_window (y - y_hat) phi^T``, applied once per window.
* ``"rate"``: one readout sample per episode step, the spike count of each
  neuron in that step divided by the step duration in ms.

The batched forward/backward helpers here are time-major ``(T, B, ...)``
and make the plasticity itself differentiable, so the outer loop can take
gradients w.r.t. the readout initialization through the inner-loop updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bptt import trace_backward, trace_forward
from .errors import ConfigurationError
from .neuron import NetworkState, advance
from .records import EpisodeRecord


@dataclass(frozen=True)
class ReadoutPlasticityConfig:
    eta: float = 1e-4
    accumulation_window: float = 1000.0  # ms
    enabled: bool = True

    def __post_init__(self):
        if self.enabled and not self.eta > 0:
            raise ConfigurationError("eta must be positive when plasticity is enabled", ["eta"])
        if not self.accumulation_window > 0:
            raise ConfigurationError("accumulation_window must be positive",
                                     ["accumulation_window"])

    def window_steps(self, dt: float) -> int:
        steps = self.accumulation_window / dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigurationError("accumulation_window must be a multiple of dt",
                                     ["accumulation_window"])
        return int(round(steps))


@dataclass(frozen=True)
class EpisodeProtocol:
    step_duration: float = 20.0  # ms
    steps_per_episode: int = 400
    delayed_target: bool = True
    probe_mode: bool = False

    def __post_init__(self):
        if self.steps_per_episode < 1:
            raise ConfigurationError("steps_per_episode must be >= 1", ["steps_per_episode"])
        if not self.step_duration > 0:
            raise ConfigurationError("step_duration must be positive", ["step_duration"])

    def step_len(self, dt: float) -> int:
        return int(round(self.step_duration / dt))


def readout_predict(w_out, x, h):
    """``W_out [x, h]^T``; pass ``x=None`` when the readout sees only ``h``."""
    w_out = np.asarray(w_out, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    feats = h if x is None else np.concatenate([np.atleast_1d(np.asarray(x, float)), h], axis=-1)
    if feats.shape[-1] != w_out.shape[-1]:
        raise ConfigurationError(
            f"readout expects {w_out.shape[-1]} features, got {feats.shape[-1]}")
    return feats @ w_out.T


def accumulate_and_apply(w_out, targets, predictions, features, config: ReadoutPlasticityConfig):
    """Apply one accumulated delta-rule update over a full window.

    ``targets``/``predictions`` are ``(T, n_out)``, ``features`` ``(T, F)``.
    """
    w_out = np.asarray(w_out, dtype=np.float64)
    if not config.enabled:
        return w_out.copy()
    err = np.asarray(targets, float).reshape(len(features), -1) - \
        np.asarray(predictions, float).reshape(len(features), -1)
    return w_out + config.eta * err.T @ np.asarray(features, dtype=np.float64)


# -- batched, differentiable readout ---------------------------------------

def plastic_forward(w0, phi, y, eta, window, enabled=True):
    """Predictions with windowed plasticity; returns ``(y_hat, snapshots)``.

    ``w0`` is ``(n_out, F)`` (shared) or ``(B, n_out, F)``; ``phi`` is
    ``(T, B, F)``. ``snapshots[k]`` is the weight used during window ``k``;
    a trailing entry exists only if the last window was complete.
    """
    t_len, batch, _ = phi.shape
    w = np.broadcast_to(w0, (batch,) + np.shape(w0)[-2:]).astype(np.float64)
    y_hat = np.empty((t_len, batch, w.shape[1]))
    snapshots = [w]
    for start in range(0, t_len, window):
        stop = min(start + window, t_len)
        y_hat[start:stop] = np.einsum("tbf,bof->tbo", phi[start:stop], w)
        if enabled and stop - start == window:
            err = y[start:stop] - y_hat[start:stop]
            w = w + eta * np.einsum("tbo,tbf->bof", err, phi[start:stop])
            snapshots.append(w)
    return y_hat, snapshots


def plastic_backward(snapshots, phi, y, y_hat, grad_y_hat, eta, window):
    """Adjoint of :func:`plastic_forward`; returns ``(grad_phi, grad_w0)`` with
    ``grad_w0`` per batch entry ``(B, n_out, F)``."""
    t_len = phi.shape[0]
    grad_phi = np.zeros(phi.shape)
    starts = list(range(0, t_len, window))
    g_w = np.zeros(snapshots[0].shape)
    for k in range(len(starts) - 1, -1, -1):
        start = starts[k]
        stop = min(start + window, t_len)
        w_k = snapshots[k]
        sl = slice(start, stop)
        g_dir = grad_y_hat[sl]
        if k + 1 < len(snapshots):
            g_next = g_w
            g_yh = g_dir - eta * np.einsum("bof,tbf->tbo", g_next, phi[sl])
            err = y[sl] - y_hat[sl]
            grad_phi[sl] = (np.einsum("tbo,bof->tbf", g_yh, w_k)
                            + eta * np.einsum("tbo,bof->tbf", err, g_next))
        else:
            g_next = np.zeros_like(g_w)
            g_yh = g_dir
            grad_phi[sl] = np.einsum("tbo,bof->tbf", g_yh, w_k)
        g_w = g_next + np.einsum("tbo,tbf->bof", g_yh, phi[sl])
    return grad_phi, g_w


def rate_features(z, step_len, dt=1.0):
    """Spike count per step divided by the step duration in ms: ``(K, B, N)``."""
    t_len = z.shape[0]
    k = t_len // step_len
    if k * step_len != t_len:
        raise ConfigurationError(f"{t_len} steps is not a multiple of step length {step_len}")
    return z.reshape((k, step_len) + z.shape[1:]).sum(axis=1) / (step_len * dt)


def rate_features_backward(grad_feats, step_len, dt=1.0):
    return np.repeat(grad_feats / (step_len * dt), step_len, axis=0)


@dataclass(frozen=True)
class ReadoutSpec:
    """Which features the readout sees and whether it adapts within a task."""

    kind: str = "trace"  # "trace" | "rate"
    step_len: int = 1
    plasticity: ReadoutPlasticityConfig = field(
        default_factory=lambda: ReadoutPlasticityConfig(enabled=False))

    def __post_init__(self):
        if self.kind not in ("trace", "rate"):
            raise ConfigurationError(f"unknown readout kind {self.kind!r}", ["readout.kind"])
        if self.kind == "rate" and self.plasticity.enabled:
            raise ConfigurationError("rate readout does not support plasticity",
                                     ["readout.plasticity.enabled"])

    def n_features(self, n_inputs, n_neurons) -> int:
        return n_inputs + n_neurons if self.kind == "trace" else n_neurons


@dataclass
class ReadoutCache:
    phi: np.ndarray
    y_hat: np.ndarray
    snapshots: list


def readout_forward(spec: ReadoutSpec, w0, tape, consts, targets):
    """Return ``(y_hat, final_w, cache)``. ``targets`` are at readout resolution."""
    if spec.kind == "trace":
        h = trace_forward(tape.z, consts.kappa, tape.initial_state.h)
        phi = np.concatenate([tape.inputs.astype(np.float64), h], axis=2)
        window = spec.plasticity.window_steps(consts.dt)
        y_hat, snaps = plastic_forward(w0, phi, targets, spec.plasticity.eta, window,
                                       spec.plasticity.enabled)
    else:
        phi = rate_features(tape.z.astype(np.float64), spec.step_len, consts.dt)
        w = np.broadcast_to(w0, (phi.shape[1],) + np.shape(w0)[-2:]).astype(np.float64)
        y_hat = np.einsum("tbf,bof->tbo", phi, w)
        snaps = [w]
    return y_hat, snaps[-1], ReadoutCache(phi, y_hat, snaps)


def readout_backward(spec: ReadoutSpec, cache: ReadoutCache, tape, consts, targets, grad_y_hat):
    """Return ``(grad_z, grad_w0_per_batch)``."""
    if spec.kind == "trace":
        window = spec.plasticity.window_steps(consts.dt)
        if spec.plasticity.enabled:
            g_phi, g_w = plastic_backward(cache.snapshots, cache.phi, targets, cache.y_hat,
                                          grad_y_hat, spec.plasticity.eta, window)
        else:
            g_phi = np.einsum("tbo,bof->tbf", grad_y_hat, cache.snapshots[0])
            g_w = np.einsum("tbo,tbf->bof", grad_y_hat, cache.phi)
        n_in = tape.inputs.shape[2]
        grad_z = trace_backward(g_phi[:, :, n_in:], consts.kappa)
    else:
        g_phi = np.einsum("tbo,bof->tbf", grad_y_hat, cache.snapshots[0])
        g_w = np.einsum("tbo,tbf->bof", grad_y_hat, cache.phi)
        grad_z = rate_features_backward(g_phi, spec.step_len, consts.dt)
    return grad_z, g_w


# -- per-step hook for run_episode -----------------------------------------

class PlasticReadoutHook:
    """Trace readout with windowed plasticity, driven step by step.

    Pass to :func:`spiking_l2l.neuron.run_episode`; predictions accumulate
    in ``self.predictions``.
    """

    def __init__(self, w_out, targets, config: ReadoutPlasticityConfig, dt=1.0):
        self.w = np.array(w_out, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64).reshape(len(targets), -1)
        self.config = config
        self.window = config.window_steps(dt)
        self.predictions = []
        self.snapshots = [self.w.copy()]
        self._buf = []

    def __call__(self, t, u_t, state, z):
        feats = np.concatenate([np.atleast_1d(u_t), state.h])
        y_hat = readout_predict(self.w, u_t, state.h)
        self.predictions.append(y_hat)
        self._buf.append((self.targets[t], y_hat, feats))
        if len(self._buf) == self.window:
            ys, yh, fs = (np.array(c) for c in zip(*self._buf))
            self.w = accumulate_and_apply(self.w, ys, yh, fs, self.config)
            if self.config.enabled:
                self.snapshots.append(self.w.copy())
            self._buf = []


# -- stepped episodes (delayed-target protocol) ------------------------------

def _step_prediction(w_out, z_step, step_duration):
    return np.asarray(w_out) @ (np.sum(z_step, axis=0) / step_duration)


def run_stepped_episode(params, consts, family, task, protocol: EpisodeProtocol, rng, *,
                        data=None, probe_steps=(), probe_grid=None, probe_seed=0):
    """One inner-loop episode with fixed weights; learning lives in the dynamics.

    Per step: encode the current query and the previous step's target,
    simulate ``step_duration`` ms, predict from the step's spike counts.
    Returns ``(record, probes)`` where ``probes`` maps each step in
    ``probe_steps`` to the internal-model predictions over ``probe_grid``,
    taken from the state at the start of that step.
    """
    step_len = protocol.step_len(consts.dt)
    k_steps = protocol.steps_per_episode
    if data is None:
        data = family.episode_data(task, k_steps, rng, step_len, consts.dt)
    xs, targets, raster = data
    if not protocol.delayed_target:
        raise ConfigurationError("stepped episodes require delayed_target=True")
    state = NetworkState.zeros(params)
    blocks = params.delay_blocks()
    spikes = np.zeros((k_steps * step_len, params.n_neurons), dtype=bool)
    traces = np.zeros(spikes.shape, dtype=np.float32)
    preds = np.zeros((k_steps, params.n_outputs))
    probes = {}
    probe_steps = set(probe_steps)
    for k in range(k_steps):
        if k in probe_steps:
            prev = targets[k - 1] if k > 0 else 0.0
            probes[k] = probe_internal_model(params, consts, state, probe_grid, family,
                                             prev, protocol, seed=probe_seed)
        z_step = np.zeros((step_len, params.n_neurons))
        for s in range(step_len):
            t = k * step_len + s
            state, z, _, _ = advance(state, params, consts, raster[t], blocks=blocks, t=t)
            z_step[s] = z
            spikes[t] = z > 0
            traces[t] = state.h
        preds[k] = _step_prediction(params.w_out, z_step, protocol.step_duration)
    losses = (preds[:, 0] - targets) ** 2
    record = EpisodeRecord(inputs=raster.astype(np.float32), spikes=spikes, traces=traces,
                           dt=consts.dt, step_len=step_len, predictions=preds,
                           targets=targets[:, None], losses=losses)
    return record, probes


def run_tn_episode(params, consts, tn, protocol: EpisodeProtocol, rng, family=None, **kw):
    """Stepped episode on a target-network task."""
    from .families import TargetNetworkFamily

    family = family or TargetNetworkFamily()
    return run_stepped_episode(params, consts, family, tn, protocol, rng, **kw)


def probe_internal_model(params, consts, state_snapshot: NetworkState, grid, family,
                         prev_target, protocol: EpisodeProtocol, seed=0):
    """Predictions for every grid query from copies of ``state_snapshot``.

    The snapshot is never modified. Input spikes are drawn from a generator
    seeded with ``seed`` so repeated probes are identical.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    if grid.shape[0] == 1 and grid.shape[1] != family.n_query:
        grid = grid.T
    n_grid = grid.shape[0]
    step_len = protocol.step_len(consts.dt)
    rng = np.random.default_rng(seed)
    prev = np.full(n_grid, float(prev_target))
    raster = family.encode(grid[:, None, :], prev[:, None], rng, step_len, consts.dt)
    # raster: (n_grid, step_len, n_in) -> time-major batch
    u = np.transpose(raster, (1, 0, 2)).astype(np.float64)
    state = NetworkState(
        v=np.broadcast_to(state_snapshot.v, (n_grid,) + state_snapshot.v.shape).copy(),
        refrac=np.broadcast_to(state_snapshot.refrac, (n_grid,) + state_snapshot.refrac.shape).copy(),
        buffer=np.broadcast_to(state_snapshot.buffer[:, None],
                               (state_snapshot.buffer.shape[0], n_grid)
                               + state_snapshot.buffer.shape[1:]).copy(),
        h=np.broadcast_to(state_snapshot.h, (n_grid,) + state_snapshot.h.shape).copy(),
    )
    blocks = params.delay_blocks()
    counts = np.zeros((n_grid, params.n_neurons))
    for s in range(step_len):
        state, z, _, _ = advance(state, params, consts, u[s], blocks=blocks)
        counts += z
    return (counts / protocol.step_duration) @ params.w_out.T
