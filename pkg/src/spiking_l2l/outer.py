"""Outer loop: meta-training reservoir weights across a task family.

One outer iteration samples (or continues) a batch of tasks, runs the inner
loop on all of them in a single batched simulation, evaluates the loss
(squared error plus a firing-rate penalty), backpropagates through the
network and the readout plasticity, clips, and takes an Adam step.

Two regimes:

``readout-plastic``
    The readout adapts within each task by the windowed delta rule.
    Tasks run for ``n_chunks`` truncation windows; the network state and the
    adapted readout carry across windows, gradients do not.
``dynamics-only``
    All weights are fixed during a task. Each iteration is a batch of fresh
    episodes, backpropagated over their full length.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bptt
from .container import read_container, write_container
from .errors import ConfigurationError, FormatError, NumericalDivergence
from .neuron import NetworkState, ReservoirParams, init_params, random_delays, uniform_delays
from .optim import AdamState, adam_step
from .readout import ReadoutSpec, readout_backward, readout_forward
from .tasks import task_rng

log = logging.getLogger(__name__)

REGIMES = ("readout-plastic", "dynamics-only")
CHECKPOINT_VERSION = 1

# RNG stream ids under the master seed.
STREAM_INIT, STREAM_TRAIN, STREAM_EVAL = 0, 1, 2


@dataclass(frozen=True)
class OuterLoopConfig:
    regime: str = "dynamics-only"
    batch_size: int = 10
    truncation: float | None = None    # ms per window; None = whole episode
    loss_window: float | None = None   # ms at the end of each window; None = all of it
    n_chunks: int = 3                  # windows per task in readout-plastic regime
    reg_alpha: float = 30.0
    target_rate: float = 20.0          # Hz
    rate_unit: str = "Hz"              # unit of f_j inside the penalty: "Hz" or "kHz"
    error_reduction: str = "mean"      # "mean" per readout sample, or "sum" per task
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1000.0
    iterations: int = 5000
    checkpoint_every: int = 100

    def __post_init__(self):
        bad = []
        if self.regime not in REGIMES:
            bad.append("outer.regime")
        if self.batch_size < 1:
            bad.append("outer.batch_size")
        if self.truncation is not None and self.loss_window is not None \
                and self.loss_window > self.truncation:
            bad.append("outer.loss_window")
        if self.rate_unit not in ("Hz", "kHz"):
            bad.append("outer.rate_unit")
        if self.error_reduction not in ("mean", "sum"):
            bad.append("outer.error_reduction")
        if self.n_chunks < 1:
            bad.append("outer.n_chunks")
        if not self.grad_clip > 0:
            bad.append("outer.grad_clip")
        if self.iterations < 0:
            bad.append("outer.iterations")
        if bad:
            raise ConfigurationError(f"invalid outer-loop config: {', '.join(bad)}", bad)


@dataclass(frozen=True)
class EvalConfig:
    n_tasks: int = 200
    duration: float = 13000.0  # ms of inner-loop learning, continuous families
    batch: int = 50


# -- loss ---------------------------------------------------------------

@dataclass
class LossParts:
    total: float
    error: float
    reg: float
    mean_rate_hz: float


def loss_terms(y_hat, y, mask, z, cfg: OuterLoopConfig, dt=1.0):
    """Batched loss and its gradients w.r.t. predictions and spikes.

    ``y_hat``/``y`` are ``(K, B, n_out)``, ``mask`` ``(K,)`` selects the
    samples that count, ``z`` is ``(T, B, N)``. Every term is a mean over
    the batch, so splitting a batch and re-weighting by size is exact.
    """
    k_len, batch, n_out = y.shape
    m = np.asarray(mask, dtype=np.float64)[:, None, None]
    diff = (y_hat - y) * m
    if cfg.error_reduction == "sum":
        norm = 1.0
    else:
        norm = max(float(np.sum(mask)), 1.0) * n_out
    err_b = np.sum(diff ** 2, axis=(0, 2)) / norm
    g_y_hat = 2.0 * diff / (norm * batch)

    dur_ms = z.shape[0] * dt
    per_spike = (1000.0 if cfg.rate_unit == "Hz" else 1.0) / dur_ms
    target = cfg.target_rate * (1.0 if cfg.rate_unit == "Hz" else 1e-3)
    counts = np.sum(z, axis=0, dtype=np.float64)
    f = counts * per_spike
    reg_b = cfg.reg_alpha * np.sum((f - target) ** 2, axis=1)
    g_f = 2.0 * cfg.reg_alpha * (f - target) * per_spike / batch
    g_z = np.broadcast_to(g_f, z.shape)

    mean_rate_hz = float(np.mean(counts)) * 1000.0 / dur_ms
    err = float(np.mean(err_b))
    reg = float(np.mean(reg_b))
    return LossParts(err + reg, err, reg, mean_rate_hz), g_y_hat, g_z


def loss_mask(n_samples, sample_ms, loss_window):
    mask = np.ones(n_samples, dtype=bool)
    if loss_window is not None:
        keep = int(round(loss_window / sample_ms))
        mask[:max(n_samples - keep, 0)] = False
    return mask


def outer_loss(records, config: OuterLoopConfig, return_parts=False):
    """Loss of a batch of episode records: mean over records of the squared
    error in the loss window plus the firing-rate penalty."""
    parts = []
    for rec in records:
        k = len(rec.predictions)
        mask = loss_mask(k, rec.step_len * rec.dt, config.loss_window)
        p, _, _ = loss_terms(rec.predictions[:, None, :], rec.targets[:k, None, :], mask,
                             rec.spikes[:, None, :].astype(np.float64), config, rec.dt)
        parts.append(p)
    total = float(np.mean([p.total for p in parts]))
    if return_parts:
        return LossParts(total, float(np.mean([p.error for p in parts])),
                         float(np.mean([p.reg for p in parts])),
                         float(np.mean([p.mean_rate_hz for p in parts])))
    return total


# -- one batched forward/backward --------------------------------------------

@dataclass
class BatchResult:
    parts: LossParts
    grads: dict
    final_state: NetworkState
    final_w: np.ndarray
    y_hat: np.ndarray


def loss_and_grad(params: ReservoirParams, consts, spec: ReadoutSpec, cfg: OuterLoopConfig,
                  inputs, targets, mask, *, state=None, w0=None, smooth=False,
                  tape_dtype=np.float32, step_offset=0, need_grad=True) -> BatchResult:
    """Simulate a batch window and return loss, gradients and carried state.

    ``inputs`` ``(T, B, n_in)``, ``targets`` ``(K, B, n_out)``. If ``w0`` is
    given (per-task readout carried over from a previous window) it is a
    constant and ``w_out`` receives no gradient.
    """
    tape = bptt.record(params, consts, inputs, state, smooth=smooth, dtype=tape_dtype,
                       step_offset=step_offset)
    carried = w0 is not None
    w_init = w0 if carried else params.w_out
    y_hat, final_w, cache = readout_forward(spec, w_init, tape, consts, targets)
    parts, g_y_hat, g_z_reg = loss_terms(y_hat, targets, mask, tape.z, cfg, consts.dt)
    if not np.isfinite(parts.total):
        raise NumericalDivergence("non-finite loss", step=step_offset)
    grads = None
    if need_grad:
        g_z_out, g_w = readout_backward(spec, cache, tape, consts, targets, g_y_hat)
        g_w_out = np.zeros_like(params.w_out) if carried else g_w.sum(axis=0)
        grads = bptt.backward(tape, params, consts, g_z_out + g_z_reg, grad_w_out=g_w_out)
    return BatchResult(parts, grads, tape.final_state, final_w, y_hat)


# -- batch construction ---------------------------------------------------------

def readout_spec_for(run, family) -> ReadoutSpec:
    plastic = run.outer.regime == "readout-plastic"
    plasticity = dataclasses.replace(run.plasticity, enabled=plastic)
    if family.kind == "continuous":
        return ReadoutSpec(kind="trace", step_len=1, plasticity=plasticity)
    if plastic:
        raise ConfigurationError("readout-plastic regime needs a continuous task family",
                                 ["outer.regime", "family.name"])
    return ReadoutSpec(kind="rate", step_len=run.protocol.step_len(run.neuron.dt),
                       plasticity=plasticity)


def n_features_for(run, family) -> int:
    return family.n_inputs + run.network.n_neurons if family.kind == "continuous" \
        else run.network.n_neurons


def initial_params(run, family, seed=None) -> ReservoirParams:
    """Fresh untrained parameters; deterministic in ``seed`` (default run seed)."""
    seed = run.seed if seed is None else seed
    rng = task_rng(seed, STREAM_INIT)
    net = run.network
    steps = int(round(net.delay_ms / run.neuron.dt))
    if net.delay_mode == "uniform":
        delays = uniform_delays(net.n_neurons, steps)
    else:
        delays = random_delays(net.n_neurons, steps, rng)
    return init_params(net.n_neurons, family.n_inputs, 1, n_features_for(run, family), delays,
                       rng, w_in_std=net.w_in_std, w_rec_std=net.w_rec_std)


def stepped_batch(family, tasks, rng, protocol, dt):
    """Stack delayed-target episodes: ``inputs (T, B, n_in)``, ``targets (K, B, 1)``."""
    step_len = protocol.step_len(dt)
    rasters, targets = [], []
    for task in tasks:
        _, y, raster = family.episode_data(task, protocol.steps_per_episode, rng, step_len, dt)
        rasters.append(raster)
        targets.append(y)
    inputs = np.stack(rasters, axis=1).astype(np.float32)
    return inputs, np.stack(targets, axis=1)[:, :, None]


def continuous_streams(family, tasks, n_steps):
    xs, ys = zip(*(family.stream(t, n_steps) for t in tasks))
    return np.stack(xs, axis=1), np.stack(ys, axis=1)


# -- training -------------------------------------------------------------------

@dataclass
class TrainerState:
    params: ReservoirParams
    adam: AdamState
    iteration: int = 0
    carry_state: NetworkState | None = None
    carry_w: np.ndarray | None = None


def _batch_job(args):
    params, consts, spec, cfg, inputs, targets, mask, state, w0, offset = args
    return loss_and_grad(params, consts, spec, cfg, inputs, targets, mask, state=state, w0=w0,
                         step_offset=offset)


def _split(n, parts):
    bounds = np.linspace(0, n, parts + 1).round().astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def batched_loss_and_grad(params, consts, spec, cfg, inputs, targets, mask, *, state=None,
                          w0=None, step_offset=0, pool=None, workers=1) -> BatchResult:
    """:func:`loss_and_grad` with the batch split over ``workers`` processes.

    Partial results are combined in batch order, weighted by slice size.
    """
    batch = inputs.shape[1]
    if pool is None or workers <= 1 or batch < 2:
        return loss_and_grad(params, consts, spec, cfg, inputs, targets, mask, state=state,
                             w0=w0, step_offset=step_offset)
    slices = _split(batch, workers)
    jobs = [(params, consts, spec, cfg, inputs[:, s], targets[:, s], mask,
             None if state is None else state.take(s),
             None if w0 is None else w0[s], step_offset) for s in slices]
    results = list(pool.map(_batch_job, jobs))
    weights = [(s.stop - s.start) / batch for s in slices]
    grads = {k: sum(w * r.grads[k] for w, r in zip(weights, results)) for k in results[0].grads}
    parts = LossParts(*(sum(w * getattr(r.parts, f) for w, r in zip(weights, results))
                        for f in ("total", "error", "reg", "mean_rate_hz")))
    final_state = NetworkState(
        v=np.concatenate([r.final_state.v for r in results]),
        refrac=np.concatenate([r.final_state.refrac for r in results]),
        buffer=np.concatenate([r.final_state.buffer for r in results], axis=1),
        h=np.concatenate([r.final_state.h for r in results]))
    final_w = np.concatenate([r.final_w for r in results])
    y_hat = np.concatenate([r.y_hat for r in results], axis=1)
    return BatchResult(parts, grads, final_state, final_w, y_hat)


class MetaTrainer:
    """Holds the run configuration and performs outer-loop iterations."""

    def __init__(self, run, family, init=None, *, workers=1):
        self.run = run
        self.family = family
        self.spec = readout_spec_for(run, family)
        self.consts = run.neuron
        self.cfg = run.outer
        self.workers = workers
        if family.kind == "continuous" and self.cfg.truncation is None:
            raise ConfigurationError("continuous task families need outer.truncation",
                                     ["outer.truncation"])
        params = init if init is not None else initial_params(run, family)
        adam = AdamState.for_params(params.trainable(), lr=self.cfg.lr, beta1=self.cfg.beta1,
                                    beta2=self.cfg.beta2, eps=self.cfg.eps)
        self.state = TrainerState(params=params, adam=adam)
        self._stream_cache = (None, None)
        self._pool = None

    # batches ------------------------------------------------------------
    def _continuous_window(self, it):
        cfg, dt = self.cfg, self.consts.dt
        chunk = int(round(cfg.truncation / dt))
        run_idx, c = divmod(it, cfg.n_chunks)
        key, cached = self._stream_cache
        if key != run_idx:
            rng = task_rng(self.run.seed, STREAM_TRAIN, run_idx)
            tasks = [self.family.sample(rng) for _ in range(cfg.batch_size)]
            cached = continuous_streams(self.family, tasks, chunk * cfg.n_chunks)
            self._stream_cache = (run_idx, cached)
        xs, ys = cached
        sl = slice(c * chunk, (c + 1) * chunk)
        mask = loss_mask(chunk, dt, cfg.loss_window)
        return xs[sl], ys[sl], mask, c

    def batch_for(self, it):
        """``(inputs, targets, mask, chunk_index)`` of iteration ``it``."""
        if self.family.kind == "continuous":
            return self._continuous_window(it)
        rng = task_rng(self.run.seed, STREAM_TRAIN, it)
        tasks = [self.family.sample(rng) for _ in range(self.cfg.batch_size)]
        inputs, targets = stepped_batch(self.family, tasks, rng, self.run.protocol, self.consts.dt)
        return inputs, targets, np.ones(targets.shape[0], dtype=bool), 0

    # iteration ------------------------------------------------------------
    def iterate(self):
        """Run one outer iteration; returns the metrics record."""
        st = self.state
        t0 = time.perf_counter()
        inputs, targets, mask, chunk = self.batch_for(st.iteration)
        carry = chunk > 0 and st.carry_state is not None
        state = st.carry_state if carry else None
        w0 = st.carry_w if carry else None
        res = batched_loss_and_grad(st.params, self.consts, self.spec, self.cfg, inputs, targets,
                                    mask, state=state, w0=w0,
                                    step_offset=chunk * inputs.shape[0],
                                    pool=self._pool, workers=self.workers)
        grads = bptt.clip_by_global_norm(res.grads, self.cfg.grad_clip)
        adam, new = adam_step(st.adam, st.params.trainable(), grads)
        w_rec = new["w_rec"]
        np.fill_diagonal(w_rec, 0.0)
        params = st.params.replace(w_in=new["w_in"], w_rec=w_rec, w_out=new["w_out"])
        keep_carry = self.family.kind == "continuous" and chunk + 1 < self.cfg.n_chunks
        self.state = TrainerState(params=params, adam=adam, iteration=st.iteration + 1,
                                  carry_state=res.final_state if keep_carry else None,
                                  carry_w=res.final_w if keep_carry else None)
        return {"iter": st.iteration, "loss": res.parts.total, "reg_loss": res.parts.reg,
                "mean_rate_hz": res.parts.mean_rate_hz,
                "wall_ms": (time.perf_counter() - t0) * 1000.0}

    def __enter__(self):
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # checkpoints ----------------------------------------------------------
    def save_checkpoint(self, path, config_hash="", config=None):
        st = self.state
        arrays = {f"param/{k}": v for k, v in st.params.trainable().items()}
        arrays["param/delays"] = st.params.delays
        for k in st.params.TRAINABLE:
            arrays[f"adam_m/{k}"] = st.adam.m[k]
            arrays[f"adam_v/{k}"] = st.adam.v[k]
            if st.adam.amsgrad:
                arrays[f"adam_vmax/{k}"] = st.adam.v_max[k]
        if st.carry_state is not None:
            arrays["carry/v"] = st.carry_state.v
            arrays["carry/refrac"] = st.carry_state.refrac
            arrays["carry/buffer"] = st.carry_state.buffer
            arrays["carry/h"] = st.carry_state.h
            arrays["carry/w"] = st.carry_w
        meta = {"version": CHECKPOINT_VERSION, "iteration": st.iteration,
                "adam_step": st.adam.step, "adam": st.adam.hyper(),
                "config_hash": config_hash, "has_carry": st.carry_state is not None,
                "config": config}
        write_container(path, "checkpoint", meta, arrays)

    def load_checkpoint(self, path):
        meta, arrays = load_checkpoint_arrays(path)
        self.state = trainer_state_from(meta, arrays)
        return meta


def load_checkpoint_arrays(path):
    _, meta, arrays = read_container(path, expect_kind="checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


def params_from_arrays(arrays) -> ReservoirParams:
    return ReservoirParams(w_in=arrays["param/w_in"], w_rec=arrays["param/w_rec"],
                           w_out=arrays["param/w_out"], delays=arrays["param/delays"])


def load_params(path) -> ReservoirParams:
    _, arrays = load_checkpoint_arrays(path)
    return params_from_arrays(arrays)


def trainer_state_from(meta, arrays) -> TrainerState:
    params = params_from_arrays(arrays)
    adam = AdamState(**meta["adam"], step=meta["adam_step"])
    adam.m = {k: arrays[f"adam_m/{k}"] for k in params.TRAINABLE}
    adam.v = {k: arrays[f"adam_v/{k}"] for k in params.TRAINABLE}
    if adam.amsgrad:
        adam.v_max = {k: arrays[f"adam_vmax/{k}"] for k in params.TRAINABLE}
    carry_state = carry_w = None
    if meta.get("has_carry"):
        carry_state = NetworkState(arrays["carry/v"], arrays["carry/refrac"],
                                   arrays["carry/buffer"], arrays["carry/h"])
        carry_w = arrays["carry/w"]
    return TrainerState(params, adam, meta["iteration"], carry_state, carry_w)


def meta_train(run, family, init_params=None, *, iterations=None, resume=None,
               checkpoint_dir=None, on_metrics=None, workers=1):
    """Run the outer loop; returns ``(trained params, list of metric records)``.

    ``resume`` is a checkpoint path; training continues at its iteration.
    With ``checkpoint_dir`` set, checkpoints are written every
    ``outer.checkpoint_every`` iterations and at the end. On numerical
    divergence the last good state is checkpointed before re-raising.
    """
    total = run.outer.iterations if iterations is None else iterations
    config_hash, config = run.hash(), run.to_dict()
    trainer = MetaTrainer(run, family, init_params, workers=workers)
    if resume is not None:
        trainer.load_checkpoint(resume)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    metrics = []

    def save(state, it):
        if ckpt_dir is not None:
            trainer.state = state
            trainer.save_checkpoint(ckpt_dir / f"ckpt_{it:06d}.bin", config_hash, config)

    with trainer:
        while trainer.state.iteration < total:
            good = trainer.state
            try:
                rec = trainer.iterate()
            except NumericalDivergence:
                save(good, good.iteration)
                raise
            metrics.append(rec)
            it = trainer.state.iteration
            try:
                if on_metrics is not None:
                    on_metrics(rec)
                if ckpt_dir is not None and (it % run.outer.checkpoint_every == 0
                                             or it == total):
                    save(trainer.state, it)
            except OSError:
                # Best effort: the disk may be the problem.
                try:
                    save(trainer.state, it)
                except OSError:
                    pass
                raise
            if it % 50 == 0:
                log.info("iter %d loss %.5g reg %.5g rate %.1f Hz", rec["iter"], rec["loss"],
                         rec["reg_loss"], rec["mean_rate_hz"])
    return trainer.state.params, metrics


# -- evaluation -------------------------------------------------------------------

def evaluate(params, run, family, n_tasks=None, *, seed=None, regime=None):
    """Inner-loop performance on held-out tasks; the weights stay fixed.

    Continuous families report per-window MSE (window = readout accumulation
    window) over ``evaluation.duration``; stepped families report per-step
    squared error over an episode. Task samples depend only on ``seed``
    (default: the run seed), so different parameter sets see identical
    inputs.
    """
    n_tasks = run.evaluation.n_tasks if n_tasks is None else n_tasks
    seed = run.seed if seed is None else seed
    if regime is not None and regime != run.outer.regime:
        run = dataclasses.replace(run, outer=dataclasses.replace(run.outer, regime=regime))
    spec = readout_spec_for(run, family)
    if n_tasks == 0:
        return {"n_tasks": 0, "mean_mse": None, "std_mse": None, "curve_mean": [],
                "curve_std": [], "task_mse": [], "mean_rate_hz": None}
    per_task_curves, rates = [], []
    batch = max(1, run.evaluation.batch)
    for start in range(0, n_tasks, batch):
        idx = range(start, min(start + batch, n_tasks))
        tasks, rngs = [], []
        for i in idx:
            rng = task_rng(seed, STREAM_EVAL, i)
            tasks.append(family.sample(rng))
            rngs.append(rng)
        if family.kind == "continuous":
            curves, rate = _eval_continuous(params, run, family, spec, tasks)
        else:
            curves, rate = _eval_stepped(params, run, family, spec, tasks, rngs)
        per_task_curves.append(curves)
        rates.append(rate * len(idx))
    curves = np.concatenate(per_task_curves, axis=0)  # (n_tasks, n_points)
    task_mse = curves.mean(axis=1)
    return {"n_tasks": n_tasks, "mean_mse": float(task_mse.mean()),
            "std_mse": float(task_mse.std()), "curve_mean": curves.mean(axis=0).tolist(),
            "curve_std": curves.std(axis=0).tolist(), "task_mse": task_mse.tolist(),
            "mean_rate_hz": float(np.sum(rates) / n_tasks)}


def _eval_stepped(params, run, family, spec, tasks, rngs):
    step_len = run.protocol.step_len(run.neuron.dt)
    rasters, targets = [], []
    for task, rng in zip(tasks, rngs):
        _, y, raster = family.episode_data(task, run.protocol.steps_per_episode, rng, step_len,
                                           run.neuron.dt)
        rasters.append(raster)
        targets.append(y)
    inputs = np.stack(rasters, axis=1).astype(np.float32)
    y = np.stack(targets, axis=1)[:, :, None]
    tape = bptt.record(params, run.neuron, inputs)
    y_hat, _, _ = readout_forward(spec, params.w_out, tape, run.neuron, y)
    sq = ((y_hat - y) ** 2).mean(axis=2)  # (K, B)
    rate = float(tape.z.mean()) * 1000.0 / run.neuron.dt
    return sq.T, rate


def _eval_continuous(params, run, family, spec, tasks):
    dt = run.neuron.dt
    window = spec.plasticity.window_steps(dt)
    n_steps = int(round(run.evaluation.duration / dt))
    xs, ys = continuous_streams(family, tasks, n_steps)
    state, w = None, None
    curves, spikes, steps = [], 0.0, 0
    for start in range(0, n_steps, window):
        sl = slice(start, min(start + window, n_steps))
        tape = bptt.record(params, run.neuron, xs[sl], state, step_offset=start)
        w_init = params.w_out if w is None else w
        y_hat, w, _ = readout_forward(spec, w_init, tape, run.neuron, ys[sl])
        curves.append(((y_hat - ys[sl]) ** 2).mean(axis=(0, 2)))
        state = tape.final_state
        spikes += float(tape.z.sum())
        steps += tape.z.shape[0]
    rate = spikes / (steps * len(tasks) * params.n_neurons) * 1000.0 / dt
    return np.stack(curves, axis=1), rate
