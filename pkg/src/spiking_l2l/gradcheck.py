"""Finite-difference validation of the BPTT gradients.

The reference is a central difference of the loss computed with the smooth
surrogate spike in the forward pass. Coordinates whose perturbation changes
any spike of the hard (thresholded) forward pass are excluded, since there
the smooth and hard systems take different refractory paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bptt
from .neuron import NeuronConstants, ReservoirParams, random_delays
from .outer import OuterLoopConfig, loss_and_grad
from .readout import ReadoutPlasticityConfig, ReadoutSpec


@dataclass
class GradCheckResult:
    rel_error: np.ndarray   # per checked coordinate
    n_excluded: int
    n_total: int

    @property
    def n_checked(self) -> int:
        return len(self.rel_error)

    def pass_fraction(self, tol=1e-4) -> float:
        return float(np.mean(self.rel_error <= tol)) if self.n_checked else 1.0


@dataclass
class Instance:
    params: ReservoirParams
    consts: NeuronConstants
    spec: ReadoutSpec
    cfg: OuterLoopConfig
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray


def random_instance(rng, n_neurons=5, n_steps=20, n_inputs=2, batch=2, max_delay=2,
                    plastic=True, window=5) -> Instance:
    """Small network with inputs scaled so potentials cross the surrogate's support."""
    consts = NeuronConstants(v_th=0.02, gamma=0.4, refractory=2.0, tau_m=5.0,
                             tau_readout=5.0, rho_override=None)
    delays = random_delays(n_neurons, max_delay, rng)
    w_in = rng.normal(0.0, 0.08, (n_neurons, n_inputs))
    w_rec = rng.normal(0.0, 0.03, (n_neurons, n_neurons))
    np.fill_diagonal(w_rec, 0.0)
    n_feat = n_inputs + n_neurons
    w_out = rng.normal(0.0, 0.3, (1, n_feat))
    params = ReservoirParams(w_in=w_in, w_rec=w_rec, w_out=w_out, delays=delays)
    spec = ReadoutSpec(kind="trace", step_len=1, plasticity=ReadoutPlasticityConfig(
        eta=0.05, accumulation_window=float(window), enabled=plastic))
    cfg = OuterLoopConfig(regime="readout-plastic" if plastic else "dynamics-only",
                          reg_alpha=0.5, target_rate=20.0, rate_unit="kHz",
                          error_reduction="mean")
    inputs = rng.uniform(0.0, 1.0, (n_steps, batch, n_inputs))
    targets = rng.normal(0.0, 1.0, (n_steps, batch, 1))
    mask = np.ones(n_steps, dtype=bool)
    mask[: n_steps // 4] = False
    return Instance(params, consts, spec, cfg, inputs, targets, mask)


def _loss(inst: Instance, params, smooth=True):
    return loss_and_grad(params, inst.consts, inst.spec, inst.cfg, inst.inputs, inst.targets,
                         inst.mask, smooth=smooth, tape_dtype=np.float64,
                         need_grad=False).parts.total


def _hard_spikes(inst: Instance, params):
    return bptt.record(params, inst.consts, inst.inputs, dtype=np.float64).z


def analytic_grads(inst: Instance):
    res = loss_and_grad(inst.params, inst.consts, inst.spec, inst.cfg, inst.inputs, inst.targets,
                        inst.mask, smooth=True, tape_dtype=np.float64)
    return res.grads


def check_gradients(inst: Instance, eps=1e-5, rel_floor=1e-7) -> GradCheckResult:
    """Compare analytic gradients with central differences on every weight.

    The relative error is ``|g - fd| / max(|g|, |fd|, rel_floor * scale)``
    where ``scale`` is the largest analytic gradient magnitude, so
    coordinates with a negligible gradient are judged on an absolute basis.
    """
    grads = analytic_grads(inst)
    scale = max(float(np.max(np.abs(g))) for g in grads.values()) or 1.0
    base_z = _hard_spikes(inst, inst.params)
    errs, excluded, total = [], 0, 0
    for name in inst.params.TRAINABLE:
        w = getattr(inst.params, name)
        g = grads[name]
        for idx in np.ndindex(w.shape):
            if name == "w_rec" and idx[0] == idx[1]:
                continue
            total += 1
            losses = []
            flipped = False
            for sign in (1.0, -1.0):
                w2 = np.array(w)
                w2[idx] += sign * eps
                p2 = inst.params.replace(**{name: w2})
                if name != "w_out" and not np.array_equal(_hard_spikes(inst, p2), base_z):
                    flipped = True
                    break
                losses.append(_loss(inst, p2))
            if flipped:
                excluded += 1
                continue
            fd = (losses[0] - losses[1]) / (2.0 * eps)
            denom = max(abs(g[idx]), abs(fd), rel_floor * scale)
            errs.append(abs(g[idx] - fd) / denom)
    return GradCheckResult(np.array(errs), excluded, total)
