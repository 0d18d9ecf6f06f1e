"""Adam with optional AMSGrad and decoupled weight decay."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    amsgrad: bool = False
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    v_max: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, **hyper) -> "AdamState":
        state = cls(**hyper)
        state.m = {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()}
        state.v = {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()}
        if state.amsgrad:
            state.v_max = {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()}
        return state

    def hyper(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if f.name not in ("m", "v", "v_max", "step")}


def adam_step(state: AdamState, params: dict, grads: dict):
    """One bias-corrected Adam update; returns ``(new_state, new_params)``.

    Inputs are not modified. With ``amsgrad`` the running maximum of the
    second moment replaces the second moment in the denominator.
    """
    if set(params) != set(grads):
        raise ConfigurationError(f"parameter keys {sorted(params)} != gradient keys {sorted(grads)}")
    if not state.m:
        state = AdamState.for_params(params, **state.hyper())
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_vmax, new_params = {}, {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p) or state.m[k].shape != g.shape:
            raise ConfigurationError(f"shape mismatch for {k}: param {np.shape(p)}, grad {g.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        denom_v = v
        if state.amsgrad:
            new_vmax[k] = np.maximum(state.v_max[k], v)
            denom_v = new_vmax[k]
        m_hat = m / (1.0 - b1 ** t)
        v_hat = denom_v / (1.0 - b2 ** t)
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p_new = np.asarray(p, dtype=np.float64) - update
        if state.weight_decay > 0.0:
            p_new = p_new - state.lr * state.weight_decay * np.asarray(p, dtype=np.float64)
        new_m[k], new_v[k], new_params[k] = m, v, p_new
    new_state = dataclasses.replace(state, step=t, m=new_m, v=new_v,
                                    v_max=new_vmax if state.amsgrad else {})
    return new_state, new_params
