"""Comparison systems: ridge readout, untrained reservoir, direct backprop."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, NumericalDivergence
from .optim import AdamState, adam_step
from .tasks import logistic, task_rng

STREAM_EVAL = 2


# -- ridge regression on mean spiking traces ---------------------------------

@dataclass(frozen=True)
class RidgeConfig:
    l2_factor: float = 100.0
    train_steps: int = 320
    fit_intercept: bool = False
    standardize: bool = False

    def __post_init__(self):
        if self.l2_factor < 0:
            raise ConfigurationError("l2_factor must be >= 0", ["ridge.l2_factor"])
        if self.train_steps < 1:
            raise ConfigurationError("train_steps must be >= 1", ["ridge.train_steps"])


def mean_step_traces(record) -> np.ndarray:
    """Per-step average of the exponential spike traces, ``(K, N)``."""
    k = record.n_steps // record.step_len
    tr = np.asarray(record.traces[:k * record.step_len], dtype=np.float64)
    return tr.reshape(k, record.step_len, -1).mean(axis=1)


def ridge_solve(x, y, l2):
    """Minimizer of ``|x w - y|^2 + l2 |w|^2`` via the normal equations."""
    a = x.T @ x + l2 * np.eye(x.shape[1])
    b = x.T @ y
    if l2 > 0:
        return scipy.linalg.solve(a, b, assume_a="pos")
    w, *_ = np.linalg.lstsq(x, y, rcond=None)
    return w


def ridge_fit_eval(record, config: RidgeConfig = RidgeConfig()):
    """Fit on the first ``train_steps`` steps, test on the rest.

    Returns ``(train_mse, test_mse)``.
    """
    feats = mean_step_traces(record)
    y = np.asarray(record.targets, dtype=np.float64)[:len(feats)]
    n_train = config.train_steps
    if len(feats) <= n_train:
        raise ConfigurationError(
            f"record has {len(feats)} steps, need more than {n_train}", ["ridge.train_steps"])
    x_tr, x_te = feats[:n_train], feats[n_train:]
    if config.standardize:
        mu, sd = x_tr.mean(0), x_tr.std(0)
        sd[sd == 0] = 1.0
        x_tr, x_te = (x_tr - mu) / sd, (x_te - mu) / sd
    if config.fit_intercept:
        x_tr = np.hstack([x_tr, np.ones((len(x_tr), 1))])
        x_te = np.hstack([x_te, np.ones((len(x_te), 1))])
    w = ridge_solve(x_tr, y[:n_train], config.l2_factor)
    if not np.all(np.isfinite(w)):
        raise NumericalDivergence("ridge solution is not finite")
    train = float(np.mean((x_tr @ w - y[:n_train]) ** 2))
    test = float(np.mean((x_te @ w - y[n_train:]) ** 2))
    return train, test


def ridge_baseline(params, run, family, n_tasks, *, seed=None, config=None):
    """Ridge fits on episodes of ``params`` over the evaluation task seeds."""
    from .readout import run_stepped_episode

    config = config or run.ridge
    seed = run.seed if seed is None else seed
    tests, trains = [], []
    for i in range(n_tasks):
        rng = task_rng(seed, STREAM_EVAL, i)
        task = family.sample(rng)
        rec, _ = run_stepped_episode(params, run.neuron, family, task, run.protocol, rng)
        tr, te = ridge_fit_eval(rec, config)
        trains.append(tr)
        tests.append(te)
    return {"baseline": "ridge", "n_tasks": n_tasks,
            "mean_mse": float(np.mean(tests)) if tests else None,
            "std_mse": float(np.std(tests)) if tests else None,
            "train_mse": float(np.mean(trains)) if trains else None,
            "task_mse": tests}


# -- untrained reservoir ---------------------------------------------------------

def random_reservoir_eval(run, family, n_tasks=None, regime=None, *, seed=None, init_seed=None):
    """Evaluate freshly initialized, untrained parameters.

    Task samples follow ``seed`` exactly as for a trained reservoir, so the
    two evaluations see identical inputs.
    """
    from .outer import evaluate, initial_params

    params = initial_params(run, family, seed=init_seed)
    out = evaluate(params, run, family, n_tasks, seed=seed, regime=regime)
    out["baseline"] = "random"
    return out


# -- feed-forward network trained by backprop --------------------------------

@dataclass(frozen=True)
class BackpropBaselineConfig:
    n_hidden: int = 10
    lr: float = 0.1
    beta1: float = 0.7
    beta2: float = 0.9
    eps: float = 1e-8
    weight_decay: float = 1e-5
    amsgrad: bool = True
    output_sigmoid: bool = True


def glorot_normal(n_out, n_in, rng):
    return rng.normal(0.0, math.sqrt(2.0 / (n_in + n_out)), size=(n_out, n_in))


def ff_init(n_in, n_hidden, rng):
    return {"w1": glorot_normal(n_hidden, n_in, rng), "b1": np.zeros(n_hidden),
            "w2": glorot_normal(1, n_hidden, rng), "b2": np.zeros(1)}


def ff_forward(p, x, output_sigmoid=True):
    """``x`` is ``(n, n_in)``; returns ``(y (n,), hidden (n, n_hidden))``."""
    hid = logistic(x @ p["w1"].T + p["b1"])
    out = (hid @ p["w2"].T + p["b2"])[:, 0]
    return (logistic(out) if output_sigmoid else out), hid


def ff_loss_grad(p, x, y, output_sigmoid=True):
    """Mean squared error and its gradient w.r.t. every parameter."""
    x = np.atleast_2d(x)
    y = np.atleast_1d(y)
    y_hat, hid = ff_forward(p, x, output_sigmoid)
    n = len(y)
    d_out = 2.0 * (y_hat - y) / n
    if output_sigmoid:
        d_out = d_out * y_hat * (1.0 - y_hat)
    g = {"w2": d_out[None, :] @ hid, "b2": np.array([d_out.sum()])}
    d_hid = d_out[:, None] * p["w2"] * hid * (1.0 - hid)
    g["w1"] = d_hid.T @ x
    g["b1"] = d_hid.sum(axis=0)
    return float(np.mean((y_hat - y) ** 2)), g


def train_online(x, y, rng, config: BackpropBaselineConfig = BackpropBaselineConfig()):
    """One Adam step per example, error measured before each update."""
    p = ff_init(x.shape[1], config.n_hidden, rng)
    opt = AdamState.for_params(p, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                               eps=config.eps, amsgrad=config.amsgrad,
                               weight_decay=config.weight_decay)
    errors = np.empty(len(y))
    for i in range(len(y)):
        errors[i], g = ff_loss_grad(p, x[i:i + 1], y[i:i + 1], config.output_sigmoid)
        opt, p = adam_step(opt, p, g)
    return errors, p


def backprop_baseline(family, n_tasks, config=None, *, seed=0, n_steps=400):
    """Per-example training error of a fresh network per task, ``mean +- std``.

    Each task's query/target sequence is the one a reservoir evaluated with
    the same ``seed`` receives.
    """
    config = config or BackpropBaselineConfig()
    curves = []
    for i in range(n_tasks):
        rng = task_rng(seed, STREAM_EVAL, i)
        task = family.sample(rng)
        queries = family.sample_queries(rng, n_steps)
        targets = family.target(task, queries)
        init_rng = task_rng(seed, STREAM_EVAL, i, 1)
        errors, _ = train_online(queries, targets, init_rng, config)
        curves.append(errors)
    curves = np.array(curves).reshape(n_tasks, n_steps)
    return {"baseline": "backprop", "n_tasks": n_tasks,
            "mean_mse": float(curves.mean()) if n_tasks else None,
            "std_mse": float(curves.mean(axis=1).std()) if n_tasks else None,
            "curve_mean": curves.mean(axis=0).tolist() if n_tasks else [],
            "curve_std": curves.std(axis=0).tolist() if n_tasks else []}
