import numpy as np
import pytest

from spiking_l2l import bptt
from spiking_l2l.errors import ConfigurationError
from spiking_l2l.families import SineFamily, TargetNetworkFamily, VolterraFamily
from spiking_l2l.neuron import NeuronConstants, init_params, random_delays, run_episode, uniform_delays
from spiking_l2l.readout import (EpisodeProtocol, PlasticReadoutHook, ReadoutPlasticityConfig,
                                 ReadoutSpec, accumulate_and_apply, plastic_forward,
                                 probe_internal_model, readout_forward, readout_predict,
                                 run_stepped_episode, run_tn_episode)
from spiking_l2l.tasks import sample_target_network, task_rng


def test_readout_predict_examples():
    h = np.array([0.5, 2.0, -1.0])
    x = np.array([0.3])
    assert np.all(readout_predict(np.zeros((1, 4)), x, h) == 0)
    onehot = np.zeros((1, 4))
    onehot[0, 2] = 1.0
    assert readout_predict(onehot, x, h)[0] == 2.0
    w = np.random.default_rng(0).normal(size=(2, 4))
    np.testing.assert_allclose(readout_predict(w, 3 * x, 3 * h), 3 * readout_predict(w, x, h))
    with pytest.raises(ConfigurationError):
        readout_predict(np.zeros((1, 5)), x, h)


def test_accumulate_examples():
    cfg = ReadoutPlasticityConfig(eta=0.1, accumulation_window=1.0)
    w = accumulate_and_apply(np.zeros((1, 1)), np.array([[2.0]]), np.array([[0.0]]),
                             np.array([[3.0]]), cfg)
    assert w[0, 0] == pytest.approx(0.6)
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(10, 4))
    y = rng.normal(size=(10, 1))
    w0 = rng.normal(size=(1, 4))
    np.testing.assert_array_equal(accumulate_and_apply(w0, y, y, feats, cfg), w0)


def test_accumulate_equals_literal_window_sum():
    rng = np.random.default_rng(2)
    cfg = ReadoutPlasticityConfig(eta=0.01, accumulation_window=8.0)
    feats = rng.normal(size=(8, 5))
    y = rng.normal(size=(8, 2))
    yh = rng.normal(size=(8, 2))
    w0 = rng.normal(size=(2, 5))
    dw = np.zeros_like(w0)
    for t in range(8):
        for o in range(2):
            for f in range(5):
                dw[o, f] += cfg.eta * (y[t, o] - yh[t, o]) * feats[t, f]
    np.testing.assert_allclose(accumulate_and_apply(w0, y, yh, feats, cfg), w0 + dw, rtol=1e-12)


def _small_net(n=12, n_in=1, seed=0):
    rng = np.random.default_rng(seed)
    return init_params(n, n_in, 1, n + n_in, uniform_delays(n, 3), rng, w_in_std=0.5,
                       w_rec_std=0.1)


def test_hook_matches_batched_plasticity():
    params = _small_net()
    consts = NeuronConstants()
    x = np.sin(np.arange(250) / 7.0)[:, None]
    y = np.cos(np.arange(250) / 9.0)
    cfg = ReadoutPlasticityConfig(eta=1e-2, accumulation_window=50.0)
    hook = PlasticReadoutHook(params.w_out, y, cfg)
    run_episode(params, consts, x, hooks=[hook])
    tape = bptt.record(params, consts, x[:, None, :], dtype=np.float64)
    spec = ReadoutSpec(kind="trace", plasticity=cfg)
    y_hat, final_w, _ = readout_forward(spec, params.w_out, tape, consts, y[:, None, None])
    np.testing.assert_allclose(np.array(hook.predictions)[:, 0], y_hat[:, 0, 0], rtol=1e-10,
                               atol=1e-12)
    np.testing.assert_allclose(hook.w, final_w[0], rtol=1e-10)
    assert len(hook.snapshots) == 6  # initial + 5 full windows


def test_disabled_plasticity_leaves_weights_bit_identical():
    params = _small_net()
    consts = NeuronConstants()
    x = np.ones((120, 1))
    cfg = ReadoutPlasticityConfig(eta=0.5, accumulation_window=10.0, enabled=False)
    hook = PlasticReadoutHook(params.w_out, np.ones(120), cfg)
    before = params.w_out.copy()
    run_episode(params, consts, x, hooks=[hook])
    np.testing.assert_array_equal(hook.w, before)
    np.testing.assert_array_equal(params.w_out, before)


def test_readout_mse_nonincreasing_with_small_eta():
    """Frozen random reservoir, fixed task: per-window readout MSE does not go up."""
    fam = VolterraFamily(n_bins=100)
    rng = task_rng(0, 9)
    task = fam.sample(rng)
    params = init_params(60, 1, 1, 61, uniform_delays(60, 5), rng)
    consts = NeuronConstants()
    x, y = fam.stream(task, 8000)
    tape = bptt.record(params, consts, x[:, None, :])
    spec = ReadoutSpec(kind="trace", plasticity=ReadoutPlasticityConfig(eta=1e-5))
    y_hat, _, _ = readout_forward(spec, params.w_out, tape, consts, y[:, None, :])
    per_window = ((y_hat[:, 0, 0] - y[:, 0]) ** 2).reshape(8, 1000).mean(axis=1)
    assert np.all(np.diff(per_window) <= 1e-12 + 0.02 * per_window[:-1])
    assert per_window[-1] < per_window[0]


# -- stepped episodes ------------------------------------------------------------------

def _stepped(n=30, seed=0, fam=None):
    fam = fam or TargetNetworkFamily(sigma_scale=20.0)
    rng = np.random.default_rng(seed)
    params = init_params(n, fam.n_inputs, 1, n, random_delays(n, 5, rng), rng, w_in_std=0.3)
    return fam, params


def test_first_step_target_channel_is_zero_and_step_length():
    fam, params = _stepped()
    rng = np.random.default_rng(1)
    task = fam.sample(rng)
    q, y, raster = fam.episode_data(task, 10, np.random.default_rng(2), step_len=20)
    assert raster.shape == (200, fam.n_inputs)
    # reconstruct: the target channel at step 0 must be the code of 0.0
    rng2 = np.random.default_rng(2)
    q2 = fam.sample_queries(rng2, 10)
    raster_zero = fam.encode(q2, np.concatenate([[0.0], y[:-1]]), rng2, 20)
    np.testing.assert_array_equal(raster, raster_zero)
    rng3 = np.random.default_rng(2)
    fam.sample_queries(rng3, 10)
    raster_other = fam.encode(q2, np.concatenate([[0.7], y[:-1]]), rng3, 20)
    assert not np.array_equal(raster[:20, 200:], raster_other[:20, 200:])
    np.testing.assert_array_equal(raster[:20, :200], raster_other[:20, :200])


def test_stepped_episode_shapes():
    fam, params = _stepped()
    consts = NeuronConstants()
    proto = EpisodeProtocol(steps_per_episode=12)
    tn = sample_target_network(np.random.default_rng(0))
    rec, _ = run_tn_episode(params, consts, tn, proto, np.random.default_rng(3), family=fam)
    assert rec.n_steps == 12 * 20 and rec.step_len == 20
    assert rec.predictions.shape == (12, 1) and rec.targets.shape == (12, 1)
    np.testing.assert_allclose(rec.predictions, rec.step_rates() @ params.w_out.T)


def test_prediction_invariant_to_current_target():
    """The step-t prediction cannot depend on the step-t target."""
    fam, params = _stepped(seed=4)
    consts = NeuronConstants()
    proto = EpisodeProtocol(steps_per_episode=8)
    task = fam.sample(np.random.default_rng(5))
    q, y, raster = fam.episode_data(task, 8, np.random.default_rng(6), step_len=20)
    rec_a, _ = run_stepped_episode(params, consts, fam, task, proto, None, data=(q, y, raster))
    y2 = y.copy()
    y2[5] += 0.3
    # the changed target only enters the input at step 6
    rng = np.random.default_rng(6)
    fam.sample_queries(rng, 8)
    raster2 = fam.encode(q, np.concatenate([[0.0], y2[:-1]]), rng, 20)
    rec_b, _ = run_stepped_episode(params, consts, fam, task, proto, None, data=(q, y2, raster2))
    np.testing.assert_array_equal(rec_a.predictions[:6], rec_b.predictions[:6])


def test_probe_is_repeatable_and_isolated():
    fam, params = _stepped(seed=7)
    consts = NeuronConstants()
    proto = EpisodeProtocol(steps_per_episode=10)
    task = fam.sample(np.random.default_rng(8))
    data = fam.episode_data(task, 10, np.random.default_rng(9), step_len=20)
    grid = np.stack(np.meshgrid(np.linspace(-1, 1, 5), np.linspace(-1, 1, 5)), -1).reshape(-1, 2)
    plain, _ = run_stepped_episode(params, consts, fam, task, proto, None, data=data)
    probed, probes = run_stepped_episode(params, consts, fam, task, proto, None, data=data,
                                         probe_steps=[0, 3, 7], probe_grid=grid)
    assert plain.equals(probed)
    assert set(probes) == {0, 3, 7} and probes[3].shape == (25, 1)
    _, again = run_stepped_episode(params, consts, fam, task, proto, None, data=data,
                                   probe_steps=[3], probe_grid=grid)
    np.testing.assert_array_equal(again[3], probes[3])


def test_probe_does_not_touch_snapshot():
    fam, params = _stepped(seed=10, fam=SineFamily(sigma_scale=20.0))
    consts = NeuronConstants()
    from spiking_l2l.neuron import NetworkState

    state = NetworkState.zeros(params)
    state.v[:] = 0.01
    snap = state.copy()
    out1 = probe_internal_model(params, consts, state, np.linspace(-5, 5, 7), fam, 0.2,
                                EpisodeProtocol())
    out2 = probe_internal_model(params, consts, state, np.linspace(-5, 5, 7), fam, 0.2,
                                EpisodeProtocol())
    assert state.equals(snap)
    np.testing.assert_array_equal(out1, out2)
    assert out1.shape == (7, 1)


def test_plastic_forward_partial_window_not_applied():
    phi = np.ones((7, 1, 1))
    y = np.ones((7, 1, 1))
    _, snaps = plastic_forward(np.zeros((1, 1)), phi, y, 0.1, 5)
    assert len(snaps) == 2
