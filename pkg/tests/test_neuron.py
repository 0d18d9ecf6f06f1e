import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spiking_l2l.errors import ConfigurationError, NumericalDivergence
from spiking_l2l.neuron import (PAPER_RHO, NetworkState, NeuronConstants, ReservoirParams,
                                init_params, random_delays, run_episode, step, uniform_delays)


def make_params(n, n_in=1, delays=None, w_in=None, w_rec=None, rng=None):
    rng = rng or np.random.default_rng(0)
    if w_in is None:
        w_in = np.zeros((n, n_in))
    if w_rec is None:
        w_rec = np.zeros((n, n))
    if delays is None:
        delays = np.zeros((n, n), dtype=int)
    return ReservoirParams(w_in=w_in, w_rec=w_rec, w_out=np.zeros((1, n)), delays=delays)


def test_zero_network_stays_at_rest():
    p = make_params(4, 2)
    c = NeuronConstants()
    s = NetworkState.zeros(p)
    for _ in range(50):
        s, z = step(s, p, c, np.zeros(2))
        assert not z.any()
    assert not s.v.any() and not s.h.any()


def test_literal_decay_constant():
    p = make_params(1)
    c = NeuronConstants(rho_override=PAPER_RHO, v_th=2.0)
    s = NetworkState.zeros(p)
    s.v[:] = 1.0
    s, z = step(s, p, c, np.zeros(1))
    assert z[0] == 0
    assert s.v[0] == pytest.approx(0.368, abs=1e-15)


def test_rho_from_time_constant():
    c = NeuronConstants(dt=1.0, tau_m=20.0)
    assert c.rho == pytest.approx(math.exp(-1 / 20))
    assert 0 < c.kappa < 1
    with pytest.raises(ConfigurationError):
        NeuronConstants(v_th=0.0)


def test_spike_condition_is_strict():
    p = make_params(1)
    c = NeuronConstants(v_th=0.5)
    s = NetworkState.zeros(p)
    s.v[:] = 0.5  # exactly at threshold
    _, z = step(s, p, c, np.zeros(1))
    assert z[0] == 0
    s.v[:] = 0.5 + 1e-12
    _, z = step(s, p, c, np.zeros(1))
    assert z[0] == 1


def analytic_spike_times(current, v_th, rho, refr, n_steps):
    """Spike times of V(t+1) = rho V + (1-rho) I - v_th z from V(0)=0, using the
    closed-form solution V(t0 + k) = I + (V(t0) - I) rho^k between spikes."""
    times = []
    t0, v0 = 0, 0.0
    earliest = 0
    while True:
        # first k >= 0 with V(t0 + k) > v_th, i.e. rho^k < (I - v_th) / (I - v0)
        k_star = math.log((current - v_th) / (current - v0)) / math.log(rho)
        k = max(math.floor(k_star) + 1, 0) if v0 <= v_th else 0
        t = max(t0 + k, earliest)
        if t >= n_steps:
            return times
        times.append(t)
        v_spike = current + (v0 - current) * rho ** (t - t0)
        v0 = rho * v_spike + (1 - rho) * current - v_th
        t0 = t + 1
        earliest = t + refr + 1


@pytest.mark.parametrize("excess", [1.02, 1.2, 2.0, 5.0])
def test_interspike_interval_matches_closed_form(excess):
    c = NeuronConstants(v_th=0.02)
    current = excess * c.v_th  # rheobase: steady state V = I must exceed v_th
    p = make_params(1, w_in=np.array([[current]]))
    rec = run_episode(p, c, np.ones((600, 1)))
    sim = np.flatnonzero(rec.spikes[:, 0])
    ref = analytic_spike_times(current, c.v_th, c.rho, c.refractory_steps, 600)
    assert len(sim) == len(ref) and len(sim) > 1
    assert np.max(np.abs(np.diff(sim) - np.diff(ref))) <= 1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), refr=st.integers(0, 7), n=st.integers(2, 12))
def test_refractory_interval_on_arbitrary_trajectories(seed, refr, n):
    rng = np.random.default_rng(seed)
    c = NeuronConstants(refractory=float(refr))
    p = init_params(n, 3, 1, n, random_delays(n, 3, rng), rng, w_in_std=0.2, w_rec_std=0.1)
    rec = run_episode(p, c, rng.uniform(0, 1, (200, 3)))
    for j in range(n):
        times = np.flatnonzero(rec.spikes[:, j])
        if len(times) > 1:
            assert np.diff(times).min() >= refr + 1


def naive_currents(params, consts, inputs):
    """Reference simulation that keeps the full spike history and sums
    synapse by synapse."""
    t_len = len(inputs)
    n = params.n_neurons
    v = np.zeros(n)
    refrac = np.zeros(n, dtype=int)
    z_hist = np.zeros((t_len, n))
    currents = np.zeros((t_len, n))
    for t in range(t_len):
        fired = (refrac == 0) & ((v - consts.v_th) / consts.v_th > 0)
        z_hist[t] = fired
        cur = params.w_in @ inputs[t]
        for i in range(n):
            for j in range(n):
                d = params.delays[i, j]
                if t - d >= 0:
                    cur[i] += params.w_rec[i, j] * z_hist[t - d, j]
        currents[t] = cur
        v = consts.rho * v + (1 - consts.rho) * consts.r_m * cur - consts.v_th * z_hist[t]
        refrac = np.where(fired, consts.refractory_steps, np.maximum(refrac - 1, 0))
    return z_hist, currents


@pytest.mark.parametrize("seed", range(4))
def test_delays_against_naive_reference(seed):
    rng = np.random.default_rng(seed)
    n = 6
    c = NeuronConstants()
    p = init_params(n, 2, 1, n, random_delays(n, 5, rng), rng, w_in_std=0.1, w_rec_std=0.1)
    inputs = rng.uniform(0, 1, (150, 2))
    rec = run_episode(p, c, inputs)
    z_ref, _ = naive_currents(p, c, inputs)
    assert rec.spikes.any()
    np.testing.assert_array_equal(rec.spikes, z_ref.astype(bool))


def test_single_spike_arrives_after_delay():
    # neuron 0 is kicked above threshold once; neuron 1 listens with delay d
    d = 4
    delays = np.full((2, 2), d)
    w_rec = np.array([[0.0, 0.0], [1.0, 0.0]])
    p = make_params(2, 1, delays=delays, w_in=np.array([[1.0], [0.0]]), w_rec=w_rec)
    c = NeuronConstants(rho_override=0.5, v_th=0.1)
    inputs = np.zeros((12, 1))
    inputs[0] = 1.0  # V0(1) = 0.5 -> spike at t=1
    rec = run_episode(p, c, inputs)
    t_spike = np.flatnonzero(rec.spikes[:, 0])[0]
    assert t_spike == 1
    s = NetworkState.zeros(p)
    vs = []
    for t in range(12):
        s, _ = step(s, p, c, inputs[t])
        vs.append(s.v[1])
    # current arrives at t_spike + d, membrane moves one step later
    first = np.flatnonzero(np.array(vs) != 0)[0]
    assert first == t_spike + d


def test_trace_identity_bruteforce():
    rng = np.random.default_rng(3)
    n = 5
    c = NeuronConstants()
    p = init_params(n, 2, 1, n, uniform_delays(n, 2), rng, w_in_std=0.1, w_rec_std=0.05)
    rec = run_episode(p, c, rng.uniform(0, 1, (80, 2)))
    z = rec.spikes.astype(float)
    for t in range(80):
        brute = sum(c.kappa ** (t - s) * z[s] for s in range(t + 1))
        np.testing.assert_allclose(rec.traces[t], brute, rtol=1e-6, atol=1e-6)
    assert rec.traces.max() <= 1 / (1 - c.kappa) + 1e-6
    assert rec.traces.min() >= 0


def test_episode_length_and_determinism():
    rng = np.random.default_rng(1)
    p = init_params(10, 1, 1, 11, uniform_delays(10, 5), rng)
    c = NeuronConstants()
    x = np.sin(np.arange(300) / 10)[:, None]
    a = run_episode(p, c, x, seed=5)
    b = run_episode(p, c, x, seed=5)
    assert a.n_steps == 300 and a.spikes.shape == (300, 10)
    assert a.equals(b)


def test_dimension_mismatch_raises():
    p = make_params(3, 2)
    c = NeuronConstants()
    with pytest.raises(ConfigurationError):
        step(NetworkState.zeros(p), p, c, np.zeros(3))
    other = make_params(4, 2)
    with pytest.raises(ConfigurationError):
        step(NetworkState.zeros(other), p, c, np.zeros(2))


def test_divergence_reports_step():
    p = make_params(2, 1, w_in=np.ones((2, 1)))
    c = NeuronConstants()
    x = np.zeros((10, 1))
    x[6] = np.inf
    with pytest.raises(NumericalDivergence) as info:
        run_episode(p, c, x)
    assert info.value.step == 6


def test_self_connections_rejected_and_zeroed_at_init():
    w = np.eye(3)
    with pytest.raises(ConfigurationError):
        ReservoirParams(w_in=np.zeros((3, 1)), w_rec=w, w_out=np.zeros((1, 3)),
                        delays=np.zeros((3, 3), dtype=int))
    rng = np.random.default_rng(0)
    p = init_params(50, 1, 1, 51, uniform_delays(50, 5), rng)
    assert not np.diag(p.w_rec).any()


def test_delay_range_validated():
    with pytest.raises(ConfigurationError):
        make_params(2, delays=np.array([[0, -1], [0, 0]]))


def test_init_statistics():
    rng = np.random.default_rng(0)
    n = 800
    p = init_params(n, 3, 1, n + 1, uniform_delays(n, 5), rng)
    off = p.w_rec[~np.eye(n, dtype=bool)]
    assert off.std() == pytest.approx(1 / math.sqrt(800), rel=0.01)
    assert p.w_in.std() == pytest.approx(1 / math.sqrt(3), rel=0.1)
    limit = math.sqrt(6 / (n + 2))
    assert np.abs(p.w_out).max() <= limit
