import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spiking_l2l.tasks import (K2_SCALE, SineTask, TargetNetwork, VolterraTask, apply_volterra,
                               eval_sine, eval_tn, gen_input, sample_sine,
                               sample_target_network, sample_volterra, second_order_kernel,
                               sigma_matrix, task_rng, volterra_filter)


def naive_volterra(k1, k2, x):
    n, lags = len(x), len(k1)
    y = np.zeros(n)
    for t in range(n):
        acc = 0.0
        for a in range(lags):
            if t - a < 0:
                break
            acc += k1[a] * x[t - a]
            for b in range(lags):
                if t - b < 0:
                    break
                acc += k2[a, b] * x[t - a] * x[t - b]
        y[t] = acc
    return y


@pytest.mark.parametrize("seed", range(5))
def test_volterra_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    task = sample_volterra(rng, n_bins=50)
    x = gen_input(task, 200)
    fast = apply_volterra(task, x)
    ref = naive_volterra(task.k1, task.k2, x)
    assert np.max(np.abs(fast - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_volterra_identity_and_zero():
    x = np.random.default_rng(0).normal(size=100)
    k1 = np.zeros(10)
    k1[0] = 1.0
    np.testing.assert_allclose(volterra_filter(k1, np.zeros((10, 10)), x), x, atol=1e-15)
    task = sample_volterra(np.random.default_rng(1), n_bins=20)
    np.testing.assert_array_equal(apply_volterra(task, np.zeros(50)), 0.0)


def test_volterra_linear_in_k1_quadratic_in_x():
    rng = np.random.default_rng(2)
    k1a, k1b = rng.normal(size=30), rng.normal(size=30)
    k2 = second_order_kernel(1.0, -2.0, 30)
    x = rng.normal(size=120)
    zero2 = np.zeros((30, 30))
    np.testing.assert_allclose(volterra_filter(k1a + 2 * k1b, zero2, x),
                               volterra_filter(k1a, zero2, x) + 2 * volterra_filter(k1b, zero2, x),
                               atol=1e-12)
    z1 = np.zeros(30)
    np.testing.assert_allclose(volterra_filter(z1, k2, 2 * x), 4 * volterra_filter(z1, k2, x),
                               rtol=1e-12)


def test_sigma_determinant_and_definiteness():
    rng = np.random.default_rng(3)
    uv = rng.uniform(-12, 12, size=(10_000, 2))
    dets = np.array([np.linalg.det(sigma_matrix(u, v)) for u, v in uv])
    mins = np.array([np.linalg.eigvalsh(sigma_matrix(u, v)).min() for u, v in uv])
    assert np.max(np.abs(dets - 1)) <= 1e-9
    assert mins.min() > 0


def test_isotropic_bell_at_origin_parameters():
    np.testing.assert_array_equal(sigma_matrix(0.0, 0.0), np.eye(2))
    k2 = second_order_kernel(0.0, 0.0, 40, time_unit_s=0.01)
    t = np.arange(40) * 0.1
    bell = np.exp(-(t[:, None] ** 2 + t[None, :] ** 2) / 24)
    np.testing.assert_allclose(k2, bell / bell.sum() * K2_SCALE, rtol=1e-12)


def test_kernel_normalization():
    rng = np.random.default_rng(4)
    for _ in range(20):
        task = sample_volterra(rng)
        assert np.sum(np.abs(task.k1)) == pytest.approx(1.0, rel=1e-12)
        assert task.k2.sum() == pytest.approx(14.0, rel=1e-12)
        assert task.k1.shape == (500,) and task.k2.shape == (500, 500)


def test_second_order_sum_equals_symmetrized_kernel():
    # k2 is symmetric only when u = 0; the full double sum sees its symmetric part
    rng = np.random.default_rng(13)
    k2 = second_order_kernel(5.0, -3.0, 40)
    assert not np.allclose(k2, k2.T)
    sym = 0.5 * (k2 + k2.T)
    x = rng.normal(size=150)
    z = np.zeros(40)
    np.testing.assert_allclose(volterra_filter(z, k2, x), volterra_filter(z, sym, x), rtol=1e-12)
    k2_u0 = second_order_kernel(0.0, 7.0, 40)
    np.testing.assert_allclose(k2_u0, k2_u0.T, rtol=1e-12)


def test_gen_input_examples():
    task = VolterraTask(a=(1, 0), b=(0.1, 0.1), u=0, v=0, amplitudes=(1, 1), phases=(0, 0))
    assert gen_input(task, 1)[0] == 0.0
    rng = np.random.default_rng(5)
    for _ in range(10):
        t = sample_volterra(rng, n_bins=10)
        assert np.max(np.abs(gen_input(t, 3000))) <= sum(t.amplitudes) <= 2


def test_gen_input_spectrum():
    # 0.323 s and 0.5 s periods: integer number of cycles over 161.5 s
    task = VolterraTask(a=(1, 0), b=(0.1, 0.1), u=0, v=0, amplitudes=(0.7, 0.9),
                        phases=(0.3, 1.1))
    n = 161_500
    spec = np.abs(np.fft.rfft(gen_input(task, n)))
    freqs = np.fft.rfftfreq(n, d=1e-3)
    peaks = set(np.argsort(spec)[-2:])
    expected = {int(np.argmin(np.abs(freqs - 1 / 0.323))), int(np.argmin(np.abs(freqs - 2.0)))}
    assert peaks == expected
    rest = np.delete(spec, list(expected))
    assert rest.max() < 1e-6 * spec.max()


def test_gen_input_offset_continuity():
    task = sample_volterra(np.random.default_rng(6), n_bins=10)
    full = gen_input(task, 500)
    np.testing.assert_allclose(gen_input(task, 200, start=300), full[300:], atol=1e-12)


def test_volterra_parameter_ranges():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        t = sample_volterra(rng, n_bins=20)
        assert all(-1 <= a <= 1 for a in t.a) and all(0.1 <= b <= 0.3 for b in t.b)
        assert -12 <= t.u <= 12 and -12 <= t.v <= 12
        assert all(0.5 <= a <= 1 for a in t.amplitudes)
        assert all(0 <= p <= math.pi / 2 for p in t.phases)


def test_first_order_kernel_resample_guard():
    class Scripted:
        def __init__(self):
            self.calls = 0

        def uniform(self, lo, hi, size=None):
            self.calls += 1
            if self.calls == 1:  # a = (0, 0): degenerate kernel, must be redrawn
                return np.zeros(size)
            return np.random.default_rng(self.calls).uniform(lo, hi, size)

    task = sample_volterra(Scripted(), n_bins=20)
    assert np.sum(np.abs(task.k1)) == pytest.approx(1.0)


def test_task_serialization_round_trip():
    task = sample_volterra(np.random.default_rng(8), n_bins=30)
    back = VolterraTask.from_dict(task.to_dict())
    np.testing.assert_array_equal(back.k2, task.k2)
    tn = sample_target_network(np.random.default_rng(9))
    tn2 = TargetNetwork.from_dict(tn.to_dict())
    assert eval_tn(tn2, 0.3, -0.2) == eval_tn(tn, 0.3, -0.2)
    s = SineTask(2.0, 1.0)
    assert SineTask.from_dict(s.to_dict()) == s


def test_task_rng_is_split_by_key():
    a = task_rng(1, 2, 3).random(4)
    np.testing.assert_array_equal(a, task_rng(1, 2, 3).random(4))
    assert not np.array_equal(a, task_rng(1, 2, 4).random(4))
    assert not np.array_equal(a, task_rng(2, 2, 3).random(4))


# -- target networks ---------------------------------------------------------

def test_tn_all_zero_params():
    tn = TargetNetwork(np.zeros((10, 2)), np.zeros(10), np.zeros(10))
    assert eval_tn(tn, 0.7, -0.4) == 0.5


def test_tn_against_straightforward_implementation():
    rng = np.random.default_rng(10)
    for _ in range(20):
        tn = sample_target_network(rng)
        x1, x2 = rng.uniform(-1, 1, 2)
        hidden = []
        for j in range(10):
            a = tn.w_hidden[j, 0] * x1 + tn.w_hidden[j, 1] * x2 + tn.b_hidden[j]
            hidden.append(1 / (1 + math.exp(-a)))
        out = sum(w * h for w, h in zip(tn.w_out, hidden))
        assert eval_tn(tn, x1, x2) == pytest.approx(1 / (1 + math.exp(-out)), rel=1e-12)


def test_tn_parameter_ranges_and_output():
    rng = np.random.default_rng(11)
    for _ in range(100_000):
        tn = sample_target_network(rng)
        p = tn.parameters()
        assert tn.n_params == 40 and p.min() >= -1 and p.max() <= 1
    tn = sample_target_network(rng)
    y = eval_tn(tn, rng.uniform(-5, 5, 1000), rng.uniform(-5, 5, 1000))
    assert y.min() >= 0 and y.max() <= 1


# -- sines ------------------------------------------------------------------------

def test_sine_examples():
    assert eval_sine(SineTask(1.0, 0.0), 0.0) == 0.0
    t = SineTask(3.0, 0.4)
    assert np.max(np.abs(eval_sine(t, np.linspace(-10, 10, 999)))) <= 3.0


def test_sine_parameter_ranges():
    rng = np.random.default_rng(12)
    samples = [sample_sine(rng) for _ in range(100_000)]
    amps = np.array([s.amplitude for s in samples])
    phases = np.array([s.phase for s in samples])
    assert amps.min() >= 0.1 and amps.max() <= 5.0
    assert phases.min() >= 0 and phases.max() < 2 * math.pi


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0, 2 * math.pi - 1e-9),
       st.lists(st.floats(-5, 5), min_size=2, max_size=6))
def test_sine_examples_consistent_with_family_member(a, phi, xs):
    """Any example set generated by a family member is explained by the
    recovered least-squares fit A sin(x) cos(phi) + A cos(x) sin(phi)."""
    task = SineTask(a, phi)
    xs = np.array(xs)
    ys = eval_sine(task, xs)
    basis = np.stack([np.sin(xs), np.cos(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, ys, rcond=None)
    np.testing.assert_allclose(basis @ coef, ys, atol=1e-9)
