"""Task families wired to the reservoir's input format.

A family samples task instances and produces, per task, the reservoir input
stream and the readout targets. Continuous families (Volterra) drive the
network with the analog signal itself; stepped families (target networks,
sines) present one query per step through Gaussian population codes, with
the previous step's target as an extra channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import PopulationCode, rates
from .tasks import (apply_volterra, eval_sine, eval_tn, gen_input, sample_sine,
                    sample_target_network, sample_volterra, K2_TIME_UNIT_S)


@dataclass
class VolterraFamily:
    n_bins: int = 500
    k2_time_unit: float = K2_TIME_UNIT_S
    dt_s: float = 1e-3

    name = "volterra"
    kind = "continuous"
    n_inputs = 1

    def sample(self, rng):
        return sample_volterra(rng, n_bins=self.n_bins, dt_s=self.dt_s,
                               k2_time_unit=self.k2_time_unit)

    def stream(self, task, n_steps):
        """Input ``(n_steps, 1)`` and target ``(n_steps, 1)`` from time zero."""
        x = gen_input(task, n_steps)
        return x[:, None], apply_volterra(task, x)[:, None]

    def to_dict(self):
        return {"name": self.name, "n_bins": self.n_bins, "k2_time_unit": self.k2_time_unit}


@dataclass
class SteppedFamily:
    """Shared machinery for families queried one input per step."""

    units_per_channel: int = 100
    r_max: float = 200.0
    sigma_scale: float = 1.0

    kind = "stepped"
    query_range = (-1.0, 1.0)
    target_range = (0.0, 1.0)
    n_query = 1

    @property
    def codes(self):
        q = PopulationCode(*self.query_range, n_units=self.units_per_channel,
                           r_max=self.r_max, sigma_scale=self.sigma_scale)
        t = PopulationCode(*self.target_range, n_units=self.units_per_channel,
                           r_max=self.r_max, sigma_scale=self.sigma_scale)
        return [q] * self.n_query + [t]

    @property
    def n_inputs(self) -> int:
        return (self.n_query + 1) * self.units_per_channel

    def sample_queries(self, rng, n):
        return rng.uniform(*self.query_range, size=(n, self.n_query))

    def encode(self, queries, prev_targets, rng, step_len, dt=1.0):
        """Spike raster for query/previous-target pairs.

        ``queries`` is ``(..., K, n_query)`` and ``prev_targets`` ``(..., K)``;
        the result is boolean ``(..., K * step_len, n_inputs)``.
        """
        codes = self.codes
        chans = [rates(codes[i], queries[..., i]) for i in range(self.n_query)]
        chans.append(rates(codes[-1], prev_targets))
        r = np.concatenate(chans, axis=-1)  # (..., K, n_in)
        p = np.minimum(1.0, r * dt / 1000.0)
        lead = p.shape[:-2]
        k = p.shape[-2]
        draws = rng.random(lead + (k, step_len, p.shape[-1]))
        raster = draws < p[..., :, None, :]
        return raster.reshape(lead + (k * step_len, p.shape[-1]))

    def episode_data(self, task, n_steps, rng, step_len=20, dt=1.0):
        """``(queries, targets, raster)`` for one delayed-target episode."""
        queries = self.sample_queries(rng, n_steps)
        targets = self.target(task, queries)
        prev = np.concatenate([[0.0], targets[:-1]])
        raster = self.encode(queries, prev, rng, step_len, dt)
        return queries, targets, raster


@dataclass
class TargetNetworkFamily(SteppedFamily):
    output_sigmoid: bool = True

    name = "tn"
    query_range = (-1.0, 1.0)
    target_range = (0.0, 1.0)
    n_query = 2

    def sample(self, rng):
        return sample_target_network(rng, output_sigmoid=self.output_sigmoid)

    def target(self, task, queries):
        return eval_tn(task, queries[..., 0], queries[..., 1])

    def to_dict(self):
        return {"name": self.name, "units_per_channel": self.units_per_channel,
                "r_max": self.r_max, "sigma_scale": self.sigma_scale,
                "output_sigmoid": self.output_sigmoid}


@dataclass
class SineFamily(SteppedFamily):
    amplitude_range: tuple = (0.1, 5.0)
    x_range: tuple = (-5.0, 5.0)

    name = "sine"
    n_query = 1

    @property
    def query_range(self):
        return tuple(self.x_range)

    @property
    def target_range(self):
        a = self.amplitude_range[1]
        return (-a, a)

    def sample(self, rng):
        return sample_sine(rng, tuple(self.amplitude_range))

    def target(self, task, queries):
        return eval_sine(task, queries[..., 0])

    def to_dict(self):
        return {"name": self.name, "units_per_channel": self.units_per_channel,
                "r_max": self.r_max, "sigma_scale": self.sigma_scale,
                "amplitude_range": list(self.amplitude_range), "x_range": list(self.x_range)}


FAMILIES = {"volterra": VolterraFamily, "tn": TargetNetworkFamily, "sine": SineFamily}


def make_family(spec: dict):
    spec = dict(spec)
    name = spec.pop("name")
    cls = FAMILIES[name]
    for key in ("amplitude_range", "x_range"):
        if key in spec:
            spec[key] = tuple(spec[key])
    return cls(**spec)
