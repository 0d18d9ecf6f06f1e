"""Spiking reservoirs meta-trained to learn.

An inner loop learns one task, either with a plastic linear readout or with
all weights frozen so that learning happens in the network dynamics. An
outer loop tunes the reservoir weights across a task family by
backpropagation through time with a surrogate spike derivative.
"""

try:
    from importlib.metadata import PackageNotFoundError, version

    __version__ = version("artifact")
except PackageNotFoundError:  # not installed
    __version__ = "0.0.0"

from .errors import ConfigurationError, ContractViolation, FormatError, L2LError, NumericalDivergence
from .neuron import (PAPER_RHO, NetworkState, NeuronConstants, ReservoirParams, init_params,
                     run_episode, step)
from .records import EpisodeRecord, load_record
from .surrogate import surrogate_derivative
from .bptt import backward, clip_by_global_norm, record
from .optim import AdamState, adam_step
from .tasks import (apply_volterra, eval_sine, eval_tn, gen_input, sample_sine,
                    sample_target_network, sample_volterra, task_rng)
from .encoding import PopulationCode, rates, spikes_from_rates
from .readout import (EpisodeProtocol, ReadoutPlasticityConfig, accumulate_and_apply,
                      probe_internal_model, readout_predict, run_stepped_episode, run_tn_episode)
from .families import SineFamily, TargetNetworkFamily, VolterraFamily, make_family
from .outer import OuterLoopConfig, evaluate, meta_train, outer_loss
from .baselines import backprop_baseline, random_reservoir_eval, ridge_fit_eval
from .config import PRESETS, RunConfig, get_preset, resolve_config
