"""Episode trajectories and their on-disk forms (binary, JSON lines, CSV)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import FormatError


def _empty(cols):
    return np.zeros((0, cols))


@dataclass
class EpisodeRecord:
    """Per-step trajectory of one episode.

    ``inputs``, ``spikes`` and ``traces`` are at simulation resolution
    (``T`` rows). ``predictions``, ``targets`` and ``losses`` are at readout
    resolution: one row per ``step_len`` simulation steps.
    """

    inputs: np.ndarray
    spikes: np.ndarray
    traces: np.ndarray
    dt: float = 1.0
    seed: int = -1
    step_len: int = 1
    predictions: np.ndarray = field(default_factory=lambda: _empty(1))
    targets: np.ndarray = field(default_factory=lambda: _empty(1))
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        self.spikes = np.asarray(self.spikes, dtype=bool)
        self.traces = np.asarray(self.traces, dtype=np.float32)
        self.predictions = np.asarray(self.predictions, dtype=np.float64).reshape(
            len(self.predictions), -1) if len(self.predictions) else _empty(1)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(
            len(self.targets), -1) if len(self.targets) else _empty(1)
        self.losses = np.asarray(self.losses, dtype=np.float64).reshape(-1)

    @property
    def n_steps(self) -> int:
        return self.spikes.shape[0]

    @property
    def n_neurons(self) -> int:
        return self.spikes.shape[1]

    def firing_rates_hz(self) -> np.ndarray:
        """Mean rate per neuron over the whole record."""
        return self.spikes.mean(axis=0) * (1000.0 / self.dt)

    def step_rates(self) -> np.ndarray:
        """Spike count per readout step divided by the step length in ms."""
        k = self.n_steps // self.step_len
        counts = self.spikes[:k * self.step_len].reshape(k, self.step_len, -1).sum(axis=1)
        return counts / (self.step_len * self.dt)

    def equals(self, other: "EpisodeRecord") -> bool:
        return (self.dt == other.dt and self.seed == other.seed and self.step_len == other.step_len
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("inputs", "spikes", "traces", "predictions", "targets", "losses")))

    # -- binary ---------------------------------------------------------
    def save(self, path) -> None:
        meta = {"n_steps": self.n_steps, "n_neurons": self.n_neurons,
                "n_inputs": self.inputs.shape[1], "n_readout": len(self.predictions),
                "n_outputs": self.predictions.shape[1], "dt": self.dt, "seed": self.seed,
                "step_len": self.step_len}
        write_container(path, "episode", meta, {
            "spikes": np.packbits(self.spikes, axis=1),
            "traces": self.traces,
            "inputs": self.inputs,
            "predictions": self.predictions,
            "targets": self.targets,
            "losses": self.losses,
        })

    @classmethod
    def load(cls, path) -> "EpisodeRecord":
        _, meta, arrays = read_container(path, expect_kind="episode")
        spikes = np.unpackbits(arrays["spikes"], axis=1, count=meta["n_neurons"]).astype(bool)
        return cls(inputs=arrays["inputs"], spikes=spikes, traces=arrays["traces"],
                   dt=meta["dt"], seed=meta["seed"], step_len=meta["step_len"],
                   predictions=arrays["predictions"], targets=arrays["targets"],
                   losses=arrays["losses"])

    # -- JSON lines -----------------------------------------------------
    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"type": "header", "n_steps": self.n_steps,
                                 "n_neurons": self.n_neurons, "n_inputs": self.inputs.shape[1],
                                 "dt": self.dt, "seed": self.seed,
                                 "step_len": self.step_len}) + "\n")
            for t in range(self.n_steps):
                fh.write(json.dumps({
                    "type": "step", "t": t,
                    "input": [float(x) for x in self.inputs[t]],
                    "spikes": np.flatnonzero(self.spikes[t]).tolist(),
                    "trace": [float(x) for x in self.traces[t]],
                }) + "\n")
            for k in range(len(self.predictions)):
                fh.write(json.dumps({
                    "type": "readout", "k": k,
                    "prediction": self.predictions[k].tolist(),
                    "target": self.targets[k].tolist() if k < len(self.targets) else None,
                    "loss": float(self.losses[k]) if k < len(self.losses) else None,
                }) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "EpisodeRecord":
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        if not rows or rows[0].get("type") != "header":
            raise FormatError(f"{path}: missing header line")
        head = rows[0]
        n, t_len = head["n_neurons"], head["n_steps"]
        spikes = np.zeros((t_len, n), dtype=bool)
        traces = np.zeros((t_len, n), dtype=np.float32)
        inputs = np.zeros((t_len, head["n_inputs"]), dtype=np.float32)
        preds, targets, losses = [], [], []
        for r in rows[1:]:
            if r["type"] == "step":
                spikes[r["t"], r["spikes"]] = True
                traces[r["t"]] = r["trace"]
                inputs[r["t"]] = r["input"]
            elif r["type"] == "readout":
                preds.append(r["prediction"])
                if r["target"] is not None:
                    targets.append(r["target"])
                if r["loss"] is not None:
                    losses.append(r["loss"])
        return cls(inputs=inputs, spikes=spikes, traces=traces, dt=head["dt"], seed=head["seed"],
                   step_len=head["step_len"], predictions=preds, targets=targets, losses=losses)

    # -- CSV ------------------------------------------------------------
    def to_csv(self, path) -> int:
        """Write one ``(k, prediction..., target...)`` row per readout step."""
        n_out = self.predictions.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"prediction_{i}" for i in range(n_out)]
                       + [f"target_{i}" for i in range(n_out)])
            for k in range(len(self.predictions)):
                tgt = self.targets[k] if k < len(self.targets) else [float("nan")] * n_out
                w.writerow([k] + [repr(float(x)) for x in self.predictions[k]]
                           + [repr(float(x)) for x in tgt])
        return len(self.predictions)


def load_record(path) -> EpisodeRecord:
    """Load a record from either the binary container or JSON lines."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == b"SL2L":
        return EpisodeRecord.load(path)
    return EpisodeRecord.from_jsonl(path)
