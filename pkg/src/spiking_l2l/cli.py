"""Command line entry point: ``spiking-l2l <command> ...``.

Commands: ``train``, ``eval``, ``baseline``, ``probe``, ``episode``,
``export``, ``presets``. Exit codes: 0 success, 2 configuration error,
3 numerical divergence, 4 I/O or format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BackpropBaselineConfig, backprop_baseline, random_reservoir_eval, ridge_baseline
from .config import PRESETS, RunConfig, dump_config, resolve_config
from .errors import ConfigurationError, FormatError, NumericalDivergence
from .outer import evaluate, load_checkpoint_arrays, meta_train, params_from_arrays
from .readout import run_stepped_episode
from .records import load_record
from .tasks import task_rng

OUTPUT_ROOT_ENV = "SPIKING_L2L_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("spiking_l2l")


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _config_args(p):
    p.add_argument("--preset", help="named preset (see `presets`)")
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--manifest", help="manifest.json of a previous run; reuses its config")
    p.add_argument("--seed", type=int)
    p.add_argument("overrides", nargs="*", metavar="KEY=VALUE",
                   help="dotted config overrides, e.g. outer.lr=0.003")


def _run_config(args, checkpoint_meta=None) -> RunConfig:
    overrides = list(args.overrides or [])
    if getattr(args, "manifest", None):
        d = json.loads(Path(args.manifest).read_text())["config"]
        return resolve_config(None, None, _as_overrides(d) + overrides, args.seed)
    if not args.preset and not args.config and checkpoint_meta and checkpoint_meta.get("config"):
        d = checkpoint_meta["config"]
        return resolve_config(None, None, _as_overrides(d) + overrides, args.seed)
    if not args.preset and not args.config:
        raise ConfigurationError("give --preset, --config, --manifest or a checkpoint",
                                 ["preset"])
    return resolve_config(args.preset, args.config, overrides, args.seed)


def _as_overrides(d, prefix=()):
    out = []
    for k, v in d.items():
        if isinstance(v, dict) and k != "family":
            out.extend(_as_overrides(v, prefix + (k,)))
        else:
            out.append((list(prefix + (k,)), v))
    return out


def _out_dir(args, run: RunConfig) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{run.preset}-seed{run.seed}"


def _load_checkpoint(path):
    meta, arrays = load_checkpoint_arrays(path)
    return meta, params_from_arrays(arrays)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_curve_csv(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "mse_mean", "mse_std"])
        for i, (m, s) in enumerate(zip(summary.get("curve_mean", []),
                                       summary.get("curve_std", []))):
            w.writerow([i, repr(m), repr(s)])


# -- commands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    run = _run_config(args)
    if args.iterations is not None:
        run = resolve_config(None, None, _as_overrides(run.to_dict())
                             + [(["outer", "iterations"], args.iterations)])
    family = run.make_family()
    out = _out_dir(args, run)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    dump_config(run, out / "config.yaml")
    manifest = {
        "preset": run.preset, "seed": run.seed, "config_hash": run.hash(),
        "code_version": __version__, "config": run.to_dict(),
        "layout": {"config": "config.yaml", "metrics": "metrics.jsonl",
                   "checkpoints": "checkpoints/ckpt_<iteration>.bin",
                   "final": "params.bin", "summary": "train_summary.json"},
        "workers": args.workers, "started": _now(), "finished": None,
    }
    _write_json(out / "manifest.json", manifest)

    resume = Path(args.resume) if args.resume else None
    start = 0
    if resume is not None:
        meta, _ = load_checkpoint_arrays(resume)
        saved = meta.get("config")
        if saved and RunConfig.from_dict(saved).trajectory_hash() != run.trajectory_hash():
            raise ConfigurationError("checkpoint was written under a different config",
                                     ["resume"])
        start = meta["iteration"]
    metrics_path = out / "metrics.jsonl"
    kept = []
    if resume is not None and metrics_path.exists():
        kept = [ln for ln in metrics_path.read_text().splitlines()
                if ln and json.loads(ln)["iter"] < start]
    with open(metrics_path, "w") as fh:
        for ln in kept:
            fh.write(ln + "\n")

    def write_metrics(rec):
        rec = dict(rec)
        if not args.wall_time:
            rec["wall_ms"] = None
        with open(metrics_path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    params, metrics = meta_train(run, family, resume=resume, checkpoint_dir=ckpt_dir,
                                 on_metrics=write_metrics, workers=args.workers)
    final = sorted(ckpt_dir.glob("ckpt_*.bin"))
    if final:
        (out / "params.bin").write_bytes(final[-1].read_bytes())
    summary = {"iterations": run.outer.iterations, "final_loss": metrics[-1]["loss"] if metrics
               else None, "params_digest": params.digest()}
    _write_json(out / "train_summary.json", summary)
    manifest["finished"] = _now()
    _write_json(out / "manifest.json", manifest)
    print(f"trained {len(metrics)} iterations -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    meta, params = _load_checkpoint(args.checkpoint)
    run = _run_config(args, meta)
    family = run.make_family()
    if args.family:
        family = type(family)() if args.family == family.name else \
            resolve_config(None, None, [(["family"], {"name": args.family})]).make_family()
    summary = evaluate(params, run, family, args.n_tasks, seed=args.eval_seed)
    summary["family"] = family.name
    summary["checkpoint"] = str(args.checkpoint)
    _emit(args, summary)
    return EXIT_OK


def cmd_baseline(args) -> int:
    meta, params = (None, None)
    if args.checkpoint:
        meta, params = _load_checkpoint(args.checkpoint)
    run = _run_config(args, meta)
    family = run.make_family()
    n = run.evaluation.n_tasks if args.n_tasks is None else args.n_tasks
    seed = args.eval_seed
    if args.name == "random":
        summary = random_reservoir_eval(run, family, n, seed=seed)
    elif args.name == "ridge":
        if params is None:
            raise ConfigurationError("ridge baseline needs --checkpoint", ["checkpoint"])
        summary = ridge_baseline(params, run, family, n, seed=seed)
    else:
        cfg = run.backprop
        if family.name == "sine" and cfg.output_sigmoid:
            cfg = BackpropBaselineConfig(**{**cfg.__dict__, "output_sigmoid": False})
        summary = backprop_baseline(family, n, cfg, seed=run.seed if seed is None else seed,
                                    n_steps=run.protocol.steps_per_episode)
    summary["family"] = family.name
    _emit(args, summary, jsonl=True)
    return EXIT_OK


def _grid(family, size):
    axes = [np.linspace(*family.query_range, size)] * family.n_query
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def cmd_probe(args) -> int:
    meta, params = _load_checkpoint(args.checkpoint)
    run = _run_config(args, meta)
    family = run.make_family()
    if family.kind != "stepped":
        raise ConfigurationError("probing needs a stepped task family", ["family.name"])
    grid = _grid(family, args.grid_size)
    steps = [int(s) for s in args.steps.split(",") if s.strip()]
    rng = task_rng(run.seed if args.eval_seed is None else args.eval_seed, 2, args.task_index)
    task = family.sample(rng)
    _, probes = run_stepped_episode(params, run.neuron, family, task, run.protocol, rng,
                                    probe_steps=steps, probe_grid=grid, probe_seed=args.task_index)
    truth = family.target(task, grid)
    names = [f"x{i + 1}" for i in range(family.n_query)]
    n_rows = 0
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", *names, "prediction", "target"])
        for k in steps:
            for q, pred, y in zip(grid, probes[k][:, 0], truth):
                w.writerow([k, *map(repr, q.tolist()), repr(float(pred)), repr(float(y))])
                n_rows += 1
    print(f"wrote {n_rows} rows -> {args.out}")
    return EXIT_OK


def cmd_episode(args) -> int:
    meta, params = _load_checkpoint(args.checkpoint)
    run = _run_config(args, meta)
    family = run.make_family()
    if family.kind != "stepped":
        raise ConfigurationError("episode export needs a stepped task family", ["family.name"])
    seed = run.seed if args.eval_seed is None else args.eval_seed
    rng = task_rng(seed, 2, args.task_index)
    task = family.sample(rng)
    rec, _ = run_stepped_episode(params, run.neuron, family, task, run.protocol, rng)
    rec.seed = seed
    rec.save(args.out)
    print(f"episode of {len(rec.predictions)} steps -> {args.out}")
    return EXIT_OK


def cmd_export(args) -> int:
    rec = load_record(args.record)
    fmt = args.format or Path(args.out).suffix.lstrip(".")
    if fmt == "csv":
        n = rec.to_csv(args.out)
        print(f"wrote {n} rows -> {args.out}")
    elif fmt == "jsonl":
        rec.to_jsonl(args.out)
        print(f"wrote {args.out}")
    else:
        raise ConfigurationError(f"unknown export format {fmt!r}; use csv or jsonl", ["format"])
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in sorted(PRESETS):
        print(name)
    return EXIT_OK


def _emit(args, summary, jsonl=False):
    if args.out:
        if jsonl:
            with open(args.out, "a") as fh:
                fh.write(json.dumps(summary, sort_keys=True) + "\n")
        else:
            _write_json(args.out, summary)
        if args.curve_csv:
            _write_curve_csv(args.curve_csv, summary)
    brief = {k: v for k, v in summary.items() if not isinstance(v, list)}
    print(json.dumps(brief, sort_keys=True))


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spiking-l2l", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="meta-train a reservoir")
    _config_args(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--wall-time", action="store_true",
                   help="record wall-clock time per iteration (metrics no longer reproducible)")
    p.set_defaults(func=cmd_train)

    def eval_like(name, func, help_):
        q = sub.add_parser(name, help=help_)
        _config_args(q)
        q.add_argument("--n-tasks", type=int)
        q.add_argument("--eval-seed", type=int, help="task seed (default: run seed)")
        q.add_argument("--out", help="summary output file")
        q.add_argument("--curve-csv", help="learning curve CSV")
        q.set_defaults(func=func)
        return q

    q = eval_like("eval", cmd_eval, "evaluate a checkpoint on held-out tasks")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--family", help="task family to evaluate on")
    q = eval_like("baseline", cmd_baseline, "run a comparison baseline")
    q.add_argument("name", choices=("ridge", "random", "backprop"))
    q.add_argument("--checkpoint")

    q = sub.add_parser("probe", help="internal-model surfaces during an episode")
    _config_args(q)
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--steps", default="10", help="comma-separated episode steps to probe")
    q.add_argument("--grid-size", type=int, default=21, help="points per query axis")
    q.add_argument("--task-index", type=int, default=0)
    q.add_argument("--eval-seed", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_probe)

    q = sub.add_parser("episode", help="simulate one held-out episode and save its record")
    _config_args(q)
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--task-index", type=int, default=0)
    q.add_argument("--eval-seed", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_episode)

    q = sub.add_parser("export", help="convert an episode record to CSV or JSON lines")
    q.add_argument("record")
    q.add_argument("--format", choices=("csv", "jsonl"))
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_export)

    q = sub.add_parser("presets", help="list preset names")
    q.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # positional KEY=VALUE overrides may come after options
    args, extra = parser.parse_known_args(argv)
    stray = [x for x in extra if x.startswith("-") or "=" not in x]
    if stray or (extra and not hasattr(args, "overrides")):
        parser.error(f"unrecognized arguments: {' '.join(stray or extra)}")
    if extra:
        args.overrides = list(args.overrides or []) + extra
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        if exc.keys:
            print(f"offending keys: {', '.join(exc.keys)}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergence as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
