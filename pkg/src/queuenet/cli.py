"""Command-line entry point: ``queuenet {datagen,train,eval,simulate,replay}``.

Every command writes a run manifest (``run-<command>.json``) into its
output directory with the full configuration, tool version and SHA-256
digests of inputs and outputs.  ``queuenet replay`` re-executes a manifest
and checks that the outputs come out bit-identical.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from . import gnn
from . import train as tr
from .netgraph import TopologyError, load_scenario, validate_scenario
from .simulator import run
from .tensorcore import NonFiniteError
from .tensorcore.checkpoint import CheckpointError
from .traffic import TI_MAX, TI_MIN, generate_tm, load_tm

log = logging.getLogger("queuenet")

WORKERS_ENV = "QUEUENET_WORKERS"


class UsageError(Exception):
    pass


def digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, args: argparse.Namespace, inputs, outputs, seeds) -> Path:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): digest(p) for p in inputs},
        "outputs": {Path(p).name: digest(p) for p in outputs},
    }
    path = out / f"run-{command}.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n")
    return path


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ---

def cmd_datagen(args) -> int:
    if args.ti_min > args.ti_max or not TI_MIN <= args.ti_min or args.ti_max > TI_MAX:
        raise UsageError(f"need {TI_MIN:g} <= --ti-min <= --ti-max <= {TI_MAX:g}")
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    out = _out_dir(args.out)
    data = ds.generate(args.topology, args.count, (args.ti_min, args.ti_max), args.seed, args.workers)
    path = out / f"{args.name}.qnds"
    ds.write(data, path)
    losses = [s.loss for s in data]
    print(f"wrote {len(data)} samples to {path} (regenerated {data.manifest['regenerated']}, "
          f"mean loss {np.mean(losses) if losses else 0.0:.4%})")
    inputs = [] if args.topology.startswith("random") else [args.topology]
    write_manifest(out, "datagen", args, inputs, [path, ds.manifest_path(path)], [args.seed])
    return 0


def _read_all(paths) -> ds.Dataset:
    samples, manifests = [], []
    for p in paths:
        d = ds.read(p)
        samples += d.samples
        manifests.append(d.manifest)
    return ds.Dataset(samples, {"parts": manifests})


def cmd_train(args) -> int:
    out = _out_dir(args.out)
    data = _read_all(args.data)
    if len(data) == 0:
        raise ds.DatasetError("training data is empty")
    config = tr.TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr,
                            lr_decay=args.lr_decay, lr_interval=args.lr_interval,
                            l2_lambda=args.l2, seed=args.seed, eval_every=args.eval_every)
    trace_path, ckpt_path, plot_path = out / "loss.txt", out / "model.ckpt", out / "loss.png"
    start = 0
    if args.resume:
        model, meta = gnn.Model.load(args.resume)
        start = int(meta.get("step", 0))
        if Path(args.resume).resolve() != ckpt_path.resolve() and trace_path.exists():
            trace_path.unlink()
    else:
        model = tr.new_model(data, hidden=args.hidden, iterations=args.iterations, seed=args.seed,
                             target_power=getattr(args, "target_power", 0.0),
                             link_path_messages=args.link_messages)
        trace_path.unlink(missing_ok=True)
    eval_set = _read_all(args.eval) if args.eval else None

    def progress(step, loss):
        if (step + 1) % args.log_every == 0:
            log.info("step %d loss %.6g lr %.3g", step + 1, loss, config.schedule(step))

    result = tr.train(data, config, model, start_step=start, eval_set=eval_set, on_step=progress)
    model.save(ckpt_path, {"step": result.step if result.trace else start,
                           "train": vars(config)})
    tr.save_trace(trace_path, result.trace, append=bool(args.resume))
    full = tr.load_trace(trace_path)
    if full:
        tr.export_loss_curve(full, plot_path)
    outputs = [ckpt_path, trace_path] + ([plot_path] if full else [])
    for step, m in result.evals:
        print(f"step {step + 1}: eval MRE {m.mre:.4f} R2 {m.r2:.4f}")
    if result.trace:
        print(f"trained steps {start}..{result.step}, final loss {result.trace[-1][1]:.6g}")
    write_manifest(out, "train", args, list(args.data) + ([args.resume] if args.resume else []),
                   outputs, [args.seed])
    return 0


def cmd_eval(args) -> int:
    model, _ = gnn.Model.load(args.model)
    data = _read_all(args.data)
    if len(data) == 0:
        raise ds.DatasetError("evaluation data is empty")
    report = tr.evaluate_by_tag(model, data)
    for tag, m in report.items():
        print(f"{tag:>12}  MRE {m.mre:.4f}  R2 {m.r2:.4f}  paths {m.paths}"
              + (f"  excluded {m.excluded}" if m.excluded else ""))
    if args.out:
        out = _out_dir(args.out)
        path = out / "metrics.json"
        path.write_text(json.dumps({k: m.to_dict() for k, m in report.items()}, indent=1,
                                   sort_keys=True) + "\n")
        write_manifest(out, "eval", args, [args.model, *args.data], [path], [])
    return 0


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    problems = validate_scenario(scenario)
    if problems:
        for v in problems:
            print(f"invalid: {v}", file=sys.stderr)
        return 1
    n = scenario.topology.n_nodes
    if args.tm:
        tm, _, _ = load_tm(args.tm)
    elif args.ti is not None:
        tm = generate_tm(n, args.ti, args.seed)
    else:
        raise UsageError("one of --tm or --ti is required")
    res = run(scenario, tm, duration=args.duration, seed=args.seed)
    lines = ["src dst bandwidth mean_delay sent delivered dropped loss"]
    for p, delay, sent, got, lost, loss in zip(scenario.paths, res.mean_delay, res.sent, res.delivered,
                                               res.dropped, res.path_loss()):
        lines.append(f"{p.src} {p.dst} {float(tm.rates[p.src, p.dst])!r} {float(delay)!r} "
                     f"{int(sent)} {int(got)} {int(lost)} {float(loss)!r}")
    lines.append(f"# total loss {float(res.loss)!r} events {res.events}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = _out_dir(args.out)
        path = out / "simulation.txt"
        path.write_text(text)
        write_manifest(out, "simulate", args, [args.scenario] + ([args.tm] if args.tm else []),
                       [path], [args.seed])
    return 0


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest["command"]
    if command not in COMMANDS or command == "replay":
        raise ValueError(f"cannot replay command {command!r}")
    ns = argparse.Namespace(**manifest["config"])
    if args.out:
        ns.out = args.out
    code = COMMANDS[command](ns)
    if code:
        return code
    out = Path(ns.out)
    mismatched = [name for name, want in manifest["outputs"].items() if digest(out / name) != want]
    for name in mismatched:
        print(f"digest mismatch: {name}", file=sys.stderr)
    if not mismatched:
        print(f"replayed {command}: {len(manifest['outputs'])} outputs identical")
    return 1 if mismatched else 0


COMMANDS = {"datagen": cmd_datagen, "train": cmd_train, "eval": cmd_eval, "simulate": cmd_simulate,
            "replay": cmd_replay}


# --- parser ---

def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="queuenet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"queuenet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="simulate a labelled dataset")
    p.add_argument("--topology", required=True, help="topology file, random:N or random:A-B")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--ti-min", type=float, default=TI_MIN)
    p.add_argument("--ti-max", type=float, default=TI_MAX)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="dataset", help="file stem inside --out")
    p.add_argument("--workers", type=int, default=_default_workers(),
                   help=f"parallel simulations (default ${WORKERS_ENV} or 1)")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train the delay model")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval", nargs="*", default=None, help="datasets evaluated every --eval-every steps")
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--iterations", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-decay", type=float, default=0.6)
    p.add_argument("--lr-interval", type=int, default=80_000)
    p.add_argument("--l2", type=float, default=0.1)
    p.add_argument("--target-power", type=float, default=0.0,
                   help="Box-Cox power of the delay target (0 is log)")
    p.add_argument("--link-messages", action="store_true", help="also feed path messages to links")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=500)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on datasets")
    p.add_argument("--model", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="simulate one scenario")
    p.add_argument("--scenario", required=True, help="topology file with ports (routing optional)")
    p.add_argument("--tm", help="traffic matrix file")
    p.add_argument("--ti", type=float, help="draw a random traffic matrix at this intensity")
    p.add_argument("--duration", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    p.add_argument("manifest")
    p.add_argument("--out", help="write outputs here instead of the recorded directory")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"queuenet: error: {exc}", file=sys.stderr)
        return 2
    except (ds.DatasetError, CheckpointError, TopologyError, tr.TrainingError, NonFiniteError,
            OSError, ValueError, KeyError) as exc:
        print(f"queuenet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
