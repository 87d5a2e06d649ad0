"""Command line: pretrain, run, analyze.

Exit codes: 0 pass, 1 threshold failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import metrics
from .learn import pretrain
from .nervous import NervousError, load_checkpoint, save_checkpoint
from .scenarios import ConfigError, resolve
from .sensing import observation_layout
from .world import build_world, run as run_world

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CURVE_HEADER = ["tick", "species", "mean_reward", "policy_loss", "value_loss", "entropy"]


class UsageError(Exception):
    pass


def checkpoint_path(out_dir, species: str) -> Path:
    return Path(out_dir) / f"{species}.ckpt"


def pretrain_to_dir(config, steps: int, seed: int, out_dir, threads: int = 1) -> dict:
    """Pretrain and write one checkpoint per learned species plus the training curve."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    policies, rows = pretrain(config, steps, seed, threads)
    paths = {}
    for sp in config.species:
        if sp.name in policies:
            p = checkpoint_path(out, sp.name)
            save_checkpoint(p, policies[sp.name], sp.name, observation_layout(sp, config.dims))
            paths[sp.name] = p
    with open(out / "training_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for tick, name, *vals in rows:
            w.writerow([tick, name] + [format(v, ".17g") for v in vals])
    return {"policies": policies, "paths": paths, "curve": rows}


def load_policies(config, checkpoint) -> dict:
    """Checkpoints from a directory of <species>.ckpt files, or a single file."""
    if checkpoint is None:
        return {}
    base = Path(checkpoint)
    if not base.exists():
        raise UsageError(f"checkpoint not found: {base}")
    policies = {}
    for sp in config.species:
        if sp.policy.mode != "learned":
            continue
        p = checkpoint_path(base, sp.name) if base.is_dir() else base
        if base.is_dir() and not p.exists():
            raise UsageError(f"checkpoint not found: {p}")
        try:
            net, header = load_checkpoint(p, observation_layout(sp, config.dims))
        except NervousError as exc:
            if not base.is_dir():
                continue
            raise UsageError(str(exc)) from None
        if header["species"] == sp.name or base.is_dir():
            policies[sp.name] = net
    if not base.is_dir() and not policies:
        raise UsageError(f"{base}: checkpoint matches no species of scenario {config.name}")
    return policies


def run_to_dir(config, steps: int, seed: int, out_dir, policies=None, stride: int | None = None,
               threads: int = 1, random_policy: bool = False):
    """Evolutionary run; writes metrics.csv, events.log and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(config, seed, mode="run", policies=policies, random_policy=random_policy)
    rec = metrics.Recorder(config, stride)
    run_world(world, steps, rec, threads)
    summary = rec.summary(world)
    metrics.write_csv(summary, out / "metrics.csv")
    (out / "events.log").write_text("".join(line + "\n" for line in world.event_lines()))
    metrics.write_manifest(out / "manifest.json", config, seed, list(rec.series),
                           {"steps": steps, "stride": rec.stride,
                            "random_policy": random_policy,
                            "event_counts": summary.event_counts})
    return world, summary


def analyze(summary, kind: str, control=None) -> dict:
    if kind == "predator_prey":
        return metrics.analyze_predator_prey(summary)
    if kind == "marine":
        return metrics.analyze_marine(summary, control)
    if kind == "reflex_goats":
        return metrics.analyze_goats(summary)
    raise UsageError(f"no analysis for scenario kind {kind!r}")


def format_report(kind: str, rep: dict) -> str:
    lines = [f"scenario kind: {kind}"]
    if kind == "predator_prey":
        if rep["deer_peaks"] < 2:
            lines.append("no cycles detected")
        lines += [f"deer peaks: {rep['deer_peaks']} at {rep['peak_ticks']}",
                  f"max lag: {rep['max_lag']}",
                  f"lag grass->deer: {rep['lag_grass_deer']}",
                  f"lag deer->wolf: {rep['lag_deer_wolf']}"]
    elif kind == "marine":
        lines += [f"depth-light pearson r: {rep['r']}",
                  f"mean depth by day: {rep['day_depth']}",
                  f"mean depth by night: {rep['night_depth']}"]
        if "exposure_ratio" in rep:
            lines.append(f"light exposure vs control: {rep['exposure_ratio']:.4f}")
    elif kind == "reflex_goats":
        for g in rep["first"]:
            lines.append(f"gene {g}: first {rep['first'][g]:.4f} last {rep['last'][g]:.4f} "
                         f"extinction-reappearance events {rep['reappearances'][g]}")
    if "error" in rep:
        lines.append(f"note: {rep['error']}")
    lines.append("PASS" if rep["pass"] else "FAIL")
    return "\n".join(lines)


def _config_from(args):
    src = args.config or args.scenario
    if src is None:
        raise UsageError("one of --scenario or --config is required")
    return resolve(src, args.seed)


def cmd_pretrain(args) -> int:
    config = _config_from(args)
    steps = config.pretrain_steps if args.steps is None else args.steps
    res = pretrain_to_dir(config, steps, config.seed, args.out, args.threads)
    for name, p in res["paths"].items():
        print(f"wrote {p}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _config_from(args)
    steps = config.run_steps if args.steps is None else args.steps
    policies = load_policies(config, args.checkpoint)
    run_to_dir(config, steps, config.seed, args.out, policies, args.stride, args.threads,
               args.random_policy)
    print(f"wrote {Path(args.out) / 'metrics.csv'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        summary = metrics.read_csv(args.csv)
        control = metrics.read_csv(args.control) if args.control else None
    except metrics.MetricsError as exc:
        raise UsageError(str(exc)) from None
    kind = args.kind
    if kind is None:
        manifest = Path(args.csv).with_name("manifest.json")
        if manifest.exists():
            kind = json.loads(manifest.read_text()).get("scenario_kind")
    if kind is None:
        raise UsageError("--kind is required when no manifest.json accompanies the CSV")
    try:
        rep = analyze(summary, kind, control)
    except KeyError as exc:
        raise UsageError(f"{args.csv}: missing column {exc.args[0]!r}") from None
    print(format_report(kind, rep))
    return EXIT_OK if rep["pass"] else EXIT_FAIL


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecosim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, steps_help):
        sp.add_argument("--scenario", help="built-in scenario name or config path")
        sp.add_argument("--config", help="path to a JSON scenario config")
        sp.add_argument("--steps", type=_positive, help=steps_help)
        sp.add_argument("--seed", type=_seed, help="overrides the scenario seed")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="sensing worker threads")

    pt = sub.add_parser("pretrain", help="train shared species policies, reproduction off")
    common(pt, "pretraining ticks (default: scenario pretrain_steps)")
    pt.set_defaults(func=cmd_pretrain)

    rn = sub.add_parser("run", help="evolutionary run from checkpoints")
    common(rn, "ticks to simulate (default: scenario run_steps)")
    rn.add_argument("--checkpoint", help="checkpoint file or directory of <species>.ckpt")
    rn.add_argument("--stride", type=int, help="record every N ticks")
    rn.add_argument("--random-policy", action="store_true",
                    help="uniform random policies (control runs)")
    rn.set_defaults(func=cmd_run)

    an = sub.add_parser("analyze", help="summary statistics and pass/fail for a metrics CSV")
    an.add_argument("csv")
    an.add_argument("--kind", "--scenario", dest="kind",
                    choices=["predator_prey", "marine", "reflex_goats"])
    an.add_argument("--control", help="metrics CSV of a random-policy control (marine)")
    an.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "stride", None) is not None and args.stride < 1:
        print("error: --stride must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
