"""Command line entry point: ``railflat <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

from .conflict import DirectionClass
from .grid_env import dump_map, generate_map, load_map
from .harness import (
    FixtureSuite,
    GeneratedSuite,
    MetricSeries,
    evaluate,
    evaluate_baseline,
    train,
)
from .hmodel import HModelError, h_geometry, oracle_simulate, resolve
from .observation import MANEUVERS, build_observation
from .qlearn import QLearnError, TrainConfig


def _suite(args) -> GeneratedSuite | FixtureSuite:
    if args.map:
        return FixtureSuite.from_file(args.map)
    return GeneratedSuite(args.width, args.height, args.agents, args.stations, args.seed or 0)


def _summary(tag: str, series: MetricSeries) -> str:
    return (
        f"{tag:>8}: episodes={len(series)} mean_r={series.mean():.4f} "
        f"completion={series.mean('completion_pct'):.3f} deadlocks={series.mean('deadlock_count'):.2f}"
    )


def _write(series: dict[str, MetricSeries], out: str | None) -> None:
    for tag, s in series.items():
        print(_summary(tag, s))
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            s.write_csv(Path(out) / f"eval_{tag}.csv")


def cmd_gen(args) -> int:
    state = generate_map(args.width, args.height, args.agents, args.stations, args.seed or 0)
    text = dump_map(state)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {"seed": args.seed, "episodes": args.episodes, "arch": args.arch}
    values = {k: v for k, v in overrides.items() if v is not None}
    if values:
        config = TrainConfig.from_text(config.to_text() + "".join(f"{k}={v}\n" for k, v in values.items()))

    def progress(episode, record):
        if args.verbose or (episode + 1) % 100 == 0:
            print(f"episode {episode + 1}: r={record.normalized_reward:.4f} steps={record.steps}", flush=True)

    result = train(config, _suite(args), out_dir=args.out, progress=progress)
    print(f"best eval mean r = {result.best_score:.4f} after {result.updates} updates")
    if args.out:
        print(f"wrote {args.out}/best.ckpt and metrics CSVs")
    return 0


def cmd_eval(args) -> int:
    series = evaluate(args.checkpoint, _suite(args), args.episodes or 20, args.arch, args.baseline)
    _write(series, args.out)
    return 0


def cmd_baseline(args) -> int:
    _write({"greedy": evaluate_baseline(_suite(args), args.episodes or 20)}, args.out)
    return 0


def cmd_observe(args) -> int:
    state = load_map(Path(args.map).read_text())
    obs = build_observation(state, args.agent)
    if obs is None:
        print(f"agent {args.agent} has no decision pending")
        return 0
    names = [m.name for m in MANEUVERS] + ["STOP"]
    for name, value, ok in zip(names, obs.values, obs.mask):
        print(f"{name:>13} {value:.6f}{'' if ok else '  (invalid)'}")
    for label, sets in (("proceed", obs.conflicts.proceed), ("stop", obs.conflicts.stop)):
        for k, entries in sets.items():
            for e in entries:
                g = e.geometry
                print(
                    f"{label} {MANEUVERS[k].name} vs agent {e.other_id}: {g.direction_class.value} "
                    f"d1={g.d1} d2={g.d2} l={g.l} time={float(e.time):g}"
                )
    return 0


def _geometry(args):
    cls = DirectionClass(args.cls)
    return h_geometry(args.d1, args.d2, args.l, Fraction(args.v1), Fraction(args.v2), cls)


def cmd_solve(args) -> int:
    res = resolve(_geometry(args))
    fmt = lambda t: "-" if t is None else str(t)
    print(f"action={res.action_1.value} t_proceed={fmt(res.t_proceed)} t_yield={fmt(res.t_yield)}")
    return 0


def cmd_oracle(args) -> int:
    res = oracle_simulate(_geometry(args))
    print(f"best={res.best_order.value} time_order1={res.time_order1} time_order2={res.time_order2}")
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="railflat", description="Railway multi-agent scheduling toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def env_opts(sp, map_required=False):
        sp.add_argument("--map", required=map_required, help="map file (default: generated maps)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--width", type=int, default=28)
        sp.add_argument("--height", type=int, default=16)
        sp.add_argument("--agents", type=int, default=6)
        sp.add_argument("--stations", type=int, default=4)

    sp = sub.add_parser("gen", help="generate a random map file")
    env_opts(sp)
    sp.add_argument("--out", help="output file (default: stdout)")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train a Q-function")
    env_opts(sp)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--arch", choices=["linear", "dueling"])
    sp.add_argument("--config", help="key=value config file")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate checkpoints with eps = 0")
    env_opts(sp)
    sp.add_argument("checkpoint", nargs="+")
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--arch", choices=["linear", "dueling"])
    sp.add_argument("--baseline", action="store_true", help="also run the greedy baseline")
    sp.add_argument("--out", help="directory for per-policy CSVs")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("baseline", help="evaluate the greedy shortest-path baseline")
    env_opts(sp)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--out", help="directory for the CSV")
    sp.set_defaults(func=cmd_baseline)

    sp = sub.add_parser("observe", help="print an agent's observation on a map")
    sp.add_argument("--map", required=True)
    sp.add_argument("--agent", type=int, required=True)
    sp.set_defaults(func=cmd_observe)

    for name, func in (("solve-conflict", cmd_solve), ("oracle", cmd_oracle)):
        sp = sub.add_parser(name, help="resolve a two-train H conflict" if func is cmd_solve else "brute-force both orderings")
        sp.add_argument("--d1", type=int, required=True)
        sp.add_argument("--d2", type=int, required=True)
        sp.add_argument("--l", type=int, required=True)
        sp.add_argument("--v1", default="1", help="speed, e.g. 1/2")
        sp.add_argument("--v2", default="1")
        sp.add_argument("--class", dest="cls", choices=[c.value for c in DirectionClass], default="opposite")
        sp.set_defaults(func=func)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (HModelError, QLearnError, ValueError, OSError) as exc:
        print(f"railflat {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
