"""Command line: ``cyclelab {train,eval,baseline,grid,report}``.

``--scenario`` takes a scenario JSON file or a ``synthetic:<intersection>:<route>``
shorthand (e.g. ``synthetic:int1:varying``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .baselines import BASELINE_KINDS, make_controller
from .env import EnvConfig, SignalEnv
from .experiment import LEARNED_METHODS, load_grid_config, report, run_experiment_grid
from .nn import TrainingError, load_checkpoint
from .ppo import TrainConfig, agent_from_checkpoint, evaluate, evaluate_controller, make_env, train
from .scenarios import load_scenario, synthetic
from .sim import SpecificationError

log = logging.getLogger("cyclelab")

EVAL_COLUMNS = ("episode", "m_q", "m_s", "cumulative_reward")


def resolve_scenario(arg: str):
    if arg.startswith("synthetic:"):
        parts = arg.split(":")
        if len(parts) != 3:
            raise SpecificationError("synthetic shorthand is synthetic:<intersection>:<route>")
        return synthetic(parts[1], route=parts[2])
    return load_scenario(arg)


def _train_config(args) -> TrainConfig:
    kw = {}
    if args.train_config:
        kw.update(json.loads(Path(args.train_config).read_text()))
    names = {f.name for f in fields(TrainConfig)}
    unknown = set(kw) - names
    if unknown:
        raise SpecificationError(f"unknown training options {sorted(unknown)}")
    for name in ("episodes", "lr", "batch_size", "epochs"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = v
    kw["seed"] = args.seed
    return TrainConfig(**kw)


def _write_eval(path: Path, res) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_COLUMNS)
        for i, (q, s, r) in enumerate(zip(res.m_q, res.m_s, res.rewards)):
            w.writerow([i, repr(float(q)), repr(float(s)), repr(float(r))])


def _print_eval(label: str, res) -> None:
    print(f"{label}: m_q={res.mean_m_q:.3f} m m_s={res.mean_m_s:.4f} over {len(res.m_q)} episodes")


def cmd_train(args) -> int:
    scenario = resolve_scenario(args.scenario)
    env, topology = make_env(scenario, args.method, args.dt)
    cfg = _train_config(args)
    out = Path(args.out or f"runs/{scenario.name}__{args.method}__dt{args.dt:g}__s{args.seed}")
    result = train(env, cfg, topology, out_dir=out, checkpoint_every=args.checkpoint_every, progress=True)
    r = result.rewards
    n = max(1, len(r) // 10)
    print(f"trained {args.method} for {len(r)} episodes ({result.updates} updates); "
          f"reward first 10% {r[:n].mean():.4f}, last 10% {r[-n:].mean():.4f}")
    print(f"wrote {out / 'checkpoint.npz'} and {out / 'learning_curve.csv'}")
    return 0


def cmd_eval(args) -> int:
    params, meta, _ = load_checkpoint(args.checkpoint)
    scenario = resolve_scenario(args.scenario)
    env = SignalEnv(scenario, EnvConfig(design=meta["design"], delta_t=args.dt,
                                        delta_set=tuple(meta["delta_set"])))
    if env.head_sizes != meta["head_sizes"]:
        raise SpecificationError(f"checkpoint heads {meta['head_sizes']} do not fit scenario heads {env.head_sizes}")
    agent = agent_from_checkpoint(params, meta, env)
    res = evaluate(agent, env, args.episodes, args.seed, greedy=not args.sample)
    _print_eval(f"{meta['design']}/{meta['topology']} dt={args.dt:g}", res)
    if args.out:
        _write_eval(Path(args.out), res)
    return 0


def cmd_baseline(args) -> int:
    scenario = resolve_scenario(args.scenario)
    res = evaluate_controller(make_controller(args.kind), scenario, args.episodes, args.seed, args.dt)
    _print_eval(args.kind, res)
    if args.out:
        _write_eval(Path(args.out), res)
    return 0


def cmd_grid(args) -> int:
    config = load_grid_config(args.config)
    records = run_experiment_grid(config, progress=True)
    failed = [r for r in records if r.status != "ok"]
    print(f"{len(records)} cells, {len(failed)} failed; report in {config.out_dir}")
    return 1 if failed else 0


def cmd_report(args) -> int:
    written = report(args.runs, args.out)
    for name in sorted(written):
        print(written[name])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cyclelab", description="Traffic-signal cycle control lab")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a learned controller")
    t.add_argument("--scenario", required=True)
    t.add_argument("--method", required=True, choices=LEARNED_METHODS)
    t.add_argument("--dt", type=float, default=0.0, help="intervention interval in seconds")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--episodes", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--train-config", help="JSON file of TrainConfig fields")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--out", help="run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint (greedy actions unless --sample)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenario", required=True)
    e.add_argument("--dt", type=float, default=0.0)
    e.add_argument("--episodes", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--sample", action="store_true", help="sample actions from the policy")
    e.add_argument("--out", help="per-episode CSV")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="evaluate a fixed-time or Webster controller")
    b.add_argument("--kind", required=True, choices=BASELINE_KINDS)
    b.add_argument("--scenario", required=True)
    b.add_argument("--dt", type=float, default=0.0)
    b.add_argument("--episodes", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="per-episode CSV")
    b.set_defaults(func=cmd_baseline)

    g = sub.add_parser("grid", help="run an experiment grid from a JSON config")
    g.add_argument("--config", required=True)
    g.set_defaults(func=cmd_grid)

    r = sub.add_parser("report", help="rebuild CSV and SVG report from run records")
    r.add_argument("--runs", required=True)
    r.add_argument("--out", help="report directory (default: the runs directory)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpecificationError, TrainingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
