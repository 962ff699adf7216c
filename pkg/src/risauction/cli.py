"""Command-line surface: generate / auction / train / evaluate / sweep."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import harness, metrics
from .agents import BidPolicy
from .rng import stream_seed
from .scenario import sample_scenario


def _load_raw_config(path: str | None) -> dict:
    if path is None:
        with open(harness.default_config_path(), "r", encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return raw if raw is not None else {}


def _apply_set(raw: dict, assignments: list[str]) -> None:
    for item in assignments:
        if "=" not in item:
            raise SystemExit(f"--set expects key.path=value, got {item!r}")
        key_path, value = item.split("=", 1)
        node = raw
        keys = key_path.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = yaml.safe_load(value)


def _build_config(args) -> harness.ExperimentConfig:
    raw = _load_raw_config(getattr(args, "config", None))
    _apply_set(raw, getattr(args, "set", []) or [])
    config = harness.config_from_dict(raw)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(
            config, eval=dataclasses.replace(config.eval, base_seed=args.seed))
    if getattr(args, "output_dir", None) is not None:
        config = dataclasses.replace(config, output_dir=args.output_dir)
    import os
    env_dir = os.environ.get(harness.OUTPUT_DIR_ENV)
    if env_dir:
        config = dataclasses.replace(config, output_dir=env_dir)
    return config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config path (default: bundled)")
    parser.add_argument("--seed", type=int, help="override eval.base_seed")
    parser.add_argument("--output-dir", help="override output_dir")
    parser.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                        help="override any config field (repeatable)")


def _cmd_generate(args) -> int:
    config = _build_config(args)
    scenario = sample_scenario(
        config.system, stream_seed(config.eval.base_seed, "macro", args.macro_seed))
    doc = {
        "macro_seed": args.macro_seed,
        "bs_positions": scenario.bs_positions.tolist(),
        "ris_positions": scenario.ris_positions.tolist(),
        "user_positions": scenario.user_positions.tolist(),
        "association": scenario.association.tolist(),
        "los_ub": scenario.los_ub.tolist(),
        "los_rb": scenario.los_rb.tolist(),
        "los_ur": scenario.los_ur.tolist(),
        "gain_ub": scenario.gain_ub.tolist(),
        "gain_rb": scenario.gain_rb.tolist(),
        "gain_ur": scenario.gain_ur.tolist(),
        "k_ur": scenario.k_ur.tolist(),
        "aod_bs": scenario.aod_bs.tolist(),
        "aoa_ris": scenario.aoa_ris.tolist(),
        "aod_ris_user": scenario.aod_ris_user.tolist(),
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _agent_for(args, config):
    if getattr(args, "ckpt", None):
        return BidPolicy.load(args.ckpt, expected_obs_dim=3 + config.system.n_ris)
    return "heuristic"


def _cmd_auction(args) -> int:
    config = _build_config(args)
    rng = np.random.default_rng(config.eval.base_seed)
    allocation, trace, spend = harness.run_episode(
        config, _agent_for(args, config), args.macro_seed,
        deterministic=not args.stochastic, rng=rng)
    out_dir = Path(config.output_dir)
    trace_path = args.trace or out_dir / f"auction_trace_{args.macro_seed}.jsonl"
    harness.write_trace(trace_path, trace)
    counts = allocation.counts(config.system.n_bs)
    print(f"allocation owners: {allocation.owner.tolist()}")
    print(f"ris counts per BS + unassigned: {counts.tolist()}")
    print(f"total spend: {spend}")
    print(f"trace: {trace_path}")
    return 0


def _cmd_train(args) -> int:
    config = _build_config(args)
    if args.episodes is not None:
        config = dataclasses.replace(
            config, train=dataclasses.replace(config.train, total_episodes=args.episodes))
    out = Path(args.out) if args.out else harness.checkpoint_path(
        config.output_dir, args.gamma)
    seed = args.seed if args.seed is not None else config.eval.base_seed
    harness.train_and_save(config, args.gamma, seed, out)
    print(f"checkpoint: {out}")
    print(f"curve: {Path(out).with_suffix('.curve.csv')}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _build_config(args)
    policy = BidPolicy.load(args.ckpt, expected_obs_dim=3 + config.system.n_ris)
    gamma = args.gamma if args.gamma is not None else config.reward.gamma_fair
    reports = harness.evaluate(config, policy, gamma)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_bs = config.system.n_bs
    header = ["macro", "micro", "gamma", "total_spend", "unassigned_ris"]
    for b in range(n_bs):
        header += [f"bs{b}_ris", f"bs{b}_min_rate", f"bs{b}_sum_rate"]
    rows = []
    n_micro = config.eval.n_microscopic
    for i, r in enumerate(reports):
        row = [i // n_micro, i % n_micro, r.gamma_fair, r.total_spend,
               int(r.ris_counts[-1])]
        for b in range(n_bs):
            row += [int(r.ris_counts[b]), r.per_bs_min_rate[b], r.per_bs_sum_rate[b]]
        rows.append(row)
    harness._write_csv(out_dir / "reports.csv", header, rows)
    agg_rows = metrics.aggregate(reports)
    harness._write_csv(out_dir / "metrics.csv", ["gamma", "metric", "mean", "ci95"],
                       [[r["gamma"], r["metric"], r["mean"], r["ci95"]] for r in agg_rows])
    print(f"reports: {out_dir / 'reports.csv'} ({len(reports)} rows)")
    print(f"metrics: {out_dir / 'metrics.csv'}")
    return 0


def _cmd_sweep(args) -> int:
    config = _build_config(args)
    paths = harness.sweep(config, ckpt_dir=args.ckpt_dir, train_missing=args.train_missing)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="risauction",
        description="Fairness-aware auction allocation of reconfigurable "
                    "intelligent surfaces, with learned and heuristic bidders.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="dump one macroscopic scenario as JSON")
    _add_common(p)
    p.add_argument("--macro-seed", type=int, default=0)
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("auction", help="run a single auction episode with trace dump")
    _add_common(p)
    p.add_argument("--macro-seed", type=int, default=0)
    p.add_argument("--ckpt", help="policy checkpoint (default: heuristic agent)")
    p.add_argument("--stochastic", action="store_true",
                   help="sample bids instead of thresholding")
    p.add_argument("--trace", help="trace output path (JSONL)")
    p.set_defaults(func=_cmd_auction)

    p = sub.add_parser("train", help="train one policy at a fixed fairness strength")
    _add_common(p)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--episodes", type=int, help="override train.total_episodes")
    p.add_argument("--out", help="checkpoint path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="run the evaluation protocol on a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gamma", type=float, help="fairness strength (default: config)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate one checkpoint per sweep gamma, emit CSVs + figures")
    _add_common(p)
    p.add_argument("--ckpt-dir", help="checkpoint directory (default: output_dir)")
    p.add_argument("--train-missing", action="store_true",
                   help="train any missing sweep checkpoint first")
    p.set_defaults(func=_cmd_sweep)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
