"""``covy`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .drl.checkpoint import load_checkpoint, save_checkpoint
from .drl.ddpg import DdpgAgent
from .drl.env import NavEnv
from .drl.sac import SacAgent
from .errors import CovyError, InputDomainError
from .harness import (
    FaultSpec,
    ale_table_to_result,
    run_breach_eval,
    run_localization_sweep,
    run_nav_eval,
    run_training_cli,
)
from .records import ResultTable, error_record, export, read_table
from .world import LidarConfig, builtin_scenario, load_scenario

log = logging.getLogger("covy")


class UsageError(InputDomainError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_scenarios(spec: str):
    """Comma-separated built-in names or YAML paths."""
    out = []
    for item in (s.strip() for s in spec.split(",")):
        if not item:
            continue
        p = Path(item)
        out.append(load_scenario(p) if p.suffix in (".yaml", ".yml") or p.exists() else builtin_scenario(item))
    if not out:
        raise InputDomainError("no scenario given")
    return out


def _write_json(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = ResultTable("summary", [], [], obj)
    export(doc, "json", path)


def cmd_train(args, cfg, out: Path):
    algo, agent_cfg = C.agent_config(cfg)
    tcfg = C.training_config(cfg)
    if args.episodes is not None:
        tcfg = C.build(type(tcfg), {**tcfg.__dict__, "episodes": args.episodes})
    scenarios = resolve_scenarios(cfg["scenario"])
    env = NavEnv(scenarios, C.reward_params(cfg), clearance=cfg["nav"]["clearance"],
                 min_goal_dist=cfg["nav"]["min_goal_dist"], max_goal_dist=cfg["nav"]["max_goal_dist"])
    rng = np.random.default_rng([tcfg.seed, 1])
    agent = SacAgent(agent_cfg, rng) if algo == "sac" else DdpgAgent(agent_cfg, rng)
    log.info("training %s for %d episodes", algo, tcfg.episodes)
    tlog, episodes, curve = run_training_cli(env, agent, tcfg, cfg["training"]["curve_window"])
    episodes.summary = {"algorithm": algo, "seed": tcfg.seed, "episodes": len(tlog)}
    export(episodes, "csv", out / "training_episodes.csv")
    export(curve, "csv", out / "training_curve.csv")
    save_checkpoint(agent, out / "checkpoint.npz")
    return {"algorithm": algo, "episodes": len(tlog), "checkpoint": str(out / "checkpoint.npz")}


def cmd_eval_nav(args, cfg, out: Path):
    agent = load_checkpoint(args.checkpoint)
    nav = cfg["nav"]
    modes = [args.mode] if args.mode else list(nav["modes"])
    episodes = args.episodes if args.episodes is not None else nav["episodes"]
    if args.configurations is not None:
        nav = dict(nav, configurations=args.configurations)
    fault = FaultSpec(nav["fault_magnitude"] if args.fault is None else args.fault,
                      nav["trigger_min"], nav["trigger_max"])
    scenarios = resolve_scenarios(cfg["scenario"])
    summary = {}
    for mode in modes:
        log.info("evaluating %s over %d episodes", mode, episodes)
        stats, table = run_nav_eval(agent, scenarios, episodes, mode, fault, cfg["seed"],
                                    C.hybrid_config(cfg, mode), C.amcl_params(cfg), C.reward_params(cfg),
                                    LidarConfig(noise_sigma=nav["lidar_noise"]), nav["clearance"],
                                    nav["min_goal_dist"], nav["max_goal_dist"], nav.get("configurations"))
        export(table, "csv", out / f"nav_{mode}.csv")
        summary[mode] = stats.summary()
    _write_json(summary, out / "nav_summary.json")
    return summary


def cmd_sweep_ale(args, cfg, out: Path):
    rgbd, rgb = C.detector_profiles(cfg)
    sw = cfg["sweep"]
    modes = [args.mode] if args.mode else list(sw["modes"])
    summary = {}
    for mode in modes:
        profile = {"RGBD": rgbd, "RGB": rgb}.get(mode)
        if profile is None:
            raise InputDomainError(f"unknown sensor mode {mode!r}")
        table = run_localization_sweep(profile, sw["repeats"], sw["step"], cfg["seed"], sw["ci_level"])
        export(ale_table_to_result(table), "csv", out / f"ale_{mode.lower()}.csv")
        summary[mode] = {"rows": len(table.rows), "last_distance": table.distances[-1] if table.rows else None}
    return summary


def cmd_eval_breach(args, cfg, out: Path):
    rgbd, rgb = C.detector_profiles(cfg)
    br = cfg["breach"]
    choices = {"RGBD": (rgbd, None), "RGB": (None, rgb), "compound": (rgbd, rgb)}
    modes = [args.mode] if args.mode else list(br["modes"])
    unknown = [m for m in modes if m not in choices]
    if unknown:
        raise InputDomainError(f"unknown breach modes {unknown}")
    scenes = args.scenes if args.scenes is not None else br["scenes"]
    matrices, table = run_breach_eval({m: choices[m] for m in modes}, scenes, br["frames"], cfg["seed"],
                                      cfg["breach_threshold"], C.tracker_params(cfg))
    export(table, "csv", out / "breach_scenes.csv")
    summary = {m: cm.to_record() for m, cm in matrices.items()}
    _write_json(summary, out / "breach_summary.json")
    return summary


def cmd_export(args, cfg, out: Path):
    table = read_table(args.input)
    target = Path(args.output) if args.output else out / (Path(args.input).stem + "." + args.format)
    export(table, args.format, target)
    return {"written": str(target), "rows": len(table.rows)}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scenario", help="built-in scenario name(s) or YAML path(s), comma separated")
    common.add_argument("--seed", type=int)
    common.add_argument("--config", action="append", default=[], help="YAML config layer (repeatable)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config entry, e.g. amcl.count=1000")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="covy", description="Desk-scale social-distancing robot experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a SAC or DDPG agent")
    t.add_argument("--episodes", type=int)
    t.add_argument("--algorithm", choices=["sac", "ddpg"])
    t.set_defaults(func=cmd_train)

    n = sub.add_parser("eval-nav", parents=[common], help="pure-odometry vs hybrid navigation")
    n.add_argument("--checkpoint", required=True)
    n.add_argument("--mode", choices=["pure_odom", "hybrid"])
    n.add_argument("--episodes", type=int)
    n.add_argument("--fault", type=float, help="odometry jump magnitude in meters (0 disables)")
    n.add_argument("--configurations", type=int,
                   help="cycle episodes over this many sampled start/goal/fault draws")
    n.set_defaults(func=cmd_eval_nav)

    a = sub.add_parser("sweep-ale", parents=[common], help="localization error versus distance")
    a.add_argument("--mode", choices=["RGBD", "RGB"])
    a.set_defaults(func=cmd_sweep_ale)

    b = sub.add_parser("eval-breach", parents=[common], help="breach classification confusion matrices")
    b.add_argument("--mode", choices=["RGBD", "RGB", "compound"])
    b.add_argument("--scenes", type=int)
    b.set_defaults(func=cmd_eval_breach)

    e = sub.add_parser("export", parents=[common], help="convert a result table between CSV and JSON")
    e.add_argument("--input", required=True)
    e.add_argument("--format", choices=["csv", "json"], required=True)
    e.add_argument("--output")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command = argv[0] if argv and not argv[0].startswith("-") else None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.scenario:
            overrides.append(f"scenario={args.scenario}")
        if getattr(args, "algorithm", None):
            overrides.append(f"agent.algorithm={args.algorithm}")
        cfg = C.load_config(args.config, overrides)
        if not isinstance(cfg["seed"], int):
            raise InputDomainError("seed must be an integer")
        out = Path(args.out)
        result = args.func(args, cfg, out)
        print(json.dumps({"command": command, "status": "ok", "result": result}, default=str))
        return 0
    except (CovyError, ValueError, OSError, KeyError) as exc:
        rec = error_record(exc, command)
        print(json.dumps(rec, default=str), file=sys.stderr)
        return 2 if isinstance(exc, (InputDomainError, ValueError)) else 1


if __name__ == "__main__":
    sys.exit(main())
