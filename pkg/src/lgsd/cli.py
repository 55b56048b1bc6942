"""Command line entry point: ``lgsd {train,goal,verify,eval,plot,train-hier}``.

Exit codes: 0 success, 1 a verification or acceptance check failed, 2 usage,
configuration or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .config import ConfigError, RunConfig

logger = logging.getLogger("lgsd")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_config(path: str | None, seed: int | None = None) -> RunConfig:
    cfg = cfgmod.load(path) if path else RunConfig()
    if seed is not None:
        cfg = cfg.replace(trainer={"seed": seed})
    return cfg


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_lgsd_checkpoint(path: str):
    from .trainer import Checkpoint, load_any

    ck = load_any(path)
    if not isinstance(ck, Checkpoint):
        raise UsageError(f"{path} is a hierarchical checkpoint; this command needs a skill checkpoint")
    return ck


def cmd_train(args) -> int:
    from .trainer import train

    cfg = _load_config(args.config, args.seed)
    if args.epochs is not None:
        cfg = cfg.replace(trainer={"epochs": args.epochs})
    out = _out_dir(args.out)
    cfgmod.dump(cfg, out / "config.resolved.json")
    ck = train(cfg, log_path=out / "run_log.jsonl")
    ck.save(out / "checkpoint.json")
    print(json.dumps({"checkpoint": str(out / "checkpoint.json"), "epochs": ck.epoch, "lambda": ck.lam}))
    return EXIT_OK


def cmd_goal(args) -> int:
    from .evaluation import zero_shot_goal

    if args.episodes < 1:
        raise UsageError("--episodes must be at least 1")
    ck = _load_lgsd_checkpoint(args.ckpt)
    res = zero_shot_goal(ck, args.text, radius=args.radius, n_episodes=args.episodes, seed=args.seed, normalize=not args.no_normalize)
    print(json.dumps(res.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    ck = _load_lgsd_checkpoint(args.ckpt) if args.ckpt else None
    report = run_suite(args.suite, ck, seed=args.seed)
    text = json.dumps(report, sort_keys=True, default=float)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK if report["ok"] else EXIT_FAIL


def _trajectories(args):
    from .evaluation import generate, read_trajectory_csv

    if args.traj:
        if not Path(args.traj).is_file():
            raise FileNotFoundError(f"trajectory file not found: {args.traj}")
        return read_trajectory_csv(args.traj), None
    if not args.ckpt:
        raise UsageError("give --ckpt or --traj")
    ck = _load_lgsd_checkpoint(args.ckpt)
    if args.episodes < 1:
        raise UsageError("--episodes must be at least 1")
    return generate(ck, args.episodes, seed=args.seed, deterministic=not args.stochastic), ck


def cmd_eval(args) -> int:
    from .evaluation import alignment, coverage, moved_distance, write_trajectory_csv

    trajs, ck = _trajectories(args)
    if len(trajs) == 0:
        raise UsageError("no episodes to evaluate")
    result = {"episodes": len(trajs)}
    metrics = args.metric or ["coverage"]
    for m in metrics:
        if m == "coverage":
            result["coverage"] = coverage(trajs, args.cell)
            result["cell_size"] = args.cell
        elif m == "moved_distance":
            result["moved_distance"] = moved_distance(trajs)
        elif m == "alignment":
            if ck is None:
                raise UsageError("alignment needs --ckpt")
            result["alignment"] = alignment(ck, trajs)
    if args.traj_out:
        write_trajectory_csv(trajs, args.traj_out)
    text = json.dumps(result, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .evaluation import latent_csv, latent_path, latent_svg, trajectory_svg, write_trajectory_csv

    if not args.ckpt:
        raise UsageError("plot needs --ckpt")
    trajs, _ = _trajectories(args)
    ck = _load_lgsd_checkpoint(args.ckpt)
    out = _out_dir(args.out)
    cfgmod.dump(ck.config, out / "config.resolved.json")
    write_trajectory_csv(trajs, out / "trajectories.csv")
    (out / "trajectories.svg").write_text(trajectory_svg(trajs, ck.config.env.bound))
    D = ck.config.skill.dim
    if D != 2:
        logger.warning("skill dimension is %d; latent drawings are skipped and only CSV tables are written", D)
    for i, (ep, z) in enumerate(zip(trajs.states, trajs.skills)):
        lat = latent_path(ck, ep)
        (out / f"latent_{i:03d}.csv").write_text(latent_csv(lat))
        if D == 2:
            (out / f"latent_{i:03d}.svg").write_text(latent_svg(lat, z))
    print(json.dumps({"out": str(out), "episodes": len(trajs), "svg": D == 2}))
    return EXIT_OK


def cmd_train_hier(args) -> int:
    from .trainer import evaluate_hier, random_low_level, train_hier

    low = _load_lgsd_checkpoint(args.ckpt)
    cfg = _load_config(args.config, args.seed) if args.config else low.config
    if args.seed is not None:
        cfg = cfg.replace(trainer={"seed": args.seed})
    if args.random_low:
        low = random_low_level(low)
    out = _out_dir(args.out)
    cfgmod.dump(cfg, out / "config.resolved.json")
    ck = train_hier(cfg, low, log_path=out / "hier_log.jsonl")
    ck.save(out / "hier_checkpoint.json")
    rate = evaluate_hier(ck, n_episodes=args.eval_episodes, seed=cfg.trainer.seed)
    print(json.dumps({"checkpoint": str(out / "hier_checkpoint.json"), "success_rate": rate}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lgsd", description="Language-guided skill discovery on planar toy environments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="discover skills and write a checkpoint")
    t.add_argument("--config", help="run configuration JSON (defaults if omitted)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int, help="override trainer.epochs")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("goal", help="reach a goal given as a sentence")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--text", required=True)
    g.add_argument("--episodes", type=int, default=10)
    g.add_argument("--radius", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-normalize", action="store_true", help="use the raw inferred skill instead of its direction")
    g.set_defaults(func=cmd_goal)

    v = sub.add_parser("verify", help="run a numerical self-check suite")
    v.add_argument("--suite", required=True, choices=["metric", "grad", "telescope", "constraint"])
    v.add_argument("--ckpt")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="also write the JSON report here")
    v.set_defaults(func=cmd_verify)

    for name, func, helptext in (("eval", cmd_eval, "compute metrics"), ("plot", cmd_plot, "write trajectory and latent-trace artifacts")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--ckpt")
        e.add_argument("--traj", help="trajectory CSV to read instead of rolling out")
        e.add_argument("--episodes", type=int, default=50)
        e.add_argument("--seed", type=int, default=0)
        e.add_argument("--stochastic", action="store_true", help="sample actions instead of using the mean")
        if name == "eval":
            e.add_argument("--metric", action="append", choices=["coverage", "moved_distance", "alignment"])
            e.add_argument("--cell", type=float, default=0.01)
            e.add_argument("--traj-out", help="write the evaluated trajectories as CSV")
            e.add_argument("--out", help="also write the metric JSON here")
        else:
            e.add_argument("--out", required=True, help="output directory")
        e.set_defaults(func=func)

    h = sub.add_parser("train-hier", help="train a goal-reaching controller over a skill checkpoint")
    h.add_argument("--ckpt", required=True, help="skill checkpoint to control")
    h.add_argument("--config", help="run configuration JSON (defaults to the checkpoint's)")
    h.add_argument("--out", required=True)
    h.add_argument("--seed", type=int)
    h.add_argument("--random-low", action="store_true", help="replace the skills by a fresh initialization (baseline)")
    h.add_argument("--eval-episodes", type=int, default=200)
    h.set_defaults(func=cmd_train_hier)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
