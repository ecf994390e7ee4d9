"""``diffcontrol`` command line.

Exit codes: 0 success, 1 a verify check failed, 2 bad usage or config,
3 a required input is missing, 4 an output path is not writable,
5 a checkpoint or dataset is corrupt, 6 training or sampling diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import pipeline
from . import tasks as T
from .config import RunConfig, load_config, write_resolved
from .exceptions import CheckpointError, DivergenceError, InvalidConfigError, MissingCheckpointError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_MISSING, EXIT_UNWRITABLE, EXIT_CORRUPT, EXIT_DIVERGED = range(7)

log = logging.getLogger("diffcontrol")


def _common(p):
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--seed", type=int, help="seed for this command's randomness")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="diffcontrol", description="Stateful diffusion policies on synthetic tasks.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate expert demonstrations")
    _common(p)
    p.add_argument("--task", action="append", help="task name (repeatable; default: all configured)")
    p.add_argument("--n-demos", type=int, dest="n_demos")

    p = sub.add_parser("train", help="train one stage from a dataset")
    _common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--stage", required=True, choices=pipeline.STAGES)
    p.add_argument("--data", help="dataset root written by gen-data (default: config data_dir)")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("rollout", help="run seeded episodes with one policy")
    _common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--policy", required=True, choices=("stateless_diffusion", "diff_control", "bc", "bc_recurrent"))
    p.add_argument("--ckpt", help="checkpoint root (default: config ckpt_dir)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--occlude", metavar="START:LEN")

    p = sub.add_parser("benchmark", help="evaluate every configured policy on every configured task")
    _common(p)
    p.add_argument("--task", action="append")
    p.add_argument("--policy", action="append")
    p.add_argument("--ckpt", help="checkpoint root (default: config ckpt_dir)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--occlude", metavar="START:LEN", help="also run every cell under this occlusion")
    p.add_argument("--plots", action="store_true", help="write SVG gap plots")

    p = sub.add_parser("verify", help="run the invariant and gradient checks")
    _common(p)
    return ap


def _resolve(args) -> RunConfig:
    over = {}
    if getattr(args, "task", None):
        over["tasks"] = args.task if isinstance(args.task, list) else [args.task]
    if getattr(args, "policy", None):
        over["policies"] = args.policy if isinstance(args.policy, list) else [args.policy]
    for key in ("episodes", "occlude", "n_demos"):
        if getattr(args, key, None) is not None:
            over[key] = getattr(args, key)
    if args.seed is not None:
        over[{"gen-data": "seed_data", "train": "seed_train"}.get(args.command, "seed_eval")] = args.seed
    if getattr(args, "epochs", None) is not None:
        over[{"base": "epochs_base", "transition": "epochs_transition"}.get(args.stage, "epochs_bc")] = args.epochs
    return load_config(args.config, over)


def _writable(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise PermissionError(f"cannot write to {path}: {e}") from None
    return path


def cmd_gen_data(cfg, args):
    out = _writable(args.out or cfg.data_dir)
    for task in cfg.tasks:
        demos = pipeline.make_demos(cfg, task)
        T.save_demos(demos, out / task, extra={"seed": cfg.seed_data})
        print(f"{task}: {len(demos)} demonstrations -> {out / task}")
    write_resolved(cfg, out, "gen-data")
    return EXIT_OK


def cmd_train(cfg, args):
    task = cfg.tasks[0]
    data = Path(args.data or cfg.data_dir) / task
    if not (data / "manifest.json").exists():
        raise MissingCheckpointError(f"dataset not found: {data}")
    demos, _ = T.load_demos(data)
    out = _writable(args.out or cfg.ckpt_dir)
    base = None
    if args.stage == "transition":
        base = pipeline.load_task(out, task, ["base"])["base"]
    ck = pipeline.train_stage(cfg, task, args.stage, demos, base=base)
    from .training import save_checkpoint, write_loss_trace

    digest = save_checkpoint(ck, out / task / f"{args.stage}.ckpt")
    write_loss_trace(ck, out / task / f"{args.stage}_loss.csv")
    write_resolved(cfg, out / task, f"train --stage {args.stage}")
    print(f"{task}/{args.stage}: final loss {ck.loss_trace[-1]:.5f}, digest {digest[:16]}")
    return EXIT_OK


def cmd_rollout(cfg, args):
    from .policy import rollout

    task, name = cfg.tasks[0], cfg.policies[0]
    ckpts = pipeline.load_task(args.ckpt or cfg.ckpt_dir, task, pipeline.stages_for([name]))
    spec, params = pipeline.policy_entry(cfg, name, ckpts)
    out = _writable(args.out or Path(cfg.report_dir) / "rollouts" / f"{name}__{task}")
    wins = 0
    for i in range(cfg.episodes):
        ep = rollout(task, spec, params, rng=cfg.seed_eval + i, perturbation=cfg.occlusion)
        ep.save(out / f"episode_{i:04d}.jsonl")
        wins += bool(ep.success)
    write_resolved(cfg, out, "rollout")
    print(f"{name} on {task}: {wins}/{cfg.episodes} successful -> {out}")
    return EXIT_OK


def cmd_benchmark(cfg, args):
    from .eval import plot_gaps

    root = args.ckpt or cfg.ckpt_dir
    stages = pipeline.stages_for(cfg.policies)
    ckpts = {task: pipeline.load_task(root, task, stages) for task in cfg.tasks}
    perts = [None] + ([cfg.occlusion] if cfg.occlusion is not None else [])
    report = pipeline.benchmark(cfg, ckpts, perts)
    out = _writable(args.out or cfg.report_dir)
    report.save(out)
    report.save_logs(out)
    if args.plots:
        plot_gaps(report, out / "gaps.svg")
    write_resolved(cfg, out, "benchmark")
    for c in report.cells:
        print(
            f"{c.policy:20s} {c.task:7s} {c.perturbation:12s} success {c.success_rate:5.2f} "
            f"[{c.ci_low:.2f}, {c.ci_high:.2f}]  gap {c.mean_gap:.4f}"
        )
    return EXIT_OK


def cmd_verify(cfg, args):
    from .verify import run_invariants

    checks = run_invariants(seed=args.seed or 0)
    for c in checks:
        print(c.line())
    if args.out:
        out = _writable(args.out)
        (out / "verify.json").write_text(
            json.dumps([{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks], indent=1) + "\n"
        )
        write_resolved(cfg, out, "verify")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "benchmark": cmd_benchmark,
    "verify": cmd_verify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg, args)
    except InvalidConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingCheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except PermissionError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNWRITABLE
    except (CheckpointError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
