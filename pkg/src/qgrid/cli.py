"""Command-line entry points: train, eval, play, inspect, report.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. The master
seed can be overridden with the ``QGRID_SEED`` environment variable; an
explicit ``--seed`` wins over it.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import IO, Optional, Sequence

import numpy as np

from .config import BonusConfig, ConfigError, EvalConfig, PPOConfig, RunConfig
from .env import LEGEND, EnvConfig, PhysicalAction, compose, render
from .env import reset as env_reset
from .env import step as env_step
from .expert import RandomBoxAgent, ScriptedExpert
from .metrics import Report, aggregate_report, read_transcripts
from .notebook import SimilarityConfig, notebook_init, notebook_insert
from .policy import AgentVariant, MissingCheckpoint, VersionMismatch, load_checkpoint
from .query_lang import QueryParseError, parse_query, utterance_text
from .tasks import task_name
from .trainer import evaluate, evaluate_agent, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
SEED_ENV = "QGRID_SEED"


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(SEED_ENV, f"not an integer: {env!r}") from None
    return 24


def _task(spec: str, seed: int = 0) -> EnvConfig:
    try:
        return compose(spec, seed=seed)
    except (KeyError, ValueError) as exc:
        raise ConfigError("task", str(exc)) from exc


# --- train -------------------------------------------------------------------

def build_run_config(args) -> RunConfig:
    if args.config:
        base = RunConfig.load(args.config)
        if args.seed is not None or SEED_ENV in os.environ:
            base = base.with_updates(seed=_seed(args))
        return base
    seed = _seed(args)
    target = _task(args.task)
    sources = tuple(_task(t) for t in args.train_task) if args.train_task else (target,)
    ppo = PPOConfig(lr=args.lr, steps_per_update=args.steps_per_update, batch_size=args.batch_size,
                    ppo_epochs=args.ppo_epochs, workers=args.workers, total_steps=args.total_steps)
    return RunConfig(
        train_tasks=sources,
        eval_task=target,
        variant=args.variant,
        profile=args.profile,
        seed=seed,
        ppo=ppo,
        bonus=BonusConfig(args.beta),
        similarity=SimilarityConfig(n=args.ngram, alpha=args.alpha),
        eval=EvalConfig(every=args.eval_every, episodes=args.eval_episodes, greedy=args.greedy),
        checkpoint_every=args.checkpoint_every,
        out=args.out,
        verbosity=args.verbose,
    )


def cmd_train(args, out: IO[str]) -> int:
    cfg = build_run_config(args)
    run_dir = Path(cfg.out or "runs") / f"{task_name(cfg.eval_task.tasks)}-{cfg.variant.value}-{cfg.seed}"
    result = train(cfg, run_dir, progress=lambda m: print(m, file=out, flush=True))
    fm = "n/a (fewer than 10 evaluations)" if result.final_metric is None else f"{result.final_metric:.4f}"
    print(f"run directory: {run_dir}", file=out)
    print(f"final metric: {fm}", file=out)
    return EXIT_OK


# --- eval --------------------------------------------------------------------

def cmd_eval(args, out: IO[str]) -> int:
    seed = _seed(args)
    if args.episodes <= 0:
        raise ConfigError("episodes", "must be positive")
    task = _task(args.task)
    transcript = open(args.transcript, "w") if args.transcript else nullcontext(None)
    with transcript as fh:
        if args.checkpoint == "expert":
            res = evaluate_agent(lambda rng: ScriptedExpert(), task, args.episodes, seed, transcript=fh)
        elif args.checkpoint == "random-box":
            res = evaluate_agent(RandomBoxAgent, task, args.episodes, seed, transcript=fh)
        else:
            policy, payload = load_checkpoint(args.checkpoint)
            run = payload.get("run_config") or {}
            sim = run.get("similarity", {})
            similarity = SimilarityConfig(n=sim.get("n", 1), alpha=sim.get("alpha", 0.5))
            res = evaluate(policy, task, args.episodes, seed, greedy=args.greedy, similarity=similarity,
                           transcript=fh, transcript_notebook=args.transcript_notebook)
    report = aggregate_report(res.records, label=task_name(task.tasks))
    _emit_report(report, args.out, out)
    return EXIT_OK


def _emit_report(report: Report, out_dir: Optional[str], out: IO[str]):
    print(report.render(), file=out)
    if out_dir:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        report.write_csv(d / "report.csv", d / "query_histogram.csv")
        print(f"report written to {d}", file=out)


def cmd_report(args, out: IO[str]) -> int:
    records = read_transcripts(args.transcripts)
    if not records:
        raise ConfigError("transcripts", "no finished episodes found")
    _emit_report(aggregate_report(records, label=args.label), args.out, out)
    return EXIT_OK


# --- inspect / play ----------------------------------------------------------

def cmd_inspect(args, out: IO[str]) -> int:
    task = _task(args.task)
    state, obs, kb = env_reset(task, np.random.default_rng(_seed(args)))
    print(f"task: {task_name(task.tasks)}", file=out)
    print(f"instruction: {utterance_text(obs.instruction)}", file=out)
    print(f"rooms: {task.rooms}  room size: {task.room_size}  early termination: {task.early_terminate}",
          file=out)
    print(f"H={state.horizon}", file=out)
    print(render(state), file=out)
    print(LEGEND, file=out)
    print(f"knowledge base ({len(kb)} facts, * marks good queries):", file=out)
    for line in kb.dump():
        print("  " + line, file=out)
    print(f"|Q_t|={len(kb.good_queries)}", file=out)
    for q in sorted(kb.good_queries):
        print(f"  {utterance_text(q)}", file=out)
    return EXIT_OK


PLAY_HELP = ("commands: left, right, forward, pickup, drop, toggle, done, "
             "ask <func> <adj> <noun>, notebook, help, quit")


def cmd_play(args, out: IO[str], inp: IO[str] = sys.stdin) -> int:
    task = _task(args.task)
    state, obs, kb = env_reset(task, np.random.default_rng(_seed(args)))
    nb = notebook_init(obs.instruction)
    print(f"instruction: {utterance_text(obs.instruction)}", file=out)
    print(render(state), file=out)
    print(PLAY_HELP, file=out)
    for line in inp:
        cmd = line.strip().lower()
        if not cmd:
            continue
        if cmd == "quit":
            break
        if cmd == "help":
            print(PLAY_HELP, file=out)
            continue
        if cmd == "notebook":
            for i, group in enumerate(nb.sets):
                tag = "A0" if i == 0 else f"A{i}"
                print(f"{tag}: " + " | ".join(utterance_text(u) for u in sorted(group)), file=out)
            continue
        if cmd.startswith("ask "):
            try:
                action = parse_query(cmd[4:])
            except QueryParseError as exc:
                print(f"bad query: {exc}", file=out)
                print(PLAY_HELP, file=out)
                continue
        elif cmd.upper() in PhysicalAction.__members__:
            action = PhysicalAction[cmd.upper()]
        else:
            print(f"unknown command {cmd!r}", file=out)
            print(PLAY_HELP, file=out)
            continue
        _, result = env_step(state, action, kb)
        if result.observation.response:
            print(f"oracle: {utterance_text(result.observation.response)}", file=out)
            nb = notebook_insert(nb, result.observation.response)
        print(render(state), file=out)
        if result.done:
            verdict = "success" if result.info["success"] else "failed"
            print(f"episode over: {verdict}, reward {result.reward_env:.3f}", file=out)
            break
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qgrid", description="Queryable grid-world lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    def seeded(p):
        p.add_argument("--seed", type=int, default=None, help=f"master seed (env override: {SEED_ENV})")

    t = sub.add_parser("train", help="train an agent with PPO")
    t.add_argument("--config", help="resolved config.json from an earlier run")
    t.add_argument("--task", default="danger", help="evaluation task, e.g. 'danger' or 'box+danger'")
    t.add_argument("--train-task", action="append", default=[],
                   help="source task for training (repeatable); defaults to --task")
    t.add_argument("--variant", default="afk", choices=[v.value for v in AgentVariant])
    seeded(t)
    t.add_argument("--total-steps", type=int, default=2_000_000)
    t.add_argument("--beta", type=float, default=0.1)
    t.add_argument("--alpha", type=float, default=0.5)
    t.add_argument("--ngram", type=int, default=1, choices=(1, 2))
    t.add_argument("--workers", type=int, default=8)
    t.add_argument("--profile", default="lite", choices=("paper", "lite"))
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--steps-per-update", type=int, default=2560)
    t.add_argument("--batch-size", type=int, default=1280)
    t.add_argument("--ppo-epochs", type=int, default=4)
    t.add_argument("--eval-every", type=int, default=50)
    t.add_argument("--eval-episodes", type=int, default=500)
    t.add_argument("--greedy", action="store_true", help="greedy evaluation actions")
    t.add_argument("--checkpoint-every", type=int, default=50)
    t.add_argument("--out", default="runs")
    t.add_argument("-v", "--verbose", action="count", default=1)

    e = sub.add_parser("eval", help="evaluate a checkpoint or a scripted agent")
    e.add_argument("--checkpoint", required=True, help="checkpoint path, or 'expert' / 'random-box'")
    e.add_argument("--task", default="danger")
    e.add_argument("--episodes", type=int, default=500)
    seeded(e)
    e.add_argument("--greedy", action="store_true")
    e.add_argument("--transcript", help="write a JSON-lines transcript here")
    e.add_argument("--transcript-notebook", action="store_true", help="include notebook contents per step")
    e.add_argument("--out", help="directory for report CSVs")

    p = sub.add_parser("play", help="interactive text session")
    p.add_argument("--task", default="danger")
    seeded(p)

    i = sub.add_parser("inspect", help="print a sampled world, its knowledge base and Q_t")
    i.add_argument("--task", default="danger")
    seeded(i)

    r = sub.add_parser("report", help="aggregate transcripts into report CSVs")
    r.add_argument("transcripts", nargs="+")
    r.add_argument("--label", default="")
    r.add_argument("--out", help="directory for report CSVs")
    return parser


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "play": cmd_play, "inspect": cmd_inspect, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None, out: IO[str] = sys.stdout) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingCheckpoint, VersionMismatch) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level failure boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
