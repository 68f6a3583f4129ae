import io
import json

import numpy as np

from qgrid.env import PhysicalAction, compose, render, reset, step
from qgrid.oracle import answer
from qgrid.query_lang import Query, utterance_text

from qgrid.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, SEED_ENV, cmd_play, build_parser, main


def run(argv):
    out = io.StringIO()
    code = main(argv, out)
    return code, out.getvalue()


def test_inspect_favorite_horizon():
    code, text = run(["inspect", "--task", "♦", "--seed", "3"])
    assert code == EXIT_OK
    assert "H=225" in text


def test_inspect_danger_single_good_query():
    code, text = run(["inspect", "--task", "♠", "--seed", "3"])
    assert code == EXIT_OK
    assert "|Q_t|=1" in text and "what's danger zone" in text


def test_inspect_same_seed_same_dump():
    assert run(["inspect", "--task", "box+danger", "--seed", "9"]) == run(["inspect", "--task", "box+danger",
                                                                           "--seed", "9"])
    assert run(["inspect", "--task", "box", "--seed", "9"]) != run(["inspect", "--task", "box", "--seed", "10"])


def test_seed_environment_override(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "9")
    from_env = run(["inspect", "--task", "box"])
    assert from_env == run(["inspect", "--task", "box", "--seed", "9"])
    assert run(["inspect", "--task", "box", "--seed", "10"]) != from_env
    monkeypatch.setenv(SEED_ENV, "nine")
    assert run(["inspect", "--task", "box"])[0] == EXIT_CONFIG


def test_invalid_ngram_rejected():
    assert run(["train", "--ngram", "3"])[0] == EXIT_CONFIG


def test_config_error_names_field(capsys):
    code, _ = run(["train", "--workers", "3", "--total-steps", "10"])
    assert code == EXIT_CONFIG
    assert "steps_per_update" in capsys.readouterr().err
    assert run(["inspect", "--task", "kitchen"])[0] == EXIT_CONFIG


def test_missing_checkpoint_is_runtime_failure(tmp_path):
    assert run(["eval", "--checkpoint", str(tmp_path / "nope.pt"), "--episodes", "2"])[0] == EXIT_RUNTIME


def test_eval_expert_on_danger(tmp_path):
    transcript = tmp_path / "t.jsonl"
    code, text = run(["eval", "--checkpoint", "expert", "--task", "♠", "--episodes", "20",
                      "--transcript", str(transcript), "--out", str(tmp_path / "rep")])
    assert code == EXIT_OK
    assert "100.0 ± 0.0" in text
    assert "queries per episode" in text
    assert (tmp_path / "rep" / "report.csv").exists() and (tmp_path / "rep" / "query_histogram.csv").exists()
    code, again = run(["report", str(transcript), "--label", "danger"])
    assert code == EXIT_OK
    assert "100.0 ± 0.0" in again and "f1" in again


def test_default_eval_episode_count():
    args = build_parser().parse_args(["eval", "--checkpoint", "expert"])
    assert args.episodes == 500


def play(lines, task="danger", seed=1):
    out = io.StringIO()
    args = build_parser().parse_args(["play", "--task", task, "--seed", str(seed)])
    code = cmd_play(args, out, io.StringIO("\n".join(lines) + "\n"))
    return code, out.getvalue()


def test_play_ask_prints_reply():
    state, _, kb = reset(compose("danger"), np.random.default_rng(1))
    reply = answer(kb, Query("what's", "danger", "zone"), state.agent_pos)
    code, text = play(["ask what's danger zone", "quit"])
    assert code == EXIT_OK
    assert f"oracle: {utterance_text(reply)}\n" in text
    assert utterance_text(reply) != "i don't know"


def test_play_unknown_command_shows_help():
    code, text = play(["dance", "notebook", "quit"])
    assert "unknown command" in text and "commands:" in text
    assert "A0: " in text


def test_play_forward_into_wall_keeps_position():
    state, _, kb = reset(compose("danger"), np.random.default_rng(1))
    turns = 0
    while state.walkable(state.front):
        step(state, PhysicalAction.LEFT, kb)
        turns += 1
        assert turns < 4, "seed 1 should start next to a wall"
    before = render(state)
    _, text = play(["left"] * turns + ["forward", "quit"])
    assert text.endswith(before + "\n" + before + "\n")


def test_train_cli_smoke(tmp_path):
    code, text = run(["train", "--task", "danger", "--seed", "4", "--workers", "2", "--steps-per-update", "32",
                      "--batch-size", "16", "--ppo-epochs", "1", "--total-steps", "64", "--eval-every", "1",
                      "--eval-episodes", "2", "--checkpoint-every", "1", "--out", str(tmp_path)])
    assert code == EXIT_OK
    run_dir = tmp_path / "danger-afk-4"
    assert "final metric: n/a" in text
    assert json.loads((run_dir / "config.json").read_text())["seed"] == 4
    code, text = run(["eval", "--checkpoint", str(run_dir / "checkpoint.pt"), "--task", "danger",
                      "--episodes", "3"])
    assert code == EXIT_OK and "episodes" in text
