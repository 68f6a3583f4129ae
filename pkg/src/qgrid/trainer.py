"""PPO with an episodic exploration bonus, evaluation and the training loop.

Rollout actors are stepped in lock-step inside one process: each actor owns
its world, notebook and seeded RNG stream, and all actors share one batched
forward pass of the frozen policy per step. Updates happen between
collection phases, so the schedule matches a synchronous actor/learner split.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import IO, Callable, Optional, Sequence

import numpy as np
import torch

from .config import BonusConfig, PPOConfig, RunConfig
from .env import EnvConfig, TranscriptWriter
from .env import reset as env_reset
from .env import step as env_step
from .metrics import EpisodeRecord
from .notebook import DEFAULT_SIMILARITY, Notebook, SimilarityConfig, notebook_init, notebook_insert
from .policy import (
    AgentVariant,
    Policy,
    PolicyBatch,
    SampledActions,
    entropy,
    log_prob,
    make_batch,
    pad_batches,
    policy_notes,
    sample_actions,
    save_checkpoint,
    to_action,
)
from .query_lang import EMPTY, Query, Utterance, utterance_text
from .tasks import task_name

log = logging.getLogger(__name__)

TRAIN_STREAM, EVAL_STREAM, SAMPLER_STREAM = 0, 1, 2


class NonFiniteLoss(FloatingPointError):
    pass


class InsufficientEvaluations(ValueError):
    pass


def exploration_bonus(nb_prev: Notebook, nb_next: Notebook, v: Utterance,
                      cfg: BonusConfig = BonusConfig()) -> float:
    """beta when ``v`` joined the instruction set on this step, else 0."""
    v = tuple(v)
    if not v:
        return 0.0
    return cfg.beta if (v in nb_next.task_set and v not in nb_prev.task_set) else 0.0


def _stream(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=key)


def _torch_generator(seq: np.random.SeedSequence) -> torch.Generator:
    return torch.Generator().manual_seed(int(seq.generate_state(1, dtype=np.uint64)[0] >> 1))


# --- actors ------------------------------------------------------------------

class Actor:
    """One environment stream with its episodic memory."""

    def __init__(self, tasks: Sequence[EnvConfig], seed_seq: np.random.SeedSequence, variant: AgentVariant,
                 similarity: SimilarityConfig = DEFAULT_SIMILARITY, beta: float = 0.0):
        self.tasks = tuple(tasks)
        self.rng = np.random.default_rng(seed_seq)
        self.variant = variant
        self.similarity = similarity
        self.bonus_cfg = BonusConfig(beta)
        self.recurrent_state = None
        self.reset()

    def reset(self):
        idx = int(self.rng.integers(len(self.tasks))) if len(self.tasks) > 1 else 0
        self.cfg = self.tasks[idx]
        self.state, self.obs, self.kb = env_reset(self.cfg, self.rng)
        self.notebook = notebook_init(self.obs.instruction)
        self.last_response: Utterance = EMPTY
        self.queries: list[Query] = []
        self.length = 0
        self.recurrent_state = None

    def notes(self) -> list[Utterance]:
        return policy_notes(self.variant, self.notebook.ordered_task_notes(), self.obs.instruction,
                            self.last_response)

    def step(self, action) -> tuple[float, float, bool, Optional[EpisodeRecord], dict]:
        """Returns (env reward, bonus, done, finished record, step info)."""
        if isinstance(action, Query):
            self.queries.append(action)
        _, result = env_step(self.state, action, self.kb)
        self.length += 1
        v = result.observation.response
        bonus = 0.0
        if v:
            nb_next = notebook_insert(self.notebook, v, self.similarity)
            bonus = exploration_bonus(self.notebook, nb_next, v, self.bonus_cfg)
            self.notebook = nb_next
            self.last_response = v
        self.obs = result.observation
        record = None
        if result.done:
            record = EpisodeRecord(bool(result.info["success"]), self.length, tuple(self.queries),
                                   self.kb.good_queries, task_name(self.cfg.tasks))
        return result.reward_env, bonus, result.done, record, {"result": result}


def _stack_states(policy: Policy, actors: Sequence[Actor]):
    if not policy.recurrent:
        return None
    l = policy.cfg.hidden
    dtype = policy.embed.weight.dtype
    hs, cs = [], []
    for a in actors:
        if a.recurrent_state is None:
            hs.append(torch.zeros(l, dtype=dtype))
            cs.append(torch.zeros(l, dtype=dtype))
        else:
            hs.append(a.recurrent_state[0])
            cs.append(a.recurrent_state[1])
    return torch.stack(hs), torch.stack(cs)


def _policy_step(policy: Policy, actors: Sequence[Actor], generator: torch.Generator, greedy: bool = False):
    batch = make_batch([a.obs.view for a in actors], [a.notes() for a in actors], policy.vocab)
    state = _stack_states(policy, actors)
    with torch.no_grad():
        out = policy(batch, state)
        acts = sample_actions(out, policy.cfg.variant, generator, greedy)
        lp = log_prob(out, acts, policy.cfg.variant)
    if out.state is not None:
        for i, a in enumerate(actors):
            a.recurrent_state = (out.state[0][i], out.state[1][i])
    return batch, state, out, acts, lp


# --- rollouts ----------------------------------------------------------------

@dataclass
class RolloutBuffer:
    batch: PolicyBatch                   # (T*W) rows, time-major
    states: Optional[tuple]              # recurrent input states, or None
    actions: torch.Tensor                # (T*W, 5)
    log_probs: torch.Tensor              # (T*W,)
    values: np.ndarray                   # (T, W)
    rewards_env: np.ndarray              # (T, W)
    bonuses: np.ndarray                  # (T, W)
    dones: np.ndarray                    # (T, W)
    last_values: np.ndarray              # (W,)
    episodes: list[EpisodeRecord] = field(default_factory=list)
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def rewards(self) -> np.ndarray:
        return self.rewards_env + self.bonuses


def collect_rollouts(policy: Policy, actors: Sequence[Actor], n_steps: int,
                     generator: torch.Generator) -> RolloutBuffer:
    """Advance every actor ``n_steps`` times; rewards are env reward + bonus."""
    W = len(actors)
    batches, states, actions, log_probs = [], [], [], []
    values = np.zeros((n_steps, W))
    rewards = np.zeros((n_steps, W))
    bonuses = np.zeros((n_steps, W))
    dones = np.zeros((n_steps, W))
    episodes = []
    for t in range(n_steps):
        batch, state, out, acts, lp = _policy_step(policy, actors, generator)
        batches.append(batch)
        states.append(state)
        actions.append(acts.stack())
        log_probs.append(lp)
        values[t] = out.value.numpy()
        for i, actor in enumerate(actors):
            r, b, done, record, _ = actor.step(to_action(acts, i, policy.vocab))
            rewards[t, i], bonuses[t, i], dones[t, i] = r, b, float(done)
            if done:
                episodes.append(record)
                actor.reset()
    last = make_batch([a.obs.view for a in actors], [a.notes() for a in actors], policy.vocab)
    with torch.no_grad():
        last_values = policy(last, _stack_states(policy, actors)).value.numpy().astype(np.float64)
    stacked_states = None
    if policy.recurrent:
        stacked_states = (torch.cat([s[0] for s in states]), torch.cat([s[1] for s in states]))
    return RolloutBuffer(
        batch=pad_batches(batches),
        states=stacked_states,
        actions=torch.cat(actions),
        log_probs=torch.cat(log_probs),
        values=values,
        rewards_env=rewards,
        bonuses=bonuses,
        dones=dones,
        last_values=last_values,
        episodes=episodes,
    )


def gae_advantages(rewards, values, dones, last_value, gamma: float, lam: float):
    """Generalized advantage estimates along axis 0; terminal steps bootstrap with 0."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    next_value = np.asarray(last_value, dtype=np.float64)
    for t in reversed(range(rewards.shape[0])):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor, clip_epsilon: float) -> torch.Tensor:
    return torch.min(ratio * adv, ratio.clamp(1 - clip_epsilon, 1 + clip_epsilon) * adv)


def ppo_loss(policy: Policy, batch: PolicyBatch, states, actions: SampledActions, old_log_probs: torch.Tensor,
             advantages: torch.Tensor, returns: torch.Tensor, cfg: PPOConfig) -> tuple[torch.Tensor, dict]:
    out = policy(batch, states)
    variant = policy.cfg.variant
    lp = log_prob(out, actions, variant)
    ratio = torch.exp(lp - old_log_probs)
    policy_loss = -clipped_surrogate(ratio, advantages, cfg.clip_epsilon).mean()
    value_loss = ((out.value - returns) ** 2).mean()
    ent = entropy(out, variant).mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * ent
    return loss, {"policy_loss": policy_loss.item(), "value_loss": value_loss.item(), "entropy": ent.item()}


def ppo_update(policy: Policy, optimizer: torch.optim.Optimizer, buffer: RolloutBuffer, cfg: PPOConfig,
               rng: np.random.Generator) -> dict:
    if buffer.advantages is None:
        buffer.advantages, buffer.returns = gae_advantages(
            buffer.rewards, buffer.values, buffer.dones, buffer.last_values, cfg.gamma, cfg.gae_lambda)
    adv = buffer.advantages.reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    dtype = policy.embed.weight.dtype
    adv_t = torch.as_tensor(adv, dtype=dtype)
    ret_t = torch.as_tensor(buffer.returns.reshape(-1), dtype=dtype)
    n = len(buffer)
    totals: dict[str, float] = {}
    steps = 0
    for _ in range(cfg.ppo_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(perm[start:start + cfg.batch_size])
            states = None if buffer.states is None else (buffer.states[0][idx], buffer.states[1][idx])
            loss, stats = ppo_loss(policy, buffer.batch.index(idx), states,
                                   SampledActions.unstack(buffer.actions[idx]), buffer.log_probs[idx],
                                   adv_t[idx], ret_t[idx], cfg)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite PPO loss; minibatch stats {stats}")
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            steps += 1
    return {k: v / steps for k, v in totals.items()}


# --- evaluation --------------------------------------------------------------

@dataclass
class EvalResult:
    success_rate: float
    mean_length: float
    records: list[EpisodeRecord]


def _summarize(records: list[EpisodeRecord]) -> EvalResult:
    return EvalResult(float(np.mean([r.success for r in records])),
                      float(np.mean([r.length for r in records])), records)


def _transcript_extra(actor: Actor, record: Optional[EpisodeRecord], with_notebook: bool) -> dict:
    extra = {}
    if with_notebook:
        extra["notebook"] = [[utterance_text(u) for u in sorted(s)] for s in actor.notebook.sets]
    if record is not None:
        extra.update(good_queries=sorted(utterance_text(q) for q in record.good_set),
                     length=record.length, task=record.task)
    return extra


def evaluate(policy: Policy, task: EnvConfig, n_episodes: int = 500, seed: int = 0, *,
             greedy: bool = False, workers: int = 16, similarity: SimilarityConfig = DEFAULT_SIMILARITY,
             beta: float = 0.0, eval_index: int = 0, transcript: Optional[IO[str]] = None,
             transcript_notebook: bool = False) -> EvalResult:
    """Run exactly ``n_episodes`` episodes on seed streams disjoint from training."""
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    policy.eval()
    W = min(workers, n_episodes)
    actors = [Actor((task,), _stream(seed, EVAL_STREAM, eval_index, w), policy.cfg.variant, similarity, beta)
              for w in range(W)]
    generator = _torch_generator(_stream(seed, SAMPLER_STREAM, eval_index))
    writer = TranscriptWriter(transcript) if transcript is not None else None
    episode_ids = list(range(W))
    started = W
    records: list[Optional[EpisodeRecord]] = [None] * n_episodes
    active = list(range(W))
    while active:
        live = [actors[i] for i in active]
        _, _, _, acts, _ = _policy_step(policy, live, generator, greedy)
        still = []
        for j, i in enumerate(active):
            actor = actors[i]
            action = to_action(acts, j, policy.vocab)
            t = actor.length
            _, bonus, done, record, info = actor.step(action)
            if writer is not None:
                writer.write(episode=episode_ids[i], t=t, action=action, result=info["result"], bonus=bonus,
                             extra=_transcript_extra(actor, record, transcript_notebook))
            if not done:
                still.append(i)
                continue
            records[episode_ids[i]] = record
            if started < n_episodes:
                actor.reset()
                episode_ids[i] = started
                started += 1
                still.append(i)
        active = still
    policy.train()
    return _summarize(records)


def evaluate_agent(make_agent: Callable[[np.random.Generator], object], task: EnvConfig, n_episodes: int = 500,
                   seed: int = 0, *, transcript: Optional[IO[str]] = None,
                   similarity: SimilarityConfig = DEFAULT_SIMILARITY) -> EvalResult:
    """Evaluate a scripted agent exposing ``reset()`` and ``act(state, kb, obs)``."""
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    actor = Actor((task,), _stream(seed, EVAL_STREAM, 0, 0), AgentVariant.AFK, similarity, 0.0)
    agent = make_agent(np.random.default_rng(_stream(seed, SAMPLER_STREAM, 0)))
    writer = TranscriptWriter(transcript) if transcript is not None else None
    records = []
    for ep in range(n_episodes):
        if ep:
            actor.reset()
        agent.reset()
        done = False
        while not done:
            action = agent.act(actor.state, actor.kb, actor.obs)
            t = actor.length
            _, bonus, done, record, info = actor.step(action)
            if writer is not None:
                writer.write(episode=ep, t=t, action=action, result=info["result"], bonus=bonus,
                             extra=_transcript_extra(actor, record, False))
        records.append(record)
    return _summarize(records)


def final_metric(history: Sequence[float]) -> float:
    """Mean of the last ten evaluation success rates."""
    if len(history) < 10:
        raise InsufficientEvaluations(f"need at least 10 evaluations, have {len(history)}")
    # exact rational mean, rounded once
    return float(sum(map(Fraction, history[-10:])) / 10)


# --- training loop -----------------------------------------------------------

@dataclass
class EvalPoint:
    update: int
    env_steps: int
    success: float
    length: float


@dataclass
class TrainResult:
    history: list[EvalPoint]
    final_metric: Optional[float]
    policy: Policy
    env_steps: int
    updates: int


METRIC_FIELDS = ("update", "env_steps", "eval_success", "eval_episode_length")


def _train_summary(episodes: Sequence[EpisodeRecord]) -> str:
    if not episodes:
        return "no finished episodes"
    success = np.mean([e.success for e in episodes])
    asked = np.mean([bool(set(e.queries) & e.good_set) for e in episodes])
    queries = np.mean([len(e.queries) for e in episodes])
    return f"success {success:.3f} good-query rate {asked:.3f} queries/ep {queries:.2f}"


def make_actors(cfg: RunConfig) -> list[Actor]:
    return [Actor(cfg.train_tasks, _stream(cfg.seed, TRAIN_STREAM, w), cfg.variant, cfg.similarity,
                  cfg.effective_beta)
            for w in range(cfg.ppo.workers)]


def train(cfg: RunConfig, out_dir: Optional[str | Path] = None,
          progress: Optional[Callable[[str], None]] = None) -> TrainResult:
    torch.manual_seed(cfg.seed)
    policy = Policy(cfg.policy)
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.ppo.lr)
    actors = make_actors(cfg)
    generator = _torch_generator(_stream(cfg.seed, SAMPLER_STREAM))
    shuffle_rng = np.random.default_rng(_stream(cfg.seed, SAMPLER_STREAM, 1))
    n_updates = math.ceil(cfg.ppo.total_steps / cfg.ppo.steps_per_update)

    out = Path(out_dir) if out_dir is not None else None
    csv_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        csv_path = out / "metrics.csv"
        with open(csv_path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRIC_FIELDS)

    history: list[EvalPoint] = []
    recent: list[EpisodeRecord] = []
    env_steps = 0
    started = time.time()
    for update in range(1, n_updates + 1):
        buffer = collect_rollouts(policy, actors, cfg.ppo.rollout_length, generator)
        env_steps += len(buffer)
        stats = ppo_update(policy, optimizer, buffer, cfg.ppo, shuffle_rng)
        recent.extend(buffer.episodes)
        if update % cfg.eval.every == 0:
            res = evaluate(policy, cfg.eval_task, cfg.eval.episodes, cfg.seed, greedy=cfg.eval.greedy,
                           workers=cfg.eval.workers, similarity=cfg.similarity, eval_index=update)
            point = EvalPoint(update, env_steps, res.success_rate, res.mean_length)
            history.append(point)
            if csv_path is not None:
                with open(csv_path, "a", newline="") as fh:
                    csv.writer(fh).writerow([point.update, point.env_steps, point.success, point.length])
            msg = (f"update {update}/{n_updates} steps {env_steps} eval success {res.success_rate:.3f} "
                   f"length {res.mean_length:.1f} | train {_train_summary(recent)} "
                   f"entropy {stats['entropy']:.3f} [{time.time() - started:.0f}s]")
            recent = []
            log.info(msg)
            if progress is not None:
                progress(msg)
        if out is not None and update % cfg.checkpoint_every == 0:
            save_checkpoint(out / "checkpoint.pt", policy, cfg.to_dict(), update=update, env_steps=env_steps)

    successes = [p.success for p in history]
    fm = final_metric(successes) if len(successes) >= 10 else None
    if out is not None:
        save_checkpoint(out / "checkpoint.pt", policy, cfg.to_dict(), update=n_updates, env_steps=env_steps)
        summary = {"final_metric": fm, "evaluations": len(history), "env_steps": env_steps, "updates": n_updates}
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return TrainResult(history, fm, policy, env_steps, n_updates)
