"""Run configuration: the merged, validated, serializable view of a run."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .env import EnvConfig, compose
from .notebook import SimilarityConfig
from .policy import AgentVariant, PolicyConfig

REFERENCE_SEEDS = (24, 42, 123, 321, 3407)


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending setting."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class PPOConfig:
    lr: float = 1e-4
    steps_per_update: int = 2560  # transitions per update, summed over workers
    batch_size: int = 1280
    ppo_epochs: int = 4
    gamma: float = 0.99
    workers: int = 64
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    total_steps: int = 20_000_000

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f.name, "must be positive")
        if self.steps_per_update % self.workers:
            raise ConfigError("steps_per_update", f"must be a multiple of workers ({self.workers})")
        if self.batch_size > self.steps_per_update:
            raise ConfigError("batch_size", "must not exceed steps_per_update")
        if not self.gamma <= 1 or not self.gae_lambda <= 1:
            raise ConfigError("gamma", "discount and GAE lambda must lie in (0, 1]")

    @property
    def rollout_length(self) -> int:
        return self.steps_per_update // self.workers


@dataclass(frozen=True)
class BonusConfig:
    beta: float = 0.1

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigError("beta", "must be non-negative")


@dataclass(frozen=True)
class EvalConfig:
    every: int = 50  # updates between evaluations
    episodes: int = 500
    greedy: bool = False
    workers: int = 16

    def __post_init__(self):
        for f in ("every", "episodes", "workers"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"eval.{f}", "must be positive")


@dataclass(frozen=True)
class RunConfig:
    train_tasks: tuple[EnvConfig, ...]
    eval_task: EnvConfig
    variant: AgentVariant = AgentVariant.AFK
    profile: str = "lite"
    hidden: Optional[int] = None
    seed: int = 24
    ppo: PPOConfig = field(default_factory=PPOConfig)
    bonus: BonusConfig = field(default_factory=BonusConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    checkpoint_every: int = 50
    out: Optional[str] = None
    verbosity: int = 1

    def __post_init__(self):
        if not self.train_tasks:
            raise ConfigError("train_tasks", "need at least one training task")
        try:
            object.__setattr__(self, "variant", AgentVariant(self.variant))
        except ValueError:
            raise ConfigError("variant", f"unknown variant {self.variant!r}") from None
        if self.profile not in ("lite", "paper"):
            raise ConfigError("profile", f"unknown profile {self.profile!r}")
        if self.checkpoint_every <= 0:
            raise ConfigError("checkpoint_every", "must be positive")

    @property
    def policy(self) -> PolicyConfig:
        return PolicyConfig(profile=self.profile, hidden=self.hidden, variant=self.variant)

    @property
    def effective_beta(self) -> float:
        return self.bonus.beta if self.variant.uses_bonus else 0.0

    @classmethod
    def for_task(cls, task, **kwargs) -> "RunConfig":
        env = task if isinstance(task, EnvConfig) else compose(task)
        return cls(train_tasks=(env,), eval_task=env, **kwargs)

    def to_dict(self) -> dict:
        d = {
            "train_tasks": [t.to_dict() for t in self.train_tasks],
            "eval_task": self.eval_task.to_dict(),
            "variant": self.variant.value,
            "profile": self.profile,
            "hidden": self.hidden,
            "seed": self.seed,
            "ppo": asdict(self.ppo),
            "bonus": asdict(self.bonus),
            "similarity": {"n": self.similarity.n, "alpha": self.similarity.alpha,
                           "stopwords": sorted(self.similarity.stopwords)},
            "eval": asdict(self.eval),
            "checkpoint_every": self.checkpoint_every,
            "out": self.out,
            "verbosity": self.verbosity,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        try:
            sim = d.pop("similarity", {})
            return cls(
                train_tasks=tuple(EnvConfig.from_dict(t) for t in d.pop("train_tasks")),
                eval_task=EnvConfig.from_dict(d.pop("eval_task")),
                ppo=PPOConfig(**d.pop("ppo", {})),
                bonus=BonusConfig(**d.pop("bonus", {})),
                similarity=SimilarityConfig(n=sim.get("n", 1), alpha=sim.get("alpha", 0.5),
                                            **({"stopwords": frozenset(sim["stopwords"])} if "stopwords" in sim else {})),
                eval=EvalConfig(**d.pop("eval", {})),
                **d,
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("config", str(exc)) from exc

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_updates(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)
