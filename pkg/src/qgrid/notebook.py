"""Non-parametric episodic memory of disjoint note sets.

Notes that share enough n-grams end up in the same set; the set holding the
instruction is the only one the agent reads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .query_lang import DEFAULT_STOPWORDS, Utterance, ngram_set


class EmptyInstruction(ValueError):
    pass


@dataclass(frozen=True)
class SimilarityConfig:
    n: int = 1
    alpha: float = 0.5
    stopwords: frozenset[str] = DEFAULT_STOPWORDS

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"n-gram order must be 1 or 2, got {self.n}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "stopwords", frozenset(self.stopwords))


DEFAULT_SIMILARITY = SimilarityConfig()


def similarity(u: Utterance, v: Utterance, cfg: SimilarityConfig = DEFAULT_SIMILARITY) -> float:
    """Overlap coefficient of the stopword-filtered n-gram sets."""
    a = ngram_set(tuple(u), cfg.n, cfg.stopwords)
    b = ngram_set(tuple(v), cfg.n, cfg.stopwords)
    if not a or not b:
        return 0.0
    return len(a & b) / min(len(a), len(b))


@dataclass(frozen=True)
class Notebook:
    sets: tuple[frozenset[Utterance], ...]
    instruction: Utterance
    # first-insertion order of every note; fixes the encoding order of A_0
    order: tuple[Utterance, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.sets)

    @property
    def task_set(self) -> frozenset[Utterance]:
        return self.sets[0]

    def partition(self) -> frozenset[frozenset[Utterance]]:
        return frozenset(self.sets)

    def ordered_task_notes(self) -> list[Utterance]:
        """A_0 as a list: the instruction first, then insertion order."""
        return [self.instruction] + [u for u in self.order if u != self.instruction and u in self.sets[0]]


def notebook_init(v0: Utterance) -> Notebook:
    v0 = tuple(v0)
    if not v0:
        raise EmptyInstruction("the instruction must not be empty")
    return Notebook((frozenset({v0}),), v0, (v0,))


def notebook_insert(nb: Notebook, v: Utterance, cfg: SimilarityConfig = DEFAULT_SIMILARITY) -> Notebook:
    """Merge ``v`` with every set holding a similar note (or ``v`` itself)."""
    v = tuple(v)
    if not v:
        raise ValueError("cannot insert the empty response")
    related = [j for j, group in enumerate(nb.sets)
               if v in group or any(similarity(v, u, cfg) >= cfg.alpha for u in group)]
    if related:
        k = related[0]
        merged = frozenset().union(*(nb.sets[j] for j in related)) | {v}
        sets = [merged if j == k else s for j, s in enumerate(nb.sets) if j == k or j not in related]
    else:
        sets = [*nb.sets, frozenset({v})]
    order = nb.order if v in nb.order else (*nb.order, v)
    return Notebook(tuple(sets), nb.instruction, order)


def task_set(nb: Notebook) -> frozenset[Utterance]:
    return nb.task_set
