"""Template query grammar, vocabulary and n-gram helpers.

A query is a ``<func, adj, noun>`` triple. Utterances are plain tuples of
lowercased tokens; the empty tuple stands for "no response".
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, NamedTuple

Utterance = tuple[str, ...]

EMPTY: Utterance = ()

DEFAULT_STOPWORDS = frozenset({"the", "a", "an", "is", "to", "and", "in", "on"})

FUNC_WORDS = ("what's", "where's")

COLORS = ("red", "green", "blue", "purple", "yellow", "grey")
NAMES = ("mary", "tim")

ADJECTIVES = (
    *COLORS,
    "mary's", "tim's",
    "danger", "target",
    # room position words
    "top", "middle", "bottom", "left", "center", "right",
    # never grounded in a world; they widen the query space
    "big", "small", "old", "new", "shiny", "wooden",
)

NOUNS = (
    "ball", "box", "key", "door",
    "toy", "favorite", "zone", "square", "room",
    "suitcase", "tile", "wall", "floor", "goal", "agent", "object",
    "item", "place", "color", "name", "thing", "way", "side", "corner",
)

OTHER_WORDS = (
    "i", "don't", "know", "find", "is", "the", "in", "contains", "opens",
    "it", "avoid", "and", "go", "to",
)

_PUNCT = re.compile(r"[^\w\s']")


class Query(NamedTuple):
    func: str
    adj: str
    noun: str


class QueryParseError(ValueError):
    pass


class MissingSlot(QueryParseError):
    def __init__(self, slot: str):
        super().__init__(f"missing {slot} slot")
        self.slot = slot


class UnknownToken(QueryParseError):
    def __init__(self, token: str):
        super().__init__(f"token {token!r} fits no query slot")
        self.token = token


class AmbiguousSlot(QueryParseError):
    def __init__(self, token: str, slots: list[str]):
        super().__init__(f"token {token!r} fits slots {slots}")
        self.token = token
        self.slots = slots


class ExtraToken(QueryParseError):
    def __init__(self, slot: str, token: str):
        super().__init__(f"second {slot} token {token!r}")
        self.slot = slot
        self.token = token


@dataclass(frozen=True)
class Vocabulary:
    func_words: tuple[str, ...]
    adjectives: tuple[str, ...]
    nouns: tuple[str, ...]
    other_words: tuple[str, ...] = ()
    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    words: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        groups = [self.func_words, self.adjectives, self.nouns, self.other_words]
        seen: set[str] = set()
        for group in groups:
            for word in group:
                if word in seen:
                    raise ValueError(f"word {word!r} appears in more than one group")
                seen.add(word)
        object.__setattr__(self, "words", tuple(w for g in groups for w in g))

    @property
    def slots(self) -> dict[str, tuple[str, ...]]:
        return {"func": self.func_words, "adj": self.adjectives, "noun": self.nouns}

    def index(self, word: str) -> int:
        """Token id; 0 is reserved for padding."""
        return self._word_ids()[word] + 1

    def _word_ids(self) -> dict[str, int]:
        return _word_ids(self.words)

    def contains(self, u: Iterable[str]) -> bool:
        ids = self._word_ids()
        return all(t in ids for t in u)

    def encode(self, u: Utterance) -> list[int]:
        return [self.index(t) for t in u]

    def all_queries(self) -> list[Query]:
        return [Query(f, a, n) for f in self.func_words for a in self.adjectives for n in self.nouns]

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        """Load from ``[func]``/``[adj]``/``[noun]``/``[other]``/``[stopwords]`` sections,
        one word per line. ``#`` starts a comment."""
        sections: dict[str, list[str]] = {}
        current = None
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip().lower()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                sections.setdefault(current, [])
                continue
            if current is None:
                raise ValueError(f"word {line!r} outside of a section")
            sections[current].append(line)
        unknown = set(sections) - {"func", "adj", "noun", "other", "stopwords"}
        if unknown:
            raise ValueError(f"unknown vocabulary sections: {sorted(unknown)}")
        for required in ("func", "adj", "noun"):
            if not sections.get(required):
                raise ValueError(f"vocabulary section [{required}] is empty or missing")
        return cls(
            func_words=tuple(sections["func"]),
            adjectives=tuple(sections["adj"]),
            nouns=tuple(sections["noun"]),
            other_words=tuple(sections.get("other", ())),
            stopwords=frozenset(sections["stopwords"]) if "stopwords" in sections else DEFAULT_STOPWORDS,
        )

    def to_text(self) -> str:
        parts = []
        for name, words in (("func", self.func_words), ("adj", self.adjectives),
                            ("noun", self.nouns), ("other", self.other_words),
                            ("stopwords", sorted(self.stopwords))):
            parts.append(f"[{name}]")
            parts.extend(words)
        return "\n".join(parts) + "\n"


@lru_cache(maxsize=None)
def _word_ids(words: tuple[str, ...]) -> dict[str, int]:
    return {w: i for i, w in enumerate(words)}


DEFAULT_VOCAB = Vocabulary(FUNC_WORDS, ADJECTIVES, NOUNS, OTHER_WORDS)


def tokenize(text: str) -> Utterance:
    """Lowercase, strip punctuation except apostrophes, split on whitespace."""
    return tuple(_PUNCT.sub(" ", text.lower()).split())


def utterance_text(u: Utterance) -> str:
    return " ".join(u)


def format_query(q: Query) -> Utterance:
    return (q.func, q.adj, q.noun)


def parse_query(u: Utterance | str, vocab: Vocabulary = DEFAULT_VOCAB) -> Query:
    if isinstance(u, str):
        u = tokenize(u)
    found: dict[str, str] = {}
    for token in u:
        if token in vocab.stopwords:
            continue
        slots = [name for name, words in vocab.slots.items() if token in words]
        if not slots:
            raise UnknownToken(token)
        if len(slots) > 1:
            raise AmbiguousSlot(token, slots)
        slot = slots[0]
        if slot in found:
            raise ExtraToken(slot, token)
        found[slot] = token
    for slot in ("func", "adj", "noun"):
        if slot not in found:
            raise MissingSlot(slot)
    return Query(found["func"], found["adj"], found["noun"])


@lru_cache(maxsize=65536)
def ngram_set(u: Utterance, n: int = 1, stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> frozenset[tuple[str, ...]]:
    """Distinct contiguous n-grams of ``u`` after dropping stopwords."""
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n}")
    kept = [t for t in u if t not in stopwords]
    return frozenset(tuple(kept[i:i + n]) for i in range(len(kept) - n + 1))
