"""The task-agnostic knowledge source.

Facts map query triples to token replies. Some facts only answer when the
asker stands close to an anchor entity.
"""
from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, Optional

from .query_lang import DEFAULT_VOCAB, Query, Utterance, Vocabulary, tokenize, utterance_text
from .tasks import Entity, SubTask, TaskInstance, room_words

UNKNOWN: Utterance = ("i", "don't", "know")


@dataclass(frozen=True)
class SpatialGuard:
    entity: str
    anchor: tuple[int, int]
    max_distance: int = 1

    def __post_init__(self):
        if self.max_distance < 1:
            raise ValueError("guard distance must be at least 1")

    def allows(self, pos: tuple[int, int]) -> bool:
        return max(abs(pos[0] - self.anchor[0]), abs(pos[1] - self.anchor[1])) <= self.max_distance


@dataclass(frozen=True)
class KnowledgeFact:
    key: Query
    value: Utterance
    guard: Optional[SpatialGuard] = None

    def __post_init__(self):
        if not self.value:
            raise ValueError(f"fact {self.key} has an empty value")


@dataclass(frozen=True)
class KnowledgeBase:
    facts: Mapping[Query, KnowledgeFact]
    good_queries: frozenset[Query]

    def __post_init__(self):
        object.__setattr__(self, "facts", MappingProxyType(dict(self.facts)))
        missing = self.good_queries - set(self.facts)
        if missing:
            raise ValueError(f"good queries without a fact: {sorted(missing)}")

    def __len__(self) -> int:
        return len(self.facts)

    def dump(self) -> list[str]:
        """Human-readable ``key -> value [guard]`` lines, good queries starred."""
        lines = []
        for key in sorted(self.facts):
            fact = self.facts[key]
            mark = "*" if key in self.good_queries else " "
            line = f"{mark} {utterance_text(key)} -> {utterance_text(fact.value)}"
            if fact.guard is not None:
                g = fact.guard
                line += f" [within {g.max_distance} of {g.entity} at {g.anchor}]"
            lines.append(line)
        return lines


def answer(kb: KnowledgeBase, q: Query, agent_pos: tuple[int, int]) -> Utterance:
    fact = kb.facts.get(tuple(q))
    if fact is None:
        return UNKNOWN
    if fact.guard is not None and not fact.guard.allows(tuple(agent_pos)):
        return UNKNOWN
    return fact.value


def good_query_set(kb: KnowledgeBase) -> frozenset[Query]:
    return kb.good_queries


def _location(entity: Entity, shape) -> Utterance:
    return ("the", entity.color, entity.kind, "is", "in", *room_words(entity.room, shape))


def build_knowledge_base(instance: TaskInstance, vocab: Vocabulary = DEFAULT_VOCAB) -> KnowledgeBase:
    """All task-relevant facts, mirrored facts for the distractor name, and a
    location fact per scattered object."""
    facts: dict[Query, KnowledgeFact] = {}
    good: set[Query] = set()

    def add(key: Query, text: str | Utterance, guard=None, relevant=False):
        value = tokenize(text) if isinstance(text, str) else tuple(text)
        if key in facts and facts[key].value != value:
            raise ValueError(f"conflicting facts for {key}")
        facts[key] = KnowledgeFact(key, value, guard)
        if relevant:
            good.add(key)

    shape = instance.lattice
    for sub in instance.subtasks:
        if sub is SubTask.OBJECT_IN_BOX:
            box = instance.box
            for name, toy in box.toys.items():
                case = box.boxes[name]
                is_target = name == box.target_name
                add(Query("what's", f"{name}'s", "toy"), f"{name}'s toy is the {toy.color} {toy.kind}",
                    relevant=is_target)
                add(Query("where's", toy.color, toy.kind),
                    f"the {toy.color} {toy.kind} is in the {case.color} box", relevant=is_target)
                add(Query("what's", case.color, "box"),
                    f"the {case.color} box contains the {toy.color} {toy.kind}", relevant=is_target)
        elif sub is SubTask.DANGER:
            add(Query("what's", "danger", "zone"), f"the danger zone is {instance.danger.danger_color}",
                relevant=True)
        elif sub is SubTask.GO_TO_FAVORITE:
            fav = instance.favorite
            for name, obj in fav.favorites.items():
                is_target = name == fav.target_name
                add(Query("what's", f"{name}'s", "favorite"),
                    f"{name}'s favorite toy is the {obj.color} {obj.kind}", relevant=is_target)
                add(Query("where's", obj.color, obj.kind), _location(obj, shape), relevant=is_target)
        elif sub is SubTask.OPEN_DOOR:
            door = instance.door
            guard = SpatialGuard(f"{door.door_color} door", door.door_pos, 1)
            add(Query("what's", door.door_color, "door"),
                f"the {door.key_color} key opens the {door.door_color} door", guard=guard, relevant=True)
            for key in door.keys:
                add(Query("where's", key.color, key.kind), _location(key, shape))
    for obj in instance.distractors:
        add(Query("where's", obj.color, obj.kind), _location(obj, shape))

    for fact in facts.values():
        if not vocab.contains(fact.value):
            raise ValueError(f"fact value {fact.value} leaves the vocabulary")
    return KnowledgeBase(facts, frozenset(good))
