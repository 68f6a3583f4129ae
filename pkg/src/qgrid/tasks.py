"""Sub-task identifiers, per-composition geometry, and sampled task instances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .query_lang import Utterance, tokenize


class SubTask(str, Enum):
    OBJECT_IN_BOX = "object_in_box"
    DANGER = "danger"
    GO_TO_FAVORITE = "go_to_favorite"
    OPEN_DOOR = "open_door"

    @property
    def symbol(self) -> str:
        return _SYMBOLS[self]


_SYMBOLS = {
    SubTask.OBJECT_IN_BOX: "♣",
    SubTask.DANGER: "♠",
    SubTask.GO_TO_FAVORITE: "♦",
    SubTask.OPEN_DOOR: "♥",
}

_ALIASES = {
    "object_in_box": SubTask.OBJECT_IN_BOX, "objectinbox": SubTask.OBJECT_IN_BOX,
    "box": SubTask.OBJECT_IN_BOX, "club": SubTask.OBJECT_IN_BOX, "♣": SubTask.OBJECT_IN_BOX,
    "danger": SubTask.DANGER, "spade": SubTask.DANGER, "♠": SubTask.DANGER,
    "go_to_favorite": SubTask.GO_TO_FAVORITE, "gotofavorite": SubTask.GO_TO_FAVORITE,
    "favorite": SubTask.GO_TO_FAVORITE, "diamond": SubTask.GO_TO_FAVORITE, "♦": SubTask.GO_TO_FAVORITE,
    "open_door": SubTask.OPEN_DOOR, "opendoor": SubTask.OPEN_DOOR, "door": SubTask.OPEN_DOOR,
    "heart": SubTask.OPEN_DOOR, "♥": SubTask.OPEN_DOOR,
}


class DuplicateSubTask(ValueError):
    pass


def parse_task(spec: str | SubTask | tuple | list) -> tuple[SubTask, ...]:
    """Parse ``"danger+favorite"``, ``"♠♦"`` or a sequence of ids into an ordered tuple."""
    if isinstance(spec, SubTask):
        return (spec,)
    if isinstance(spec, (tuple, list)):
        parts = [p if isinstance(p, SubTask) else _lookup(p) for p in spec]
    else:
        text = spec.strip().lower().replace("-", "_").replace(" ", "")
        if any(ch in text for ch in _SYMBOLS.values()) and "+" not in text and "," not in text:
            parts = [_lookup(ch) for ch in text]
        else:
            parts = [_lookup(p) for p in text.replace(",", "+").split("+") if p]
    if not 1 <= len(parts) <= 4:
        raise ValueError(f"a task combines 1 to 4 sub-tasks, got {len(parts)}")
    if len(set(parts)) != len(parts):
        raise DuplicateSubTask(f"sub-task repeated in {spec!r}")
    return tuple(parts)


def _lookup(name: str) -> SubTask:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown sub-task {name!r}") from None


def task_name(tasks: tuple[SubTask, ...]) -> str:
    return "+".join(t.value for t in tasks)


@dataclass(frozen=True)
class TaskGeometry:
    good_queries: int  # |Q_t| as tabulated; composites may exceed the union we emit
    rooms: int
    room_size: int
    early_terminate: bool


_C, _S, _D, _H = SubTask.OBJECT_IN_BOX, SubTask.DANGER, SubTask.GO_TO_FAVORITE, SubTask.OPEN_DOOR

TASK_TABLE: dict[frozenset, TaskGeometry] = {
    frozenset({_C}): TaskGeometry(3, 1, 9, True),
    frozenset({_S}): TaskGeometry(1, 1, 7, True),
    frozenset({_D}): TaskGeometry(2, 9, 5, False),
    frozenset({_H}): TaskGeometry(1, 2, 7, False),
    frozenset({_C, _S}): TaskGeometry(5, 2, 7, True),
    frozenset({_C, _D}): TaskGeometry(4, 9, 5, True),
    frozenset({_C, _H}): TaskGeometry(5, 2, 7, True),
    frozenset({_S, _D}): TaskGeometry(3, 2, 7, True),
    frozenset({_S, _H}): TaskGeometry(2, 2, 7, True),
    frozenset({_D, _H}): TaskGeometry(4, 9, 5, False),
    frozenset({_C, _S, _D}): TaskGeometry(5, 2, 7, True),
    frozenset({_C, _S, _H}): TaskGeometry(6, 3, 7, True),
    frozenset({_C, _D, _H}): TaskGeometry(5, 9, 5, True),
    frozenset({_S, _D, _H}): TaskGeometry(4, 3, 7, True),
    frozenset({_C, _S, _D, _H}): TaskGeometry(7, 9, 7, True),
}

# good queries each sub-task contributes to the union
SUBTASK_GOOD_QUERIES = {_C: 3, _S: 1, _D: 2, _H: 1}


def lattice(rooms: int) -> tuple[int, int]:
    """Rows x cols of the room lattice: square when possible, else one row."""
    side = math.isqrt(rooms)
    if side * side == rooms:
        return side, side
    return 1, rooms


_ROW_WORDS = {1: (), 2: ("top", "bottom"), 3: ("top", "middle", "bottom")}
_COL_WORDS = {1: ("center",), 2: ("left", "right"), 3: ("left", "center", "right")}


def room_words(room: tuple[int, int], shape: tuple[int, int]) -> Utterance:
    """Two tokens naming a room, e.g. ``top left`` or ``left room``.

    Always two content tokens so a location reply overlaps an identity reply
    on exactly half of its words.
    """
    rows, cols = shape
    if rows not in _ROW_WORDS or cols not in _COL_WORDS:
        raise ValueError(f"no room names for a {rows}x{cols} lattice")
    r, c = room
    if rows == 1:
        return (_COL_WORDS[cols][c], "room")
    return (_ROW_WORDS[rows][r], _COL_WORDS[cols][c])


INSTRUCTIONS = {
    SubTask.OBJECT_IN_BOX: "find {name}'s toy",
    SubTask.DANGER: "avoid danger zone and go to the green target square",
    SubTask.GO_TO_FAVORITE: "go to {name}'s favorite toy",
    SubTask.OPEN_DOOR: "find the key to the door",
}


# --- sampled instances -------------------------------------------------------

Pos = tuple[int, int]


@dataclass(frozen=True)
class Entity:
    color: str
    kind: str
    pos: Optional[Pos]  # None when held inside a box
    room: tuple[int, int]


@dataclass(frozen=True)
class BoxInstance:
    target_name: str
    toys: dict[str, Entity]   # name -> toy (inside the box)
    boxes: dict[str, Entity]  # name -> box holding that name's toy


@dataclass(frozen=True)
class DangerInstance:
    danger_color: str
    safe_color: str
    goal: Pos
    room: tuple[int, int]


@dataclass(frozen=True)
class FavoriteInstance:
    target_name: str
    favorites: dict[str, Entity]


@dataclass(frozen=True)
class DoorInstance:
    door_color: str
    door_pos: Pos
    key_color: str
    keys: tuple[Entity, ...]
    locked_room: tuple[int, int]


@dataclass(frozen=True)
class TaskInstance:
    subtasks: tuple[SubTask, ...]
    lattice: tuple[int, int]
    box: Optional[BoxInstance] = None
    danger: Optional[DangerInstance] = None
    favorite: Optional[FavoriteInstance] = None
    door: Optional[DoorInstance] = None
    distractors: tuple[Entity, ...] = field(default_factory=tuple)

    @property
    def instruction(self) -> Utterance:
        parts = []
        for sub in self.subtasks:
            name = ""
            if sub is SubTask.OBJECT_IN_BOX:
                name = self.box.target_name
            elif sub is SubTask.GO_TO_FAVORITE:
                name = self.favorite.target_name
            parts.append(INSTRUCTIONS[sub].format(name=name))
        return tokenize(" and ".join(parts))
