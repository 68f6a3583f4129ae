"""Queryable grid world: generation, dynamics, egocentric views, transcripts.

Coordinates are ``(x, y)`` with ``x`` growing right and ``y`` growing down.
Arrays are indexed ``[x, y]``. Directions: 0 right, 1 down, 2 left, 3 up.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from enum import IntEnum
from typing import IO, Optional, Sequence, Union

import numpy as np

from .oracle import KnowledgeBase, answer, build_knowledge_base
from .query_lang import COLORS, EMPTY, NAMES, Query, Utterance, utterance_text
from .tasks import (
    TASK_TABLE,
    BoxInstance,
    DangerInstance,
    DoorInstance,
    Entity,
    FavoriteInstance,
    SubTask,
    TaskInstance,
    lattice,
    parse_task,
)

VIEW = 7

OBJECT_IDX = {"unseen": 0, "empty": 1, "wall": 2, "tile": 3, "door": 4, "key": 5, "ball": 6, "box": 7, "goal": 8}
IDX_OBJECT = {v: k for k, v in OBJECT_IDX.items()}
COLOR_IDX = {"none": 0, **{c: i + 1 for i, c in enumerate(COLORS)}}
IDX_COLOR = {v: k for k, v in COLOR_IDX.items()}
STATE_IDX = {"none": 0, "open": 1, "closed": 2, "locked": 3}

UNSEEN, EMPTY_CELL, WALL, TILE, DOOR, KEY, BALL, BOX, GOAL = range(9)
OPEN, CLOSED, LOCKED = 1, 2, 3
CARRIABLE = (KEY, BALL)

DIR_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))


class PhysicalAction(IntEnum):
    LEFT = 0
    RIGHT = 1
    FORWARD = 2
    PICKUP = 3
    DROP = 4
    TOGGLE = 5
    DONE = 6


Action = Union[PhysicalAction, Query]


class SteppedAfterDone(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    tasks: tuple[SubTask, ...]
    rooms: int
    room_size: int
    early_terminate: bool
    seed: int = 0
    success_reward: float = 1.0
    time_penalty: float = 0.9
    danger_colors: tuple[str, str] = ("yellow", "blue")
    extra_tiles: int = 2
    distractors: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "tasks", parse_task(self.tasks))
        if self.rooms < 1 or self.room_size < 4:
            raise ValueError("need at least one room of size >= 4")
        if len(set(self.danger_colors)) != 2 or "green" in self.danger_colors:
            raise ValueError("danger_colors must be two distinct non-green colors")
        for c in self.danger_colors:
            if c not in COLORS:
                raise ValueError(f"unknown color {c!r}")
        if SubTask.OPEN_DOOR in self.tasks and self.rooms < 2:
            raise ValueError("open_door needs at least two rooms")

    @property
    def horizon(self) -> int:
        return horizon(self)

    @property
    def n_distractors(self) -> int:
        if self.distractors is not None:
            return self.distractors
        return 4 if SubTask.GO_TO_FAVORITE in self.tasks else 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tasks"] = [t.value for t in self.tasks]
        d["danger_colors"] = list(self.danger_colors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        d["tasks"] = tuple(d["tasks"])
        d["danger_colors"] = tuple(d.get("danger_colors", ("yellow", "blue")))
        return cls(**d)


def horizon(cfg: EnvConfig) -> int:
    return cfg.rooms * cfg.room_size ** 2


def compose(tasks: Sequence | str, **overrides) -> EnvConfig:
    """Config for a level-k composition using the tabulated geometry."""
    subtasks = parse_task(tasks)
    geo = TASK_TABLE[frozenset(subtasks)]
    kwargs = dict(tasks=subtasks, rooms=geo.rooms, room_size=geo.room_size,
                  early_terminate=geo.early_terminate)
    kwargs.update(overrides)
    return EnvConfig(**kwargs)


@dataclass
class WorldState:
    objects: np.ndarray  # [x, y] object ids
    colors: np.ndarray
    states: np.ndarray
    agent_pos: tuple[int, int]
    agent_dir: int
    instance: TaskInstance
    horizon: int
    early_terminate: bool
    success_reward: float = 1.0
    time_penalty: float = 0.9
    carrying: Optional[tuple[int, int]] = None  # (object id, color id)
    box_contents: dict = field(default_factory=dict)  # pos -> Entity
    t: int = 0
    done: bool = False
    completed: dict = field(default_factory=dict)  # SubTask -> bool
    failed: bool = False

    def copy(self) -> "WorldState":
        return replace(
            self,
            objects=self.objects.copy(),
            colors=self.colors.copy(),
            states=self.states.copy(),
            box_contents=dict(self.box_contents),
            completed=dict(self.completed),
        )

    @property
    def front(self) -> tuple[int, int]:
        dx, dy = DIR_VEC[self.agent_dir]
        return self.agent_pos[0] + dx, self.agent_pos[1] + dy

    @property
    def width(self) -> int:
        return self.objects.shape[0]

    @property
    def height(self) -> int:
        return self.objects.shape[1]

    @property
    def success(self) -> bool:
        return bool(self.completed) and all(self.completed.values())

    def walkable(self, pos, danger_color: Optional[int] = None) -> bool:
        x, y = pos
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        o = self.objects[x, y]
        if o in (EMPTY_CELL, GOAL):
            return True
        if o == TILE:
            return danger_color is None or self.colors[x, y] != danger_color
        if o == DOOR:
            return self.states[x, y] == OPEN
        return False

    def find(self, kind: str, color: str) -> Optional[tuple[int, int]]:
        hits = np.argwhere((self.objects == OBJECT_IDX[kind]) & (self.colors == COLOR_IDX[color]))
        if len(hits) == 0:
            return None
        return int(hits[0][0]), int(hits[0][1])


@dataclass(frozen=True)
class Observation:
    view: np.ndarray  # (7, 7, 4) uint8
    response: Utterance
    instruction: Utterance


@dataclass
class StepResult:
    observation: Observation
    reward_env: float
    done: bool
    info: dict


# --- generation --------------------------------------------------------------

class _Layout:
    def __init__(self, cfg: EnvConfig):
        self.rows, self.cols = lattice(cfg.rooms)
        self.step = cfg.room_size - 1
        self.width = self.cols * self.step + 1
        self.height = self.rows * self.step + 1

    def rooms(self):
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    def interior(self, room):
        r, c = room
        x0, y0 = c * self.step, r * self.step
        return [(x, y) for y in range(y0 + 1, y0 + self.step) for x in range(x0 + 1, x0 + self.step)]

    def room_of(self, pos):
        return pos[1] // self.step, pos[0] // self.step

    def neighbors(self, room):
        r, c = room
        for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            if 0 <= r + dr < self.rows and 0 <= c + dc < self.cols:
                yield r + dr, c + dc

    def shared_wall(self, a, b):
        """Interior cells of the wall segment between adjacent rooms."""
        (r1, c1), (r2, c2) = sorted([a, b])
        if r1 == r2:
            x = c2 * self.step
            return [(x, y) for y in range(r1 * self.step + 1, (r1 + 1) * self.step)]
        y = r2 * self.step
        return [(x, y) for x in range(c1 * self.step + 1, (c1 + 1) * self.step)]


def _connected(rooms: set, layout: _Layout) -> bool:
    if not rooms:
        return True
    start = next(iter(rooms))
    seen, todo = {start}, [start]
    while todo:
        cur = todo.pop()
        for nb in layout.neighbors(cur):
            if nb in rooms and nb not in seen:
                seen.add(nb)
                todo.append(nb)
    return seen == rooms


class GenerationError(RuntimeError):
    pass


def _choice(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _generate_once(cfg: EnvConfig, rng: np.random.Generator):
    L = _Layout(cfg)
    objects = np.full((L.width, L.height), EMPTY_CELL, dtype=np.int8)
    colors = np.zeros_like(objects)
    states = np.zeros_like(objects)
    objects[:: L.step, :] = WALL
    objects[:, :: L.step] = WALL

    rooms = L.rooms()
    locked = None
    if SubTask.OPEN_DOOR in cfg.tasks:
        candidates = [r for r in rooms if _connected(set(rooms) - {r}, L)]
        locked = _choice(rng, candidates)
    open_rooms = [r for r in rooms if r != locked]

    gaps = []
    for a in open_rooms:
        for b in L.neighbors(a):
            if b != locked and a < b:
                pos = _choice(rng, L.shared_wall(a, b))
                objects[pos] = EMPTY_CELL
                gaps.append(pos)

    door = None
    if locked is not None:
        nb = _choice(rng, [n for n in L.neighbors(locked) if n != locked])
        door_pos = _choice(rng, L.shared_wall(locked, nb))
        door_color = _choice(rng, COLORS)
        objects[door_pos] = DOOR
        colors[door_pos] = COLOR_IDX[door_color]
        states[door_pos] = LOCKED
        gaps.append(door_pos)
        door = (door_pos, door_color)

    near_gap = set()
    for gx, gy in gaps:
        for dx, dy in DIR_VEC:
            near_gap.add((gx + dx, gy + dy))

    occupied: set = set()
    used: set = set()

    def free_cells(room_list):
        return [p for room in room_list for p in L.interior(room) if p not in occupied and p not in near_gap]

    def place(kind: int, color: str, room_list=None, state: int = 0):
        cells = free_cells(room_list or open_rooms)
        if not cells:
            raise GenerationError("no free cell")
        pos = _choice(rng, cells)
        objects[pos] = kind
        colors[pos] = COLOR_IDX[color]
        states[pos] = state
        occupied.add(pos)
        return pos

    def fresh_identity(kinds) -> tuple[str, str]:
        options = [(c, k) for c in COLORS for k in kinds if (c, k) not in used]
        c, k = _choice(rng, options)
        used.add((c, k))
        return c, k

    danger_inst = None
    if SubTask.DANGER in cfg.tasks:
        corners = []
        for room in open_rooms:
            cells = L.interior(room)
            xs = sorted({p[0] for p in cells})
            ys = sorted({p[1] for p in cells})
            for cx, sx in ((xs[0], 1), (xs[-1], -1)):
                for cy, sy in ((ys[0], 1), (ys[-1], -1)):
                    goal = (cx, cy)
                    gates = [(cx + sx, cy), (cx, cy + sy)]
                    cluster = [goal, *gates]
                    if any(p in near_gap for p in cluster):
                        continue
                    outer = [(cx - sx, cy), (cx, cy - sy)]
                    if any(objects[p] != WALL for p in outer):
                        continue
                    corners.append((room, goal, gates))
        if not corners:
            raise GenerationError("no corner for the target square")
        room, goal, gates = _choice(rng, corners)
        pair = list(cfg.danger_colors)
        rng.shuffle(pair)
        danger_color, safe_color = pair
        objects[goal] = GOAL
        colors[goal] = COLOR_IDX["green"]
        occupied.add(goal)
        gate_colors = [danger_color, safe_color]
        rng.shuffle(gate_colors)
        for pos, col in zip(gates, gate_colors):
            objects[pos] = TILE
            colors[pos] = COLOR_IDX[col]
            occupied.add(pos)
        for _ in range(cfg.extra_tiles):
            place(TILE, _choice(rng, cfg.danger_colors))
        danger_inst = DangerInstance(danger_color, safe_color, goal, room)

    door_inst = None
    if door is not None:
        keys = []
        for _ in range(3):
            color, _k = fresh_identity(("key",))
            pos = place(KEY, color)
            keys.append(Entity(color, "key", pos, L.room_of(pos)))
        right = _choice(rng, keys)
        door_inst = DoorInstance(door[1], door[0], right.color, tuple(keys), locked)

    names = list(NAMES)
    rng.shuffle(names)

    box_inst = None
    contents = {}
    if SubTask.OBJECT_IN_BOX in cfg.tasks:
        toys, boxes = {}, {}
        for name in names:
            tc, tk = fresh_identity(("ball", "key"))
            bc, _ = fresh_identity(("box",))
            pos = place(BOX, bc, state=CLOSED)
            boxes[name] = Entity(bc, "box", pos, L.room_of(pos))
            toys[name] = Entity(tc, tk, None, L.room_of(pos))
            contents[pos] = toys[name]
        box_inst = BoxInstance(_choice(rng, names), toys, boxes)

    fav_inst = None
    if SubTask.GO_TO_FAVORITE in cfg.tasks:
        favs = {}
        for name in names:
            c, k = fresh_identity(("ball", "key"))
            pos = place(OBJECT_IDX[k], c)
            favs[name] = Entity(c, k, pos, L.room_of(pos))
        fav_inst = FavoriteInstance(_choice(rng, names), favs)

    distractors = []
    kinds = ("ball",) if door is not None else ("ball", "key")
    # cap by the worst case over draws so the fact count is fixed per configuration
    flexible = 2 * (box_inst is not None) + 2 * (fav_inst is not None)
    capacity = len(COLORS) * len(kinds) - flexible - (3 if door is not None and "key" in kinds else 0)
    for _ in range(min(cfg.n_distractors, capacity)):
        c, k = fresh_identity(kinds)
        pos = place(OBJECT_IDX[k], c)
        distractors.append(Entity(c, k, pos, L.room_of(pos)))

    # never spawn already next to a favorite: facing it would finish the sub-task
    spawn_block = set(occupied)
    if fav_inst is not None:
        for e in fav_inst.favorites.values():
            spawn_block.update((e.pos[0] + dx, e.pos[1] + dy) for dx, dy in DIR_VEC)
    agent_cells = [p for room in open_rooms for p in L.interior(room) if p not in spawn_block]
    if not agent_cells:
        raise GenerationError("no spawn cell")
    agent_pos = _choice(rng, agent_cells)
    agent_dir = int(rng.integers(4))

    instance = TaskInstance(
        subtasks=cfg.tasks,
        lattice=(L.rows, L.cols),
        box=box_inst,
        danger=danger_inst,
        favorite=fav_inst,
        door=door_inst,
        distractors=tuple(distractors),
    )
    state = WorldState(
        objects=objects, colors=colors, states=states,
        agent_pos=agent_pos, agent_dir=agent_dir, instance=instance,
        horizon=horizon(cfg), early_terminate=cfg.early_terminate,
        success_reward=cfg.success_reward, time_penalty=cfg.time_penalty,
        box_contents=contents, completed={t: False for t in cfg.tasks},
    )
    _check_solvable(state, cfg)
    return state


def reachable(state: WorldState, start, danger_color: Optional[int] = None) -> set:
    seen = {start}
    todo = deque([start])
    while todo:
        x, y = todo.popleft()
        for dx, dy in DIR_VEC:
            nxt = (x + dx, y + dy)
            if nxt not in seen and state.walkable(nxt, danger_color):
                seen.add(nxt)
                todo.append(nxt)
    return seen


def _check_solvable(state: WorldState, cfg: EnvConfig):
    inst = state.instance
    targets = []
    if inst.box:
        targets += [e.pos for e in inst.box.boxes.values()]
    if inst.favorite:
        targets += [e.pos for e in inst.favorite.favorites.values()]
    if inst.door:
        targets += [k.pos for k in inst.door.keys] + [inst.door.door_pos]
    hypotheses = [COLOR_IDX[c] for c in cfg.danger_colors] if inst.danger else [None]
    for danger in hypotheses:
        reach = reachable(state, state.agent_pos, danger)
        if inst.danger and inst.danger.goal not in reach:
            raise GenerationError("target square unreachable")
        for (x, y) in targets:
            if not any((x + dx, y + dy) in reach for dx, dy in DIR_VEC):
                raise GenerationError(f"entity at {(x, y)} unreachable")


def generate(cfg: EnvConfig, rng: np.random.Generator, attempts: int = 200) -> WorldState:
    for _ in range(attempts):
        try:
            return _generate_once(cfg, rng)
        except GenerationError:
            continue
    raise GenerationError(f"could not generate a solvable world for {cfg.tasks}")


# --- observation -------------------------------------------------------------

def _view_offsets():
    """Per direction, world offsets (dx, dy) of each view cell [vx, vy].

    The agent sits at view cell (3, 6) looking towards vy = 0.
    """
    out = []
    vx, vy = np.meshgrid(np.arange(VIEW), np.arange(VIEW), indexing="ij")
    forward = (VIEW - 1) - vy
    lateral = vx - VIEW // 2
    for fx, fy in DIR_VEC:
        rx, ry = -fy, fx  # right-hand side of the facing direction
        out.append((forward * fx + lateral * rx, forward * fy + lateral * ry))
    return out


_OFFSETS = _view_offsets()


def _visibility(opaque: np.ndarray) -> np.ndarray:
    """Propagate line of sight outwards from the agent through transparent cells."""
    mask = np.zeros((VIEW, VIEW), dtype=bool)
    mask[VIEW // 2, VIEW - 1] = True
    for j in range(VIEW - 1, -1, -1):
        for i in range(0, VIEW - 1):
            if not mask[i, j] or opaque[i, j]:
                continue
            mask[i + 1, j] = True
            if j > 0:
                mask[i + 1, j - 1] = True
                mask[i, j - 1] = True
        for i in range(VIEW - 1, 0, -1):
            if not mask[i, j] or opaque[i, j]:
                continue
            mask[i - 1, j] = True
            if j > 0:
                mask[i - 1, j - 1] = True
                mask[i, j - 1] = True
    return mask


def crop(state: WorldState) -> np.ndarray:
    """Unmasked egocentric (7, 7, 3) crop; off-grid cells are zero."""
    dx, dy = _OFFSETS[state.agent_dir]
    xs = dx + state.agent_pos[0]
    ys = dy + state.agent_pos[1]
    inside = (xs >= 0) & (xs < state.width) & (ys >= 0) & (ys < state.height)
    xs_c = np.clip(xs, 0, state.width - 1)
    ys_c = np.clip(ys, 0, state.height - 1)
    out = np.zeros((VIEW, VIEW, 3), dtype=np.uint8)
    out[..., 0] = np.where(inside, state.objects[xs_c, ys_c], UNSEEN)
    out[..., 1] = np.where(inside, state.colors[xs_c, ys_c], 0)
    out[..., 2] = np.where(inside, state.states[xs_c, ys_c], 0)
    return out


def observe(state: WorldState, occlude: bool = True) -> np.ndarray:
    """(7, 7, 4) view: object, color, state, and the broadcast facing direction."""
    cells = crop(state)
    if occlude:
        obj = cells[..., 0]
        opaque = (obj == WALL) | ((obj == DOOR) & (cells[..., 2] != OPEN)) | (obj == UNSEEN)
        cells[~_visibility(opaque)] = 0
    if state.carrying is not None:
        cells[VIEW // 2, VIEW - 1] = (state.carrying[0], state.carrying[1], 0)
    view = np.empty((VIEW, VIEW, 4), dtype=np.uint8)
    view[..., :3] = cells
    view[..., 3] = state.agent_dir
    return view


# --- reset / step ------------------------------------------------------------

def reset(cfg: EnvConfig, rng: np.random.Generator) -> tuple[WorldState, Observation, KnowledgeBase]:
    state = generate(cfg, rng)
    kb = build_knowledge_base(state.instance)
    obs = Observation(observe(state), EMPTY, state.instance.instruction)
    return state, obs, kb


def step(state: WorldState, action: Action, kb: KnowledgeBase) -> tuple[WorldState, StepResult]:
    """Advance ``state`` in place by one action and return it with the result."""
    if state.done:
        raise SteppedAfterDone("episode already finished; call reset")
    t_before = state.t
    state.t += 1
    inst = state.instance
    response = EMPTY
    informative = False
    if isinstance(action, Query):
        response = answer(kb, action, state.agent_pos)
        informative = tuple(action) in kb.facts and response == kb.facts[tuple(action)].value
    else:
        _physical(state, PhysicalAction(action))

    if inst.favorite and not state.completed[SubTask.GO_TO_FAVORITE]:
        fav = inst.favorite.favorites[inst.favorite.target_name]
        fx, fy = state.front
        if (0 <= fx < state.width and 0 <= fy < state.height
                and state.objects[fx, fy] == OBJECT_IDX[fav.kind]
                and state.colors[fx, fy] == COLOR_IDX[fav.color]):
            state.completed[SubTask.GO_TO_FAVORITE] = True
    if inst.danger and state.agent_pos == inst.danger.goal:
        state.completed[SubTask.DANGER] = True

    reward = 0.0
    if state.success:
        reward = state.success_reward - state.time_penalty * t_before / state.horizon
        state.done = True
    elif state.failed or state.t >= state.horizon:
        state.done = True

    info = {
        "success": state.success,
        "subtasks": {k.value: v for k, v in state.completed.items()},
        "response_was_informative": informative,
        "failed": state.failed,
        "t": state.t,
    }
    obs = Observation(observe(state), response, inst.instruction)
    return state, StepResult(obs, reward, state.done, info)


def _physical(state: WorldState, action: PhysicalAction):
    inst = state.instance
    fx, fy = front = state.front
    in_grid = 0 <= fx < state.width and 0 <= fy < state.height
    if action == PhysicalAction.LEFT:
        state.agent_dir = (state.agent_dir - 1) % 4
    elif action == PhysicalAction.RIGHT:
        state.agent_dir = (state.agent_dir + 1) % 4
    elif action == PhysicalAction.FORWARD:
        if state.walkable(front):
            state.agent_pos = front
            if (inst.danger and state.objects[front] == TILE
                    and state.colors[front] == COLOR_IDX[inst.danger.danger_color]
                    and state.early_terminate):
                state.failed = True
    elif not in_grid:
        return
    elif action == PhysicalAction.PICKUP:
        if state.carrying is None and state.objects[front] in CARRIABLE:
            state.carrying = (int(state.objects[front]), int(state.colors[front]))
            state.objects[front] = EMPTY_CELL
            state.colors[front] = 0
    elif action == PhysicalAction.DROP:
        if state.carrying is not None and state.objects[front] == EMPTY_CELL:
            state.objects[front], state.colors[front] = state.carrying
            state.carrying = None
    elif action == PhysicalAction.TOGGLE:
        obj = state.objects[front]
        if obj == DOOR and state.states[front] == LOCKED:
            want = (KEY, COLOR_IDX[inst.door.key_color]) if inst.door else None
            if state.carrying == want:
                state.states[front] = OPEN
                if inst.door and front == inst.door.door_pos:
                    state.completed[SubTask.OPEN_DOOR] = True
        elif obj == BOX and state.states[front] == CLOSED:
            state.states[front] = OPEN
            if inst.box and front in state.box_contents:
                target = inst.box.boxes[inst.box.target_name].pos
                if front == target:
                    state.completed[SubTask.OBJECT_IN_BOX] = True
                elif state.early_terminate:
                    state.failed = True


class QGridEnv:
    """Stateful wrapper owning one world, its knowledge base and an RNG stream."""

    def __init__(self, cfg: EnvConfig, seed: Optional[int] = None):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)
        self.state: Optional[WorldState] = None
        self.kb: Optional[KnowledgeBase] = None

    def reset(self) -> Observation:
        self.state, obs, self.kb = reset(self.cfg, self.rng)
        return obs

    def step(self, action: Action) -> StepResult:
        _, result = step(self.state, action, self.kb)
        return result

    @property
    def horizon(self) -> int:
        return horizon(self.cfg)


# --- text rendering and transcripts -----------------------------------------

_GLYPH = {EMPTY_CELL: ".", WALL: "#", TILE: "~", DOOR: "D", KEY: "k", BALL: "o", BOX: "B", GOAL: "G"}
_ARROW = ">v<^"
LEGEND = ("# wall  . floor  ~ tile  D door  k key  o ball  B box  G target square  "
          "><^v agent; upper-case color initial follows each object")


def render(state: WorldState) -> str:
    lines = []
    for y in range(state.height):
        row = []
        for x in range(state.width):
            if (x, y) == state.agent_pos:
                row.append(_ARROW[state.agent_dir] + " ")
                continue
            o = int(state.objects[x, y])
            col = IDX_COLOR[int(state.colors[x, y])]
            tag = col[0].upper() if col != "none" else " "
            if o == DOOR and state.states[x, y] == OPEN:
                row.append("/" + tag)
            else:
                row.append(_GLYPH[o] + tag)
        lines.append("".join(row))
    return "\n".join(lines)


def action_text(action: Action) -> str:
    if isinstance(action, Query):
        return "ask " + utterance_text(action)
    return PhysicalAction(action).name.lower()


class TranscriptWriter:
    """One JSON object per step."""

    def __init__(self, fh: IO[str]):
        self.fh = fh

    def write(self, *, episode: int, t: int, action: Action, result: StepResult,
              bonus: float = 0.0, extra: Optional[dict] = None):
        rec = {
            "episode": episode,
            "t": t,
            "action": action_text(action),
            "reward_env": result.reward_env,
            "bonus": bonus,
            "done": result.done,
            "success": bool(result.info["success"]),
        }
        if isinstance(action, Query):
            rec["query_text"] = utterance_text(action)
            rec["response_text"] = utterance_text(result.observation.response)
        if extra:
            rec.update(extra)
        self.fh.write(json.dumps(rec) + "\n")
