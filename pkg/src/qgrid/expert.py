"""Reference policies that read the world directly.

``ScriptedExpert`` asks exactly the good queries, parses the replies, and
walks shortest paths. ``RandomBoxAgent`` never asks and opens a random
suitcase.
"""
from __future__ import annotations

import re
from collections import deque
from typing import Callable, Optional

import numpy as np

from .env import (
    COLOR_IDX,
    DIR_VEC,
    KEY,
    Action,
    Observation,
    PhysicalAction,
    WorldState,
)
from .oracle import UNKNOWN, KnowledgeBase
from .query_lang import Query, utterance_text
from .tasks import SubTask

_MOVES = (PhysicalAction.LEFT, PhysicalAction.RIGHT, PhysicalAction.FORWARD)


class ExpertError(RuntimeError):
    pass


def plan(state: WorldState, goal: Callable[[tuple, int], bool],
         danger: Optional[int] = None) -> Optional[list[PhysicalAction]]:
    """Shortest left/right/forward sequence reaching a pose satisfying ``goal``."""
    start = (state.agent_pos, state.agent_dir)
    if goal(*start):
        return []
    parents = {start: None}
    todo = deque([start])
    while todo:
        pos, d = cur = todo.popleft()
        for move in _MOVES:
            if move == PhysicalAction.LEFT:
                nxt = (pos, (d - 1) % 4)
            elif move == PhysicalAction.RIGHT:
                nxt = (pos, (d + 1) % 4)
            else:
                dx, dy = DIR_VEC[d]
                npos = (pos[0] + dx, pos[1] + dy)
                if not state.walkable(npos, danger):
                    continue
                nxt = (npos, d)
            if nxt in parents:
                continue
            parents[nxt] = (cur, move)
            if goal(*nxt):
                path = []
                while parents[nxt] is not None:
                    nxt, mv = parents[nxt]
                    path.append(mv)
                return path[::-1]
            todo.append(nxt)
    return None


def facing(target) -> Callable[[tuple, int], bool]:
    def test(pos, d):
        dx, dy = DIR_VEC[d]
        return (pos[0] + dx, pos[1] + dy) == tuple(target)
    return test


def standing_on(target) -> Callable[[tuple, int], bool]:
    return lambda pos, d: pos == tuple(target)


def near(target, dist: int = 1) -> Callable[[tuple, int], bool]:
    return lambda pos, d: max(abs(pos[0] - target[0]), abs(pos[1] - target[1])) <= dist


def _instruction_name(instruction: str, pattern: str) -> str:
    m = re.search(pattern, instruction)
    if m is None:
        raise ExpertError(f"cannot find a name in {instruction!r}")
    return m.group(1)


class ScriptedExpert:
    """Oracle-following policy; call :meth:`reset` at every episode start."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.pending: Optional[Query] = None
        self.asked: list[Query] = []
        self.toy: Optional[tuple[str, str]] = None
        self.box_color: Optional[str] = None
        self.box_confirmed = False
        self.danger: Optional[str] = None
        self.favorite: Optional[tuple[str, str]] = None
        self.favorite_located = False
        self.key_color: Optional[str] = None

    def _ask(self, q: Query) -> Query:
        self.pending = q
        self.asked.append(q)
        return q

    def _read(self, obs: Observation):
        q, self.pending = self.pending, None
        if q is None:
            return
        reply = obs.response
        if reply == UNKNOWN or not reply:
            raise ExpertError(f"oracle could not answer {utterance_text(q)}")
        if q.noun == "toy":
            self.toy = (reply[-2], reply[-1])
        elif q.noun == "favorite":
            self.favorite = (reply[-2], reply[-1])
        elif q.noun == "zone":
            self.danger = reply[-1]
        elif q.noun == "door":
            self.key_color = reply[1]
        elif q.noun == "box":
            self.box_confirmed = True
        elif self.toy is not None and (q.adj, q.noun) == self.toy:
            self.box_color = reply[reply.index("box") - 1]
        elif self.favorite is not None and (q.adj, q.noun) == self.favorite:
            self.favorite_located = True

    def act(self, state: WorldState, kb: KnowledgeBase, obs: Observation) -> Action:
        self._read(obs)
        inst = state.instance
        text = utterance_text(obs.instruction)
        tasks = inst.subtasks

        # unguarded query chains first, in dependency order
        if SubTask.DANGER in tasks and self.danger is None:
            return self._ask(Query("what's", "danger", "zone"))
        if SubTask.OBJECT_IN_BOX in tasks:
            if self.toy is None:
                name = _instruction_name(text, r"find (\w+'s) toy")
                return self._ask(Query("what's", name, "toy"))
            if self.box_color is None:
                return self._ask(Query("where's", *self.toy))
            if not self.box_confirmed:
                return self._ask(Query("what's", self.box_color, "box"))
        if SubTask.GO_TO_FAVORITE in tasks:
            if self.favorite is None:
                name = _instruction_name(text, r"go to (\w+'s) favorite toy")
                return self._ask(Query("what's", name, "favorite"))
            if not self.favorite_located:
                return self._ask(Query("where's", *self.favorite))

        danger = COLOR_IDX[self.danger] if self.danger else None
        done = state.completed

        if SubTask.OPEN_DOOR in tasks and not done[SubTask.OPEN_DOOR]:
            door = inst.door.door_pos
            if self.key_color is None:
                if near(door)(state.agent_pos, state.agent_dir):
                    door_color = [c for c, i in COLOR_IDX.items() if i == state.colors[door]][0]
                    return self._ask(Query("what's", door_color, "door"))
                return self._go(state, near(door), danger)
            want = (KEY, COLOR_IDX[self.key_color])
            if state.carrying != want:
                if state.carrying is not None:
                    return PhysicalAction.DROP if state.objects[state.front] == 1 else self._turn()
                key = state.find("key", self.key_color)
                if key is None:
                    raise ExpertError("named key vanished")
                if state.front == key:
                    return PhysicalAction.PICKUP
                return self._go(state, facing(key), danger)
            if state.front == door:
                return PhysicalAction.TOGGLE
            return self._go(state, facing(door), danger)

        if SubTask.GO_TO_FAVORITE in tasks and not done[SubTask.GO_TO_FAVORITE]:
            target = state.find(self.favorite[1], self.favorite[0])
            return self._go(state, facing(target), danger)

        if SubTask.OBJECT_IN_BOX in tasks and not done[SubTask.OBJECT_IN_BOX]:
            box = state.find("box", self.box_color)
            if state.front == box:
                return PhysicalAction.TOGGLE
            return self._go(state, facing(box), danger)

        if SubTask.DANGER in tasks and not done[SubTask.DANGER]:
            return self._go(state, standing_on(inst.danger.goal), danger)

        return PhysicalAction.DONE

    @staticmethod
    def _turn() -> PhysicalAction:
        return PhysicalAction.LEFT

    @staticmethod
    def _go(state, goal, danger) -> PhysicalAction:
        path = plan(state, goal, danger)
        if not path:
            raise ExpertError("no path to the next waypoint")
        return path[0]


class RandomBoxAgent:
    """Never queries; walks to a uniformly chosen suitcase and opens it."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.target = None

    def reset(self):
        self.target = None

    def act(self, state: WorldState, kb: KnowledgeBase, obs: Observation) -> Action:
        if self.target is None:
            boxes = sorted(e.pos for e in state.instance.box.boxes.values())
            self.target = boxes[int(self.rng.integers(len(boxes)))]
        if state.front == self.target:
            return PhysicalAction.TOGGLE
        path = plan(state, facing(self.target))
        if not path:
            raise ExpertError("no path to the chosen suitcase")
        return path[0]


def run_episode(env, agent, on_step=None) -> dict:
    """Roll ``agent`` through one episode of a :class:`~qgrid.env.QGridEnv`."""
    obs = env.reset()
    agent.reset()
    queries = []
    length = 0
    while True:
        action = agent.act(env.state, env.kb, obs)
        if isinstance(action, Query):
            queries.append(action)
        result = env.step(action)
        length += 1
        if on_step is not None:
            on_step(action, result)
        obs = result.observation
        if result.done:
            return {
                "success": bool(result.info["success"]),
                "length": length,
                "queries": queries,
                "good_set": env.kb.good_queries,
                "reward": result.reward_env,
            }
