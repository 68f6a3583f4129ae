import re

import numpy as np
import pytest

from conftest import blank_state
from qgrid.env import (
    COLOR_IDX,
    DIR_VEC,
    EMPTY_CELL,
    TILE,
    UNSEEN,
    VIEW,
    WALL,
    EnvConfig,
    PhysicalAction,
    QGridEnv,
    SteppedAfterDone,
    TranscriptWriter,
    compose,
    crop,
    horizon,
    observe,
    render,
    reset,
    step,
)
from qgrid.query_lang import EMPTY, Query, utterance_text
from qgrid.tasks import DuplicateSubTask, SubTask, lattice, parse_task


def _snapshot(state):
    return (state.objects.tobytes(), state.colors.tobytes(), state.states.tobytes(), state.agent_pos,
            state.agent_dir, state.carrying)


def test_reset_is_deterministic():
    cfg = compose("box+danger")
    a = reset(cfg, np.random.default_rng(3))
    b = reset(cfg, np.random.default_rng(3))
    assert _snapshot(a[0]) == _snapshot(b[0])
    assert a[1].instruction == b[1].instruction
    assert dict(a[2].facts) == dict(b[2].facts)


def test_danger_instruction(danger_world):
    _, state, obs, kb = danger_world
    assert utterance_text(obs.instruction) == "avoid danger zone and go to the green target square"
    assert obs.response == EMPTY
    assert obs.view.shape == (7, 7, 4)
    assert state.t == 0


def test_favorite_geometry():
    cfg = compose("favorite")
    state, _, _ = reset(cfg, np.random.default_rng(0))
    assert (cfg.rooms, cfg.room_size, cfg.early_terminate) == (9, 5, False)
    assert lattice(cfg.rooms) == (3, 3)
    assert state.width == state.height == 3 * 4 + 1
    assert horizon(cfg) == 225


@pytest.mark.parametrize("rooms, size, h", [(2, 7, 98), (9, 5, 225), (1, 9, 81)])
def test_horizon(rooms, size, h):
    cfg = EnvConfig(tasks=("danger",), rooms=rooms, room_size=size, early_terminate=True)
    assert horizon(cfg) == h


def test_compose_examples():
    cfg = compose(["door", "box"])
    _, obs, _ = reset(cfg, np.random.default_rng(1))
    assert re.fullmatch(r"find the key to the door and find (mary|tim)'s toy", utterance_text(obs.instruction))
    cfg = compose("♠♦")
    assert (cfg.rooms, cfg.room_size, cfg.early_terminate) == (2, 7, True)
    single = compose("danger")
    assert (single.tasks, single.rooms, single.room_size, single.early_terminate) == ((SubTask.DANGER,), 1, 7, True)
    with pytest.raises(DuplicateSubTask):
        parse_task("danger+danger")


@pytest.mark.parametrize("spec, geometry", [
    ("box", (1, 9, True)), ("danger", (1, 7, True)), ("favorite", (9, 5, False)), ("door", (2, 7, False)),
])
def test_level_one_geometry(spec, geometry):
    cfg = compose(spec)
    assert (cfg.rooms, cfg.room_size, cfg.early_terminate) == geometry


def test_forward_into_wall(danger_world):
    _, state, _, kb = danger_world
    free = [(x, 1) for x in range(1, state.width - 1) if state.objects[x, 1] == EMPTY_CELL]
    state.agent_pos, state.agent_dir = free[0], 3  # facing the boundary wall
    _, res = step(state, PhysicalAction.FORWARD, kb)
    assert state.agent_pos == free[0]
    assert res.reward_env == 0 and not res.done


def test_danger_tile_terminates(danger_world):
    _, state, _, kb = danger_world
    danger = COLOR_IDX[state.instance.danger.danger_color]
    tiles = np.argwhere((state.objects == TILE) & (state.colors == danger))
    x, y = map(int, tiles[0])
    for d, (dx, dy) in enumerate(DIR_VEC):
        src = (x - dx, y - dy)
        if state.walkable(src):
            state.agent_pos, state.agent_dir = src, d
            break
    _, res = step(state, PhysicalAction.FORWARD, kb)
    assert res.done and not res.info["success"] and res.reward_env == 0


def test_query_is_answered_next_observation(danger_world):
    _, state, _, kb = danger_world
    before = _snapshot(state)
    _, res = step(state, Query("what's", "danger", "zone"), kb)
    assert _snapshot(state) == before
    assert state.t == 1
    assert utterance_text(res.observation.response) == f"the danger zone is {state.instance.danger.danger_color}"
    assert res.info["response_was_informative"]
    _, res = step(state, PhysicalAction.LEFT, kb)
    assert res.observation.response == EMPTY


def test_step_after_done(danger_world):
    _, state, _, kb = danger_world
    state.done = True
    with pytest.raises(SteppedAfterDone):
        step(state, PhysicalAction.LEFT, kb)


def test_success_reward_and_horizon_termination(danger_world):
    _, state, _, kb = danger_world
    goal = state.instance.danger.goal
    for d, (dx, dy) in enumerate(DIR_VEC):
        src = (goal[0] - dx, goal[1] - dy)
        if state.objects[src] == TILE and state.colors[src] != COLOR_IDX[state.instance.danger.danger_color]:
            state.agent_pos, state.agent_dir = src, d
            break
    state.t = 10
    _, res = step(state, PhysicalAction.FORWARD, kb)
    assert res.info["success"] and res.done
    assert res.reward_env == pytest.approx(1 - 0.9 * 10 / 49)

    state2, _, kb2 = reset(compose("danger"), np.random.default_rng(2))
    state2.t = state2.horizon - 1
    _, res = step(state2, PhysicalAction.LEFT, kb2)
    assert res.done and not res.info["success"] and res.reward_env == 0


def test_non_et_task_never_ends_early():
    env = QGridEnv(compose("favorite"), seed=5)
    env.reset()
    rng = np.random.default_rng(0)
    for t in range(env.horizon):
        res = env.step(PhysicalAction(int(rng.integers(0, 3))))
        if res.done:
            assert res.info["success"] or t == env.horizon - 1
            break


def _brute_force_crop(state):
    out = np.zeros((VIEW, VIEW, 3), dtype=np.uint8)
    fx, fy = DIR_VEC[state.agent_dir]
    rx, ry = DIR_VEC[(state.agent_dir + 1) % 4]
    for i in range(VIEW):
        for j in range(VIEW):
            f, lat = VIEW - 1 - j, i - VIEW // 2
            x = state.agent_pos[0] + f * fx + lat * rx
            y = state.agent_pos[1] + f * fy + lat * ry
            if 0 <= x < state.width and 0 <= y < state.height:
                out[i, j] = state.objects[x, y], state.colors[x, y], state.states[x, y]
    return out


def test_crop_matches_rotation_oracle():
    for seed in range(20):
        state, _, kb = reset(compose("box+danger"), np.random.default_rng(seed))
        for _ in range(4):
            step(state, PhysicalAction.LEFT, kb)
            assert np.array_equal(crop(state), _brute_force_crop(state))
        # facing up the view is the world window read directly
        state.agent_dir = 3
        x0, y0 = state.agent_pos
        c = crop(state)
        for i in range(VIEW):
            for j in range(VIEW):
                x, y = x0 + i - 3, y0 - (6 - j)
                if 0 <= x < state.width and 0 <= y < state.height:
                    assert c[i, j, 0] == state.objects[x, y]
        # turning left rotates the world window by a quarter turn
        up = crop(state)
        state.agent_dir = 2
        x0, y0 = state.agent_pos
        win = np.zeros((13, 13), dtype=np.uint8)
        for dx in range(-6, 7):
            for dy in range(-6, 7):
                x, y = x0 + dx, y0 + dy
                if 0 <= x < state.width and 0 <= y < state.height:
                    win[dx + 6, dy + 6] = state.objects[x, y]
        # facing west: view[i, j] = win[j, 9 - i], a quarter turn of the west half
        expected = np.rot90(win[0:7, 3:10], k=1)
        assert np.array_equal(crop(state)[..., 0], expected)
        assert up.shape == (7, 7, 3)


def test_wall_occludes_cells_behind(danger_world):
    _, state, _, _ = danger_world
    s = blank_state(state)
    s.objects[:, 6] = WALL  # the row directly ahead of the agent at (7, 7) facing up
    view = observe(s)
    assert (view[:, 5, 0] == WALL).all()
    assert (view[:, :5, 0] == UNSEEN).all()


def test_open_field_is_all_floor(danger_world):
    _, state, _, _ = danger_world
    s = blank_state(state)
    view = observe(s)
    assert (view[..., 0] == EMPTY_CELL).all()
    assert (view[..., 3] == 3).all()


def test_transcript_records(danger_world, tmp_path):
    import io
    import json
    _, state, _, kb = danger_world
    buf = io.StringIO()
    writer = TranscriptWriter(buf)
    q = Query("what's", "danger", "zone")
    _, res = step(state, q, kb)
    writer.write(episode=0, t=0, action=q, result=res)
    rec = json.loads(buf.getvalue())
    assert {"t", "action", "query_text", "response_text", "reward_env", "bonus", "done", "success"} <= set(rec)


def test_render_has_one_cell_per_position(danger_world):
    _, state, _, _ = danger_world
    lines = render(state).splitlines()
    assert len(lines) == state.height
    assert all(len(line) == 2 * state.width for line in lines)
