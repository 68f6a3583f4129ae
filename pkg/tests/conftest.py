import numpy as np
import pytest

from qgrid.env import compose, reset


@pytest.fixture
def danger_world():
    cfg = compose("danger")
    return (cfg, *reset(cfg, np.random.default_rng(7)))


def blank_state(state, size=15, pos=(7, 7), direction=3):
    """Copy of ``state`` moved into an empty open field."""
    s = state.copy()
    s.objects = np.ones((size, size), dtype=s.objects.dtype)
    s.colors = np.zeros_like(s.objects)
    s.states = np.zeros_like(s.objects)
    s.agent_pos = pos
    s.agent_dir = direction
    s.box_contents = {}
    return s


# --- acceptance reporting ----------------------------------------------------
# Tests marked ``acceptance(n, title)`` get one PASS/FAIL line each in the
# terminal summary; ``record_property("detail", ...)`` adds measured values.

def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        verdict = "FAIL"
    elif rep.skipped:
        verdict = "SKIP"
    else:
        verdict = "PASS"
    item.config._acceptance[number] = (verdict, title, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        verdict, title, detail = results[number]
        line = f"criterion {number} {verdict}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
