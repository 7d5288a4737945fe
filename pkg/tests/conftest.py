import json

import pytest

from symphony.gateway import Gateway, GatewayConfig, ScriptedBackend
from symphony.synthetic import make_video
from symphony.types import Budgets, make_question


def make_gateway(script, budgets=None, **config):
    """Scripted gateway whose retry sleeps are recorded instead of slept."""
    slept = []
    cfg = GatewayConfig(budgets=budgets or Budgets(), **config)
    gw = Gateway(ScriptedBackend(script), cfg, sleep=slept.append)
    gw.slept = slept
    return gw


def plan(agent, instruct, reason="next step"):
    return json.dumps({"reason": reason, "agent": agent, "instruct": instruct})


def verdict(credible, comment=None):
    return json.dumps({"credible": credible, "comment": comment})


def episode_script():
    """plan -> ground -> perceive -> finish -> reflect(credible) -> answer C."""
    return {
        "planner/plan": [
            plan("Grounding Agent", "Find where the person is at the stove."),
            plan("Visual Perception Agent", "What is the person doing at 00:01:00-00:01:30?"),
            plan("finish", "C"),
        ],
        "planner/answer": "The answer is (C). The person is seen cooking at the stove.",
        "reflector": verdict(True),
        "vlm/grounding_agent": [
            json.dumps({"tool": "retrieve_tool", "args": {"cue": "person at a stove"}}),
            json.dumps({"tool": "finish", "args": {"answer": "The stove scene is near 00:01:00."}}),
        ],
        "vlm/perception_agent": [
            json.dumps({"tool": "frame_inspector",
                        "args": {"time_range": ["00:01:00", "00:01:30"], "cue": "stove"}}),
            "[answer] The person stirs a pot on the stove; they are cooking.",
        ],
        "vlm/frame_inspector": "A person stirs a pot on a stove.",
        "embedder": {"dim": 8},
    }


@pytest.fixture(scope="session")
def video3(tmp_path_factory):
    """Three-minute synthetic video at 1 fps."""
    return make_video(tmp_path_factory.mktemp("video3"), "v3", 180, fps=1.0)


@pytest.fixture(scope="session")
def video10(tmp_path_factory):
    """Ten-minute synthetic video at 1 fps (ten 60 s segments)."""
    return make_video(tmp_path_factory.mktemp("video10"), "v10", 600, fps=1.0)


@pytest.fixture
def mcq():
    return make_question("What is the person doing?",
                         ["A. sleeping", "B. reading", "C. cooking", "D. running"], question_id="q1")


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
