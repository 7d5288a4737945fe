"""Long-video question answering with a planner, a reflector and three
specialized agents (grounding, visual perception, subtitles)."""

from .gateway import Gateway, GatewayConfig, ScriptedBackend, load_config
from .harness import BenchItem, BenchReport, load_dataset, majority_vote, run_bench, vote_ask
from .media import FrameManifest, load_manifest, parse_subtitles
from .orchestrator import EpisodeOutcome, ReflectionVerdict, run_episode
from .types import (AgentAction, AgentKind, Answer, Budgets, Observation, Question, TimeRange, Timecode,
                    Trajectory, make_question, parse_timecode)

__version__ = "0.1.0"

__all__ = [
    "AgentAction", "AgentKind", "Answer", "BenchItem", "BenchReport", "Budgets", "EpisodeOutcome",
    "FrameManifest", "Gateway", "GatewayConfig", "Observation", "Question", "ReflectionVerdict",
    "ScriptedBackend", "TimeRange", "Timecode", "Trajectory", "load_config", "load_dataset",
    "load_manifest", "majority_vote", "make_question", "parse_subtitles", "parse_timecode",
    "run_bench", "run_episode", "vote_ask",
]
