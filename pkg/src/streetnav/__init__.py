"""Desk-scale street navigation simulator and landmark-grounded agent.

The main entry points are re-exported here; see the individual modules for
the environment, landmark extraction and scoring, topology maps, kernels,
the episode runtime and the metrics.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .agent import (
    Components,
    EpisodeTrace,
    LinearPolicy,
    LossConfig,
    OraclePolicy,
    RandomPolicy,
    RunConfig,
    TeacherForcedPolicy,
    TrainConfig,
    build_components,
    compute_loss,
    run_episode,
    train_policy,
)
from .data import NavInstance, WorldBundle
from .env import Action, AgentState, EnvGraph, apply_action, is_success
from .extractor import LandmarkSet, extract_landmarks, score_extraction
from .metrics import EvalResult, evaluate, spd
from .topomap import TopoMap, init_topomap, topo_loss, update_on_move
from .worldgen import WorldConfig, generate_world

__all__ = [
    "Action", "AgentState", "Components", "EnvGraph", "EpisodeTrace", "EvalResult", "LandmarkSet",
    "LinearPolicy", "LossConfig", "NavInstance", "OraclePolicy", "RandomPolicy", "RunConfig",
    "TeacherForcedPolicy", "TopoMap", "TrainConfig", "WorldBundle", "WorldConfig", "apply_action",
    "build_components", "compute_loss", "evaluate", "extract_landmarks", "generate_world",
    "init_topomap", "is_success", "run_episode", "score_extraction", "spd", "topo_loss",
    "train_policy", "update_on_move",
]
