"""Deterministic 2D bounce simulator with a simulation-in-the-loop prompting harness."""

__version__ = "0.1.0"

from .agents import AgentConfig, AgentKind, BisectionAgent, RandomAgent, RemoteChatAgent, ReplayAgent, make_agent
from .experiments import ExperimentSpec, RunResult, run_experiment, seed_examples
from .heatmap import HeatmapSpec, heatmap
from .physics import SimParams, Simulator, Trajectory, flat_ground_oracle, simulate
from .pipeline import Episode, Mode, PipelineConfig, build_query, run_episode, validate_grammar
from .stats import mean_abs_error, relative_error, welch_t_test
from .store import ExampleStore
from .terrain import SurfaceSpec, Terrain, sample_surface

__all__ = [
    "AgentConfig", "AgentKind", "BisectionAgent", "RandomAgent", "RemoteChatAgent", "ReplayAgent", "make_agent",
    "ExperimentSpec", "RunResult", "run_experiment", "seed_examples",
    "HeatmapSpec", "heatmap",
    "SimParams", "Simulator", "Trajectory", "flat_ground_oracle", "simulate",
    "Episode", "Mode", "PipelineConfig", "build_query", "run_episode", "validate_grammar",
    "mean_abs_error", "relative_error", "welch_t_test",
    "ExampleStore",
    "SurfaceSpec", "Terrain", "sample_surface",
]
