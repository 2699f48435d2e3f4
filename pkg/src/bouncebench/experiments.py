"""Experiment definitions and batch trial runners.

Experiment ids:

* ``A``       flat ground
* ``B``       y = sin(x)
* ``C-1`` .. ``C-10``  blend with difficulty d = k / 10
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .agents import AgentConfig, AgentError, make_agent
from .physics import SimParams, Simulator
from .pipeline import Episode, Mode, PipelineConfig, build_query, run_episode
from .store import ExampleStore
from .terrain import SurfaceSpec

log = logging.getLogger(__name__)

ABORT_LIMIT = 0.10
EXPERIMENT_IDS = ("A", "B") + tuple(f"C-{k}" for k in range(1, 11))


class UnknownExperiment(ValueError):
    pass


def experiment_surface(experiment_id: str) -> SurfaceSpec:
    if experiment_id == "A":
        return SurfaceSpec.flat()
    if experiment_id == "B":
        return SurfaceSpec.sinusoid(1.0, 1.0)
    m = re.fullmatch(r"C-(\d+)", experiment_id)
    if m and 1 <= int(m.group(1)) <= 10:
        return SurfaceSpec.blend(int(m.group(1)) / 10)
    raise UnknownExperiment(f"unknown experiment {experiment_id!r}")


def difficulty(experiment_id: str) -> int | None:
    m = re.fullmatch(r"C-(\d+)", experiment_id)
    return int(m.group(1)) if m else None


@dataclass
class ExperimentSpec:
    id: str
    mode: Mode = Mode.SIMLM
    model_id: str = ""
    shots: int = 0
    trials: int = 1000
    target: float = 50.0
    tolerance: float = 1.0
    seed: int = 0
    max_attempts: int = 5

    def __post_init__(self):
        self.mode = Mode(self.mode)
        experiment_surface(self.id)
        if self.shots not in (0, 1, 2):
            raise ValueError("shots must be 0, 1 or 2")
        if self.trials < 0:
            raise ValueError("trials must be non-negative")

    @property
    def surface(self) -> SurfaceSpec:
        return experiment_surface(self.id)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        return out


@dataclass
class RunResult:
    spec: ExperimentSpec
    episodes: list[Episode] = field(default_factory=list)
    aborted: list[int] = field(default_factory=list)
    saved: int = 0

    @property
    def attempted(self) -> int:
        return len(self.episodes) + len(self.aborted)

    @property
    def unreliable(self) -> bool:
        return self.attempted > 0 and len(self.aborted) / self.attempted > ABORT_LIMIT


@lru_cache(maxsize=32)
def simulator_for(surface: SurfaceSpec, params: SimParams = SimParams()) -> Simulator:
    return Simulator.for_surface(surface, params)


def trial_seeds(seed: int, n: int) -> list[tuple[int, int]]:
    """Independent (agent seed, retrieval seed) pairs, one per trial."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [tuple(int(s) for s in c.generate_state(2)) for c in children]


def _run_trial(spec, agent_config, store, sim, target, seeds, index, tag) -> Episode | None:
    agent_seed, retrieval_seed = seeds
    examples = []
    if spec.shots and store is not None:
        examples = store.retrieve(
            agent_config.model_id, spec.id, spec.mode, spec.shots, retrieval_seed, exclude_target=target
        )
    config = PipelineConfig(spec.mode, spec.shots, spec.max_attempts, target, spec.tolerance)
    agent = make_agent(agent_config.with_seed(agent_seed) if agent_config.seed is not None else agent_config)
    query = build_query(spec.surface.describe(), target, spec.tolerance)
    episode_id = f"{tag}{spec.id}/{spec.mode.value}/{spec.shots}/{agent_config.model_id}/s{spec.seed}/t{index}"
    try:
        return run_episode(query, agent, examples, sim, config, experiment_id=spec.id, episode_id=episode_id)
    except AgentError as exc:
        log.warning("trial %d aborted: %s", index, exc)
        return None
    finally:
        close = getattr(agent, "close", None)
        if close:
            close()


def _run_batch(spec, agent_config, store, targets, params, workers, tag) -> RunResult:
    sim = simulator_for(spec.surface, params)
    seeds = trial_seeds(spec.seed, len(targets))
    jobs = [(spec, agent_config, store, sim, t, s, i, tag) for i, (t, s) in enumerate(zip(targets, seeds))]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _run_trial(*j), jobs))
    else:
        results = [_run_trial(*j) for j in jobs]
    out = RunResult(spec)
    for i, ep in enumerate(results):
        if ep is None:
            out.aborted.append(i)
        else:
            out.episodes.append(ep)
    return out


def run_experiment(
    spec: ExperimentSpec,
    agent_config: AgentConfig,
    store: ExampleStore | None = None,
    save: bool = True,
    workers: int = 1,
    params: SimParams = SimParams(),
) -> RunResult:
    """Run ``spec.trials`` independent trials at the fixed target.

    Retrieval reads the store as it was before the run; successes are written
    afterwards in trial order, so results do not depend on execution order.
    """
    result = _run_batch(spec, agent_config, store, [spec.target] * spec.trials, params, workers, "")
    if save and store is not None:
        result.saved = sum(store.save_if_success(ep) for ep in result.episodes)
    if result.unreliable:
        log.warning("%d of %d trials aborted; run is unreliable", len(result.aborted), result.attempted)
    return result


def seed_examples(
    spec: ExperimentSpec,
    agent_config: AgentConfig,
    store: ExampleStore,
    count: int = 200,
    target_range: tuple[float, float] = (10.0, 100.0),
    max_trials: int | None = None,
    workers: int = 1,
    params: SimParams = SimParams(),
) -> RunResult:
    """Populate ``store`` with successful episodes at targets drawn uniformly from ``target_range``.

    Runs batches of trials until ``count`` successes exist for this
    (model, experiment, mode) or ``max_trials`` trials have been spent.
    """
    max_trials = max_trials if max_trials is not None else 10 * count
    rng = np.random.default_rng([spec.seed, 1])
    targets = [round(float(t), 2) for t in rng.uniform(*target_range, size=max_trials)]
    total = RunResult(spec)
    done = 0
    batch = max(count, 1)
    while done < max_trials and total.saved < count:
        chunk = targets[done : done + batch]
        sub_spec = replace(spec, trials=len(chunk), seed=spec.seed * 1_000_003 + done)
        res = _run_batch(sub_spec, agent_config, store, chunk, params, workers, "seed/")
        for ep in res.episodes:
            if total.saved >= count:
                break
            if ep.success:
                store.save_if_success(ep)
                total.saved += 1
        total.episodes.extend(res.episodes)
        total.aborted.extend(i + done for i in res.aborted)
        done += len(chunk)
    return total
