"""Prompt pipelines over typed context segments.

An episode is a list of segments, each tagged with one role letter:

====  =================================================
E     retrieved worked example
Q     the query
R     first model reasoning (contains the first answer)
P     physics feedback from the simulator
C     model self-critique (contains a revised answer)
A     final answer
====  =================================================

Baseline chain-of-thought episodes follow ``E* Q R A``. Simulation-feedback
episodes follow ``E* Q R (P C)* P? A`` with at least one ``P``: every parsed
answer is simulated, the result is shown to the model, and the model
critiques and revises until the criterion is met, it writes ``DONE``, or the
attempt budget runs out.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .physics import InsufficientBounces, InvalidInitialCondition, Termination, Trajectory, third_bounce_x

log = logging.getLogger(__name__)

DONE_SENTINEL = "DONE"
TARGET_RE = re.compile(r"within ([0-9.]+) ?m of ([0-9.]+) ?m")
MISS_RE = re.compile(r"signed miss ([+-][0-9.]+) m")
CRITERION_MET = "The success criterion is met."

SYSTEM_PROMPT = (
    "You are solving a physics puzzle about a ball thrown horizontally that bounces on the ground. "
    "Think step by step, then give your answer as a JSON object with the keys "
    '"height" (metres, > 0) and "horizontal_velocity" (metres per second).'
)

CRITIQUE_REQUEST = (
    "Critique your previous answer using the simulation result above, then give a revised JSON answer "
    '{"height": ..., "horizontal_velocity": ...}. '
    f"If you are satisfied that the requirement is met, write {DONE_SENTINEL} on its own line."
)


class Mode(str, Enum):
    BASELINE = "baseline"
    SIMLM = "simlm"


class Role(str, Enum):
    EXAMPLE = "E"
    QUERY = "Q"
    REASONING = "R"
    FEEDBACK = "P"
    CRITIQUE = "C"
    ANSWER = "A"


class AnswerError(ValueError):
    pass


class ParseError(AnswerError):
    pass


class DomainError(AnswerError):
    def __init__(self, message, height=None, horizontal_velocity=None):
        super().__init__(message)
        self.height = height
        self.horizontal_velocity = horizontal_velocity


class Agent(Protocol):
    model_id: str

    def complete(self, messages: Sequence[dict]) -> str: ...


@dataclass
class Segment:
    role: Role
    text: str
    attempt_index: int = 0


@dataclass
class Attempt:
    height: float | None = None
    horizontal_velocity: float | None = None
    third_bounce_x: float | None = None
    error: float | None = None
    failure_reason: str | None = None
    bounces: list[float] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return self.failure_reason is not None


@dataclass
class PipelineConfig:
    mode: Mode = Mode.SIMLM
    n_shots: int = 0
    max_attempts: int = 5
    target: float = 50.0
    tolerance: float = 1.0
    failure_penalty: float | None = None  # None means 2 * target

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.n_shots < 0:
            raise ValueError("n_shots must be non-negative")

    @property
    def penalty(self) -> float:
        return 2.0 * self.target if self.failure_penalty is None else self.failure_penalty


@dataclass
class Episode:
    experiment_id: str
    model_id: str
    target: float
    tolerance: float
    mode: Mode
    n_shots: int
    segments: list[Segment] = field(default_factory=list)
    attempts: list[Attempt] = field(default_factory=list)
    success: bool = False
    final_error: float = math.inf
    best_error: float = math.inf
    episode_id: str = ""

    def roles(self) -> str:
        return "".join(s.role.value for s in self.segments)

    def final_answer(self) -> Attempt | None:
        for a in reversed(self.attempts):
            if a.height is not None and a.horizontal_velocity is not None:
                return a
        return None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        out["segments"] = [{"role": s.role.value, "text": s.text, "attempt_index": s.attempt_index} for s in self.segments]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Episode":
        data = dict(data)
        data["mode"] = Mode(data["mode"])
        data["segments"] = [Segment(Role(s["role"]), s["text"], s.get("attempt_index", 0)) for s in data.get("segments", [])]
        data["attempts"] = [Attempt(**a) for a in data.get("attempts", [])]
        return cls(**data)


# --------------------------------------------------------------------------
# answers and feedback


def build_query(surface_description: str, target: float = 50.0, tolerance: float = 1.0) -> str:
    return (
        f"With what horizontal velocity v and from what height h should a ball be thrown so that "
        f"its third bounce is within {tolerance:g} m of {target:g} m? "
        f"The ball starts at x = 0 with no vertical velocity; {surface_description}. "
        'Answer with a JSON object {"height": <metres>, "horizontal_velocity": <metres per second>}.'
    )


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def parse_answer(text: str) -> tuple[float, float]:
    """Return ``(height, horizontal_velocity)`` from the last JSON answer in ``text``.

    Raises :class:`ParseError` if no JSON object carries both keys as numbers
    and :class:`DomainError` for a non-positive height.
    """
    decoder = json.JSONDecoder()
    found = None
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except ValueError:
            continue
        if isinstance(obj, dict) and _is_number(obj.get("height")) and _is_number(obj.get("horizontal_velocity")):
            found = obj
    if found is None:
        raise ParseError("no JSON object with numeric 'height' and 'horizontal_velocity'")
    h, v = float(found["height"]), float(found["horizontal_velocity"])
    if h <= 0:
        raise DomainError(f"height must be positive, got {h:g}", h, v)
    return h, v


def answer_json(h: float, v: float) -> str:
    return json.dumps({"height": h, "horizontal_velocity": v})


_TERMINATION_TEXT = {
    Termination.OUT_OF_BOUNDS: "The ball left the simulated region before its third bounce.",
    Termination.TIME_LIMIT: "The ball stopped bouncing before its third bounce.",
    Termination.BOUNCE_LIMIT: "The simulation ended before the third bounce.",
}


def format_feedback(attempt: Attempt, target: float, traj: Trajectory | None = None, tolerance: float = 1.0) -> str:
    """Deterministic physics feedback for one attempt.

    Successful simulations produce, for example::

        Simulation of height 5.00 m, horizontal velocity 10.00 m/s:
        bounce 1 at x = 10.10 m
        bounce 2 at x = 26.45 m
        bounce 3 at x = 39.70 m
        The third bounce at 39.70 m is 10.30 m short of the target (50.00 m); signed miss -10.30 m.
        Requirement: third bounce within 1.00 m of 50.00 m. The success criterion is not met.
    """
    xs = traj.bounce_xs() if traj is not None else attempt.bounces
    lines = []
    if attempt.height is not None and attempt.horizontal_velocity is not None:
        lines.append(f"Simulation of height {attempt.height:.2f} m, horizontal velocity {attempt.horizontal_velocity:.2f} m/s:")
    lines.extend(f"bounce {i} at x = {x:.2f} m" for i, x in enumerate(xs, start=1))
    if attempt.third_bounce_x is None:
        lines.append(attempt.failure_reason or "The attempt failed.")
        lines.append(f"Requirement: third bounce within {tolerance:.2f} m of {target:.2f} m. The success criterion is not met.")
        return "\n".join(lines)
    x3 = attempt.third_bounce_x
    miss = x3 - target
    if miss < 0:
        where = f"{-miss:.2f} m short of the target ({target:.2f} m)"
    elif miss > 0:
        where = f"{miss:.2f} m beyond the target ({target:.2f} m)"
    else:
        where = f"exactly on the target ({target:.2f} m)"
    lines.append(f"The third bounce at {x3:.2f} m is {where}; signed miss {miss:+.2f} m.")
    verdict = CRITERION_MET if abs(miss) <= tolerance else "The success criterion is not met."
    lines.append(f"Requirement: third bounce within {tolerance:.2f} m of {target:.2f} m. {verdict}")
    return "\n".join(lines)


def evaluate_answer(text: str, sim: Callable[[float, float], Trajectory], target: float) -> tuple[Attempt, Trajectory | None]:
    """Parse ``text``, simulate it and score the third bounce."""
    try:
        h, v = parse_answer(text)
    except DomainError as exc:
        reason = f"Your answer is not physically valid: {exc}. Give a positive height."
        return Attempt(exc.height, exc.horizontal_velocity, failure_reason=reason), None
    except ParseError:
        reason = (
            "Your answer could not be read. Reply with a JSON object such as "
            '{"height": 5.0, "horizontal_velocity": 10.0}.'
        )
        return Attempt(failure_reason=reason), None
    try:
        traj = sim(h, v)
    except InvalidInitialCondition as exc:
        return Attempt(h, v, failure_reason=f"The ball cannot start there: {exc}."), None
    try:
        x3 = third_bounce_x(traj)
    except InsufficientBounces as exc:
        return Attempt(h, v, failure_reason=_TERMINATION_TEXT[exc.terminated_by], bounces=traj.bounce_xs()), traj
    return Attempt(h, v, x3, abs(x3 - target), bounces=traj.bounce_xs()[:3]), traj


# --------------------------------------------------------------------------
# grammar

_GRAMMAR = {
    Mode.BASELINE: re.compile(r"E*QRA"),
    Mode.SIMLM: re.compile(r"E*QR(PC)*P?A"),
}


def validate_grammar(episode: Episode) -> bool:
    roles = episode.roles()
    if not _GRAMMAR[Mode(episode.mode)].fullmatch(roles):
        return False
    if episode.mode == Mode.SIMLM and "P" not in roles:
        return False
    return True


# --------------------------------------------------------------------------
# runners


def example_text(example) -> str:
    return getattr(example, "summary", None) or str(example)


def _opening_messages(query: str, examples: Sequence) -> list[dict]:
    parts = [f"Example {i}:\n{example_text(e)}" for i, e in enumerate(examples, start=1)]
    parts.append(query)
    return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": "\n\n".join(parts)}]


def _new_episode(query, examples, config, experiment_id, model_id, episode_id) -> Episode:
    ep = Episode(
        experiment_id=experiment_id,
        model_id=model_id,
        target=config.target,
        tolerance=config.tolerance,
        mode=config.mode,
        n_shots=len(examples),
        episode_id=episode_id,
    )
    ep.segments.extend(Segment(Role.EXAMPLE, example_text(e)) for e in examples)
    ep.segments.append(Segment(Role.QUERY, query))
    return ep


def _finalize(ep: Episode, config: PipelineConfig) -> Episode:
    errors = [a.error if a.error is not None else config.penalty for a in ep.attempts]
    ep.final_error = errors[-1]
    ep.best_error = min(errors)
    ep.success = ep.final_error <= config.tolerance
    last = ep.final_answer()
    text = answer_json(last.height, last.horizontal_velocity) if last else "no valid answer"
    ep.segments.append(Segment(Role.ANSWER, text, len(ep.attempts)))
    return ep


def run_baseline(
    query: str,
    agent: Agent,
    examples: Sequence,
    sim: Callable[[float, float], Trajectory],
    config: PipelineConfig,
    experiment_id: str = "",
    episode_id: str = "",
) -> Episode:
    """One completion, one scored answer; the simulation never enters the context."""
    if config.mode != Mode.BASELINE:
        raise ValueError("run_baseline needs a baseline config")
    ep = _new_episode(query, examples, config, experiment_id, agent.model_id, episode_id)
    text = agent.complete(_opening_messages(query, examples))
    ep.segments.append(Segment(Role.REASONING, text, 1))
    attempt, _ = evaluate_answer(text, sim, config.target)
    ep.attempts.append(attempt)
    return _finalize(ep, config)


def run_simlm(
    query: str,
    agent: Agent,
    examples: Sequence,
    sim: Callable[[float, float], Trajectory],
    config: PipelineConfig,
    experiment_id: str = "",
    episode_id: str = "",
) -> Episode:
    """Reason, simulate, feed back, critique; repeat up to ``config.max_attempts`` times."""
    if config.mode != Mode.SIMLM:
        raise ValueError("run_simlm needs a simlm config")
    ep = _new_episode(query, examples, config, experiment_id, agent.model_id, episode_id)
    messages = _opening_messages(query, examples)
    text = agent.complete(messages)
    ep.segments.append(Segment(Role.REASONING, text, 1))
    for k in range(1, config.max_attempts + 1):
        attempt, traj = evaluate_answer(text, sim, config.target)
        ep.attempts.append(attempt)
        feedback = format_feedback(attempt, config.target, traj, config.tolerance)
        ep.segments.append(Segment(Role.FEEDBACK, feedback, k))
        if (attempt.error is not None and attempt.error <= config.tolerance) or k == config.max_attempts:
            break
        messages = messages + [
            {"role": "assistant", "content": text},
            {"role": "user", "content": f"{feedback}\n\n{CRITIQUE_REQUEST}"},
        ]
        text = agent.complete(messages)
        ep.segments.append(Segment(Role.CRITIQUE, text, k))
        if any(line.strip() == DONE_SENTINEL for line in text.splitlines()):
            log.debug("agent declared completion after attempt %d", k)
            break
    return _finalize(ep, config)


def run_episode(query, agent, examples, sim, config, **kw) -> Episode:
    runner = run_simlm if Mode(config.mode) == Mode.SIMLM else run_baseline
    return runner(query, agent, examples, sim, config, **kw)


# --------------------------------------------------------------------------
# persistence and display


def save_episodes(episodes: Sequence[Episode], path, extra: dict | None = None) -> None:
    doc = dict(extra or {})
    doc["episodes"] = [e.to_dict() for e in episodes]
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_episodes(path) -> list[Episode]:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict) and "episodes" in doc:
        items = doc["episodes"]
    elif isinstance(doc, list):
        items = doc
    else:
        items = [doc]
    return [Episode.from_dict(d) for d in items]


def format_transcript(episode: Episode) -> str:
    ok = validate_grammar(episode)
    head = (
        f"episode {episode.episode_id or '-'}  experiment {episode.experiment_id}  model {episode.model_id}  "
        f"mode {episode.mode.value}  shots {episode.n_shots}\n"
        f"grammar {episode.roles()}  {'valid' if ok else 'INVALID'}\n"
        f"success {episode.success}  final error {episode.final_error:.3f} m  best error {episode.best_error:.3f} m"
    )
    blocks = [head]
    for seg in episode.segments:
        tag = f"[{seg.role.value}{seg.attempt_index if seg.attempt_index else ''}]"
        body = "\n".join("    " + line for line in seg.text.splitlines())
        blocks.append(f"{tag}\n{body}")
    return "\n\n".join(blocks)
