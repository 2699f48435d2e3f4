"""Text-completion backends.

``RemoteChatAgent`` speaks the common ``/chat/completions`` JSON protocol.
The scripted agents need no network and compute their reply from the
transcript alone, so a run with them is reproducible end to end:

* ``BisectionAgent`` holds the height at 5 m and brackets the horizontal
  velocity using the signed misses reported in earlier feedback.
* ``RandomAgent`` guesses uniformly, seeded; a control that never learns.
* ``ReplayAgent`` returns canned replies in order.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

from .pipeline import CRITERION_MET, DONE_SENTINEL, MISS_RE, TARGET_RE, AnswerError, answer_json, parse_answer

log = logging.getLogger(__name__)


class AgentError(Exception):
    pass


class NetworkError(AgentError):
    pass


class ProtocolError(AgentError):
    pass


class AgentTimeout(AgentError, TimeoutError):
    pass


class ExhaustedError(AgentError):
    pass


class AgentKind(str, Enum):
    REMOTE = "remote"
    BISECTION = "bisection"
    RANDOM = "random"
    REPLAY = "replay"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class AgentConfig:
    kind: AgentKind = AgentKind.BISECTION
    model_id: str = ""
    endpoint_url: str = ""
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.7
    max_tokens: int = 512
    timeout: float = 60.0
    max_retries: int = 3
    seed: int | None = 0
    replay: tuple[str, ...] = field(default_factory=tuple)
    max_in_flight: int = 4

    def __post_init__(self):
        object.__setattr__(self, "kind", AgentKind(self.kind))
        object.__setattr__(self, "replay", tuple(self.replay))
        if self.kind is AgentKind.REMOTE:
            if not (self.endpoint_url and self.model_id):
                raise ValueError("remote agents need endpoint_url and model_id")
        elif self.seed is None:
            raise ValueError("scripted agents need a seed")
        if not self.model_id:
            object.__setattr__(self, "model_id", self.kind.value)
        if self.temperature < 0 or self.timeout <= 0 or self.max_retries < 0 or self.max_in_flight < 1:
            raise ValueError("invalid remote settings")

    def with_seed(self, seed: int) -> "AgentConfig":
        return replace(self, seed=seed)


def _as_dicts(messages: Sequence) -> list[dict]:
    out = []
    for m in messages:
        if isinstance(m, ChatMessage):
            out.append(m.to_dict())
        else:
            out.append({"role": m["role"], "content": m["content"]})
    return out


def _check_transcript(messages: list[dict]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[-1]["role"] != "user":
        raise ValueError("the last message must come from the user")


# --------------------------------------------------------------------------
# remote

_slots: dict[str, threading.BoundedSemaphore] = {}
_slots_lock = threading.Lock()


def _slot(config: AgentConfig) -> threading.BoundedSemaphore:
    key = f"{config.endpoint_url}|{config.max_in_flight}"
    with _slots_lock:
        if key not in _slots:
            _slots[key] = threading.BoundedSemaphore(config.max_in_flight)
        return _slots[key]


def _retry_after(response: httpx.Response) -> float | None:
    value = response.headers.get("retry-after")
    if value is None:
        return None
    try:
        return max(float(value), 0.0)
    except ValueError:
        return None


class RemoteChatAgent:
    """Blocking chat-completion client with bounded exponential backoff.

    The total wall time of one :meth:`complete` call never exceeds
    ``timeout * (max_retries + 1)``; backoff sleeps are cut to fit.
    """

    base_delay = 0.5
    max_delay = 8.0

    def __init__(
        self,
        config: AgentConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.config = config
        self.model_id = config.model_id
        self._client = httpx.Client(transport=transport)
        self._sleep = sleep
        self._clock = clock

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _backoff(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * 2**attempt) * random.uniform(0.8, 1.2)

    def complete(self, messages: Sequence) -> str:
        cfg = self.config
        msgs = _as_dicts(messages)
        _check_transcript(msgs)
        url = cfg.endpoint_url.rstrip("/") + "/chat/completions"
        body = {"model": cfg.model_id, "messages": msgs, "temperature": cfg.temperature, "max_tokens": cfg.max_tokens}
        deadline = self._clock() + cfg.timeout * (cfg.max_retries + 1)
        last: AgentError = NetworkError("no request made")
        for attempt in range(cfg.max_retries + 1):
            remaining = deadline - self._clock()
            if remaining <= 0:
                break
            delay = None
            with _slot(cfg):
                try:
                    resp = self._client.post(url, json=body, headers=self._headers(), timeout=min(cfg.timeout, remaining))
                except httpx.TimeoutException as exc:
                    last = AgentTimeout(f"request timed out: {exc}")
                    resp = None
                except httpx.TransportError as exc:
                    last = NetworkError(f"transport failure: {exc}")
                    resp = None
            if resp is not None:
                if resp.status_code == 200:
                    return self._content(resp)
                if resp.status_code == 429:
                    last = NetworkError("rate limited (429)")
                    delay = _retry_after(resp)
                elif resp.status_code >= 500:
                    last = NetworkError(f"server error {resp.status_code}")
                else:
                    raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if attempt == cfg.max_retries:
                break
            if delay is None:
                delay = self._backoff(attempt)
            delay = min(delay, max(deadline - self._clock(), 0.0))
            log.warning("%s; retry %d/%d in %.2fs", last, attempt + 1, cfg.max_retries, delay)
            self._sleep(delay)
        raise last

    @staticmethod
    def _content(resp: httpx.Response) -> str:
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion body: {exc}") from exc
        if not isinstance(content, str):
            raise ProtocolError("completion content is not text")
        return content

    def close(self) -> None:
        self._client.close()


# --------------------------------------------------------------------------
# scripted


def _history(messages: list[dict]) -> list[tuple[float, float, float | None, str]]:
    """(height, velocity, signed miss or None, feedback text) for each answered turn."""
    out = []
    for i, m in enumerate(messages):
        if m["role"] != "assistant":
            continue
        try:
            h, v = parse_answer(m["content"])
        except AnswerError:
            continue
        feedback = next((n["content"] for n in messages[i + 1 :] if n["role"] == "user"), "")
        miss = MISS_RE.search(feedback)
        out.append((h, v, float(miss.group(1)) if miss else None, feedback))
    return out


def _target(messages: list[dict]) -> float:
    for m in messages:
        found = TARGET_RE.search(m["content"])
        if found:
            return float(found.group(2))
    return 50.0


class BisectionAgent:
    """Brackets the horizontal velocity at a fixed 5 m height.

    Opens with v = 15 m/s. A bracket end with a measured miss is kept next to
    its miss; once both ends have one the next guess is the false-position
    root, otherwise the bracket midpoint. Failed simulations count as
    overshoots.
    """

    height = 5.0
    opener = 15.0
    v_bounds = (0.0, 50.0)

    def __init__(self, config: AgentConfig):
        self.model_id = config.model_id
        self.seed = config.seed

    def propose(self, messages: list[dict]) -> tuple[float, tuple[float, float]]:
        lo, hi = self.v_bounds
        miss_lo = miss_hi = None
        history = _history(messages)
        if not history:
            return self.opener, (lo, hi)
        for _, v, miss, _ in history:
            if miss is None or miss > 0:
                if v <= hi:
                    hi, miss_hi = v, miss
            elif miss < 0:
                if v >= lo:
                    lo, miss_lo = v, miss
            else:
                return v, (v, v)
        if miss_lo is not None and miss_hi is not None:
            guess = lo + (hi - lo) * (-miss_lo) / (miss_hi - miss_lo)
        else:
            guess = 0.5 * (lo + hi)
        return guess, (lo, hi)

    def complete(self, messages: Sequence) -> str:
        msgs = _as_dicts(messages)
        _check_transcript(msgs)
        target = _target(msgs)
        v, (lo, hi) = self.propose(msgs)
        answer = answer_json(self.height, round(v, 6))
        if not _history(msgs):
            return (
                f"I keep the height fixed at {self.height:g} m and vary only the horizontal velocity. "
                f"A throw of about {self.opener:g} m/s is a reasonable first guess for a target of {target:g} m.\n"
                f"{answer}"
            )
        last = msgs[-1]["content"]
        done = f"\n{DONE_SENTINEL}" if CRITERION_MET in last else ""
        return (
            f"Critique: the velocity must lie between {lo:.4f} and {hi:.4f} m/s given the misses so far. "
            f"Next I try {v:.4f} m/s.\n{answer}{done}"
        )


class RandomAgent:
    """Uniform guesses, h in [1, 20] m and v in [1, 30] m/s."""

    h_range = (1.0, 20.0)
    v_range = (1.0, 30.0)

    def __init__(self, config: AgentConfig):
        self.model_id = config.model_id
        self.seed = int(config.seed or 0)

    def draw(self, messages: list[dict]) -> tuple[float, float]:
        turn = sum(1 for m in messages if m["role"] == "assistant")
        opening = next((m["content"] for m in messages if m["role"] == "user"), "")
        rng = np.random.default_rng([self.seed, turn, zlib.crc32(opening.encode())])
        return float(rng.uniform(*self.h_range)), float(rng.uniform(*self.v_range))

    def complete(self, messages: Sequence) -> str:
        msgs = _as_dicts(messages)
        _check_transcript(msgs)
        h, v = self.draw(msgs)
        return f"I will just guess.\n{answer_json(h, v)}"


class ReplayAgent:
    """Returns canned replies; the n-th assistant turn gets reply n."""

    def __init__(self, config: AgentConfig):
        self.model_id = config.model_id
        self.replies = list(config.replay)

    def complete(self, messages: Sequence) -> str:
        msgs = _as_dicts(messages)
        _check_transcript(msgs)
        turn = sum(1 for m in msgs if m["role"] == "assistant")
        if turn >= len(self.replies):
            raise ExhaustedError(f"replay has {len(self.replies)} replies, turn {turn + 1} requested")
        return self.replies[turn]


def make_agent(config: AgentConfig, **kwargs):
    if config.kind is AgentKind.REMOTE:
        return RemoteChatAgent(config, **kwargs)
    if config.kind is AgentKind.BISECTION:
        return BisectionAgent(config)
    if config.kind is AgentKind.RANDOM:
        return RandomAgent(config)
    return ReplayAgent(config)


def complete(config: AgentConfig, messages: Sequence) -> str:
    agent = make_agent(config)
    try:
        return agent.complete(messages)
    finally:
        if isinstance(agent, RemoteChatAgent):
            agent.close()


def load_replay(path) -> tuple[str, ...]:
    """Replies from a JSON list of strings or a JSON-lines file of strings."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not isinstance(data, list) or not all(isinstance(s, str) for s in data):
        raise ValueError("replay file must hold a list of strings")
    return tuple(data)
