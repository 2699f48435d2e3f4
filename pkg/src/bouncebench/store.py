"""JSON-lines database of summarised successful episodes.

Each line is one :class:`StoredExample`::

    {"episode_id": str, "model_id": str, "experiment_id": str, "mode": "baseline"|"simlm",
     "target": float, "bucket": int, "summary": str,
     "attempts_digest": [[h, v, x3 or null, error or null], ...], "created_at": ISO-8601}

``bucket`` is ``floor(target / 10)``. Records are only appended; an
in-memory index is rebuilt on open and duplicate episode ids are ignored.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .pipeline import Episode, Role

log = logging.getLogger(__name__)

BUCKET_WIDTH = 10.0
RATIONALE_CHARS = 300
SUMMARY_CHARS = 1200


def bucket_of(target: float) -> int:
    return int(math.floor(target / BUCKET_WIDTH))


@dataclass
class StoredExample:
    episode_id: str
    model_id: str
    experiment_id: str
    mode: str
    target: float
    bucket: int
    summary: str
    attempts_digest: list = field(default_factory=list)
    created_at: str = ""

    def __post_init__(self):
        if not self.summary:
            raise ValueError("summary must be non-empty")
        if self.bucket != bucket_of(self.target):
            raise ValueError("bucket does not match target")


def _num(x) -> str:
    return "?" if x is None else f"{x:.2f}"


def summarize(episode: Episode) -> str:
    """Template summary: target, one line per attempt, last rationale (<= 300 chars)."""
    if not episode.success:
        raise ValueError("only successful episodes are summarised")
    lines = [f"Target: third bounce within {episode.tolerance:g} m of {episode.target:.2f} m."]
    for k, a in enumerate(episode.attempts, start=1):
        head = f"attempt {k}: h={_num(a.height)}, v={_num(a.horizontal_velocity)}"
        if a.third_bounce_x is not None:
            miss = a.third_bounce_x - episode.target
            lines.append(f"{head} -> third bounce {a.third_bounce_x:.2f} m (miss {miss:+.2f} m)")
        else:
            lines.append(f"{head} -> failed ({(a.failure_reason or '')[:60]})")
    rationale = ""
    for seg in reversed(episode.segments):
        if seg.role in (Role.REASONING, Role.CRITIQUE):
            rationale = " ".join(seg.text.split())[:RATIONALE_CHARS]
            break
    lines.append(f"Rationale: {rationale}")
    return "\n".join(lines)[:SUMMARY_CHARS]


class ExampleStore:
    """Examples keyed by (model, experiment, mode) and grouped by target bucket.

    ``path=None`` keeps everything in memory.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records: list[StoredExample] = []
        self._ids: set[str] = set()
        if self.path is not None and self.path.exists():
            with open(self.path) as fh:
                for n, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        self._index(StoredExample(**json.loads(line)))
                    except (ValueError, TypeError) as exc:
                        log.warning("%s line %d skipped: %s", self.path, n, exc)

    @classmethod
    def open(cls, path) -> "ExampleStore":
        return cls(path)

    def _index(self, ex: StoredExample) -> bool:
        if ex.episode_id in self._ids:
            return False
        self._ids.add(ex.episode_id)
        self._records.append(ex)
        return True

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, episode_id: str) -> bool:
        return episode_id in self._ids

    def records(self) -> list[StoredExample]:
        with self._lock:
            return list(self._records)

    def add(self, ex: StoredExample) -> bool:
        with self._lock:
            if ex.episode_id in self._ids:
                return False
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a") as fh:
                    fh.write(json.dumps(asdict(ex), sort_keys=True) + "\n")
            return self._index(ex)

    def save_if_success(self, episode: Episode) -> bool:
        """Summarise and append ``episode`` if it met its criterion. Idempotent per id."""
        if not episode.success:
            return False
        if not episode.episode_id:
            raise ValueError("episode needs an id to be stored")
        digest = [[a.height, a.horizontal_velocity, a.third_bounce_x, a.error] for a in episode.attempts]
        ex = StoredExample(
            episode_id=episode.episode_id,
            model_id=episode.model_id,
            experiment_id=episode.experiment_id,
            mode=episode.mode.value,
            target=float(episode.target),
            bucket=bucket_of(episode.target),
            summary=summarize(episode),
            attempts_digest=digest,
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        return self.add(ex)

    def retrieve(
        self,
        model_id: str,
        experiment_id: str,
        mode: str,
        k: int,
        rng_seed,
        exclude_target: float | None = None,
    ) -> list[StoredExample]:
        """Up to ``k`` examples, buckets drawn uniformly, then one example per bucket.

        Buckets are sampled without replacement; if ``k`` exceeds the number of
        buckets further rounds draw unused examples the same way. Examples whose
        rounded target equals ``round(exclude_target)`` are never returned.
        """
        if k < 0:
            raise ValueError("k must be non-negative")
        mode = getattr(mode, "value", mode)
        with self._lock:
            pool = [
                ex
                for ex in self._records
                if ex.model_id == model_id and ex.experiment_id == experiment_id and ex.mode == mode
                and (exclude_target is None or round(ex.target) != round(exclude_target))
            ]
        buckets: dict[int, list[StoredExample]] = defaultdict(list)
        for ex in pool:
            buckets[ex.bucket].append(ex)
        rng = np.random.default_rng(rng_seed)
        out: list[StoredExample] = []
        while len(out) < k and buckets:
            keys = sorted(buckets)
            for b in rng.permutation(keys):
                if len(out) >= k:
                    break
                members = buckets[int(b)]
                out.append(members.pop(int(rng.integers(len(members)))))
                if not members:
                    del buckets[int(b)]
        return out

    def compact(self) -> int:
        """Rewrite the file without duplicate or malformed lines; returns lines dropped."""
        if self.path is None or not self.path.exists():
            return 0
        with self._lock:
            lines = [line for line in self.path.read_text().splitlines() if line.strip()]
            seen: set[str] = set()
            kept = []
            for line in lines:
                try:
                    ex = StoredExample(**json.loads(line))
                except (ValueError, TypeError):
                    continue
                if ex.episode_id not in seen:
                    seen.add(ex.episode_id)
                    kept.append(json.dumps(asdict(ex), sort_keys=True))
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            tmp.write_text("".join(line + "\n" for line in kept))
            tmp.replace(self.path)
            return len(lines) - len(kept)
