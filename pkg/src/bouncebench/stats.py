"""Aggregate statistics and report writers."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import special

from .experiments import difficulty
from .pipeline import Episode

SIGNIFICANCE = 0.05
DIFFICULTY_GROUPS: dict[str, frozenset[int]] = {
    "easy": frozenset({1, 2, 3}),
    "medium": frozenset({4, 5, 6, 7}),
    "hard": frozenset({8, 9, 10}),
}


def _errors(items) -> np.ndarray:
    return np.array([getattr(x, "final_error", x) for x in items], dtype=float)


def mean_abs_error(episodes: Iterable) -> tuple[float, float, int]:
    """Mean and sample standard deviation of final errors.

    Accepts episodes or plain error values. A single value has std 0.
    """
    errs = _errors(episodes)
    if errs.size == 0:
        raise ValueError("no episodes to aggregate")
    std = float(np.std(errs, ddof=1)) if errs.size > 1 else 0.0
    return float(np.mean(errs)), std, int(errs.size)


@dataclass
class ReportRow:
    model_id: str
    experiment_id: str
    mode: str
    shots: int
    mean_abs_error: float
    std: float
    n: int
    success_rate: float = 0.0
    mean_best_error: float = 0.0

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.mean_abs_error < 0:
            raise ValueError("mean error cannot be negative")

    @property
    def key(self) -> tuple:
        return (self.model_id, self.experiment_id, self.mode, self.shots)


def report_rows(episodes: Sequence[Episode]) -> list[ReportRow]:
    """One row per (model, experiment, mode, shots) cell, sorted by that key."""
    cells: dict[tuple, list[Episode]] = defaultdict(list)
    for ep in episodes:
        cells[(ep.model_id, ep.experiment_id, ep.mode.value, ep.n_shots)].append(ep)
    rows = []
    for key in sorted(cells):
        eps = cells[key]
        mean, std, n = mean_abs_error(eps)
        rows.append(
            ReportRow(
                *key,
                mean_abs_error=mean,
                std=std,
                n=n,
                success_rate=sum(e.success for e in eps) / n,
                mean_best_error=float(np.mean([e.best_error for e in eps])),
            )
        )
    return rows


CSV_FIELDS = ["model_id", "experiment_id", "mode", "shots", "mean_abs_error", "std", "n", "success_rate", "mean_best_error"]


def rows_to_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        d = asdict(r)
        w.writerow([f"{d[k]:.6f}" if isinstance(d[k], float) else d[k] for k in CSV_FIELDS])
    return buf.getvalue()


def format_table(rows: Sequence[ReportRow]) -> str:
    """Aligned plain-text table."""
    header = ["model", "exp", "mode", "shots", "mean err", "std", "n", "success"]
    body = [
        [r.model_id, r.experiment_id, r.mode, str(r.shots), f"{r.mean_abs_error:.2f}", f"{r.std:.2f}", str(r.n), f"{r.success_rate:.1%}"]
        for r in rows
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# relative error by difficulty


def difficulty_group(level: int, grouping: Mapping[str, Iterable[int]] = DIFFICULTY_GROUPS) -> str | None:
    for name, members in grouping.items():
        if level in members:
            return name
    return None


def relative_error(
    simlm_rows: Sequence[ReportRow],
    baseline_rows: Sequence[ReportRow],
    grouping: Mapping[str, Iterable[int]] = DIFFICULTY_GROUPS,
) -> dict[tuple[str, int, str], float]:
    """Group-averaged SimLM mean error over group-averaged baseline mean error.

    Rows are matched on (model, shots, difficulty); only difficulty-blend
    experiments take part. Keys are ``(model_id, shots, group)``.
    """
    def index(rows):
        out = {}
        for r in rows:
            d = difficulty(r.experiment_id)
            if d is not None:
                out[(r.model_id, r.shots, d)] = r.mean_abs_error
        return out

    sim, base = index(simlm_rows), index(baseline_rows)
    groups: dict[tuple, tuple[list, list]] = defaultdict(lambda: ([], []))
    for key in sorted(set(sim) & set(base)):
        model, shots, d = key
        name = difficulty_group(d, grouping)
        if name is None:
            continue
        groups[(model, shots, name)][0].append(sim[key])
        groups[(model, shots, name)][1].append(base[key])
    out = {}
    for key, (s, b) in groups.items():
        denom = float(np.mean(b))
        if denom == 0.0:
            raise ZeroDivisionError(f"baseline mean error is zero for {key}")
        out[key] = float(np.mean(s)) / denom
    return out


# --------------------------------------------------------------------------
# Welch t-test


@dataclass
class TTestResult:
    t: float
    df: float
    p: float
    significant: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float], alpha: float = SIGNIFICANCE) -> TTestResult:
    """Two-sided unequal-variance t-test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0.0:
        raise ValueError("both samples have zero variance")
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    df = float(se2**2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1)))
    p = float(min(1.0, 2.0 * special.stdtr(df, -abs(t))))
    return TTestResult(t, df, p, p < alpha)


def paired_t_tests(episodes: Sequence[Episode]) -> list[dict]:
    """Baseline vs SimLM final errors for every (model, experiment, shots) cell holding both."""
    cells: dict[tuple, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for ep in episodes:
        cells[(ep.model_id, ep.experiment_id, ep.n_shots)][ep.mode.value].append(ep.final_error)
    out = []
    for key in sorted(cells):
        modes = cells[key]
        if "baseline" not in modes or "simlm" not in modes:
            continue
        model, exp, shots = key
        entry = {"model_id": model, "experiment_id": exp, "shots": shots}
        try:
            entry.update(asdict(welch_t_test(modes["simlm"], modes["baseline"])))
        except ValueError as exc:
            entry["error"] = str(exc)
        out.append(entry)
    return out
