"""Ground surfaces: analytic height functions and their polyline samples.

Three surface families are built in:

* ``flat``      y = 0
* ``sinusoid``  y = alpha * sin(freq * x)
* ``blend``     y = (1 - d) * y_easy(x) + d * y_hard(x)

The simulator never sees the analytic form. It collides against a
:class:`Terrain`, a height field sampled every ``step_c`` metres.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

DEFAULT_X_RANGE = (-1000.0, 1000.0)
DEFAULT_STEP_C = 0.05

SurfaceLike = Union["SurfaceSpec", dict, str]


def easy_surface(x):
    return 0.15 * np.sin(0.25 * x)


def hard_surface(x):
    return 0.6 * np.sin(0.9 * x) + 0.15 * np.sin(2.25 * x) + 0.05 * np.sin(4.5 * x)


@dataclass(frozen=True)
class SurfaceSpec:
    """One of the built-in surface families.

    ``alpha`` and ``freq`` are only read for ``kind="sinusoid"``; ``d`` only
    for ``kind="blend"``.
    """

    kind: str = "flat"
    alpha: float = 1.0
    freq: float = 1.0
    d: float = 0.0

    def __post_init__(self):
        if self.kind not in ("flat", "sinusoid", "blend"):
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if self.kind == "sinusoid" and (self.alpha < 0 or self.freq <= 0):
            raise ValueError("sinusoid needs alpha >= 0 and freq > 0")
        if self.kind == "blend" and not 0.0 <= self.d <= 1.0:
            raise ValueError("blend difficulty d must lie in [0, 1]")

    @classmethod
    def flat(cls) -> "SurfaceSpec":
        return cls("flat")

    @classmethod
    def sinusoid(cls, alpha: float = 1.0, freq: float = 1.0) -> "SurfaceSpec":
        return cls("sinusoid", alpha=alpha, freq=freq)

    @classmethod
    def blend(cls, d: float) -> "SurfaceSpec":
        return cls("blend", d=d)

    def height(self, x):
        """Analytic height at ``x`` (scalar or array)."""
        if self.kind == "flat":
            return np.zeros_like(x, dtype=float) if np.ndim(x) else 0.0
        if self.kind == "sinusoid":
            return self.alpha * np.sin(self.freq * x)
        return (1.0 - self.d) * easy_surface(x) + self.d * hard_surface(x)

    def describe(self) -> str:
        """Human-readable formula used in prompts."""
        if self.kind == "flat":
            return "the ground is flat: y = 0"
        if self.kind == "sinusoid":
            return f"the ground is y = {self.alpha:g}*sin({self.freq:g}*x)"
        easy = "0.15*sin(0.25*x)"
        hard = "0.6*sin(0.9*x) + 0.15*sin(2.25*x) + 0.05*sin(4.5*x)"
        return f"the ground is y = {1 - self.d:g}*({easy}) + {self.d:g}*({hard})"

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "sinusoid":
            out.update(alpha=self.alpha, freq=self.freq)
        elif self.kind == "blend":
            out["d"] = self.d
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "SurfaceSpec":
        kind = data.get("kind", "flat")
        if kind == "sinusoid":
            return cls.sinusoid(float(data.get("alpha", 1.0)), float(data.get("freq", 1.0)))
        if kind == "blend":
            return cls.blend(float(data["d"]))
        if kind == "flat":
            return cls.flat()
        raise ValueError(f"unknown surface kind {kind!r}")

    @classmethod
    def from_json(cls, text: str) -> "SurfaceSpec":
        return cls.from_dict(json.loads(text))


def surface_height(spec: SurfaceSpec, x):
    return spec.height(x)


class Terrain:
    """Piecewise-linear height field with strictly increasing vertex x."""

    def __init__(self, xs, ys, step_c: float | None = None):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 2:
            raise ValueError("terrain needs at least two (x, y) vertices")
        if not np.all(np.diff(xs) > 0):
            raise ValueError("terrain x coordinates must be strictly increasing")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise FloatingPointError("terrain contains non-finite vertices")
        self.xs = xs
        self.ys = ys
        self.xs.setflags(write=False)
        self.ys.setflags(write=False)
        self.step_c = float(step_c) if step_c is not None else float(xs[1] - xs[0])
        self._slopes = np.diff(ys) / np.diff(xs)

    @property
    def x_min(self) -> float:
        return float(self.xs[0])

    @property
    def x_max(self) -> float:
        return float(self.xs[-1])

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.xs.tolist(), self.ys.tolist()))

    def __len__(self) -> int:
        return len(self.xs)

    def height(self, x):
        """Polyline height at ``x``; held constant outside the sampled range."""
        xq = np.asarray(x, dtype=float)
        xc = np.clip(xq, self.xs[0], self.xs[-1])
        i = np.clip(np.searchsorted(self.xs, xc, side="right") - 1, 0, len(self.xs) - 2)
        y = self.ys[i] + self._slopes[i] * (xc - self.xs[i])
        return float(y) if y.ndim == 0 else y

    def segment_index(self, x: float) -> int:
        i = int(np.searchsorted(self.xs, x, side="right")) - 1
        return min(max(i, 0), len(self.xs) - 2)

    def segment_normal(self, i: int) -> tuple[float, float]:
        return segment_normal(self, i)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for x, y in zip(self.xs, self.ys):
                w.writerow([repr(float(x)), repr(float(y))])


def segment_normal(terrain: Terrain, i: int) -> tuple[float, float]:
    """Upward unit normal of segment ``i`` (between vertices i and i+1)."""
    if not 0 <= i < len(terrain.xs) - 1:
        raise IndexError(f"segment index {i} out of range")
    dx = terrain.xs[i + 1] - terrain.xs[i]
    dy = terrain.ys[i + 1] - terrain.ys[i]
    length = math.hypot(dx, dy)
    if length == 0.0:
        raise ValueError("zero-length terrain segment")
    # tangent (dx, dy) rotated +90 degrees; dx > 0 so the y part is positive
    return (float(-dy / length), float(dx / length))


def sample_surface(
    spec: SurfaceSpec,
    x_min: float = DEFAULT_X_RANGE[0],
    x_max: float = DEFAULT_X_RANGE[1],
    step_c: float = DEFAULT_STEP_C,
) -> Terrain:
    """Sample ``spec`` at x_min, x_min + c, ... with x_max forced as the last vertex."""
    if not x_min < x_max:
        raise ValueError("x_min must be smaller than x_max")
    if not step_c > 0:
        raise ValueError("step_c must be positive")
    n = int(math.floor((x_max - x_min) / step_c + 1e-9))
    xs = x_min + step_c * np.arange(n + 1, dtype=float)
    xs = xs[xs < x_max - 1e-9 * step_c]
    xs = np.append(xs, x_max)
    ys = np.asarray(spec.height(xs), dtype=float)
    if not np.all(np.isfinite(ys)):
        raise FloatingPointError("surface produced non-finite heights")
    return Terrain(xs, ys, step_c)


def as_surface(value: SurfaceLike) -> SurfaceSpec:
    if isinstance(value, SurfaceSpec):
        return value
    if isinstance(value, dict):
        return SurfaceSpec.from_dict(value)
    return SurfaceSpec.from_json(value)


def save_surface(spec: SurfaceSpec, path) -> None:
    Path(path).write_text(spec.to_json() + "\n")
