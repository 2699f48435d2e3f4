"""Third-bounce error over a (velocity, height) grid."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .physics import InvalidInitialCondition, SimParams, Simulator, simulate
from .terrain import SurfaceSpec, as_surface, sample_surface

PENALTY = 100.0


@dataclass(frozen=True)
class HeatmapSpec:
    surface: SurfaceSpec = field(default_factory=SurfaceSpec.flat)
    v_range: tuple[float, float] = (0.0, 30.0)
    h_range: tuple[float, float] = (0.5, 20.0)
    grid: tuple[int, int] = (120, 80)  # (nv, nh)

    def __post_init__(self):
        object.__setattr__(self, "surface", as_surface(self.surface))
        for name in ("v_range", "h_range"):
            lo, hi = getattr(self, name)
            if not np.isfinite([lo, hi]).all() or not lo < hi:
                raise ValueError(f"{name} must be an increasing finite pair")
        nv, nh = self.grid
        if int(nv) != nv or int(nh) != nh or nv < 2 or nh < 2:
            raise ValueError("grid must be at least 2x2")

    @property
    def velocities(self) -> np.ndarray:
        return np.linspace(*self.v_range, int(self.grid[0]))

    @property
    def heights(self) -> np.ndarray:
        return np.linspace(*self.h_range, int(self.grid[1]))


@dataclass
class HeatmapResult:
    """``errors[i, j]`` is the error at height ``heights[i]`` and velocity ``velocities[j]``."""

    velocities: np.ndarray
    heights: np.ndarray
    errors: np.ndarray
    target: float
    penalty: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h\\v"] + [f"{v:.6g}" for v in self.velocities])
        for h, row in zip(self.heights, self.errors):
            w.writerow([f"{h:.6g}"] + [f"{e:.6f}" for e in row])
        return buf.getvalue()

    def to_pgm(self) -> bytes:
        """8-bit binary PGM; highest height on the top row, dark means small error."""
        scaled = np.minimum(self.errors, self.penalty) / self.penalty
        pixels = np.round(255 * scaled).astype(np.uint8)[::-1]
        nh, nv = pixels.shape
        return f"P5\n{nv} {nh}\n255\n".encode() + pixels.tobytes()

    def write(self, csv_path, pgm_path) -> None:
        Path(csv_path).write_text(self.to_csv())
        Path(pgm_path).write_bytes(self.to_pgm())


def cell_error(sim: Simulator, h: float, v: float, target: float = 50.0, penalty: float = PENALTY) -> float:
    try:
        traj = simulate(h, v, sim.terrain, sim.params)
    except InvalidInitialCondition:
        return penalty
    if len(traj.bounces) < 3:
        return penalty
    return abs(traj.bounces[2].pos.x - target)


def heatmap(spec: HeatmapSpec, params: SimParams = SimParams(), target: float = 50.0, penalty: float = PENALTY) -> HeatmapResult:
    """Simulate every grid cell once; cells with fewer than three bounces get ``penalty``."""
    sim = Simulator(sample_surface(spec.surface), params, spec.surface)
    vs, hs = spec.velocities, spec.heights
    errors = np.empty((hs.size, vs.size))
    for i, h in enumerate(hs):
        for j, v in enumerate(vs):
            errors[i, j] = cell_error(sim, float(h), float(v), target, penalty)
    return HeatmapResult(vs, hs, errors, target, penalty)
