"""Fixed-timestep ball flight with restitution bounces on a terrain polyline.

Gravity is the only force, so the per-step update is the exact
constant-acceleration kinematics ``x += v*dt + g*dt**2/2, v += g*dt``. A
bounce is detected when the chord between two consecutive positions crosses
the terrain polyline. The ball is moved to the crossing point, the velocity
is reflected about the segment normal and scaled by ``e``, and the rest of
that step is dropped.

:func:`simulate` evaluates a whole flight per numpy call instead of looping
:func:`step` in Python; both share the chord-crossing routine and agree to
rounding.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .terrain import SurfaceSpec, Terrain, sample_surface

_CROSS_TOL = 1e-9
_VERTEX_TOL = 1e-9
_CHUNK = 2048


class SimulationError(Exception):
    pass


class OutOfBoundsError(SimulationError):
    pass


class SimulationFault(SimulationError):
    pass


class InvalidInitialCondition(ValueError):
    pass


class Termination(str, Enum):
    BOUNCE_LIMIT = "bounce_limit"
    TIME_LIMIT = "time_limit"
    OUT_OF_BOUNDS = "out_of_bounds"


class InsufficientBounces(SimulationError):
    """Raised when a trajectory ended before the requested bounce."""

    def __init__(self, needed: int, got: int, terminated_by: Termination):
        self.needed = needed
        self.got = got
        self.terminated_by = terminated_by
        super().__init__(f"needed {needed} bounces, got {got} ({terminated_by.value})")


class Vec2(NamedTuple):
    x: float
    y: float

    def dot(self, other) -> float:
        return self.x * other[0] + self.y * other[1]

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class BallState:
    pos: Vec2
    vel: Vec2
    t: float = 0.0

    def is_finite(self) -> bool:
        return all(math.isfinite(c) for c in (*self.pos, *self.vel, self.t))


@dataclass(frozen=True)
class SimParams:
    gravity: float = 9.81
    restitution: float = 0.9
    dt: float = 0.001
    mass: float = 1.0
    max_bounces: int = 3
    max_time: float = 60.0
    ball_radius: float = 0.0
    # normal speed after a bounce below which the ball is considered at rest
    min_bounce_speed: float = 1e-4

    def __post_init__(self):
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.max_bounces < 1:
            raise ValueError("max_bounces must be at least 1")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")
        if self.gravity <= 0 or self.mass <= 0 or self.ball_radius < 0:
            raise ValueError("gravity and mass must be positive, radius non-negative")


@dataclass(frozen=True)
class BounceEvent:
    index: int
    t: float
    pos: Vec2
    vel_before: Vec2
    vel_after: Vec2
    normal: Vec2

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "t": self.t,
            "pos": list(self.pos),
            "vel_before": list(self.vel_before),
            "vel_after": list(self.vel_after),
            "normal": list(self.normal),
        }


@dataclass
class Trajectory:
    bounces: list[BounceEvent]
    final_state: BallState
    terminated_by: Termination
    samples: list[BallState] | None = None

    def bounce_xs(self) -> list[float]:
        return [b.pos.x for b in self.bounces]

    def bounces_json(self) -> str:
        return json.dumps([b.to_dict() for b in self.bounces], indent=2)

    def to_csv(self, path) -> None:
        """Write t, x, y, vx, vy, event_flag rows.

        Without recorded samples only the start, the bounces and the final
        state are written.
        """
        rows = []
        if self.samples:
            rows.extend((s, 0) for s in self.samples)
        else:
            rows.append((self.final_state, 0))
        for b in self.bounces:
            rows.append((BallState(b.pos, b.vel_after, b.t), 1))
        if self.samples is None:
            rows.sort(key=lambda r: r[0].t)
        else:
            rows.sort(key=lambda r: (r[0].t, r[1]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "vx", "vy", "event_flag"])
            for s, flag in rows:
                w.writerow([repr(s.t), repr(s.pos.x), repr(s.pos.y), repr(s.vel.x), repr(s.vel.y), flag])


def reflect_restitute(v, n, e: float) -> Vec2:
    """Mirror ``v`` about the unit normal ``n`` and scale the result by ``e``."""
    nx, ny = n
    if abs(math.hypot(nx, ny) - 1.0) > 1e-9:
        raise ValueError("normal must be unit length")
    d = v[0] * nx + v[1] * ny
    if d >= 0:
        raise ValueError("velocity is not moving into the surface")
    return Vec2(e * (v[0] - 2.0 * nx * d), e * (v[1] - 2.0 * ny * d))


def _mirror(v, n) -> Vec2:
    d = v[0] * n[0] + v[1] * n[1]
    return Vec2(v[0] - 2.0 * n[0] * d, v[1] - 2.0 * n[1] * d)


def energy(state: BallState, params: SimParams = SimParams()) -> float:
    """Kinetic plus gravitational potential energy (zero at y = 0)."""
    vx, vy = state.vel
    return params.mass * params.gravity * state.pos.y + 0.5 * params.mass * (vx * vx + vy * vy)


def flat_ground_oracle(h: float, v0: float, e: float = 0.9, g: float = 9.81, n: int = 3) -> float:
    """Closed-form x of bounce ``n`` for a horizontal throw over y = 0.

    Every bounce scales the whole velocity by ``e``, so flight ``k`` (k >= 2)
    lasts ``2 e**(k-1) t1`` at horizontal speed ``e**(k-1) v0``.
    """
    if h <= 0 or g <= 0 or not 0 <= e <= 1 or n < 1:
        raise ValueError("need h > 0, g > 0, 0 <= e <= 1, n >= 1")
    t1 = math.sqrt(2.0 * h / g)
    return v0 * t1 * (1.0 + 2.0 * sum(e ** (2 * k) for k in range(1, n)))


def bounce_x(traj: Trajectory, n: int = 3) -> float:
    if len(traj.bounces) < n:
        raise InsufficientBounces(n, len(traj.bounces), traj.terminated_by)
    return traj.bounces[n - 1].pos.x


def third_bounce_x(traj: Trajectory) -> float:
    return bounce_x(traj, 3)


# --------------------------------------------------------------------------
# collision geometry


def _chord_crossing(terrain: Terrain, x0: float, y0: float, x1: float, y1: float):
    """First point where the chord (x0, y0) -> (x1, y1) passes below the polyline.

    Returns ``(s, x_contact)`` with ``s`` the chord fraction, or ``None``.
    The height gap along the chord is piecewise linear in ``s`` with kinks at
    the vertices it passes over.
    """
    xs = terrain.xs
    dx = x1 - x0
    ss = [0.0]
    if dx != 0.0:
        lo, hi = (x0, x1) if dx > 0 else (x1, x0)
        i0 = int(np.searchsorted(xs, lo, side="right"))
        i1 = int(np.searchsorted(xs, hi, side="left"))
        inner = [(float(xv) - x0) / dx for xv in xs[i0:i1]]
        ss.extend(sorted(inner))
    ss.append(1.0)
    xq = [x0 + s * dx for s in ss]
    gaps = y0 + np.asarray(ss) * (y1 - y0) - terrain.height(np.asarray(xq))
    for j in range(len(ss) - 1):
        fa, fb = float(gaps[j]), float(gaps[j + 1])
        if fb < 0.0 and fa >= -_CROSS_TOL and fa > fb:
            frac = max(fa, 0.0) / (max(fa, 0.0) - fb)
            s = ss[j] + (ss[j + 1] - ss[j]) * frac
            return s, x0 + s * dx
    return None


def contact_normal(terrain: Terrain, x: float) -> Vec2:
    """Upward normal at contact x; averaged over both segments at a vertex."""
    xs = terrain.xs
    i = terrain.segment_index(x)
    n = Vec2(*terrain.segment_normal(i))
    for v in (i, i + 1):
        if 0 < v < len(xs) - 1 and abs(xs[v] - x) <= _VERTEX_TOL * max(1.0, abs(x)):
            a = terrain.segment_normal(v - 1)
            b = terrain.segment_normal(v)
            sx, sy = a[0] + b[0], a[1] + b[1]
            length = math.hypot(sx, sy)
            return Vec2(sx / length, sy / length)
    return n


def _resolve_bounce(terrain: Terrain, x: float, vel: Vec2, e: float):
    """Reflected velocity and the normal used; guards corner re-entry."""
    n = contact_normal(terrain, x)
    if vel.dot(n) >= 0:
        # chord crossed while moving along the surface; use the steepest segment
        i = terrain.segment_index(x)
        n = Vec2(*terrain.segment_normal(i))
        if vel.dot(n) >= 0:
            raise SimulationFault("contact without inward velocity")
    out = reflect_restitute(vel, n, e)
    # at a vertex the outgoing ball must also clear both neighbouring segments
    i = terrain.segment_index(x)
    for j in (i - 1, i, i + 1):
        if 0 <= j < len(terrain.xs) - 1 and terrain.xs[j] - _VERTEX_TOL <= x <= terrain.xs[j + 1] + _VERTEX_TOL:
            nj = terrain.segment_normal(j)
            if out.dot(nj) < 0:
                out = _mirror(out, nj)
    return out, n


def _contact_terrain(terrain: Terrain, radius: float) -> Terrain:
    """Polyline traced by the ball centre; vertices lifted along the mean normal."""
    if radius == 0.0:
        return terrain
    cache = terrain.__dict__.setdefault("_offset_cache", {})
    if radius not in cache:
        slopes = np.diff(terrain.ys) / np.diff(terrain.xs)
        ny = 1.0 / np.sqrt(1.0 + slopes**2)
        ny_v = np.concatenate([[ny[0]], 0.5 * (ny[:-1] + ny[1:]), [ny[-1]]])
        cache[radius] = Terrain(terrain.xs.copy(), terrain.ys + radius / ny_v, terrain.step_c)
    return cache[radius]


# --------------------------------------------------------------------------
# stepping


def step(
    state: BallState,
    terrain: Terrain,
    params: SimParams = SimParams(),
    next_index: int = 1,
) -> tuple[BallState, BounceEvent | None]:
    """Advance one ``dt``. A crossing truncates the step at the contact point."""
    if not state.is_finite():
        raise SimulationFault(f"non-finite state {state}")
    surface = _contact_terrain(terrain, params.ball_radius)
    x0, y0 = state.pos
    if not surface.x_min <= x0 <= surface.x_max:
        raise OutOfBoundsError(f"x = {x0} outside [{surface.x_min}, {surface.x_max}]")
    vx, vy = state.vel
    g, dt = params.gravity, params.dt
    x1 = x0 + vx * dt
    y1 = y0 + vy * dt - 0.5 * g * dt * dt
    hit = _chord_crossing(surface, x0, y0, x1, y1)
    if hit is None:
        return BallState(Vec2(x1, y1), Vec2(vx, vy - g * dt), state.t + dt), None
    s, xc = hit
    before = Vec2(vx, vy - g * s * dt)
    after, n = _resolve_bounce(surface, xc, before, params.restitution)
    pos = Vec2(xc, float(surface.height(xc)))
    t = state.t + s * dt
    event = BounceEvent(next_index, t, pos, before, after, n)
    return BallState(pos, after, t), event


def _flight(surface: Terrain, params: SimParams, start: BallState, samples: list | None):
    """Fly from ``start`` until the next contact or a stop condition.

    Returns ``(kind, state, info)`` where kind is ``"hit"`` (info = (k, s, xc)),
    ``"oob"`` or ``"time"``.
    """
    g, dt = params.gravity, params.dt
    (px, py), (vx, vy), t0 = start.pos, start.vel, start.t
    k_last = int(math.floor((params.max_time - t0) / dt + 1e-9))
    x_lo, x_hi = surface.x_min, surface.x_max
    k0 = 1
    while k0 <= k_last:
        ks = np.arange(k0 - 1, min(k0 + _CHUNK, k_last + 1), dtype=float)
        tau = ks * dt
        xk = px + vx * tau
        yk = py + vy * tau - 0.5 * g * tau * tau
        gap = yk - surface.height(xk)
        cand = []
        below = np.flatnonzero(gap[1:] < 0.0)
        if below.size:
            cand.append(int(below[0]) + 1)
        if vx != 0.0:
            lo, hi = (xk[0], xk[-1]) if vx > 0 else (xk[-1], xk[0])
            i0 = int(np.searchsorted(surface.xs, lo, side="right"))
            i1 = int(np.searchsorted(surface.xs, hi, side="left"))
            if i1 > i0:
                xv = surface.xs[i0:i1]
                hv = surface.ys[i0:i1]
                pos = (xv - px) / vx / dt - ks[0]
                j = np.clip(np.ceil(pos).astype(int), 1, len(ks) - 1)
                frac = pos - (j - 1)
                chord = yk[j - 1] + (yk[j] - yk[j - 1]) * frac
                poke = np.flatnonzero(hv - chord > _CROSS_TOL)
                if poke.size:
                    cand.append(int(j[poke].min()))
        oob = np.flatnonzero((xk[1:] < x_lo) | (xk[1:] > x_hi))
        j_oob = int(oob[0]) + 1 if oob.size else None
        hit = None
        for j in sorted(set(cand)):
            if j_oob is not None and j >= j_oob:
                break
            r = _chord_crossing(surface, float(xk[j - 1]), float(yk[j - 1]), float(xk[j]), float(yk[j]))
            if r is not None:
                hit = (j, r)
                break
        if hit is not None:
            stop = hit[0] - 1
        elif j_oob is not None:
            stop = j_oob - 1
        else:
            stop = len(ks) - 1
        if samples is not None:
            for j in range(1, stop + 1):
                tj = float(tau[j])
                samples.append(BallState(Vec2(float(xk[j]), float(yk[j])), Vec2(vx, vy - g * tj), t0 + tj))
        if hit is not None:
            j, (s, xc) = hit
            return "hit", None, (int(ks[0]) + j - 1, s, xc)
        if j_oob is not None:
            tj = float(tau[j_oob])
            state = BallState(Vec2(float(xk[j_oob]), float(yk[j_oob])), Vec2(vx, vy - g * tj), t0 + tj)
            if samples is not None:
                samples.append(state)
            return "oob", state, None
        k0 = int(ks[-1]) + 1
    tk = max(k_last, 0) * dt
    state = BallState(Vec2(px + vx * tk, py + vy * tk - 0.5 * g * tk * tk), Vec2(vx, vy - g * tk), t0 + tk)
    return "time", state, None


def simulate(
    h: float,
    v0: float,
    terrain: Terrain,
    params: SimParams = SimParams(),
    record: bool = False,
) -> Trajectory:
    """Throw the ball horizontally from (0, h) at speed ``v0``.

    Stops after ``params.max_bounces`` bounces, at ``params.max_time``, when
    the ball leaves the terrain x-range, or when a bounce leaves it with
    almost no normal speed (reported as a time-limit stop).
    """
    if len(terrain) < 2:
        raise ValueError("empty terrain")
    if not (math.isfinite(h) and math.isfinite(v0)):
        raise InvalidInitialCondition("h and v0 must be finite")
    surface = _contact_terrain(terrain, params.ball_radius)
    if h <= 0 or h <= float(surface.height(0.0)):
        raise InvalidInitialCondition(f"initial height {h} is not above the ground")
    g, dt = params.gravity, params.dt
    state = BallState(Vec2(0.0, float(h)), Vec2(float(v0), 0.0), 0.0)
    samples = [state] if record else None
    bounces: list[BounceEvent] = []
    while True:
        kind, end, info = _flight(surface, params, state, samples)
        if kind != "hit":
            reason = Termination.OUT_OF_BOUNDS if kind == "oob" else Termination.TIME_LIMIT
            return Trajectory(bounces, end, reason, samples)
        k, s, xc = info
        tau = (k + s) * dt
        t = state.t + tau
        if bounces and t <= bounces[-1].t:
            # resting contact; no further distinct bounce can happen
            return Trajectory(bounces, state, Termination.TIME_LIMIT, samples)
        before = Vec2(state.vel.x, state.vel.y - g * tau)
        after, n = _resolve_bounce(surface, xc, before, params.restitution)
        pos = Vec2(xc, float(surface.height(xc)))
        event = BounceEvent(len(bounces) + 1, t, pos, before, after, n)
        bounces.append(event)
        state = BallState(pos, after, t)
        if not state.is_finite():
            raise SimulationFault(f"non-finite state after bounce {event}")
        if samples is not None:
            samples.append(state)
        if len(bounces) >= params.max_bounces:
            return Trajectory(bounces, state, Termination.BOUNCE_LIMIT, samples)
        if after.dot(n) < params.min_bounce_speed:
            return Trajectory(bounces, state, Termination.TIME_LIMIT, samples)


@dataclass
class Simulator:
    """A terrain and parameter set bound together; call with ``(h, v0)``."""

    terrain: Terrain
    params: SimParams = field(default_factory=SimParams)
    surface: SurfaceSpec | None = None

    @classmethod
    def for_surface(
        cls,
        surface: SurfaceSpec,
        params: SimParams | None = None,
        x_range: tuple[float, float] = (-1000.0, 1000.0),
        step_c: float = 0.05,
    ) -> "Simulator":
        return cls(sample_surface(surface, x_range[0], x_range[1], step_c), params or SimParams(), surface)

    def __call__(self, h: float, v0: float, record: bool = False) -> Trajectory:
        return simulate(h, v0, self.terrain, self.params, record=record)


def params_to_dict(params: SimParams) -> dict:
    return asdict(params)
