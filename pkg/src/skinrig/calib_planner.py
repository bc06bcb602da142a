"""Calibration touch planning: tour ordering, approach poses, press profiles.

The tour is an open path (the run ends at the last touch), built by
nearest-neighbor construction and improved to 2-opt local optimality.  The
open-path problem is reduced to a cyclic one by adding a dummy city at zero
distance from everyone, which lets one vectorized 2-opt handle prefix and
suffix reversals uniformly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import AngleInfeasibleError
from .geometry import SurfaceSample
from .transforms import rotation_about_axis, unit

MAX_APPROACH_ANGLE = math.radians(26.0)
PRESS_MAX_N = 10.0
DEFAULT_DWELL_S = 1.5
ANGLE_TOL = 1e-9


@dataclass(frozen=True)
class ObstacleCone:
    """Directions within half_angle of `direction` are unusable approaches."""

    direction: np.ndarray
    half_angle: float


@dataclass(frozen=True)
class TouchPoint:
    sample: SurfaceSample
    approach_dir: np.ndarray
    press_profile: list[tuple[float, float]]   # (time s, target normal force N)


@dataclass(frozen=True)
class TouchPlan:
    touches: list[TouchPoint]
    tour_length: float
    max_angle: float
    press_max: float
    dwell_s: float

    def __len__(self) -> int:
        return len(self.touches)


# ---------------------------------------------------------------------------
# tour ordering
# ---------------------------------------------------------------------------

def _nearest_neighbor_order(dist: np.ndarray, start: int) -> np.ndarray:
    n = dist.shape[0]
    order = [start]
    left = set(range(n)) - {start}
    cur = start
    while left:
        remaining = np.fromiter(left, dtype=int)
        nxt = int(remaining[np.argmin(dist[cur, remaining])])
        order.append(nxt)
        left.remove(nxt)
        cur = nxt
    return np.array(order, dtype=int)


def _path_length(dist: np.ndarray, order: np.ndarray) -> float:
    return float(dist[order[:-1], order[1:]].sum())


def _two_opt(dist: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Best-improvement 2-opt on a cyclic tour with city 0 pinned first.

    `dist` includes the dummy city at index 0 with zero distance to all, so
    segment reversals spanning a path end are covered.
    """
    tour = order.copy()
    n = len(tour)
    while True:
        nxt = np.roll(tour, -1)
        prv = np.roll(tour, 1)
        # delta of reversing tour[i..j], 1 <= i < j <= n-1
        i_idx = np.arange(1, n)
        d_prev_i = dist[prv[i_idx], tour[i_idx]]        # edge entering i
        d_j_next = dist[tour[i_idx], nxt[i_idx]]        # edge leaving j
        new_head = dist[prv[i_idx][:, None], tour[i_idx][None, :]]   # prv[i], tour[j]
        new_tail = dist[tour[i_idx][:, None], nxt[i_idx][None, :]]   # tour[i], nxt[j]
        delta = new_head + new_tail - d_prev_i[:, None] - d_j_next[None, :]
        delta = np.triu(delta, k=1)                     # only i < j
        best = np.unravel_index(np.argmin(delta), delta.shape)
        if delta[best] >= -1e-12:
            return tour
        i, j = i_idx[best[0]], i_idx[best[1]]
        tour[i:j + 1] = tour[i:j + 1][::-1]


def order_tour(samples: list[SurfaceSample], seed: int,
               restarts: int = 4) -> tuple[np.ndarray, float]:
    """Open-path visiting order over all samples and its length.

    Result is never worse than plain nearest-neighbor construction and is
    2-opt locally optimal; deterministic per seed.
    """
    n = len(samples)
    if n < 2:
        raise ValueError("need at least 2 samples to order a tour")
    pts = np.array([s.position for s in samples])
    base = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    # dummy city 0 at zero distance closes the path into a cycle
    dist = np.zeros((n + 1, n + 1))
    dist[1:, 1:] = base

    rng = np.random.default_rng(seed)
    starts = [0] + [int(rng.integers(0, n)) for _ in range(max(0, restarts - 1))]
    best_order = None
    best_len = math.inf
    for s in starts:
        nn = _nearest_neighbor_order(base, s)
        cyc = np.concatenate(([0], nn + 1))
        improved = _two_opt(dist, cyc)
        # rotate dummy to front, drop it
        k = int(np.argmax(improved == 0))
        path = np.concatenate((improved[k + 1:], improved[:k])) - 1
        length = _path_length(base, path)
        if length < best_len - 1e-15:
            best_len = length
            best_order = path
    return best_order, best_len


# ---------------------------------------------------------------------------
# approach directions and press profiles
# ---------------------------------------------------------------------------

def _angle(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.arccos(np.clip(a @ b, -1.0, 1.0)))


def _resolve_approach(normal: np.ndarray, obstacles: list[ObstacleCone],
                      max_angle: float) -> np.ndarray:
    """Tilt the approach away from obstacle cones, staying within max_angle."""
    approach = unit(normal)
    for _ in range(8):
        violated = [o for o in obstacles
                    if _angle(approach, unit(o.direction)) < o.half_angle - ANGLE_TOL]
        if not violated:
            break
        o = violated[0]
        od = unit(o.direction)
        need = o.half_angle - _angle(approach, od)
        pivot = np.cross(od, approach)
        if np.linalg.norm(pivot) < 1e-12:
            # approach dead-centered in the cone: pick any perpendicular
            ref = np.zeros(3)
            ref[int(np.argmin(np.abs(approach)))] = 1.0
            pivot = np.cross(approach, ref)
        approach = unit(rotation_about_axis(unit(pivot), need) @ approach)
    else:
        raise AngleInfeasibleError("no obstacle-free approach after 8 tilts")

    tilt = _angle(approach, normal)
    if tilt > max_angle + ANGLE_TOL:
        raise AngleInfeasibleError(
            f"required tilt {math.degrees(tilt):.1f} deg exceeds limit "
            f"{math.degrees(max_angle):.1f} deg")
    return approach


def trapezoid_profile(press_max: float, dwell: float) -> list[tuple[float, float]]:
    """0 -> press_max -> 0 with one-third ramps; linear interpolation between knots."""
    return [(0.0, 0.0), (dwell / 3.0, press_max),
            (2.0 * dwell / 3.0, press_max), (dwell, 0.0)]


def profile_force(profile: list[tuple[float, float]], tau: float) -> float:
    times = [t for t, _ in profile]
    forces = [f for _, f in profile]
    if tau <= times[0] or tau >= times[-1]:
        return 0.0
    return float(np.interp(tau, times, forces))


def plan_touches(samples: list[SurfaceSample], skin=None,
                 max_angle: float = MAX_APPROACH_ANGLE,
                 press_max: float = PRESS_MAX_N,
                 dwell_s: float = DEFAULT_DWELL_S,
                 obstacles: list[ObstacleCone] | None = None,
                 tour_length: float = 0.0) -> TouchPlan:
    """Attach approach directions and press profiles to an ordered sample list.

    `skin` (a SkinSpec) is only consulted for the coverage sanity check that
    there are at least as many touches as sensing cells.
    """
    if not (0.0 < press_max <= PRESS_MAX_N):
        raise ValueError(f"press_max must be in (0, {PRESS_MAX_N}] N")
    obstacles = obstacles or []
    touches = []
    profile = trapezoid_profile(press_max, dwell_s)
    for s in samples:
        approach = _resolve_approach(s.normal, obstacles, max_angle)
        touches.append(TouchPoint(sample=s, approach_dir=approach,
                                  press_profile=profile))
    if skin is not None and len(touches) < skin.grid_cols * skin.grid_rows:
        raise ValueError(
            f"only {len(touches)} touches for {skin.grid_cols * skin.grid_rows} cells; "
            "decrease the sampling radius")
    return TouchPlan(touches=touches, tour_length=tour_length,
                     max_angle=max_angle, press_max=press_max, dwell_s=dwell_s)


def plan_to_jsonl(plan: TouchPlan, path) -> None:
    """One touch per line; header line carries the plan-level settings."""
    with open(path, "w") as fh:
        fh.write(json.dumps({
            "kind": "touch_plan", "version": 1,
            "tour_length": plan.tour_length, "max_angle": plan.max_angle,
            "press_max": plan.press_max, "dwell_s": plan.dwell_s,
            "count": len(plan)}, sort_keys=True) + "\n")
        for tp in plan.touches:
            fh.write(json.dumps({
                "position": [float(v) for v in tp.sample.position],
                "normal": [float(v) for v in tp.sample.normal],
                "cell_hint": tp.sample.cell_hint,
                "approach": [float(v) for v in tp.approach_dir],
                "profile": [[float(t), float(f)] for t, f in tp.press_profile],
            }, sort_keys=True) + "\n")
