"""Calibration-rig simulator.

Stands in for the physical rig (robot + fixed force-torque sensor + skin
electronics).  A ground-truth skin is a warped grid of sensing cells laid
out on a cylinder patch; executing a touch plan against it yields the same
timestamped stream a hardware run would produce: per-cell readings, the
normal-projected press force, and the contact position in the link frame.

Datasets are written as a JSON header line, a CSV body, and a trailing
checksum line; the format doubles as the ingestion contract for real
hardware logs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calib_planner import TouchPlan, profile_force
from .errors import ChecksumError, FormatVersionError, PlanExecutionError
from .transforms import orthonormal_frame, unit

DATASET_KIND = "skin_dataset"
DATASET_VERSION = 1
DEFAULT_FRAME_RATE = 43.0           # Hz, 16x16 skin stream
TWO_PI = 2.0 * math.pi
_DISC_POINTS = 256                  # quadrature points for overlap fractions


# ---------------------------------------------------------------------------
# cylinder patch: the analytic surface the skin wraps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CylinderPatch:
    """Lateral cylinder surface parameterized by (u, t).

    u in [0, 2*pi) is the wrap angle, t in [0, length] the axial coordinate.
    """

    radius: float
    length: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def frame(self) -> tuple[np.ndarray, np.ndarray]:
        return orthonormal_frame(self.axis)

    def to_point(self, u, t) -> np.ndarray:
        e1, e2 = self.frame()
        u = np.asarray(u, dtype=float)
        t = np.asarray(t, dtype=float)
        radial = (np.cos(u)[..., None] * e1 + np.sin(u)[..., None] * e2) * self.radius
        return self.origin + t[..., None] * self.axis + radial

    def to_param(self, point) -> tuple[float, float]:
        e1, e2 = self.frame()
        rel = np.asarray(point, dtype=float) - self.origin
        t = float(rel @ self.axis)
        u = float(np.arctan2(rel @ e2, rel @ e1)) % TWO_PI
        return u, t

    def outward_normal(self, u) -> np.ndarray:
        e1, e2 = self.frame()
        return np.cos(u) * e1 + np.sin(u) * e2

    def surface_distance(self, point) -> float:
        """Distance from `point` to the (infinite) cylinder shell, plus axial overhang."""
        e1, e2 = self.frame()
        rel = np.asarray(point, dtype=float) - self.origin
        t = rel @ self.axis
        radial = math.hypot(rel @ e1, rel @ e2)
        overhang = max(0.0, -t, t - self.length)
        return math.hypot(radial - self.radius, overhang)

    def to_dict(self) -> dict:
        return {"radius": self.radius, "length": self.length,
                "origin": [float(v) for v in self.origin],
                "axis": [float(v) for v in self.axis]}

    @staticmethod
    def from_dict(d: dict) -> "CylinderPatch":
        return CylinderPatch(radius=float(d["radius"]), length=float(d["length"]),
                             origin=np.array(d["origin"], dtype=float),
                             axis=unit(np.array(d["axis"], dtype=float)))


def patch_for_skin(width_m: float, height_m: float, origin=None, axis=None) -> CylinderPatch:
    """Patch whose circumference equals the skin width (wrap direction)."""
    return CylinderPatch(radius=width_m / TWO_PI, length=height_m,
                         origin=np.zeros(3) if origin is None else np.asarray(origin, float),
                         axis=np.array([1.0, 0.0, 0.0]) if axis is None else unit(np.asarray(axis, float)))


# ---------------------------------------------------------------------------
# ground-truth skin
# ---------------------------------------------------------------------------

def _sunflower_disc(n: int) -> np.ndarray:
    """Equal-area deterministic quadrature points on the unit disc."""
    k = np.arange(n) + 0.5
    r = np.sqrt(k / n)
    th = k * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


@dataclass
class GroundTruthSkin:
    """Warped cell grid plus the affine force-to-reading response model.

    The skin is attached stretched, so cell boundaries are the nominal grid
    warped by a shear (wrap offset growing along the axis) and per-node
    jitter.  Readings are gain * force * overlap + offset per touched cell,
    noisy, dead-banded, and saturated.
    """

    patch: CylinderPatch
    cols: int
    rows: int
    node_u: np.ndarray          # (cols+1, rows+1) wrap coordinate, radians
    node_t: np.ndarray          # (cols+1, rows+1) axial coordinate, meters
    gains: np.ndarray           # (n_cells,) reading units per N
    offsets: np.ndarray         # (n_cells,) reading units
    saturation: float
    noise_sigma: float
    activation_radius: float    # m
    dead_band: float

    @property
    def n_cells(self) -> int:
        return self.cols * self.rows

    @property
    def cell_du(self) -> float:
        return TWO_PI / self.cols

    @property
    def cell_dt(self) -> float:
        return self.patch.length / self.rows

    # -- geometry ------------------------------------------------------------

    def _shear_at(self, t: np.ndarray) -> np.ndarray:
        # recover the systematic wrap offset from the seam nodes
        return np.interp(t, self.node_t[0], self.node_u[0])

    def locate_uv(self, u: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Cell id for each (u, t); -1 when t is off the skin."""
        u = np.atleast_1d(np.asarray(u, dtype=float)) % TWO_PI
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = len(u)
        out = np.full(n, -1, dtype=int)
        on = (t >= -1e-12) & (t <= self.patch.length + 1e-12)
        if not on.any():
            return out
        tq = np.clip(t, 0.0, self.patch.length)
        u0 = (u - self._shear_at(tq)) % TWO_PI
        ci0 = np.floor(u0 / self.cell_du).astype(int)
        cj0 = np.clip(np.floor(tq / self.cell_dt).astype(int), 0, self.rows - 1)
        unassigned = on.copy()
        for dj in (0, -1, 1, -2, 2):
            for di in (0, -1, 1, -2, 2):
                if not unassigned.any():
                    break
                ci = (ci0 + di) % self.cols
                cj = cj0 + dj
                valid = unassigned & (cj >= 0) & (cj < self.rows)
                if not valid.any():
                    continue
                hit = np.zeros(n, dtype=bool)
                hit[valid] = self._in_cell(ci[valid], cj[valid], u[valid], tq[valid])
                out[hit] = cj[hit] * self.cols + ci[hit]
                unassigned &= ~hit
        if unassigned.any():
            # numerical sliver between warped quads: snap to nearest centroid
            cu, ct = self.cell_centroids_uv()
            du = (u[unassigned, None] - cu[None, :] + math.pi) % TWO_PI - math.pi
            d2 = (du * self.patch.radius) ** 2 + (tq[unassigned, None] - ct[None, :]) ** 2
            out[unassigned] = np.argmin(d2, axis=1)
        return out

    def _in_cell(self, ci: np.ndarray, cj: np.ndarray,
                 u: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Vectorized even-odd test of (u, t) against each query's warped quad."""
        corner_i = np.stack([ci, ci + 1, ci + 1, ci], axis=1)
        corner_j = np.stack([cj, cj, cj + 1, cj + 1], axis=1)
        qu = self.node_u[corner_i, corner_j]
        qt = self.node_t[corner_i, corner_j]
        # unwrap the query next to the quad
        shift = np.round((qu.mean(axis=1) - u) / TWO_PI)
        uq = u + shift * TWO_PI
        inside = np.zeros(len(u), dtype=bool)
        for a in range(4):
            b = (a + 1) % 4
            ta, tb = qt[:, a], qt[:, b]
            ua, ub = qu[:, a], qu[:, b]
            crosses = (ta > t) != (tb > t)
            denom = np.where(tb == ta, 1.0, tb - ta)
            x_at = ua + (t - ta) / denom * (ub - ua)
            inside ^= crosses & (uq < x_at)
        return inside

    def locate(self, point) -> int:
        u, t = self.patch.to_param(point)
        return int(self.locate_uv(np.array([u]), np.array([t]))[0])

    def overlap_fractions(self, u: float, t: float) -> np.ndarray:
        """Fraction of the activation disc landing in each cell.

        The disc is sampled with a fixed equal-area quadrature and each point
        is assigned to exactly one cell, so fractions over all cells sum to
        the on-skin fraction of the disc (exactly 1 in the interior).
        """
        disc = _sunflower_disc(_DISC_POINTS) * self.activation_radius
        du = disc[:, 0] / self.patch.radius
        dt = disc[:, 1]
        ids = self.locate_uv(u + du, t + dt)
        frac = np.zeros(self.n_cells)
        hit = ids >= 0
        if hit.any():
            np.add.at(frac, ids[hit], 1.0 / _DISC_POINTS)
        return frac

    def cell_centroids_uv(self) -> tuple[np.ndarray, np.ndarray]:
        """Warped quad centers (mean of the four nodes), per cell id."""
        cu = np.empty(self.n_cells)
        ct = np.empty(self.n_cells)
        for cj in range(self.rows):
            for ci in range(self.cols):
                ii = [ci, ci + 1, ci + 1, ci]
                jj = [cj, cj, cj + 1, cj + 1]
                cu[cj * self.cols + ci] = self.node_u[ii, jj].mean() % TWO_PI
                ct[cj * self.cols + ci] = self.node_t[ii, jj].mean()
        return cu, ct

    def cell_centroids_3d(self) -> np.ndarray:
        cu, ct = self.cell_centroids_uv()
        return self.patch.to_point(cu, ct)

    # -- response ------------------------------------------------------------

    def synthesize_response(self, contact_point, normal_force: float,
                            rng: np.random.Generator | None = None) -> np.ndarray:
        if normal_force < 0:
            raise ValueError("normal_force must be >= 0")
        u, t = self.patch.to_param(contact_point)
        return self.response_from_fractions(self.overlap_fractions(u, t),
                                            normal_force, rng)

    def response_from_fractions(self, frac: np.ndarray, normal_force: float,
                                rng: np.random.Generator | None = None) -> np.ndarray:
        base = np.zeros(self.n_cells)
        if normal_force > 0.0:
            touched = frac > 0.0
            base[touched] = self.gains[touched] * normal_force * frac[touched] \
                + self.offsets[touched]
        if rng is not None and self.noise_sigma > 0.0:
            base = base + rng.normal(0.0, self.noise_sigma, self.n_cells)
        base = np.clip(base, 0.0, self.saturation)
        base[base < self.dead_band] = 0.0
        return base


def make_ground_truth_skin(patch: CylinderPatch, cols: int, rows: int, seed: int,
                           shear: float = 0.0, jitter: float = 0.0,
                           gain_range: tuple[float, float] = (8.0, 12.0),
                           offset_range: tuple[float, float] = (3.0, 8.0),
                           saturation: float = 150.0, noise_sigma: float = 0.0,
                           activation_radius: float | None = None) -> GroundTruthSkin:
    """Build a warped skin.

    shear: wrap offset at t=length as a fraction of the circumference.
    jitter: per-node displacement as a fraction of one cell (seam nodes
    shared, axial edges pinned so the skin still spans exactly [0, length]).
    """
    rng = np.random.default_rng(seed)
    i = np.arange(cols + 1)
    j = np.arange(rows + 1)
    u0 = i[:, None] * (TWO_PI / cols) * np.ones((1, rows + 1))
    t0 = np.ones((cols + 1, 1)) * j[None, :] * (patch.length / rows)

    node_u = u0 + shear * TWO_PI * (t0 / patch.length)
    node_t = t0.copy()
    if jitter > 0.0:
        ju = rng.uniform(-1.0, 1.0, (cols + 1, rows + 1))
        jt = rng.uniform(-1.0, 1.0, (cols + 1, rows + 1))
        ju[cols, :] = ju[0, :]          # seam nodes move together
        jt[cols, :] = jt[0, :]
        jt[:, 0] = 0.0                  # axial edges stay anchored
        jt[:, rows] = 0.0
        node_u = node_u + jitter * (TWO_PI / cols) * ju
        node_t = node_t + jitter * (patch.length / rows) * jt

    gains = rng.uniform(*gain_range, cols * rows)
    offsets = rng.uniform(*offset_range, cols * rows)
    if activation_radius is None:
        activation_radius = 0.45 * min(TWO_PI / cols * patch.radius, patch.length / rows)
    return GroundTruthSkin(patch=patch, cols=cols, rows=rows,
                           node_u=node_u, node_t=node_t,
                           gains=gains, offsets=offsets,
                           saturation=saturation, noise_sigma=noise_sigma,
                           activation_radius=activation_radius,
                           dead_band=3.0 * noise_sigma)


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationSample:
    t: float
    cell_readings: np.ndarray
    ft_force: float
    ft_position: np.ndarray


@dataclass
class CalibrationDataset:
    """Timestamped calibration stream stored column-wise."""

    times: np.ndarray           # (n,)
    readings: np.ndarray        # (n, n_cells)
    force: np.ndarray           # (n,)
    position: np.ndarray        # (n, 3)
    frame_rate: float
    skin_id: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(self.readings < 0):
            raise ValueError("readings must be non-negative")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_cells(self) -> int:
        return self.readings.shape[1]

    def sample(self, i: int) -> CalibrationSample:
        return CalibrationSample(t=float(self.times[i]),
                                 cell_readings=self.readings[i],
                                 ft_force=float(self.force[i]),
                                 ft_position=self.position[i])

    @property
    def samples(self) -> list[CalibrationSample]:
        return [self.sample(i) for i in range(len(self))]

    def content_hash(self) -> str:
        return hashlib.sha256(serialize_dataset(self).encode()).hexdigest()


def _header_dict(ds: CalibrationDataset) -> dict:
    return {"kind": DATASET_KIND, "version": DATASET_VERSION,
            "skin_id": ds.skin_id, "frame_rate": ds.frame_rate,
            "cell_count": int(ds.n_cells), "metadata": ds.metadata}


def serialize_dataset(ds: CalibrationDataset) -> str:
    lines = [json.dumps(_header_dict(ds), sort_keys=True)]
    cols = ["t"] + [f"C_{i}" for i in range(ds.n_cells)] + ["F", "Px", "Py", "Pz"]
    lines.append(",".join(cols))
    for i in range(len(ds)):
        row = [ds.times[i], *ds.readings[i], ds.force[i], *ds.position[i]]
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def save_dataset(ds: CalibrationDataset, path) -> None:
    body = serialize_dataset(ds)
    digest = hashlib.sha256(body.encode()).hexdigest()
    with open(path, "w") as fh:
        fh.write(body)
        fh.write(f"#checksum sha256:{digest}\n")


def load_dataset(path) -> CalibrationDataset:
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[-1].startswith("#checksum sha256:"):
        raise ChecksumError(f"{path}: missing checksum line (truncated?)")
    digest = lines[-1].split(":", 1)[1]
    body = "\n".join(lines[:-1]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch")
    header = json.loads(lines[0])
    if header.get("kind") != DATASET_KIND:
        raise FormatVersionError(f"{path}: not a {DATASET_KIND} file")
    if header.get("version") != DATASET_VERSION:
        raise FormatVersionError(f"{path}: unsupported version {header.get('version')!r}")
    n_cells = int(header["cell_count"])
    data = np.array([[float(v) for v in line.split(",")] for line in lines[2:-1]])
    if data.size == 0:
        data = data.reshape(0, n_cells + 5)
    return CalibrationDataset(times=data[:, 0],
                              readings=data[:, 1:1 + n_cells],
                              force=data[:, 1 + n_cells],
                              position=data[:, 2 + n_cells:5 + n_cells],
                              frame_rate=float(header["frame_rate"]),
                              skin_id=header["skin_id"],
                              metadata=header.get("metadata", {}))


# ---------------------------------------------------------------------------
# plan execution
# ---------------------------------------------------------------------------

REACH_TOL = 1e-3    # m, touch point must lie this close to the skin surface


def run_calibration(chain, plan: TouchPlan, skin: GroundTruthSkin,
                    rate: float = DEFAULT_FRAME_RATE, seed: int = 0,
                    link: int = 2, gap_s: float = 0.2, idle_s: float = 0.5,
                    clearance: float = 0.005,
                    skin_id: str = "skin") -> CalibrationDataset:
    """Execute a touch plan against the ground-truth skin.

    The press is commanded along each touch's approach direction with the
    magnitude that puts the requested normal force on the surface; the
    recorded force is the applied vector projected back onto the surface
    normal, so tilted approaches report the same force as straight ones.
    P_t is the contact position in the link frame at all times (between
    touches it travels lifted off the surface).
    """
    del chain  # reachability is checked against the instrumented patch
    for tp in plan.touches:
        d = skin.patch.surface_distance(tp.sample.position)
        if d > REACH_TOL:
            raise PlanExecutionError(
                f"touch at {tp.sample.position} is {d:.4f} m off the instrumented surface")

    rng = np.random.default_rng(seed)
    dwell = plan.dwell_s

    # timeline segments: (kind, start, duration, payload)
    segments = []
    cursor = 0.0
    segments.append(("idle", cursor, idle_s, None))
    cursor += idle_s
    for i, tp in enumerate(plan.touches):
        if i > 0:
            segments.append(("travel", cursor, gap_s,
                             (plan.touches[i - 1], tp)))
            cursor += gap_s
        segments.append(("touch", cursor, dwell, tp))
        cursor += dwell
    segments.append(("idle", cursor, idle_s, None))
    total = cursor + idle_s

    # per-touch overlap fractions are position-only, compute once
    fracs = []
    for tp in plan.touches:
        u, t = skin.patch.to_param(tp.sample.position)
        fracs.append(skin.overlap_fractions(u, t))
    frac_of = {id(tp): f for tp, f in zip(plan.touches, fracs)}

    n_frames = int(math.floor(total * rate)) + 1
    times = np.arange(n_frames) / rate
    readings = np.zeros((n_frames, skin.n_cells))
    force = np.zeros(n_frames)
    position = np.zeros((n_frames, 3))

    first = plan.touches[0] if plan.touches else None
    last = plan.touches[-1] if plan.touches else None
    seg_idx = 0
    for k, tk in enumerate(times):
        while seg_idx + 1 < len(segments) and tk >= segments[seg_idx][1] + segments[seg_idx][2]:
            seg_idx += 1
        kind, start, dur, payload = segments[seg_idx]
        if kind == "touch":
            tp = payload
            tau = tk - start
            f_cmd = profile_force(tp.press_profile, tau)
            cos_tilt = float(np.clip(tp.approach_dir @ tp.sample.normal, 1e-6, 1.0))
            applied = tp.approach_dir * (f_cmd / cos_tilt)
            f_normal = float(applied @ tp.sample.normal)
            force[k] = f_normal
            position[k] = tp.sample.position
            readings[k] = skin.response_from_fractions(frac_of[id(tp)], f_normal)
        elif kind == "travel":
            prev_tp, next_tp = payload
            s = (tk - start) / dur
            lift = clearance * 4.0 * s * (1.0 - s)
            mid_n = unit(prev_tp.sample.normal + next_tp.sample.normal)
            position[k] = ((1.0 - s) * prev_tp.sample.position
                           + s * next_tp.sample.position + lift * mid_n)
        else:
            anchor = first if tk < total / 2.0 else last
            if anchor is None:
                position[k] = skin.patch.to_point(np.array(0.0), np.array(0.0))
            else:
                position[k] = anchor.sample.position + clearance * anchor.sample.normal

    if skin.noise_sigma > 0.0:
        readings = readings + rng.normal(0.0, skin.noise_sigma, readings.shape)
    readings = np.clip(readings, 0.0, skin.saturation)
    readings[readings < skin.dead_band] = 0.0

    metadata = {
        "seed": seed,
        "link": link,
        "press_max_n": plan.press_max,
        "dwell_s": dwell,
        "touch_count": len(plan),
        "grid": [skin.cols, skin.rows],
        "patch": skin.patch.to_dict(),
    }
    return CalibrationDataset(times=times, readings=readings, force=force,
                              position=position, frame_rate=rate,
                              skin_id=skin_id, metadata=metadata)
