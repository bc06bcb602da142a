"""Link-surface geometry: mesh types, perimeter/extent measurement, sampling.

A robot link is represented by a triangle mesh plus its cylinder-like
rotational axis.  Two families of measurements are extracted:

* horizontal: perimeters of closed cross-sections cut orthogonal to the axis,
* vertical: surface arc length traced along the axis at fixed angular
  stations around it.

Calibration touch points are drawn by dart-throwing Poisson-disc sampling
directly on the triangles (Euclidean metric; adequate at half-cell radii on
gently curved links).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMeshError, OpenSectionError, RadiusTooLargeError
from .transforms import orthonormal_frame, unit

SECTION_CLOSE_TOL = 1e-6        # m, polyline closure check
UNIT_NORM_TOL = 1e-9
_VERTEX_WELD_DECIMALS = 9       # merge mesh vertices equal to 1e-9 m


@dataclass(frozen=True)
class SurfaceMeasurements:
    """Min/max cross-section perimeter (h) and axial surface extent (v), meters."""

    h_min: float
    h_max: float
    v_min: float
    v_max: float

    def __post_init__(self):
        if not (0.0 < self.h_min <= self.h_max):
            raise ValueError(f"need 0 < h_min <= h_max, got {self.h_min}, {self.h_max}")
        if not (0.0 < self.v_min <= self.v_max):
            raise ValueError(f"need 0 < v_min <= v_max, got {self.v_min}, {self.v_max}")


@dataclass(frozen=True)
class SurfaceSample:
    """One candidate touch point: on-surface position and outward normal."""

    position: np.ndarray
    normal: np.ndarray
    cell_hint: int | None = None    # simulation ground truth only


@dataclass
class LinkSurface:
    """Triangle mesh of one link in its own frame.

    `axis` is the cylinder-like rotational axis (unit), `origin` a point on
    it.  Vertices are welded on construction so shared edges are exact,
    which keeps section chaining watertight.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    axis: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.axis = np.asarray(self.axis, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (n, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be (m, 3)")
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        if abs(np.linalg.norm(self.axis) - 1.0) > UNIT_NORM_TOL:
            raise ValueError("axis must be unit length")

    # cached derived arrays -------------------------------------------------
    def triangle_corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = self.triangles
        v = self.vertices
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def triangle_areas(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def triangle_normals(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        n = np.cross(b - a, c - a)
        lens = np.linalg.norm(n, axis=1)
        lens[lens == 0.0] = 1.0
        return n / lens[:, None]

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def scaled(self, s: float) -> "LinkSurface":
        return LinkSurface(self.vertices * s, self.triangles.copy(), self.axis.copy(),
                           self.origin * s)


def _weld_vertices(vertices: np.ndarray, triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge coincident vertices so shared edges are index-identical."""
    keys = np.round(vertices, _VERTEX_WELD_DECIMALS)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return uniq, inverse[triangles]


# ---------------------------------------------------------------------------
# plane sections
# ---------------------------------------------------------------------------

def _plane_segments(surface: LinkSurface, point: np.ndarray, normal: np.ndarray):
    """Intersect every triangle with the plane (point, normal).

    Returns (segments, keys): for each cut triangle, the two 3D intersection
    points and their topological keys.  A key is the mesh edge (i, j) the
    point lies on, or ('v', i) when the plane passes through vertex i, so
    points shared between adjacent triangles compare equal exactly.
    """
    v = surface.vertices
    d = (v - point) @ normal
    tri = surface.triangles
    td = d[tri]                                   # (m, 3) signed distances

    segments = []
    keys = []
    crossing = np.where(~(np.all(td > 0, axis=1) | np.all(td < 0, axis=1)))[0]
    for ti in crossing:
        ids = tri[ti]
        dv = td[ti]
        # key -> point; keys are exact so shared edges chain without welding
        seen = {}
        for e in ((0, 1), (1, 2), (2, 0)):
            i, j = int(ids[e[0]]), int(ids[e[1]])
            di, dj = dv[e[0]], dv[e[1]]
            if di == 0.0 and dj == 0.0:
                continue                           # edge in plane; neighbors supply it
            if di == 0.0:
                seen[("v", i)] = v[i]
            elif dj == 0.0:
                seen[("v", j)] = v[j]
            elif (di > 0) != (dj > 0):
                # anchor interpolation at the lower-index vertex so both
                # triangles sharing the edge compute the identical point
                if i > j:
                    i, j, di, dj = j, i, dj, di
                seen[(i, j)] = v[i] + di / (di - dj) * (v[j] - v[i])
        if len(seen) == 2:
            (k0, p0), (k1, p1) = seen.items()
            segments.append((p0, p1))
            keys.append((k0, k1))
    return segments, keys


def _chain_loops(segments, keys):
    """Chain intersection segments into polylines by shared keys.

    Returns a list of (points, closed) polylines.
    """
    adjacency: dict = {}
    pos: dict = {}
    for (p0, p1), (k0, k1) in zip(segments, keys):
        adjacency.setdefault(k0, []).append(k1)
        adjacency.setdefault(k1, []).append(k0)
        pos[k0] = p0
        pos[k1] = p1

    visited = set()
    loops = []
    for start in adjacency:
        if start in visited:
            continue
        chain = [start]
        visited.add(start)
        closed = False
        prev, node = start, adjacency[start][0]
        while True:
            if node == start:
                closed = True
                break
            if node in visited:
                break
            chain.append(node)
            visited.add(node)
            nxts = [k for k in adjacency[node] if k != prev]
            if not nxts:
                break
            prev, node = node, nxts[0]
        if not closed:
            # dead-ended: extend the other way from start to cover the chain
            back = []
            rest = [k for k in adjacency[start] if k not in visited]
            if rest:
                prev, node = start, rest[0]
                while node not in visited:
                    back.append(node)
                    visited.add(node)
                    nxts = [k for k in adjacency[node] if k != prev]
                    if not nxts:
                        break
                    prev, node = node, nxts[0]
            chain = back[::-1] + chain
        loops.append((np.array([pos[k] for k in chain]), closed))
    return loops


def _polyline_length(points: np.ndarray, closed: bool) -> float:
    diffs = np.diff(points, axis=0)
    total = float(np.linalg.norm(diffs, axis=1).sum())
    if closed:
        total += float(np.linalg.norm(points[0] - points[-1]))
    return total


def _section_perimeter(surface: LinkSurface, station: float) -> float:
    point = surface.origin + station * surface.axis
    segments, keys = _plane_segments(surface, point, surface.axis)
    if len(segments) < 3:
        raise DegenerateMeshError(
            f"cross-section at station {station:.6f} has {len(segments)} segments")
    loops = _chain_loops(segments, keys)
    total = 0.0
    for pts, closed in loops:
        if not closed:
            gap = float(np.linalg.norm(pts[0] - pts[-1]))
            if gap > SECTION_CLOSE_TOL:
                raise OpenSectionError(
                    f"section at station {station:.6f} fails to close (gap {gap:.3e} m)")
            closed = True
        total += _polyline_length(pts, closed)
    return total


def _axial_arc_length(surface: LinkSurface, theta: float,
                      e1: np.ndarray, e2: np.ndarray) -> float:
    """Arc length of the surface cut by the half-plane at angle theta."""
    direction = np.cos(theta) * e1 + np.sin(theta) * e2
    normal = np.cross(surface.axis, direction)
    segments, _ = _plane_segments(surface, surface.origin, normal)
    total = 0.0
    for p0, p1 in segments:
        mid = 0.5 * (p0 + p1) - surface.origin
        if mid @ direction > 0.0:
            total += float(np.linalg.norm(p1 - p0))
    if total == 0.0:
        raise DegenerateMeshError(f"no surface at angular station {theta:.4f}")
    return total


def measure_surface(surface: LinkSurface, n_sections: int,
                    n_angular: int = 64) -> SurfaceMeasurements:
    """Measure h_min/h_max (section perimeters) and v_min/v_max (axial arcs).

    Sections are spread uniformly over the interior of the axial extent; a
    relative inset of 1e-6 keeps planes off the boundary rings where the
    intersection degenerates.
    """
    if n_sections < 2:
        raise ValueError("n_sections must be >= 2")
    t = (surface.vertices - surface.origin) @ surface.axis
    t_min, t_max = float(t.min()), float(t.max())
    span = t_max - t_min
    if span <= 0:
        raise DegenerateMeshError("mesh has no extent along the axis")
    inset = 1e-6 * span
    stations = np.linspace(t_min + inset, t_max - inset, n_sections)
    perimeters = np.array([_section_perimeter(surface, s) for s in stations])

    e1, e2 = orthonormal_frame(surface.axis)
    thetas = (np.arange(n_angular) + 0.5) / n_angular * 2.0 * np.pi
    arcs = np.array([_axial_arc_length(surface, th, e1, e2) for th in thetas])

    return SurfaceMeasurements(
        h_min=float(perimeters.min()), h_max=float(perimeters.max()),
        v_min=float(arcs.min()), v_max=float(arcs.max()))


# ---------------------------------------------------------------------------
# Poisson-disc sampling
# ---------------------------------------------------------------------------

def _uniform_surface_points(surface: LinkSurface, count: int,
                            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted uniform points on the mesh with their face normals."""
    areas = surface.triangle_areas()
    probs = areas / areas.sum()
    tri_idx = rng.choice(len(probs), size=count, p=probs)
    a, b, c = surface.triangle_corners()
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    pts = ((1.0 - r1)[:, None] * a[tri_idx]
           + (r1 * (1.0 - r2))[:, None] * b[tri_idx]
           + (r1 * r2)[:, None] * c[tri_idx])
    return pts, surface.triangle_normals()[tri_idx]


class _HashGrid:
    """Uniform 3D grid with cell size = radius; neighbors live within +-1 cell."""

    def __init__(self, radius: float):
        self.r = radius
        self.cells: dict[tuple[int, int, int], list[int]] = {}
        self.points: list[np.ndarray] = []

    def _key(self, p: np.ndarray) -> tuple[int, int, int]:
        return tuple(np.floor(p / self.r).astype(int))

    def far_enough(self, p: np.ndarray) -> bool:
        kx, ky, kz = self._key(p)
        r2 = self.r * self.r
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    for idx in self.cells.get((kx + dx, ky + dy, kz + dz), ()):
                        d = self.points[idx] - p
                        if d @ d < r2:
                            return False
        return True

    def insert(self, p: np.ndarray) -> None:
        self.points.append(p)
        self.cells.setdefault(self._key(p), []).append(len(self.points) - 1)


def poisson_disc_sample(surface: LinkSurface, radius: float, seed: int,
                        patience: int = 30,
                        locate_cell=None) -> list[SurfaceSample]:
    """Dart-throwing Poisson-disc sampling with min pairwise distance `radius`.

    Candidates are drawn uniformly by area and accepted when no earlier
    sample lies within `radius` (Euclidean).  Sampling stops after
    `patience` consecutive rejections, which leaves the set statistically
    maximal at the 2*radius coverage scale without packing to jamming.
    Deterministic for a fixed seed.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    grid = _HashGrid(radius)
    accepted: list[SurfaceSample] = []
    failures = 0
    batch = 128
    while failures < patience:
        pts, norms = _uniform_surface_points(surface, batch, rng)
        for p, n in zip(pts, norms):
            if grid.far_enough(p):
                grid.insert(p)
                cell = locate_cell(p) if locate_cell is not None else None
                accepted.append(SurfaceSample(position=p, normal=unit(n), cell_hint=cell))
                failures = 0
            else:
                failures += 1
                if failures >= patience:
                    break
    if len(accepted) < 4:
        raise RadiusTooLargeError(
            f"radius {radius} m yields only {len(accepted)} samples")
    return accepted


def samples_to_csv(samples: list[SurfaceSample], path) -> None:
    with open(path, "w") as fh:
        fh.write("x,y,z,nx,ny,nz\n")
        for s in samples:
            row = list(s.position) + list(s.normal)
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# mesh I/O: ASCII STL and a minimal OBJ subset (v/f lines)
# ---------------------------------------------------------------------------

def load_stl(path, axis=(1.0, 0.0, 0.0), origin=(0.0, 0.0, 0.0)) -> LinkSurface:
    verts = []
    tris = []
    current: list[list[float]] = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "vertex":
                current.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "endfacet":
                if len(current) != 3:
                    raise ValueError(f"facet with {len(current)} vertices in {path}")
                base = len(verts)
                verts.extend(current)
                tris.append([base, base + 1, base + 2])
                current = []
    v, t = _weld_vertices(np.array(verts), np.array(tris))
    return LinkSurface(v, t, np.asarray(axis, dtype=float), np.asarray(origin, dtype=float))


def load_obj(path, axis=(1.0, 0.0, 0.0), origin=(0.0, 0.0, 0.0)) -> LinkSurface:
    verts = []
    tris = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):      # fan-triangulate
                    tris.append([idx[0], idx[k], idx[k + 1]])
    v, t = _weld_vertices(np.array(verts), np.array(tris))
    return LinkSurface(v, t, np.asarray(axis, dtype=float), np.asarray(origin, dtype=float))


def load_mesh(path, axis=(1.0, 0.0, 0.0), origin=(0.0, 0.0, 0.0)) -> LinkSurface:
    name = str(path).lower()
    if name.endswith(".stl"):
        return load_stl(path, axis, origin)
    if name.endswith(".obj"):
        return load_obj(path, axis, origin)
    raise ValueError(f"unsupported mesh format: {path}")


def save_stl(surface: LinkSurface, path, name: str = "link") -> None:
    a, b, c = surface.triangle_corners()
    normals = surface.triangle_normals()
    with open(path, "w") as fh:
        fh.write(f"solid {name}\n")
        for i in range(len(surface.triangles)):
            nx, ny, nz = normals[i]
            fh.write(f"  facet normal {nx!r} {ny!r} {nz!r}\n")
            fh.write("    outer loop\n")
            for p in (a[i], b[i], c[i]):
                fh.write(f"      vertex {p[0]!r} {p[1]!r} {p[2]!r}\n")
            fh.write("    endloop\n")
            fh.write("  endfacet\n")
        fh.write(f"endsolid {name}\n")


# ---------------------------------------------------------------------------
# procedural test surfaces (axis along +x)
# ---------------------------------------------------------------------------

def make_tube(radius_profile, length: float, n_angular: int = 128,
              n_axial: int = 16) -> LinkSurface:
    """Open tube around the +x axis; radius_profile maps t in [0, 1] -> radius.

    No end caps: the skin wraps the lateral surface only, and uncapped ends
    keep the axial arc measurement equal to the slant length.
    """
    ts = np.linspace(0.0, 1.0, n_axial + 1)
    thetas = np.arange(n_angular) / n_angular * 2.0 * np.pi
    verts = []
    for t in ts:
        r = float(radius_profile(t))
        x = t * length
        for th in thetas:
            verts.append([x, r * np.cos(th), r * np.sin(th)])
    tris = []
    for i in range(n_axial):
        for j in range(n_angular):
            j2 = (j + 1) % n_angular
            a = i * n_angular + j
            b = i * n_angular + j2
            c = (i + 1) * n_angular + j
            d = (i + 1) * n_angular + j2
            tris.append([a, b, d])
            tris.append([a, d, c])
    return LinkSurface(np.array(verts), np.array(tris), np.array([1.0, 0.0, 0.0]))


def make_cylinder(radius: float, length: float, n_angular: int = 128,
                  n_axial: int = 8) -> LinkSurface:
    return make_tube(lambda t: radius, length, n_angular, n_axial)


def make_cone(radius_a: float, radius_b: float, length: float,
              n_angular: int = 128, n_axial: int = 16) -> LinkSurface:
    return make_tube(lambda t: radius_a + (radius_b - radius_a) * t,
                     length, n_angular, n_axial)


def make_link2_proxy(n_angular: int = 96, n_axial: int = 32) -> LinkSurface:
    """Stand-in for the instrumented upper-arm link.

    Smooth bulged tube whose perimeter ratio stays inside the knit stretch
    tolerance (h_max/h_min well under 1.77/1.45).
    """
    def profile(t):
        return 0.0500 + 0.0060 * np.sin(np.pi * t) - 0.0015 * np.cos(2 * np.pi * t)

    return make_tube(profile, 0.363, n_angular, n_axial)


def make_unit_square() -> LinkSurface:
    """Flat two-triangle square in the xy plane (sampling tests)."""
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    return LinkSurface(verts, tris, np.array([1.0, 0.0, 0.0]))
