"""Skin calibration: receptive-field localization and per-cell force models.

Localization runs one-vs-rest weighted k-nearest-neighbor classifiers, one
per sensing cell, over the recorded contact positions.  A query point's
vote for class y is sum(w_j * [label_j == y]) over its k nearest training
points with w = 1/d^2; the ensemble assigns each point of a dense surface
grid to the cell with the strongest positive margin, and the receptive
field is that region's boundary with its centroid as the cell's
localization estimate.

Force response is an ordinary least-squares line per cell, fitted on the
frames where that cell is the strongest-reading active cell.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (CoverageError, DegenerateFitError, EmptyClassError,
                     SplitTooSmallError)
from .rig_sim import CalibrationDataset, CylinderPatch

DEFAULT_K = 1000          # paper-scale default; clipped to the training size
GRID_OVERSAMPLE = 8       # dense-grid resolution = cell side / 8
TWO_PI = 2.0 * math.pi


def estimate_dead_band(dataset: CalibrationDataset, floor: float = 1e-9) -> float:
    """3 sigma of the pre-touch idle readings (noise floor for 'cell active')."""
    first_contact = np.argmax(dataset.force > 0.0) if np.any(dataset.force > 0.0) else len(dataset)
    idle = dataset.readings[:first_contact]
    if idle.size == 0:
        return floor
    return max(3.0 * float(idle.std()), floor)


def activation_labels(dataset: CalibrationDataset,
                      dead_band: float | None = None) -> np.ndarray:
    """(n_frames, n_cells) bool: reading above the activation dead-band."""
    if dead_band is None:
        dead_band = estimate_dead_band(dataset)
    return dataset.readings > dead_band


# ---------------------------------------------------------------------------
# weighted kNN
# ---------------------------------------------------------------------------

class KnnIndex:
    """Shared nearest-neighbor index over the dataset's contact positions.

    All per-cell classifiers see the same training points and only differ in
    labels, so the tree and neighbor lookups are built once.
    """

    def __init__(self, dataset: CalibrationDataset, dead_band: float | None = None):
        self.points = dataset.position
        self.dead_band = estimate_dead_band(dataset) if dead_band is None else dead_band
        self.labels = dataset.readings > self.dead_band
        self.tree = cKDTree(self.points)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def neighbors(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        k = min(k, self.n_points)
        d, idx = self.tree.query(np.atleast_2d(queries), k=k)
        if k == 1:
            d = d[:, None]
            idx = idx[:, None]
        return d, idx


@dataclass
class CellKnnClassifier:
    """One-vs-rest weighted kNN for a single cell."""

    index: KnnIndex
    cell_id: int
    k: int

    def __post_init__(self):
        self.k = min(self.k, self.index.n_points)
        if self.k < 1:
            raise ValueError("empty training set")
        self._labels = self.index.labels[:, self.cell_id]
        if not self._labels.any():
            raise EmptyClassError(f"cell {self.cell_id} has no positive training points")

    def margins(self, queries: np.ndarray) -> np.ndarray:
        """Positive minus negative weighted votes; >0 means 'detected here'."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        d, idx = self.index.neighbors(queries, self.k)
        return _weighted_margins(d, self._labels[idx])

    def predict(self, queries: np.ndarray) -> np.ndarray:
        return self.margins(queries) > 0.0


def _weighted_margins(d: np.ndarray, lab: np.ndarray) -> np.ndarray:
    """Vote margins from neighbor distances and boolean labels.

    w = 1/d^2.  An exact-distance-zero neighbor dominates in the limit, so
    those rows return their first zero-distance neighbor's label directly.
    Ties (margin exactly 0) count as negative.
    """
    out = np.empty(len(d))
    zero_rows = d[:, 0] == 0.0
    if zero_rows.any():
        out[zero_rows] = np.where(lab[zero_rows, 0], 1.0, -1.0)
    rest = ~zero_rows
    if rest.any():
        w = 1.0 / np.square(d[rest])
        signed = np.where(lab[rest], w, -w)
        out[rest] = signed.sum(axis=1)
    return out


def knn_cell_classifier(dataset: CalibrationDataset, cell_id: int,
                        k: int = DEFAULT_K,
                        index: KnnIndex | None = None) -> CellKnnClassifier:
    if index is None:
        index = KnnIndex(dataset)
    return CellKnnClassifier(index=index, cell_id=cell_id, k=k)


# ---------------------------------------------------------------------------
# receptive fields
# ---------------------------------------------------------------------------

@dataclass
class CellReceptiveField:
    cell_id: int
    boundary_uv: np.ndarray        # closed (m, 2) polyline in (u, t)
    boundary: np.ndarray           # the same polyline mapped to 3D, link frame
    centroid_uv: tuple[float, float]
    centroid: np.ndarray           # 3D, link frame
    normal: np.ndarray             # outward surface normal at the centroid
    support_count: int


@dataclass
class SurfaceGrid:
    """Dense query lattice over the instrumented patch."""

    patch: CylinderPatch
    cols: int
    rows: int
    oversample: int = GRID_OVERSAMPLE

    def __post_init__(self):
        self.nu = self.cols * self.oversample
        self.nt = self.rows * self.oversample
        self.us = (np.arange(self.nu) + 0.5) / self.nu * TWO_PI
        self.ts = (np.arange(self.nt) + 0.5) / self.nt * self.patch.length
        uu, tt = np.meshgrid(self.us, self.ts, indexing="ij")
        self.uv = np.stack([uu.ravel(), tt.ravel()], axis=1)
        self.points = self.patch.to_point(uu.ravel(), tt.ravel())

    @property
    def du(self) -> float:
        return TWO_PI / self.nu

    @property
    def dt(self) -> float:
        return self.patch.length / self.nt


def grid_from_dataset(dataset: CalibrationDataset,
                      oversample: int = GRID_OVERSAMPLE) -> SurfaceGrid:
    meta = dataset.metadata
    patch = CylinderPatch.from_dict(meta["patch"])
    cols, rows = meta["grid"]
    return SurfaceGrid(patch=patch, cols=int(cols), rows=int(rows), oversample=oversample)


def ensemble_assignment(index: KnnIndex, grid: SurfaceGrid, k: int,
                        chunk: int = 4096) -> np.ndarray:
    """Cell id per grid point by majority margin; -1 where no cell claims it."""
    n_cells = index.labels.shape[1]
    k = min(k, index.n_points)
    labels = index.labels.astype(np.float64)
    assigned = np.empty(len(grid.points), dtype=int)
    for lo in range(0, len(grid.points), chunk):
        pts = grid.points[lo:lo + chunk]
        d, idx = index.neighbors(pts, k)
        w = np.zeros_like(d)
        nz = d > 0.0
        w[nz] = 1.0 / np.square(d[nz])
        if (~nz).any():
            # exact hits dominate: weight them beyond any finite 1/d^2 present
            bonus = w.sum(axis=1) + 1.0
            w = np.where(nz, w, bonus[:, None])
        total = w.sum(axis=1)
        # accumulate positive votes one neighbor rank at a time to avoid a
        # (chunk, k, n_cells) intermediate
        pos = np.zeros((len(pts), n_cells))
        for j in range(w.shape[1]):
            pos += w[:, j:j + 1] * labels[idx[:, j]]
        margin = 2.0 * pos - total[:, None]
        best = np.argmax(margin, axis=1)            # ties: lowest cell id
        claimed = margin[np.arange(len(pts)), best] > 0.0
        assigned[lo:lo + chunk] = np.where(claimed, best, -1)
    return assigned


def _mask_boundary_uv(mask: np.ndarray, grid: SurfaceGrid,
                      anchor_col: int) -> np.ndarray:
    """Closed polyline around the largest pixel component of `mask`.

    mask is (nu, nt) with the u axis cyclic.  Pixel columns are unwrapped
    around anchor_col so seam-straddling regions come out contiguous.
    """
    comp = _largest_component(mask)
    cols = np.arange(grid.nu)
    offset = ((cols - anchor_col + grid.nu // 2) % grid.nu) - grid.nu // 2
    unwrapped_col = anchor_col + offset

    edges: dict = {}
    ii, jj = np.nonzero(comp)
    for i, j in zip(ii, jj):
        x0, x1 = int(unwrapped_col[i]), int(unwrapped_col[i]) + 1
        y0, y1 = int(j), int(j) + 1
        for a, b in (((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)),
                     ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))):
            if (b, a) in edges:
                del edges[(b, a)]       # interior edge cancels
            else:
                edges[(a, b)] = True
    # chain directed edges into loops; a vertex shared by two corner-touching
    # pixels has two outgoing edges, so keep lists and return the longest loop
    outgoing: dict = {}
    for a, b in edges:
        outgoing.setdefault(a, []).append(b)
    best_loop: list = []
    while outgoing:
        start = min(outgoing)
        loop = [start]
        node = outgoing[start].pop()
        while node != start:
            loop.append(node)
            node = outgoing[node].pop()
            if len(loop) > 4 * len(edges):
                break
        for v in list(outgoing):
            if not outgoing[v]:
                del outgoing[v]
        if len(loop) > len(best_loop):
            best_loop = loop
    poly = np.array(best_loop, dtype=float)
    poly[:, 0] *= grid.du
    poly[:, 1] *= grid.dt
    return poly


def _largest_component(mask: np.ndarray) -> np.ndarray:
    """4-connected largest component; the u (first) axis wraps."""
    nu, nt = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    best = None
    best_size = 0
    for i0, j0 in zip(*np.nonzero(mask)):
        if seen[i0, j0]:
            continue
        stack = [(i0, j0)]
        seen[i0, j0] = True
        members = []
        while stack:
            i, j = stack.pop()
            members.append((i, j))
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ni, nj = (i + di) % nu, j + dj
                if 0 <= nj < nt and mask[ni, nj] and not seen[ni, nj]:
                    seen[ni, nj] = True
                    stack.append((ni, nj))
        if len(members) > best_size:
            best_size = len(members)
            best = members
    out = np.zeros_like(mask, dtype=bool)
    if best:
        idx = np.array(best)
        out[idx[:, 0], idx[:, 1]] = True
    return out


def compute_receptive_fields(dataset: CalibrationDataset, k: int = DEFAULT_K,
                             grid: SurfaceGrid | None = None,
                             index: KnnIndex | None = None,
                             strict: bool = True) -> dict[int, CellReceptiveField | None]:
    """Per-cell receptive fields from the ensemble assignment of a dense grid.

    With strict=True, cells lacking positive samples raise CoverageError;
    otherwise they come back as None (uncalibrated).
    """
    if grid is None:
        grid = grid_from_dataset(dataset)
    if index is None:
        index = KnnIndex(dataset)
    n_cells = index.labels.shape[1]
    uncovered = [c for c in range(n_cells) if not index.labels[:, c].any()]
    if uncovered and strict:
        raise CoverageError(uncovered)

    assigned = ensemble_assignment(index, grid, k).reshape(grid.nu, grid.nt)
    support = index.labels.sum(axis=0)

    fields: dict[int, CellReceptiveField | None] = {}
    for cell in range(n_cells):
        if cell in uncovered:
            fields[cell] = None
            continue
        mask = assigned == cell
        if not mask.any():
            fields[cell] = None
            continue
        comp = _largest_component(mask)
        ii, jj = np.nonzero(comp)
        anchor = int(ii[0])
        # unwrap pixel columns around the anchor before averaging
        off = ((ii - anchor + grid.nu // 2) % grid.nu) - grid.nu // 2
        cu = ((anchor + off.mean() + 0.5) * grid.du) % TWO_PI
        ct = (jj.mean() + 0.5) * grid.dt
        boundary_uv = _mask_boundary_uv(mask, grid, anchor)
        boundary3d = grid.patch.to_point(boundary_uv[:, 0] % TWO_PI, boundary_uv[:, 1])
        fields[cell] = CellReceptiveField(
            cell_id=cell,
            boundary_uv=boundary_uv,
            boundary=boundary3d,
            centroid_uv=(float(cu), float(ct)),
            centroid=grid.patch.to_point(np.array(cu), np.array(ct)),
            normal=grid.patch.outward_normal(cu),
            support_count=int(support[cell]),
        )
    return fields


# ---------------------------------------------------------------------------
# force models
# ---------------------------------------------------------------------------

@dataclass
class CellForceModel:
    cell_id: int
    slope: float               # N per reading unit
    intercept: float           # N
    r2: float
    rmse_train: float
    degenerate: bool = False

    def predict(self, reading: np.ndarray) -> np.ndarray:
        return self.slope * np.asarray(reading, dtype=float) + self.intercept


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    """Exact normal-equation line fit returning slope, intercept, r2, rmse."""
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise DegenerateFitError("zero variance in readings")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (slope * x + intercept)
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / sst if sst > 0 else 1.0
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    return slope, intercept, r2, rmse


def active_cell_frames(dataset: CalibrationDataset,
                       dead_band: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Frames with an active cell: indices and the arg-max cell per frame."""
    if dead_band is None:
        dead_band = estimate_dead_band(dataset)
    top = np.argmax(dataset.readings, axis=1)
    peak = dataset.readings[np.arange(len(dataset)), top]
    in_contact = (peak > dead_band) & (dataset.force > 0.0)
    return np.nonzero(in_contact)[0], top[in_contact]


def fit_force_models(dataset: CalibrationDataset,
                     fields: dict[int, CellReceptiveField | None] | None = None,
                     dead_band: float | None = None,
                     strict: bool = True) -> dict[int, CellForceModel | None]:
    """OLS of force on reading, per cell, over the cell's arg-max frames."""
    if dead_band is None:
        dead_band = estimate_dead_band(dataset)
    frames, top = active_cell_frames(dataset, dead_band)
    n_cells = dataset.n_cells
    models: dict[int, CellForceModel | None] = {}
    for cell in range(n_cells):
        if fields is not None and fields.get(cell) is None:
            models[cell] = None
            continue
        rows = frames[top == cell]
        x = dataset.readings[rows, cell]
        y = dataset.force[rows]
        if len(np.unique(x)) < 2:
            if strict:
                raise DegenerateFitError(
                    f"cell {cell}: {len(x)} frames with {len(np.unique(x))} distinct readings")
            models[cell] = CellForceModel(cell_id=cell, slope=0.0,
                                          intercept=float(y.mean()) if len(y) else 0.0,
                                          r2=0.0, rmse_train=math.inf, degenerate=True)
            continue
        slope, intercept, r2, rmse = _ols(x, y)
        models[cell] = CellForceModel(cell_id=cell, slope=slope, intercept=intercept,
                                      r2=r2, rmse_train=rmse)
    return models


# ---------------------------------------------------------------------------
# calibration bundle + evaluation protocol
# ---------------------------------------------------------------------------

@dataclass
class SkinCalibration:
    patch: CylinderPatch
    cols: int
    rows: int
    fields: dict[int, CellReceptiveField | None]
    force_models: dict[int, CellForceModel | None]
    dataset_hash: str
    split_seed: int
    k: int
    dead_band: float
    link: int = 2
    skin_id: str = "skin"

    @property
    def n_cells(self) -> int:
        return self.cols * self.rows

    def uncalibrated_cells(self) -> list[int]:
        return [c for c in range(self.n_cells)
                if self.fields.get(c) is None or self.force_models.get(c) is None]

    def perfect_grid_centroids(self) -> np.ndarray:
        """Unwarped cell centers: the pre-calibration localization baseline."""
        ci = np.arange(self.n_cells) % self.cols
        cj = np.arange(self.n_cells) // self.cols
        u = (ci + 0.5) * TWO_PI / self.cols
        t = (cj + 0.5) * self.patch.length / self.rows
        return self.patch.to_point(u, t)


def split_indices(n: int, split_seed: int,
                  train_fraction: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(split_seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def subset_dataset(dataset: CalibrationDataset, rows: np.ndarray) -> CalibrationDataset:
    return CalibrationDataset(times=dataset.times[rows],
                              readings=dataset.readings[rows],
                              force=dataset.force[rows],
                              position=dataset.position[rows],
                              frame_rate=dataset.frame_rate,
                              skin_id=dataset.skin_id,
                              metadata=dataset.metadata)


def calibrate(dataset: CalibrationDataset, k: int = DEFAULT_K,
              split_seed: int = 0, train_fraction: float = 0.9,
              strict: bool = True) -> SkinCalibration:
    """Fit receptive fields and force models on the training split."""
    train_rows, _ = split_indices(len(dataset), split_seed, train_fraction)
    train = subset_dataset(dataset, train_rows)
    grid = grid_from_dataset(dataset)
    dead_band = estimate_dead_band(train)
    index = KnnIndex(train, dead_band)
    fields = compute_receptive_fields(train, k=k, grid=grid, index=index, strict=strict)
    models = fit_force_models(train, fields, dead_band=dead_band, strict=False)
    return SkinCalibration(patch=grid.patch, cols=grid.cols, rows=grid.rows,
                           fields=fields, force_models=models,
                           dataset_hash=dataset.content_hash(),
                           split_seed=split_seed, k=min(k, index.n_points),
                           dead_band=dead_band,
                           link=int(dataset.metadata.get("link", 2)),
                           skin_id=dataset.skin_id)


@dataclass(frozen=True)
class EvaluationMetrics:
    loc_rmse_m: float
    loc_rmse_uncal_m: float
    force_rmse_n: float
    force_rmse_naive_n: float
    n_test_frames: int
    per_cell_force_rmse: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"loc_rmse_m": self.loc_rmse_m,
                "loc_rmse_uncal_m": self.loc_rmse_uncal_m,
                "force_rmse_n": self.force_rmse_n,
                "force_rmse_naive_n": self.force_rmse_naive_n,
                "n_test_frames": self.n_test_frames}


def evaluate(calibration: SkinCalibration, dataset: CalibrationDataset,
             split_seed: int | None = None,
             train_fraction: float = 0.9) -> EvaluationMetrics:
    """Held-out test metrics on the 10% split.

    Localization predicts the calibrated centroid of the strongest-reading
    cell and is compared against (a) the recorded contact position and (b)
    the perfect-grid baseline centroids.  Force predicts f_cell(reading)
    against the recorded force, with naive saturation scaling
    press_max * reading / max_train_reading as the baseline.
    """
    if split_seed is None:
        split_seed = calibration.split_seed
    train_rows, test_rows = split_indices(len(dataset), split_seed, train_fraction)
    frames, top = active_cell_frames(dataset, calibration.dead_band)
    frame_set = dict(zip(frames.tolist(), top.tolist()))
    test_active = [(r, frame_set[r]) for r in test_rows if r in frame_set]
    test_active = [(r, c) for r, c in test_active
                   if calibration.fields.get(c) is not None
                   and calibration.force_models.get(c) is not None
                   and not calibration.force_models[c].degenerate]
    if not test_active:
        raise SplitTooSmallError("test split has no usable in-contact frames")

    rows = np.array([r for r, _ in test_active])
    cells = np.array([c for _, c in test_active])
    pos_true = dataset.position[rows]
    force_true = dataset.force[rows]
    reading = dataset.readings[rows, cells]

    centroids = np.stack([calibration.fields[c].centroid for c in cells])
    loc_err = np.linalg.norm(centroids - pos_true, axis=1)

    grid_centroids = calibration.perfect_grid_centroids()
    loc_err_uncal = np.linalg.norm(grid_centroids[cells] - pos_true, axis=1)

    slopes = np.array([calibration.force_models[c].slope for c in cells])
    intercepts = np.array([calibration.force_models[c].intercept for c in cells])
    force_pred = slopes * reading + intercepts

    # naive baseline: linear scaling by each cell's observed saturation reading
    press_max = float(dataset.metadata.get("press_max_n", 10.0))
    sat = np.zeros(calibration.n_cells)
    tr_frames, tr_top = active_cell_frames(subset_dataset(dataset, train_rows),
                                           calibration.dead_band)
    train = subset_dataset(dataset, train_rows)
    for c in range(calibration.n_cells):
        r = tr_frames[tr_top == c]
        sat[c] = train.readings[r, c].max() if len(r) else 1.0
    force_naive = press_max * reading / np.maximum(sat[cells], 1e-12)

    per_cell = {}
    for c in np.unique(cells):
        m = cells == c
        per_cell[int(c)] = float(np.sqrt(np.mean((force_pred[m] - force_true[m]) ** 2)))

    return EvaluationMetrics(
        loc_rmse_m=float(np.sqrt(np.mean(loc_err ** 2))),
        loc_rmse_uncal_m=float(np.sqrt(np.mean(loc_err_uncal ** 2))),
        force_rmse_n=float(np.sqrt(np.mean((force_pred - force_true) ** 2))),
        force_rmse_naive_n=float(np.sqrt(np.mean((force_naive - force_true) ** 2))),
        n_test_frames=len(rows),
        per_cell_force_rmse=per_cell)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

CALIBRATION_KIND = "skin_calibration"
CALIBRATION_VERSION = 1


def save_calibration(cal: SkinCalibration, path) -> None:
    cells = []
    for c in range(cal.n_cells):
        f = cal.fields.get(c)
        m = cal.force_models.get(c)
        entry: dict = {"cell_id": c, "calibrated": f is not None and m is not None}
        if f is not None:
            entry.update({
                "centroid": [float(v) for v in f.centroid],
                "centroid_uv": [float(f.centroid_uv[0]), float(f.centroid_uv[1])],
                "normal": [float(v) for v in f.normal],
                "boundary_uv": [[float(a), float(b)] for a, b in f.boundary_uv],
                "support_count": f.support_count,
            })
        if m is not None:
            entry.update({"slope": m.slope, "intercept": m.intercept,
                          "r2": m.r2, "rmse_train": m.rmse_train,
                          "degenerate": m.degenerate})
        cells.append(entry)
    doc = {"kind": CALIBRATION_KIND, "version": CALIBRATION_VERSION,
           "skin_id": cal.skin_id, "link": cal.link,
           "cols": cal.cols, "rows": cal.rows,
           "patch": cal.patch.to_dict(),
           "dataset_hash": cal.dataset_hash, "split_seed": cal.split_seed,
           "k": cal.k, "dead_band": cal.dead_band, "cells": cells}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_calibration(path) -> SkinCalibration:
    from .errors import FormatVersionError
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != CALIBRATION_KIND or doc.get("version") != CALIBRATION_VERSION:
        raise FormatVersionError(f"{path}: not a v{CALIBRATION_VERSION} calibration file")
    patch = CylinderPatch.from_dict(doc["patch"])
    fields: dict[int, CellReceptiveField | None] = {}
    models: dict[int, CellForceModel | None] = {}
    for entry in doc["cells"]:
        c = entry["cell_id"]
        if entry.get("calibrated") and "centroid" in entry:
            buv = np.array(entry["boundary_uv"], dtype=float)
            cu, ct = entry["centroid_uv"]
            fields[c] = CellReceptiveField(
                cell_id=c, boundary_uv=buv,
                boundary=patch.to_point(buv[:, 0] % TWO_PI, buv[:, 1]),
                centroid_uv=(cu, ct),
                centroid=np.array(entry["centroid"], dtype=float),
                normal=np.array(entry["normal"], dtype=float),
                support_count=int(entry["support_count"]))
            models[c] = CellForceModel(cell_id=c, slope=entry["slope"],
                                       intercept=entry["intercept"], r2=entry["r2"],
                                       rmse_train=entry["rmse_train"],
                                       degenerate=entry.get("degenerate", False))
        else:
            fields[c] = None
            models[c] = None
    return SkinCalibration(patch=patch, cols=doc["cols"], rows=doc["rows"],
                           fields=fields, force_models=models,
                           dataset_hash=doc["dataset_hash"],
                           split_seed=doc["split_seed"], k=doc["k"],
                           dead_band=doc["dead_band"], link=doc.get("link", 2),
                           skin_id=doc.get("skin_id", "skin"))


def perfect_calibration(skin, link: int = 2, skin_id: str = "skin") -> SkinCalibration:
    """Idealized calibration straight from a ground-truth skin (demo shortcut)."""
    cu, ct = skin.cell_centroids_uv()
    cen3d = skin.cell_centroids_3d()
    fields = {}
    models = {}
    for c in range(skin.n_cells):
        fields[c] = CellReceptiveField(
            cell_id=c, boundary_uv=np.zeros((0, 2)), boundary=np.zeros((0, 3)),
            centroid_uv=(float(cu[c]), float(ct[c])), centroid=cen3d[c],
            normal=skin.patch.outward_normal(cu[c]), support_count=0)
        models[c] = CellForceModel(cell_id=c, slope=1.0 / skin.gains[c],
                                   intercept=-skin.offsets[c] / skin.gains[c],
                                   r2=1.0, rmse_train=0.0)
    return SkinCalibration(patch=skin.patch, cols=skin.cols, rows=skin.rows,
                           fields=fields, force_models=models,
                           dataset_hash="ground-truth", split_seed=0, k=0,
                           dead_band=max(skin.dead_band, 1e-9), link=link,
                           skin_id=skin_id)
