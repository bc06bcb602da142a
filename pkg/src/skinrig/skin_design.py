"""Knittable skin dimensioning from link-surface measurements.

Each of the three layers (top, mesh, bottom) is knitted flat at a stitch
density R (stitches per mm) and worn stretched.  A layer with n stitches on
an axis spans n*S/R mm at stretch factor S in [S_lo, S_hi].  The solver
picks, per layer and axis, the smallest stitch count whose minimally
stretched span still reaches the smallest measured extent:

    n = ceil(measurement_mm * R / S_lo)

and then verifies the largest measured extent stays reachable at maximum
stretch (measurement_max <= n * S_hi / R).  Because of the ceil, the
minimally stretched span may exceed the smallest measurement by up to one
stitch pitch (S_lo / R mm); that sub-stitch overshoot is inherent to integer
stitch counts and accepted.

A design is feasible at all iff the measurement spread fits inside every
layer's stretch ratio:  h_max/h_min <= min_i(S_hi_x / S_lo_x), same for v.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

from .errors import ConfigError, InfeasibleDesignError
from .geometry import SurfaceMeasurements

LAYERS = ("top", "mesh", "bottom")
AXES = ("x", "y")

MM_PER_M = 1000.0


@dataclass(frozen=True)
class LayerProfile:
    """Knit parameters of one layer.

    Ratios are stitches per mm; stretch factors are dimensionless >= 1.
    """

    layer: str
    ratio_x: float
    ratio_y: float
    stretch_min_x: float
    stretch_max_x: float
    stretch_min_y: float
    stretch_max_y: float
    assumed: bool = False   # True when bounds are placeholders, not measured

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise ValueError(f"layer must be one of {LAYERS}, got {self.layer!r}")
        if self.ratio_x <= 0 or self.ratio_y <= 0:
            raise ValueError("stitch ratios must be positive")
        for lo, hi, ax in ((self.stretch_min_x, self.stretch_max_x, "x"),
                           (self.stretch_min_y, self.stretch_max_y, "y")):
            if not (1.0 <= lo <= hi):
                raise ValueError(f"need 1 <= stretch_min <= stretch_max on {ax}")

    def ratio(self, axis: str) -> float:
        return self.ratio_x if axis == "x" else self.ratio_y

    def stretch_min(self, axis: str) -> float:
        return self.stretch_min_x if axis == "x" else self.stretch_min_y

    def stretch_max(self, axis: str) -> float:
        return self.stretch_max_x if axis == "x" else self.stretch_max_y


def default_profiles() -> dict[str, LayerProfile]:
    """Measured knit constants for top/bottom; assumed placeholders for mesh.

    Top and bottom layers stretch to at most 177% horizontally and 145%
    vertically, and need at least 145% horizontal stretch for stripe
    conductivity; the vertical axis has no minimum.  The mesh layer has no
    published bounds, so it ships with S_lo=1.00, S_hi=1.45 flagged assumed.
    """
    tb = dict(ratio_x=0.889, ratio_y=0.981,
              stretch_min_x=1.45, stretch_max_x=1.77,
              stretch_min_y=1.00, stretch_max_y=1.45)
    return {
        "top": LayerProfile(layer="top", **tb),
        "mesh": LayerProfile(layer="mesh", ratio_x=0.543, ratio_y=0.437,
                             stretch_min_x=1.00, stretch_max_x=1.45,
                             stretch_min_y=1.00, stretch_max_y=1.45,
                             assumed=True),
        "bottom": LayerProfile(layer="bottom", **tb),
    }


@dataclass(frozen=True)
class AxisVerdict:
    axis: str
    measurement_ratio: float
    stretch_ratio_limit: float   # min over layers of S_hi/S_lo
    limiting_layer: str

    @property
    def feasible(self) -> bool:
        return self.measurement_ratio <= self.stretch_ratio_limit

    @property
    def margin(self) -> float:
        """Slack in the ratio inequality; negative when infeasible."""
        return self.stretch_ratio_limit - self.measurement_ratio


@dataclass(frozen=True)
class FeasibilityVerdict:
    x: AxisVerdict
    y: AxisVerdict

    @property
    def feasible(self) -> bool:
        return self.x.feasible and self.y.feasible

    def reasons(self) -> list[str]:
        out = []
        for v in (self.x, self.y):
            if not v.feasible:
                out.append(
                    f"{v.axis}-axis: measurement ratio {v.measurement_ratio:.4f} exceeds "
                    f"stretch ratio {v.stretch_ratio_limit:.4f} of layer {v.limiting_layer}")
        return out


@dataclass(frozen=True)
class SkinSpec:
    """Stitch counts per layer plus the sensing-cell grid."""

    counts: dict[str, dict[str, int]]   # counts[layer][axis]
    grid_cols: int = 16
    grid_rows: int = 16

    def n(self, layer: str, axis: str) -> int:
        return self.counts[layer][axis]

    def to_json_dict(self, measurements: SurfaceMeasurements | None = None,
                     profiles: dict[str, LayerProfile] | None = None) -> dict:
        out: dict = {
            "kind": "skin_spec",
            "version": 1,
            "grid_cols": self.grid_cols,
            "grid_rows": self.grid_rows,
            "counts": self.counts,
        }
        if measurements is not None:
            out["measurements_m"] = asdict(measurements)
        if profiles is not None:
            out["profiles"] = {k: asdict(v) for k, v in profiles.items()}
            if measurements is not None:
                audit = {}
                for layer, prof in profiles.items():
                    for axis, m_min, m_max in (("x", measurements.h_min, measurements.h_max),
                                               ("y", measurements.v_min, measurements.v_max)):
                        n = self.counts[layer][axis]
                        r = prof.ratio(axis)
                        audit[f"{layer}.{axis}"] = {
                            "n": n,
                            "span_at_min_stretch_mm": n * prof.stretch_min(axis) / r,
                            "span_at_max_stretch_mm": n * prof.stretch_max(axis) / r,
                            "measurement_min_mm": m_min * MM_PER_M,
                            "measurement_max_mm": m_max * MM_PER_M,
                        }
                out["audit"] = audit
        return out


def check_feasibility(m: SurfaceMeasurements,
                      profiles: dict[str, LayerProfile]) -> FeasibilityVerdict:
    """Verdict on whether any stitch counts can fit these measurements."""
    _require_layers(profiles)
    verdicts = {}
    for axis, (m_min, m_max) in (("x", (m.h_min, m.h_max)), ("y", (m.v_min, m.v_max))):
        limit = math.inf
        limiting = ""
        for layer in LAYERS:
            p = profiles[layer]
            ratio = p.stretch_max(axis) / p.stretch_min(axis)
            if ratio < limit:
                limit = ratio
                limiting = layer
        verdicts[axis] = AxisVerdict(axis=axis, measurement_ratio=m_max / m_min,
                                     stretch_ratio_limit=limit, limiting_layer=limiting)
    return FeasibilityVerdict(x=verdicts["x"], y=verdicts["y"])


def solve_dimensions(m: SurfaceMeasurements,
                     profiles: dict[str, LayerProfile],
                     grid_cols: int = 16, grid_rows: int = 16) -> SkinSpec:
    """Smallest per-layer stitch counts covering the measurements.

    Raises InfeasibleDesignError when the rounded-up count cannot reach the
    largest measurement at maximum stretch.
    """
    _require_layers(profiles)
    counts: dict[str, dict[str, int]] = {}
    for layer in LAYERS:
        p = profiles[layer]
        counts[layer] = {}
        for axis, m_min, m_max in (("x", m.h_min, m.h_max), ("y", m.v_min, m.v_max)):
            n = math.ceil(m_min * MM_PER_M * p.ratio(axis) / p.stretch_min(axis))
            counts[layer][axis] = n
            reach = n * p.stretch_max(axis) / p.ratio(axis)   # mm at max stretch
            if reach < m_max * MM_PER_M:
                raise InfeasibleDesignError(
                    layer, axis,
                    f"layer {layer} axis {axis}: n={n} reaches only {reach:.2f} mm at "
                    f"max stretch, below measurement {m_max * MM_PER_M:.2f} mm")
    return SkinSpec(counts=counts, grid_cols=grid_cols, grid_rows=grid_rows)


def _require_layers(profiles: dict[str, LayerProfile]) -> None:
    missing = [l for l in LAYERS if l not in profiles]
    if missing:
        raise ConfigError(f"missing layer profiles: {missing}")


# ---------------------------------------------------------------------------
# config I/O
# ---------------------------------------------------------------------------

def profiles_from_dict(data: dict) -> dict[str, LayerProfile]:
    out = {}
    for layer, vals in data.items():
        if layer not in LAYERS:
            raise ConfigError(f"unknown layer {layer!r}")
        try:
            out[layer] = LayerProfile(layer=layer, **vals)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad profile for layer {layer!r}: {exc}") from exc
    return out


def write_spec_json(spec: SkinSpec, path, measurements=None, profiles=None) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_json_dict(measurements, profiles), fh, indent=2, sort_keys=True)
        fh.write("\n")
