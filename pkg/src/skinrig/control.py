"""Skin-enabled controllers: QP trajectory modification and admittance.

The QP keeps the end effector on its reference velocity while honoring one
half-space constraint per contact,

    min ||xdot_ref - J qdot||^2 + reg ||qdot||^2
    s.t. a_i . qdot >= rhs_i        with a_i = u_i^T J_i,

where u_i points away from the toucher (into the robot body), so the
constraint forbids motion against the touch.  With rhs proportional to the
contact force the robot backs away harder when pushed harder.

The admittance law M*ddx + B*dx' + K*dx = F is discretized with Tustin's
bilinear map into a two-step recursion.  A published variant of that
recursion carries B*Ts^2 damping terms instead of the B*Ts the derivation
gives; both are implemented, with the derivation-consistent form as the
default (see AdmittanceParams.legacy_damping).
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import SkinCalibration
from .errors import (FrameMismatchError, InfeasibleQPError, TraceFormatError,
                     UncalibratedCellError)
from .kinematics import RobotChain, forward_kinematics, point_jacobian

log = logging.getLogger(__name__)

CONTROL_RATE_HZ = 125.0
DEFAULT_REGULARIZATION = 1e-8
_FEAS_TOL = 1e-9


# ---------------------------------------------------------------------------
# contacts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContactEvent:
    cell_id: int
    link: int
    position: np.ndarray        # world frame, m
    u: np.ndarray               # unit vector away from the toucher (into the body)
    force: float                # calibrated, N
    t: float = 0.0

    def __post_init__(self):
        if self.force < 0:
            raise ValueError("force must be >= 0")
        if abs(np.linalg.norm(self.u) - 1.0) > 1e-9:
            raise ValueError("u must be unit length")


def contacts_from_frame(frame: np.ndarray, calibration: SkinCalibration,
                        chain: RobotChain, q: np.ndarray,
                        t: float = 0.0) -> list[ContactEvent]:
    """Calibrated contact events for every cell reading above the dead band.

    Position is the cell's receptive-field centroid pushed through forward
    kinematics; u is the inward direction (negated surface normal) rotated
    into the world frame.  Cells without a calibration are skipped with a
    warning rather than aborting the control step.
    """
    frame = np.asarray(frame, dtype=float)
    events: list[ContactEvent] = []
    active = np.nonzero(frame > calibration.dead_band)[0]
    if len(active) == 0:
        return events
    link_rot = chain.link_frame(np.asarray(q, dtype=float), calibration.link)[:3, :3]
    for cell in active:
        f = calibration.fields.get(int(cell))
        m = calibration.force_models.get(int(cell))
        if f is None or m is None or m.degenerate:
            log.warning("skipping reading on uncalibrated cell %d", cell)
            continue
        force = max(0.0, float(m.predict(frame[cell])))
        position = forward_kinematics(chain, q, calibration.link, f.centroid)
        u = -(link_rot @ f.normal)
        events.append(ContactEvent(cell_id=int(cell), link=calibration.link,
                                   position=position, u=u / np.linalg.norm(u),
                                   force=force, t=t))
    return events


# ---------------------------------------------------------------------------
# QP trajectory modification
# ---------------------------------------------------------------------------

@dataclass
class QPSpec:
    x_dot_ref: np.ndarray               # (3,)
    j_e: np.ndarray                     # (3, n)
    constraints: list[tuple[np.ndarray, float]] = field(default_factory=list)
    # each constraint is (a, rhs) with a = u^T J_contact, rhs = f(F) >= 0
    regularization: float = DEFAULT_REGULARIZATION

    def __post_init__(self):
        self.x_dot_ref = np.asarray(self.x_dot_ref, dtype=float)
        self.j_e = np.asarray(self.j_e, dtype=float)
        for _, rhs in self.constraints:
            if rhs < -_FEAS_TOL:
                raise ValueError("constraint rhs must be >= 0 (f is non-negative)")


def contact_constraint(event: ContactEvent, chain: RobotChain, q: np.ndarray,
                       calibration: SkinCalibration,
                       force_gain: float = 0.0) -> tuple[np.ndarray, float]:
    """(a, rhs) row for one contact: a = u^T J_contact, rhs = force_gain * F."""
    f = calibration.fields[event.cell_id]
    j_c = point_jacobian(chain, q, event.link, f.centroid)
    return event.u @ j_c, force_gain * event.force


def qp_modify(spec: QPSpec) -> np.ndarray:
    """Exact solution of the contact-constrained velocity QP.

    The problem is tiny (n joints, a handful of inequality rows), so instead
    of iterating an active set the solver checks the KKT system of every
    working set and returns the feasible stationary point with the smallest
    objective.  This is exhaustive, cycle-proof, and exact to solver
    precision.  Raises InfeasibleQPError when no working set yields a
    feasible point (impossible for all-zero rhs, where qdot = 0 is feasible).
    """
    j = spec.j_e
    n = j.shape[1]
    if n < 3:
        raise ValueError("need at least 3 joints")
    if len(spec.constraints) > 14:
        raise ValueError("too many contact constraints for exhaustive search")
    h = j.T @ j + spec.regularization * np.eye(n)
    g = -(j.T @ spec.x_dot_ref)
    a_rows = np.array([a for a, _ in spec.constraints], dtype=float).reshape(-1, n)
    rhs = np.array([r for _, r in spec.constraints], dtype=float)
    m = len(rhs)

    def objective(x: np.ndarray) -> float:
        r = spec.x_dot_ref - j @ x
        return float(r @ r + spec.regularization * (x @ x))

    best_x = None
    best_obj = math.inf
    for size in range(0, min(m, n) + 1):
        for subset in itertools.combinations(range(m), size):
            w = list(subset)
            kkt = np.zeros((n + size, n + size))
            kkt[:n, :n] = h
            if size:
                kkt[:n, n:] = -a_rows[w].T
                kkt[n:, :n] = a_rows[w]
            b = np.concatenate([-g, rhs[w]])
            try:
                sol = np.linalg.solve(kkt, b)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            mu = sol[n:]
            if size and np.any(mu < -_FEAS_TOL):
                continue
            if m and np.any(a_rows @ x < rhs - 1e-9):
                continue
            obj = objective(x)
            if obj < best_obj - 1e-15:
                best_obj = obj
                best_x = x
    if best_x is None:
        raise InfeasibleQPError(
            f"{m} contact constraints admit no joint velocity")
    return best_x


# ---------------------------------------------------------------------------
# admittance control
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmittanceParams:
    """Virtual mass-damper-spring rendered at the contact.

    Defaults follow the hardware tuning: K = 500, critically damped
    B = 2*sqrt(K), M = 0, at the 125 Hz command rate.  legacy_damping
    switches the recursion's damping terms from B*Ts to the published
    B*Ts^2 variant.
    """

    m: float = 0.0
    b: float = 2.0 * math.sqrt(500.0)
    k: float = 500.0
    ts: float = 1.0 / CONTROL_RATE_HZ
    legacy_damping: bool = False

    def __post_init__(self):
        if self.k <= 0 or self.b < 0 or self.m < 0 or self.ts <= 0:
            raise ValueError("need K > 0, B >= 0, M >= 0, Ts > 0")

    def coefficients(self) -> tuple[float, float, float, float]:
        """(den, num_f, c1, c2): dx(k) = (num_f*(F(k)+2F(k-1)+F(k-2)) - c1*dx(k-1) - c2*dx(k-2))/den."""
        ts = self.ts
        damp = self.b * ts * ts if self.legacy_damping else self.b * ts
        den = 4.0 * self.m + 2.0 * damp + self.k * ts * ts
        c1 = 2.0 * self.k * ts * ts - 8.0 * self.m
        c2 = 4.0 * self.m - 2.0 * damp + self.k * ts * ts
        return den, ts * ts, c1, c2


@dataclass
class AdmittanceState:
    """Two-deep displacement and force history, zero-initialized."""

    dx: tuple[float, float] = (0.0, 0.0)        # dx(k-1), dx(k-2)
    f_hist: tuple[float, float] = (0.0, 0.0)    # F(k-1), F(k-2)


def admittance_step(params: AdmittanceParams, state: AdmittanceState,
                    f_k: float) -> float:
    """Advance the discrete admittance recursion one control period."""
    den, num_f, c1, c2 = params.coefficients()
    dx1, dx2 = state.dx
    f1, f2 = state.f_hist
    dx = (num_f * (f_k + 2.0 * f1 + f2) - c1 * dx1 - c2 * dx2) / den
    state.dx = (dx, dx1)
    state.f_hist = (f_k, f1)
    return dx


def admittance_poles(params: AdmittanceParams) -> np.ndarray:
    """Roots of the homogeneous recursion (the discrete poles)."""
    den, _, c1, c2 = params.coefficients()
    return np.roots([1.0, c1 / den, c2 / den])


@dataclass(frozen=True)
class Displacement:
    frame: str                  # e.g. "task" or "joint:3"
    vector: np.ndarray


def compose_multi_contact(x_ref: np.ndarray,
                          steps: list[Displacement]) -> np.ndarray:
    """x_des = x_ref + sum of per-contact displacements (same frame)."""
    x = np.asarray(x_ref, dtype=float).copy()
    frames = {s.frame for s in steps}
    if len(frames) > 1:
        raise FrameMismatchError(f"mixed displacement frames: {sorted(frames)}")
    for s in steps:
        v = np.asarray(s.vector, dtype=float)
        if v.shape != x.shape:
            raise FrameMismatchError(f"shape {v.shape} vs reference {x.shape}")
        x += v
    return x


# ---------------------------------------------------------------------------
# scripted contact traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceContact:
    """One scripted contact: force samples over time on a specific cell."""

    link: int
    cell: int
    times: np.ndarray
    forces: np.ndarray

    def force_at(self, t: float) -> float:
        if t < self.times[0] or t > self.times[-1]:
            return 0.0
        return float(np.interp(t, self.times, self.forces))


def load_trace(path) -> list[TraceContact]:
    """JSON-lines trace: {"t":, "link":, "cell":, "force":} per row."""
    rows = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}:{ln}: bad JSON: {exc}") from exc
        if "t" not in d or "force" not in d or ("cell" not in d and "point" not in d):
            raise TraceFormatError(f"{path}:{ln}: need t, force, and cell or point")
        rows.append(d)
    groups: dict[tuple[int, int], list[tuple[float, float]]] = {}
    for d in rows:
        key = (int(d.get("link", 2)), int(d["cell"]))
        groups.setdefault(key, []).append((float(d["t"]), float(d["force"])))
    contacts = []
    for (link, cell), samples in sorted(groups.items()):
        samples.sort()
        contacts.append(TraceContact(link=link, cell=cell,
                                     times=np.array([t for t, _ in samples]),
                                     forces=np.array([f for _, f in samples])))
    return contacts


def save_trace(contacts: list[TraceContact], path) -> None:
    with open(path, "w") as fh:
        for c in contacts:
            for t, f in zip(c.times, c.forces):
                fh.write(json.dumps({"t": float(t), "link": c.link,
                                     "cell": c.cell, "force": float(f)},
                                    sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# closed loops
# ---------------------------------------------------------------------------

@dataclass
class Telemetry:
    columns: list[str]
    rows: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


class _TraceSynthesizer:
    """Per-link reading frames for scripted contacts.

    Contact points sit at their cell's ground-truth centroid, so the disc
    overlap fractions are position-only and computed once.
    """

    def __init__(self, skins: dict[int, object], contacts: list[TraceContact]):
        self.skins = skins
        self.contacts = contacts
        self._fracs = {}
        for c in contacts:
            skin = skins[c.link]
            cu, ct = skin.cell_centroids_uv()
            self._fracs[(c.link, c.cell)] = skin.overlap_fractions(cu[c.cell], ct[c.cell])

    def frames_at(self, t: float) -> dict[int, np.ndarray]:
        frames = {link: np.zeros(skin.n_cells) for link, skin in self.skins.items()}
        for c in self.contacts:
            f = c.force_at(t)
            if f <= 0.0:
                continue
            skin = self.skins[c.link]
            frames[c.link] += skin.response_from_fractions(self._fracs[(c.link, c.cell)], f)
        return frames


def run_qp_loop(chain: RobotChain, calibrations: dict[int, SkinCalibration],
                skins: dict[int, object], trace: list[TraceContact],
                q0: np.ndarray, x_dot_ref, duration: float,
                ee_link: int | None = None, ee_point=(0.0, 0.0, 0.0),
                rate: float = CONTROL_RATE_HZ, force_gain: float = 0.0,
                kp: float = 0.0,
                regularization: float = DEFAULT_REGULARIZATION) -> Telemetry:
    """Reference tracking with contact half-space constraints.

    x_dot_ref may be a constant 3-vector or a callable t -> 3-vector.  On an
    infeasible QP the loop commands a safe stop (qdot = 0) for that step.
    Telemetry columns: t, q*, qd*, ee_*, ref_*, per-scripted-cell readings
    C_<link>_<cell>, and vpush_<link>_<cell> (contact velocity along u).
    """
    n = chain.n_joints
    ee_link = chain.n_joints if ee_link is None else ee_link
    q = np.asarray(q0, dtype=float).copy()
    ts = 1.0 / rate
    steps = int(round(duration * rate))
    vref = x_dot_ref if callable(x_dot_ref) else (lambda t: np.asarray(x_dot_ref, float))
    x_ref = forward_kinematics(chain, q, ee_link, ee_point)

    cell_cols = [(c.link, c.cell) for c in trace]
    columns = (["t"] + [f"q{i}" for i in range(n)] + [f"qd{i}" for i in range(n)]
               + ["ee_x", "ee_y", "ee_z", "ref_x", "ref_y", "ref_z"]
               + [f"C_{l}_{c}" for l, c in cell_cols]
               + [f"vpush_{l}_{c}" for l, c in cell_cols])
    rows = np.zeros((steps, len(columns)))
    synth = _TraceSynthesizer(skins, trace)

    for k in range(steps):
        t = k * ts
        frames = synth.frames_at(t)
        events = []
        for link, frame in frames.items():
            events.extend(contacts_from_frame(frame, calibrations[link], chain, q, t))
        x_now = forward_kinematics(chain, q, ee_link, ee_point)
        xd_cmd = vref(t) + kp * (x_ref - x_now)
        j_e = point_jacobian(chain, q, ee_link, ee_point)
        constraints = [contact_constraint(e, chain, q, calibrations[e.link], force_gain)
                       for e in events]
        spec = QPSpec(x_dot_ref=xd_cmd, j_e=j_e, constraints=constraints,
                      regularization=regularization)
        try:
            qd = qp_modify(spec)
        except InfeasibleQPError:
            log.warning("infeasible QP at t=%.3f: commanding stop", t)
            qd = np.zeros(n)

        row = [t, *q, *qd, *x_now, *x_ref]
        by_cell = {(e.link, e.cell_id): e for e in events}
        readings = [frames[l][c] for l, c in cell_cols]
        vpush = []
        for l, c in cell_cols:
            e = by_cell.get((l, c))
            if e is None:
                vpush.append(0.0)
            else:
                j_c = point_jacobian(chain, q, l, calibrations[l].fields[c].centroid)
                vpush.append(float(e.u @ (j_c @ qd)))
        rows[k] = row + readings + vpush

        q = q + qd * ts
        x_ref = x_ref + vref(t) * ts
    return Telemetry(columns=columns, rows=rows)


def run_admittance_loop(chain: RobotChain, calibrations: dict[int, SkinCalibration],
                        skins: dict[int, object], trace: list[TraceContact],
                        q_start: np.ndarray, q_end: np.ndarray, duration: float,
                        params: AdmittanceParams | None = None,
                        rate: float = CONTROL_RATE_HZ) -> Telemetry:
    """Per-joint admittance: a contact on link L displaces joint L.

    The joint reference ramps q_start -> q_end over the run.  Each contact
    feeds its calibrated force, signed by whether positive joint motion
    moves the contact along u, into that joint's admittance filter; the
    resulting displacements superpose onto the joint reference.
    """
    params = params or AdmittanceParams(ts=1.0 / rate)
    n = chain.n_joints
    q_start = np.asarray(q_start, dtype=float)
    q_end = np.asarray(q_end, dtype=float)
    ts = 1.0 / rate
    steps = int(round(duration * rate))
    states: dict[tuple[int, int], AdmittanceState] = {}
    cell_cols = [(c.link, c.cell) for c in trace]
    synth = _TraceSynthesizer(skins, trace)

    columns = (["t"] + [f"q{i}" for i in range(n)] + [f"qd{i}" for i in range(n)]
               + ["ee_x", "ee_y", "ee_z"]
               + [f"C_{l}_{c}" for l, c in cell_cols]
               + [f"dq{i}" for i in range(n)])
    rows = np.zeros((steps, len(columns)))
    q_prev = q_start.copy()

    for k in range(steps):
        t = k * ts
        s = min(1.0, t / duration)
        q_ref = q_start + s * (q_end - q_start)
        frames = synth.frames_at(t)
        events = []
        for link, frame in frames.items():
            events.extend(contacts_from_frame(frame, calibrations[link], chain, q_prev, t))

        force_in = {key: 0.0 for key in states}
        for e in events:
            key = (e.link, e.cell_id)
            states.setdefault(key, AdmittanceState())
            j_c = point_jacobian(chain, q_prev, e.link,
                                 calibrations[e.link].fields[e.cell_id].centroid)
            joint = e.link - 1
            gate = float(e.u @ j_c[:, joint])
            sign = math.copysign(1.0, gate) if abs(gate) > 1e-12 else 0.0
            force_in[key] = sign * e.force
        # one displacement per contact, superposed per joint
        per_joint: dict[int, list[Displacement]] = {}
        for key, state in states.items():
            dx = admittance_step(params, state, force_in.get(key, 0.0))
            joint = key[0] - 1
            per_joint.setdefault(joint, []).append(
                Displacement(frame=f"joint:{joint}", vector=np.array([dx])))
        dq = np.zeros(n)
        for joint, disps in per_joint.items():
            dq[joint] = compose_multi_contact(np.zeros(1), disps)[0]

        q_cmd = q_ref + dq
        qd = (q_cmd - q_prev) / ts
        ee = forward_kinematics(chain, q_cmd, chain.n_joints, np.zeros(3))
        readings = [frames[l][c] for l, c in cell_cols]
        rows[k] = [t, *q_cmd, *qd, *ee] + readings + list(dq)
        q_prev = q_cmd
    return Telemetry(columns=columns, rows=rows)
