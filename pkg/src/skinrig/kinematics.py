"""Serial-chain forward kinematics and contact-point Jacobians.

Joints are revolute, each described by a fixed rigid transform from its
parent frame and a rotation axis in its own frame.  Link i is the body
carried by joint i (1-based joint numbering matches link numbering; link 0
is the fixed base).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .transforms import (invert_transform, make_transform, rotation_about_axis,
                         rpy_matrix, transform_point, unit)

ROTATION_ORTHO_TOL = 1e-9
CHAIN_SCHEMA_KIND = "robot_chain"
CHAIN_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Joint:
    """One revolute joint: parent->joint rigid transform and rotation axis."""

    origin: np.ndarray          # 4x4 transform from parent frame
    axis: np.ndarray            # unit vector in the joint frame
    limits: tuple[float, float] = (-np.pi, np.pi)

    def __post_init__(self):
        r = self.origin[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > ROTATION_ORTHO_TOL * 10:
            raise ValueError("joint origin rotation is not orthonormal")
        if abs(np.linalg.norm(self.axis) - 1.0) > ROTATION_ORTHO_TOL:
            raise ValueError("joint axis must be unit length")
        if self.limits[0] > self.limits[1]:
            raise ValueError("joint limits reversed")


@dataclass
class RobotChain:
    joints: list[Joint]
    link_surfaces: dict[int, object] = field(default_factory=dict)
    name: str = "chain"

    def __post_init__(self):
        if not self.joints:
            raise ValueError("chain needs at least one joint")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def check_limits(self, q: np.ndarray) -> bool:
        return all(lo - 1e-12 <= qi <= hi + 1e-12
                   for qi, (lo, hi) in zip(q, (j.limits for j in self.joints)))

    def joint_frames(self, q: np.ndarray) -> list[np.ndarray]:
        """World transform of each link frame; entry i is link i+1's frame."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_joints,):
            raise ValueError(f"expected {self.n_joints} joint angles, got {q.shape}")
        frames = []
        t = np.eye(4)
        for joint, qi in zip(self.joints, q):
            t = t @ joint.origin @ make_transform(
                rotation_about_axis(joint.axis, qi), np.zeros(3))
            frames.append(t)
        return frames

    def link_frame(self, q: np.ndarray, link: int) -> np.ndarray:
        frames = self.joint_frames(q)
        if not 1 <= link <= self.n_joints:
            raise IndexError(f"link {link} out of range 1..{self.n_joints}")
        return frames[link - 1]


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    q_dot: np.ndarray | None = None
    timestamp: float = 0.0


def _as_q(state) -> np.ndarray:
    if isinstance(state, JointState):
        return np.asarray(state.q, dtype=float)
    return np.asarray(state, dtype=float)


def forward_kinematics(chain: RobotChain, state, link: int,
                       local_point) -> np.ndarray:
    """World position of a point fixed in link's frame."""
    frame = chain.link_frame(_as_q(state), link)
    return transform_point(frame, np.asarray(local_point, dtype=float))


def point_jacobian(chain: RobotChain, state, link: int,
                   local_point) -> np.ndarray:
    """3 x n positional Jacobian of a link-fixed point.

    Column j is w_j x (p - o_j) for joints up to the link; joints distal to
    the link cannot move the point, so their columns are zero.
    """
    q = _as_q(state)
    frames = chain.joint_frames(q)
    if not 1 <= link <= chain.n_joints:
        raise IndexError(f"link {link} out of range 1..{chain.n_joints}")
    p = transform_point(frames[link - 1], np.asarray(local_point, dtype=float))
    jac = np.zeros((3, chain.n_joints))
    t_parent = np.eye(4)
    for j in range(link):
        t_origin = t_parent @ chain.joints[j].origin
        omega = t_origin[:3, :3] @ chain.joints[j].axis
        o = t_origin[:3, 3]
        jac[:, j] = np.cross(omega, p - o)
        t_parent = frames[j]
    return jac


def world_to_link(chain: RobotChain, state, link: int, world_point) -> np.ndarray:
    frame = chain.link_frame(_as_q(state), link)
    return transform_point(invert_transform(frame), np.asarray(world_point, dtype=float))


# ---------------------------------------------------------------------------
# chain definition file (JSON, versioned)
# ---------------------------------------------------------------------------

def chain_to_dict(chain: RobotChain) -> dict:
    joints = []
    for j in chain.joints:
        joints.append({
            "xyz": list(map(float, j.origin[:3, 3])),
            "rotation": [list(map(float, row)) for row in j.origin[:3, :3]],
            "axis": list(map(float, j.axis)),
            "limits": list(map(float, j.limits)),
        })
    return {"kind": CHAIN_SCHEMA_KIND, "version": CHAIN_SCHEMA_VERSION,
            "name": chain.name, "joints": joints}


def save_chain(chain: RobotChain, path) -> None:
    with open(path, "w") as fh:
        json.dump(chain_to_dict(chain), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_chain(path) -> RobotChain:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read chain file {path}: {exc}") from exc
    if data.get("kind") != CHAIN_SCHEMA_KIND:
        raise ConfigError(f"not a chain file: kind={data.get('kind')!r}")
    if data.get("version") != CHAIN_SCHEMA_VERSION:
        raise ConfigError(f"unsupported chain schema version {data.get('version')!r}")
    joints = []
    for jd in data["joints"]:
        if "rotation" in jd:
            rot = np.array(jd["rotation"], dtype=float)
        else:
            rot = rpy_matrix(*jd.get("rpy", (0.0, 0.0, 0.0)))
        origin = make_transform(rot, np.array(jd["xyz"], dtype=float))
        joints.append(Joint(origin=origin, axis=unit(np.array(jd["axis"], dtype=float)),
                            limits=tuple(jd.get("limits", (-np.pi, np.pi)))))
    return RobotChain(joints=joints, name=data.get("name", "chain"))


def make_proxy_arm() -> RobotChain:
    """Six-revolute desk proxy with industrial-arm-like link lengths.

    Not a vendor model: the real arm's kinematic parameters are not public
    in a convenient form, so tests and demos run on this labeled proxy.
    Axis pattern z-y-y-x-y-x, base column 0.33 m, upper arm 0.33 m,
    forearm 0.335 m, wrist 0.08 m.
    """
    def joint(xyz, axis, limits=(-3.1, 3.1)):
        return Joint(origin=make_transform(np.eye(3), np.array(xyz, dtype=float)),
                     axis=np.array(axis, dtype=float), limits=limits)

    joints = [
        joint((0.0, 0.0, 0.155), (0.0, 0.0, 1.0)),
        joint((0.05, 0.0, 0.175), (0.0, 1.0, 0.0), (-1.8, 2.6)),
        joint((0.0, 0.0, 0.330), (0.0, 1.0, 0.0), (-2.4, 2.4)),
        joint((0.135, 0.0, 0.035), (1.0, 0.0, 0.0)),
        joint((0.200, 0.0, 0.0), (0.0, 1.0, 0.0), (-2.1, 2.1)),
        joint((0.080, 0.0, 0.0), (1.0, 0.0, 0.0)),
    ]
    return RobotChain(joints=joints, name="proxy-6r")
