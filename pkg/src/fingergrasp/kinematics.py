"""Serial-chain hand model, forward kinematics, Jacobians, and DLS IK.

Each digit is a chain of revolute joints with fixed parent offsets; the palm
frame is the planning frame. The IK solver is a damped least-squares
iteration on the combined position/orientation cost

    ||trans(T(q)) - t*||^2 + w_theta * angle(rot(T(q)), R*)^2

with joint-limit projection after every step and backtracking so the cost
is non-increasing over accepted iterates. It is fully deterministic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .geometry import (RigidTransform, axis_angle_from_rotation,
                       rotation_from_axis_angle, rotation_geodesic_angle)


@dataclass(frozen=True)
class Joint:
    """Revolute joint: fixed link transform, local rotation axis, limits."""

    parent_offset: RigidTransform
    axis: np.ndarray
    limits: tuple[float, float]
    velocity_limit: float = 4.0

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(a)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"joint axis must be unit length, |a| = {norm}")
        a.flags.writeable = False
        object.__setattr__(self, "axis", a)
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got {self.limits}")
        if self.velocity_limit <= 0:
            raise ValueError("velocity_limit must be > 0")


@dataclass(frozen=True)
class FingerChain:
    """Ordered revolute joints plus a fixed fingertip offset."""

    joints: tuple[Joint, ...]
    tip_offset: RigidTransform
    name: str = ""

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ValueError("a finger chain needs at least one joint")
        object.__setattr__(self, "joints", tuple(self.joints))

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    @property
    def velocity_limits(self) -> np.ndarray:
        return np.array([j.velocity_limit for j in self.joints])

    def clamp(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower_limits, self.upper_limits)

    def _check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if len(q) != self.dof:
            raise DimensionError(f"expected {self.dof} joint values, got {len(q)}")
        return q

    def forward_kinematics(self, q) -> RigidTransform:
        """Palm-frame fingertip pose at configuration q."""
        q = self._check_q(q)
        T = RigidTransform.identity()
        for joint, angle in zip(self.joints, q):
            T = T @ joint.parent_offset
            T = T @ RigidTransform(rotation_from_axis_angle(joint.axis, angle), np.zeros(3))
        return T @ self.tip_offset

    def joint_frames(self, q) -> list[RigidTransform]:
        """Frame of each joint after its parent offset, before its rotation."""
        q = self._check_q(q)
        frames = []
        T = RigidTransform.identity()
        for joint, angle in zip(self.joints, q):
            T = T @ joint.parent_offset
            frames.append(T)
            T = T @ RigidTransform(rotation_from_axis_angle(joint.axis, angle), np.zeros(3))
        return frames

    def jacobian(self, q) -> np.ndarray:
        """Geometric 6 x n Jacobian (rows: linear then angular tip velocity)."""
        q = self._check_q(q)
        frames = self.joint_frames(q)
        tip = self.forward_kinematics(q).translation
        J = np.zeros((6, self.dof))
        for j, (joint, frame) in enumerate(zip(self.joints, frames)):
            axis_world = frame.rotation @ joint.axis
            J[:3, j] = np.cross(axis_world, tip - frame.translation)
            J[3:, j] = axis_world
        return J

    def max_reach(self) -> float:
        """Upper bound on fingertip distance from the palm origin (total link length)."""
        reach = sum(float(np.linalg.norm(j.parent_offset.translation)) for j in self.joints)
        return reach + float(np.linalg.norm(self.tip_offset.translation))


@dataclass(frozen=True)
class HandModel:
    """Five serial digits expressed in the palm frame (the planning frame)."""

    fingers: tuple[FingerChain, ...]
    name: str = "hand"

    def __post_init__(self):
        if len(self.fingers) != 5:
            raise ValueError(f"hand model needs 5 fingers, got {len(self.fingers)}")
        object.__setattr__(self, "fingers", tuple(self.fingers))

    def finger(self, i: int) -> FingerChain:
        return self.fingers[i]


@dataclass(frozen=True)
class IkSettings:
    w_theta: float = 0.5
    damping: float = 0.01
    max_iters: int = 200
    pos_tol: float = 1e-4
    ang_tol: float = 1e-3
    step_scale: float = 1.0

    def __post_init__(self):
        if self.w_theta < 0:
            raise ValueError("w_theta must be >= 0")
        if self.damping <= 0:
            raise ValueError("damping must be > 0")
        if not 0 < self.step_scale <= 1:
            raise ValueError("step_scale must be in (0, 1]")


@dataclass(frozen=True)
class IkResult:
    q: np.ndarray
    pos_residual: float
    ang_residual: float
    converged: bool
    iterations: int
    cost: float
    cost_history: tuple[float, ...] | None = None


def _pose_error(chain: FingerChain, q: np.ndarray,
                target: RigidTransform) -> tuple[np.ndarray, np.ndarray]:
    pose = chain.forward_kinematics(q)
    e_pos = target.translation - pose.translation
    e_rot = axis_angle_from_rotation(target.rotation @ pose.rotation.T)
    return e_pos, e_rot


def ik_cost(chain: FingerChain, q, target: RigidTransform, w_theta: float) -> float:
    """Position-squared plus weighted squared-angle cost of a configuration."""
    e_pos, e_rot = _pose_error(chain, np.asarray(q, dtype=float), target)
    ang = float(np.linalg.norm(e_rot))
    return float(e_pos @ e_pos) + w_theta * ang * ang


def dls_ik(chain: FingerChain, target: RigidTransform, settings: IkSettings,
           q0, record_costs: bool = False) -> IkResult:
    """Damped least-squares IK toward a fingertip pose.

    Update: dq = J^T (J J^T + lambda^2 I)^-1 e, with stacked error
    e = [p* - p(q); w_theta * axisangle(R* R(q)^T)] and the angular Jacobian
    rows scaled by w_theta to match (otherwise a small orientation weight
    still spends degrees of freedom holding orientation, starving position
    progress). The step is scaled by step_scale, projected to joint limits,
    and halved (up to 8 times) whenever the cost would increase; if no
    acceptable step remains the iteration terminates. Non-convergence is
    reported, never raised.
    """
    q = chain.clamp(chain._check_q(q0))
    lam2 = settings.damping * settings.damping
    eye6 = np.eye(6)

    e_pos, e_rot = _pose_error(chain, q, target)
    pos_res = float(np.linalg.norm(e_pos))
    ang_res = float(np.linalg.norm(e_rot))
    cost = pos_res * pos_res + settings.w_theta * ang_res * ang_res

    history = [cost] if record_costs else None
    iterations = 0
    converged = pos_res < settings.pos_tol and ang_res < settings.ang_tol
    while not converged and iterations < settings.max_iters:
        iterations += 1
        J = chain.jacobian(q)
        J = np.vstack([J[:3], settings.w_theta * J[3:]])
        e = np.concatenate([e_pos, settings.w_theta * e_rot])
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * eye6, e)
        step = settings.step_scale
        accepted = False
        for _ in range(9):  # initial step plus up to 8 halvings
            q_try = chain.clamp(q + step * dq)
            e_pos_try, e_rot_try = _pose_error(chain, q_try, target)
            p = float(np.linalg.norm(e_pos_try))
            a = float(np.linalg.norm(e_rot_try))
            cost_try = p * p + settings.w_theta * a * a
            if cost_try <= cost:
                q, e_pos, e_rot = q_try, e_pos_try, e_rot_try
                pos_res, ang_res, cost = p, a, cost_try
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        if history is not None:
            history.append(cost)
        converged = pos_res < settings.pos_tol and ang_res < settings.ang_tol
    return IkResult(q=q, pos_residual=pos_res, ang_residual=ang_res,
                    converged=bool(converged), iterations=iterations, cost=cost,
                    cost_history=tuple(history) if history is not None else None)


# -- model serialization ------------------------------------------------------

def _transform_from_flat(values) -> RigidTransform:
    v = np.asarray(values, dtype=float).reshape(12)
    return RigidTransform(v[:9].reshape(3, 3), v[9:])


def _transform_to_flat(t: RigidTransform) -> list[float]:
    return list(t.rotation.reshape(9)) + list(t.translation)


def load_hand_model(path) -> HandModel:
    """Read and validate a hand model JSON file.

    Schema: {"schema_version": 1, "name": str, "fingers": [{"name": str,
    "joints": [{"offset": 12 floats (row-major rotation + translation),
    "axis": 3 floats, "limits": 2 floats, "vel_limit": float}, ...],
    "tip_offset": 12 floats}, x5]}. All chain invariants are checked on read.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != 1:
        raise ValueError(f"unsupported hand model schema_version: {doc.get('schema_version')}")
    fingers = []
    for spec in doc["fingers"]:
        joints = tuple(
            Joint(parent_offset=_transform_from_flat(j["offset"]),
                  axis=np.asarray(j["axis"], dtype=float),
                  limits=(float(j["limits"][0]), float(j["limits"][1])),
                  velocity_limit=float(j.get("vel_limit", 4.0)))
            for j in spec["joints"]
        )
        fingers.append(FingerChain(joints=joints,
                                   tip_offset=_transform_from_flat(spec["tip_offset"]),
                                   name=spec.get("name", "")))
    return HandModel(fingers=tuple(fingers), name=doc.get("name", "hand"))


def save_hand_model(hand: HandModel, path) -> None:
    doc = {
        "schema_version": 1,
        "name": hand.name,
        "fingers": [
            {
                "name": f.name,
                "joints": [
                    {
                        "offset": _transform_to_flat(j.parent_offset),
                        "axis": list(j.axis),
                        "limits": list(j.limits),
                        "vel_limit": j.velocity_limit,
                    }
                    for j in f.joints
                ],
                "tip_offset": _transform_to_flat(f.tip_offset),
            }
            for f in hand.fingers
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def default_hand_model() -> HandModel:
    """The synthetic five-digit model shipped with the package."""
    ref = resources.files("fingergrasp").joinpath("data/synthetic_hand.json")
    with resources.as_file(ref) as path:
        return load_hand_model(path)


# Pre-grasp flexion as range fractions per joint, per digit. The thumb is
# abducted away from the workspace center and the little finger stays almost
# straight; both otherwise hover inside the object region of desk scenes.
_OPEN_FRACTIONS = (
    (0.95, 0.15, 0.25, 0.20),
    (0.50, 0.25, 0.35, 0.30),
    (0.50, 0.25, 0.35, 0.30),
    (0.50, 0.25, 0.35, 0.30),
    (0.50, 0.15, 0.20, 0.15),
)


def open_hand_configuration(hand: HandModel,
                            fractions=_OPEN_FRACTIONS) -> list[np.ndarray]:
    """Joint vectors for the open pre-grasp posture, one per finger."""
    out = []
    for chain, frac in zip(hand.fingers, fractions):
        lo, hi = chain.lower_limits, chain.upper_limits
        f = np.resize(np.asarray(frac, dtype=float), chain.dof)
        out.append(lo + f * (hi - lo))
    return out
