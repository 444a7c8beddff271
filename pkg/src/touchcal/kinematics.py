"""Serial revolute chains: forward kinematics, position Jacobian and DLS inverse kinematics.

Chains are position-only: the fingertip is the end effector and its orientation
is left free, so every solve is a 3-row problem regardless of the joint count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class NoConvergence(RuntimeError):
    """IK did not reach the requested tolerance.

    Attributes:
        residual: best position error seen, in meters.
        q: the joint vector that achieved ``residual``.
    """

    def __init__(self, residual: float, q: np.ndarray, iterations: int):
        super().__init__(f"IK did not converge after {iterations} iterations "
                         f"(best residual {residual:.3e} m)")
        self.residual = residual
        self.q = q
        self.iterations = iterations


def rpy_to_matrix(rpy: Sequence[float]) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw (URDF convention): R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = rpy
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def matrix_to_rpy(R: np.ndarray) -> list[float]:
    pitch = math.atan2(-R[2, 0], math.hypot(R[0, 0], R[1, 0]))
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return [roll, pitch, yaw]


def axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_world = rotation @ p_local + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.rotation.T + self.translation

    def inverse_apply(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.translation) @ self.rotation

    def translated(self, t: Sequence[float]) -> "Pose":
        return Pose(self.rotation, self.translation + np.asarray(t, dtype=float))

    def to_dict(self) -> dict:
        return {"translation": self.translation.tolist(),
                "rotation_rpy": matrix_to_rpy(self.rotation)}

    @classmethod
    def from_dict(cls, d: dict | None) -> "Pose":
        if not d:
            return cls()
        return cls(rpy_to_matrix(d.get("rotation_rpy", (0.0, 0.0, 0.0))),
                   np.asarray(d.get("translation", (0.0, 0.0, 0.0)), dtype=float))


@dataclass(frozen=True)
class JointSpec:
    """One revolute joint; the origin transform is applied before the joint rotation."""

    axis: np.ndarray
    origin_translation: np.ndarray
    origin_rotation: np.ndarray
    limit_lo: float
    limit_hi: float
    name: str = ""

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise ContractError(f"joint {self.name!r}: axis must be a unit 3-vector")
        if not self.limit_lo < self.limit_hi:
            raise ContractError(f"joint {self.name!r}: limit_lo must be < limit_hi")
        if self.limit_lo < -2 * math.pi or self.limit_hi > 2 * math.pi:
            raise ContractError(f"joint {self.name!r}: limits must lie in [-2pi, 2pi]")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "origin_translation",
                           np.asarray(self.origin_translation, dtype=float))
        object.__setattr__(self, "origin_rotation",
                           np.asarray(self.origin_rotation, dtype=float))


@dataclass(frozen=True)
class KinematicChain:
    joints: tuple[JointSpec, ...]
    base_pose: Pose = field(default_factory=Pose)
    fingertip_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    postures: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ContractError("a chain needs at least one joint")
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "fingertip_offset",
                           np.asarray(self.fingertip_offset, dtype=float))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.limit_lo for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.limit_hi for j in self.joints])

    @property
    def names(self) -> list[str]:
        return [j.name or f"j{i}" for i, j in enumerate(self.joints)]

    def posture(self, name: str) -> np.ndarray:
        """Named posture from the chain file, falling back to mid-range."""
        if name in self.postures:
            return np.asarray(self.postures[name], dtype=float)
        return 0.5 * (self.lower + self.upper)

    def reach(self) -> float:
        """Upper bound on the fingertip distance from the first joint."""
        lengths = [np.linalg.norm(j.origin_translation) for j in self.joints[1:]]
        return float(sum(lengths) + np.linalg.norm(self.fingertip_offset))

    def with_base(self, base_pose: Pose) -> "KinematicChain":
        return replace(self, base_pose=base_pose)


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n_joints,):
        raise ContractError(f"expected {chain.n_joints} joint angles, got shape {q.shape}")
    return q


def _frames(chain: KinematicChain, q: np.ndarray):
    """Joint origins and world axes, plus the fingertip position."""
    R = chain.base_pose.rotation
    p = chain.base_pose.translation
    n = chain.n_joints
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    for i, joint in enumerate(chain.joints):
        p = p + R @ joint.origin_translation
        R = R @ joint.origin_rotation
        origins[i] = p
        axes[i] = R @ joint.axis
        R = R @ axis_rotation(joint.axis, q[i])
    tip = p + R @ chain.fingertip_offset
    return origins, axes, tip


def forward_kinematics(chain: KinematicChain, q) -> np.ndarray:
    """Fingertip position in the world frame."""
    q = _check_q(chain, q)
    return _frames(chain, q)[2]


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """3 x n position Jacobian; column j is axis_j x (tip - origin_j)."""
    q = _check_q(chain, q)
    origins, axes, tip = _frames(chain, q)
    return np.cross(axes, tip - origins).T


def clamp_to_limits(chain: KinematicChain, q) -> np.ndarray:
    return np.clip(np.asarray(q, dtype=float), chain.lower, chain.upper)


@dataclass(frozen=True)
class IkParams:
    damping: float = 0.05
    tolerance: float = 1e-4
    max_iterations: int = 200
    step_scale: float = 1.0

    def __post_init__(self):
        if self.damping < 0:
            raise ContractError("damping must be nonnegative")
        if self.tolerance <= 0:
            raise ContractError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be >= 1")
        if not 0 < self.step_scale <= 1:
            raise ContractError("step_scale must lie in (0, 1]")


def _solve3(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    # adjugate inverse of a symmetric positive definite 3x3
    a, b_, c = A[0, 0], A[0, 1], A[0, 2]
    d, e = A[1, 1], A[1, 2]
    f = A[2, 2]
    c00 = d * f - e * e
    c01 = c * e - b_ * f
    c02 = b_ * e - c * d
    c11 = a * f - c * c
    c12 = b_ * c - a * e
    c22 = a * d - b_ * b_
    det = a * c00 + b_ * c01 + c * c02
    x0 = (c00 * b[0] + c01 * b[1] + c02 * b[2]) / det
    x1 = (c01 * b[0] + c11 * b[1] + c12 * b[2]) / det
    x2 = (c02 * b[0] + c12 * b[1] + c22 * b[2]) / det
    return np.array([x0, x1, x2])


def solve_ik(chain: KinematicChain, target, seed, params: IkParams = IkParams()) -> np.ndarray:
    """Damped-least-squares position IK.

    Iterates ``q <- clamp(q + s * J^T (J J^T + lambda^2 I)^-1 e)`` from ``seed``.

    Raises:
        NoConvergence: the residual never dropped to ``params.tolerance``.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (3,):
        raise ContractError("target must be a 3-vector")
    q = clamp_to_limits(chain, _check_q(chain, seed))
    lo, hi = chain.lower, chain.upper
    lam2 = params.damping ** 2
    best_q, best_res = q, math.inf
    for _ in range(params.max_iterations + 1):
        origins, axes, tip = _frames(chain, q)
        e = target - tip
        res = math.sqrt(e @ e)
        if res < best_res:
            best_q, best_res = q, res
        if res <= params.tolerance:
            return q
        J = np.cross(axes, tip - origins).T
        A = J @ J.T
        A[0, 0] += lam2
        A[1, 1] += lam2
        A[2, 2] += lam2
        dq = J.T @ _solve3(A, e)
        q = np.clip(q + params.step_scale * dq, lo, hi)
    raise NoConvergence(best_res, best_q, params.max_iterations)


def chain_from_dict(d: dict) -> KinematicChain:
    joints = []
    for i, jd in enumerate(d["joints"]):
        lo, hi = jd["limits"]
        joints.append(JointSpec(
            axis=np.asarray(jd["axis"], dtype=float),
            origin_translation=np.asarray(jd.get("translation", (0, 0, 0)), dtype=float),
            origin_rotation=rpy_to_matrix(jd.get("rotation_rpy", (0, 0, 0))),
            limit_lo=float(lo), limit_hi=float(hi),
            name=jd.get("name", f"j{i}"),
        ))
    return KinematicChain(
        joints=tuple(joints),
        base_pose=Pose.from_dict(d.get("base_pose")),
        fingertip_offset=np.asarray(d.get("fingertip_offset", (0, 0, 0)), dtype=float),
        postures={k: list(map(float, v)) for k, v in d.get("postures", {}).items()},
    )


def chain_to_dict(chain: KinematicChain) -> dict:
    return {
        "joints": [{
            "name": j.name,
            "axis": j.axis.tolist(),
            "translation": j.origin_translation.tolist(),
            "rotation_rpy": matrix_to_rpy(j.origin_rotation),
            "limits": [j.limit_lo, j.limit_hi],
        } for j in chain.joints],
        "base_pose": chain.base_pose.to_dict(),
        "fingertip_offset": chain.fingertip_offset.tolist(),
        "postures": dict(chain.postures),
    }


def load_chain(path: str | Path) -> KinematicChain:
    with open(path) as f:
        return chain_from_dict(json.load(f))
