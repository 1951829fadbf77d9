"""Forward/inverse kinematics of a four-joint excavator arm.

Zero-pose convention: at ``q = 0`` the boom, stick and bucket all lie
horizontal, pointing along +x from the boom pivot, which sits on the swing
axis at ``base_height``. Boom is measured from horizontal (positive raises),
stick relative to boom, bucket relative to stick. The bucket orientation
reported by FK is the absolute link angle ``boom + stick + bucket``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from aesplan import kernels
from aesplan.errors import LimitViolation, Unreachable

JOINTS = ("swing", "boom", "stick", "bucket")


@dataclass(frozen=True)
class JointConfig:
    swing: float = 0.0
    boom: float = 0.0
    stick: float = 0.0
    bucket: float = 0.0

    def as_array(self):
        return np.array([self.swing, self.boom, self.stick, self.bucket], dtype=float)

    @classmethod
    def from_array(cls, a):
        return cls(*(float(v) for v in a))

    def __iter__(self):
        return iter((self.swing, self.boom, self.stick, self.bucket))


def _default_limits():
    return {"swing": (-math.pi, math.pi), "boom": (-0.6, 1.1),
            "stick": (-2.4, -0.3), "bucket": (-2.8, 0.5)}


def _default_speeds():
    return {"swing": 0.28, "boom": 0.45, "stick": 0.6, "bucket": 0.7}


@dataclass(frozen=True)
class ArmModel:
    """Geometry and limits of the arm. Defaults describe a compact machine."""

    base_height: float = 1.4
    boom_length: float = 3.1
    stick_length: float = 1.6
    bucket_length: float = 0.9
    bucket_capacity: float = 0.25
    bucket_width: float = 0.75
    joint_limits: dict = field(default_factory=_default_limits)
    joint_speed_limits: dict = field(default_factory=_default_speeds)

    def __post_init__(self):
        for name in ("base_height", "boom_length", "stick_length", "bucket_length", "bucket_capacity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        limits = {j: tuple(float(v) for v in self.joint_limits[j]) for j in JOINTS}
        speeds = {j: float(self.joint_speed_limits[j]) for j in JOINTS}
        for j in JOINTS:
            if not limits[j][0] < limits[j][1]:
                raise ValueError(f"joint limit for {j} must satisfy min < max")
            if not speeds[j] > 0:
                raise ValueError(f"speed limit for {j} must be positive")
        object.__setattr__(self, "joint_limits", limits)
        object.__setattr__(self, "joint_speed_limits", speeds)

    @property
    def lower(self):
        return np.array([self.joint_limits[j][0] for j in JOINTS])

    @property
    def upper(self):
        return np.array([self.joint_limits[j][1] for j in JOINTS])

    @property
    def speeds(self):
        return np.array([self.joint_speed_limits[j] for j in JOINTS])

    @property
    def max_reach(self):
        return self.boom_length + self.stick_length + self.bucket_length

    def to_json(self):
        d = asdict(self)
        d["joint_limits"] = {k: list(v) for k, v in self.joint_limits.items()}
        return d

    @classmethod
    def from_json(cls, data):
        return cls(**data)

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def forward_kinematics(model: ArmModel, q: JointConfig):
    """Bucket tip position (world frame) and absolute bucket angle."""
    pts = kernels.arm_points(np.atleast_2d(q.as_array()), model.base_height,
                             model.boom_length, model.stick_length, model.bucket_length)
    return pts[0, 2].copy(), q.boom + q.stick + q.bucket


def arm_points(model: ArmModel, configs):
    """Boom tip, stick tip and bucket tip for an (N, 4) array of configs."""
    configs = np.atleast_2d(np.asarray(configs, dtype=float))
    return kernels.arm_points(configs, model.base_height, model.boom_length,
                              model.stick_length, model.bucket_length)


def tip_positions(model: ArmModel, configs):
    return arm_points(model, configs)[:, 2]


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def inverse_kinematics(model: ArmModel, tip_target, bucket_angle_target, enforce_limits=True) -> JointConfig:
    """Elbow-up IK for a tip position and absolute bucket angle.

    Raises ``Unreachable`` if the wrist falls outside the boom/stick annulus and
    ``LimitViolation`` if the solution leaves the joint limits (unless
    ``enforce_limits`` is false).
    """
    x, y, z = (float(v) for v in tip_target)
    phi = float(bucket_angle_target)
    swing = math.atan2(y, x)
    r = math.hypot(x, y)
    wr = r - model.bucket_length * math.cos(phi)
    wz = z - model.base_height - model.bucket_length * math.sin(phi)
    l1, l2 = model.boom_length, model.stick_length
    d2 = wr * wr + wz * wz
    d = math.sqrt(d2)
    eps = 1e-12
    if d > l1 + l2 + eps or d < abs(l1 - l2) - eps:
        raise Unreachable(f"wrist distance {d:.4f} m outside [{abs(l1 - l2):.4f}, {l1 + l2:.4f}]")
    c = (d2 - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    # stick folds below the boom on the working branch
    stick = -math.acos(min(1.0, max(-1.0, c)))
    boom = math.atan2(wz, wr) - math.atan2(l2 * math.sin(stick), l1 + l2 * math.cos(stick))
    bucket = _wrap(phi - boom - stick)
    q = JointConfig(swing, boom, stick, bucket)
    if enforce_limits:
        bad = violated_joints(model, q)
        if bad:
            raise LimitViolation(bad, q)
    return q


def violated_joints(model: ArmModel, q: JointConfig):
    a = q.as_array()
    return [j for j, v, lo, hi in zip(JOINTS, a, model.lower, model.upper) if not lo <= v <= hi]


def is_valid(model: ArmModel, q: JointConfig) -> bool:
    """True iff every joint lies inside its closed limit interval."""
    return not violated_joints(model, q)


def interpolate(q_start: JointConfig, q_end: JointConfig, samples: int):
    a, b = q_start.as_array(), q_end.as_array()
    s = np.linspace(0.0, 1.0, samples)[:, None]
    return a + s * (b - a)


def cartesian_interpolate(model: ArmModel, q_start: JointConfig, q_end: JointConfig, samples: int):
    """Configs moving the tip on a straight line, bucket angle blended linearly."""
    p0, a0 = forward_kinematics(model, q_start)
    p1, a1 = forward_kinematics(model, q_end)
    out = []
    for s in np.linspace(0.0, 1.0, samples):
        q = inverse_kinematics(model, p0 + s * (p1 - p0), a0 + s * (a1 - a0), enforce_limits=False)
        out.append(q.as_array())
    return np.array(out)


def footprint_from_tips(tips, heightmap, bucket_width=0.0, directions=None):
    """Cells under the given tip positions with their depth below the surface.

    Returns a list of ``((ix, iy), depth)`` in first-visit order; a cell hit by
    several samples keeps its deepest value. With ``bucket_width`` > 0 the
    footprint extends sideways across the bucket, perpendicular to
    ``directions`` (horizontal travel direction per sample).
    """
    tips = np.asarray(tips, dtype=float)
    n = max(1, int(round(bucket_width / heightmap.cell_size)))
    offsets = [((k + 0.5) / n - 0.5) * bucket_width for k in range(n)]
    if directions is None:
        directions = np.gradient(tips[:, :2], axis=0) if len(tips) > 1 else np.zeros((1, 2))
    depth_by_cell = {}
    for p, d in zip(tips, directions):
        norm = math.hypot(d[0], d[1])
        side = np.array([-d[1], d[0]]) / norm if norm > 1e-12 else np.array([-p[1], p[0]]) / max(math.hypot(p[0], p[1]), 1e-12)
        for off in offsets:
            xy = p[:2] + off * side
            cell = heightmap.cell_of(xy)
            if cell is None:
                continue
            depth = heightmap.elevation[cell[1], cell[0]] - p[2]
            if depth > 0:
                if cell not in depth_by_cell or depth > depth_by_cell[cell]:
                    depth_by_cell[cell] = depth
    return [(c, float(dd)) for c, dd in depth_by_cell.items()]


def bucket_sweep_footprint(model: ArmModel, q_start: JointConfig, q_end: JointConfig, samples: int,
                           heightmap, interpolation="joint", bucket_width=0.0):
    """Heightmap cells the bucket tip passes below the surface.

    ``interpolation`` is ``"joint"`` (linear in joint space) or
    ``"cartesian"`` (straight tip line).
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if interpolation == "joint":
        configs = interpolate(q_start, q_end, samples)
    elif interpolation == "cartesian":
        configs = cartesian_interpolate(model, q_start, q_end, samples)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return footprint_from_tips(tip_positions(model, configs), heightmap, bucket_width)
