"""Rigid transforms, point clouds, boxes and ICP registration."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aesplan import kernels
from aesplan.errors import DegenerateGeometry, EmptyInput, ShapeError

ORTHO_TOL = 1e-9


def rotation_about_axis(axis, angle):
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(rotation):
    """Angle of a rotation matrix, in [0, pi]."""
    c = (np.trace(rotation) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _project_rotation(m):
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True, eq=False)
class Pose3D:
    """Rigid pose: ``p_world = rotation @ p_local + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose must be finite")
        if np.linalg.norm(r.T @ r - np.eye(3)) > 1e-6 or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_axis_angle(cls, axis, angle, translation=(0.0, 0.0, 0.0)):
        return cls(rotation_about_axis(axis, angle), translation)

    @classmethod
    def from_xyz_yaw(cls, x, y, z, yaw):
        return cls(rot_z(yaw), (x, y, z))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def yaw(self):
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def compose(self, other: "Pose3D") -> "Pose3D":
        """``self * other``: apply ``other`` first, then ``self``."""
        return Pose3D(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose3D":
        rt = self.rotation.T
        return Pose3D(rt, -rt @ self.translation)

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def orthonormality_error(self):
        return float(np.linalg.norm(self.rotation.T @ self.rotation - np.eye(3)))

    def distance(self, other: "Pose3D"):
        """(translation error in m, rotation error in rad) between two poses."""
        dt = float(np.linalg.norm(self.translation - other.translation))
        return dt, rotation_angle(self.rotation.T @ other.rotation)

    def allclose(self, other: "Pose3D", atol=1e-9):
        return bool(np.allclose(self.rotation, other.rotation, atol=atol)
                    and np.allclose(self.translation, other.translation, atol=atol))

    def to_json(self):
        return {"rotation": [float(v) for v in self.rotation.ravel()],
                "translation": [float(v) for v in self.translation]}

    @classmethod
    def from_json(cls, data):
        r = np.asarray(data["rotation"], dtype=float)
        if r.size != 9 or len(data["translation"]) != 3:
            raise ShapeError("pose JSON needs 9 rotation and 3 translation values")
        # re-orthonormalise values that went through a text round trip
        return cls(_project_rotation(r.reshape(3, 3)), data["translation"])


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    frame_id: str = "world"

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        if p.size == 0:
            p = p.reshape(0, 3)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ShapeError(f"points must be (N, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)

    def bounds(self):
        return self.points.min(axis=0), self.points.max(axis=0)


@dataclass(frozen=True, eq=False)
class Box3D:
    """Oriented box given by its centre pose and positive half extents."""

    center_pose: Pose3D
    half_extents: np.ndarray

    def __post_init__(self):
        h = np.array(self.half_extents, dtype=float).reshape(3)
        if not np.all(h > 0):
            raise ValueError("half_extents must be strictly positive")
        h.setflags(write=False)
        object.__setattr__(self, "half_extents", h)

    @classmethod
    def upright(cls, center, half_extents, yaw=0.0):
        return cls(Pose3D(rot_z(yaw), center), half_extents)

    @property
    def center(self):
        return self.center_pose.translation

    @property
    def top(self):
        """Highest z of the box."""
        return float(self.corners()[:, 2].max())

    @property
    def bottom(self):
        return float(self.corners()[:, 2].min())

    def corners(self):
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center_pose.apply(signs * self.half_extents)

    def signed_distance(self, points):
        """Signed distance (negative inside) of each point to the box."""
        points = np.asarray(points, dtype=float)
        sd = kernels.box_signed_distance(points, self.center_pose.rotation[None],
                                         self.center[None], self.half_extents[None])
        return sd[..., 0]

    def contains_xy(self, xy):
        """Whether horizontal positions fall inside the box's footprint at mid height."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        pts = np.column_stack([xy, np.full(len(xy), self.center[2])])
        return self.signed_distance(pts) <= 0.0

    def inflated(self, margin):
        return Box3D(self.center_pose, self.half_extents + margin)

    def to_json(self):
        return {"center_pose": self.center_pose.to_json(),
                "half_extents": [float(v) for v in self.half_extents]}

    @classmethod
    def from_json(cls, data):
        return cls(Pose3D.from_json(data["center_pose"]), data["half_extents"])


def stack_boxes(boxes):
    """Arrays (rotations, centres, half extents) for the kernel calls."""
    if not boxes:
        return np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros((0, 3))
    return (np.stack([b.center_pose.rotation for b in boxes]),
            np.stack([b.center for b in boxes]),
            np.stack([b.half_extents for b in boxes]))


def transform_cloud(cloud: PointCloud, pose: Pose3D) -> PointCloud:
    if len(cloud) == 0:
        raise EmptyInput("cannot transform an empty cloud")
    return PointCloud(pose.apply(cloud.points), cloud.frame_id)


@dataclass
class IcpParams:
    max_iters: int = 100
    tol: float = 1e-6
    cell_size: float | None = None


@dataclass
class IcpResult:
    pose: Pose3D
    fitness: float
    converged: bool
    iterations: int
    residuals: list

    def __iter__(self):
        # allows ``pose, fitness = icp_register(...)``
        return iter((self.pose, self.fitness))


def _kabsch(src, dst):
    """Least-squares rigid transform taking ``src`` onto ``dst``."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, mu_d - r @ mu_s


def check_nondegenerate(points, name="cloud"):
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    # collinear or coincident sets leave at most one non-zero singular value
    if len(s) < 2 or s[1] / np.sqrt(len(points)) < 1e-9:
        raise DegenerateGeometry(f"{name} is collinear or coincident")


def icp_register(template: PointCloud, observed: PointCloud, initial: Pose3D | None = None,
                 params: IcpParams | None = None) -> IcpResult:
    """Point-to-point ICP aligning ``template`` onto ``observed``.

    Returns the pose mapping template coordinates into the observed frame and
    the RMS nearest-neighbour residual. Non-convergence is reported through
    ``converged`` rather than raised.
    """
    params = params or IcpParams()
    initial = initial or Pose3D.identity()
    if len(template) < 10 or len(observed) < 10:
        raise EmptyInput("ICP needs at least 10 points in each cloud")
    check_nondegenerate(template.points, "template")
    check_nondegenerate(observed.points, "observed")

    index = kernels.NeighborIndex(observed.points, params.cell_size)
    src = template.points
    dst = observed.points
    r = initial.rotation.copy()
    t = initial.translation.copy()

    moved = src @ r.T + t
    nn, d2 = index.query(moved)
    rms = float(np.sqrt(d2.mean()))
    residuals = [rms]
    best = (r, t, rms)
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        r, t = _kabsch(src, dst[nn])
        moved = src @ r.T + t
        nn, d2 = index.query(moved)
        new_rms = float(np.sqrt(d2.mean()))
        residuals.append(new_rms)
        if new_rms <= best[2]:
            best = (r, t, new_rms)
        if abs(rms - new_rms) < params.tol:
            converged = True
            rms = new_rms
            break
        rms = new_rms
    r, t, fit = best
    return IcpResult(Pose3D(_project_rotation(r), t), fit, converged, it, residuals)


def voxel_downsample(points, voxel_size):
    """Centroid of the points in each occupied voxel, ordered by voxel key."""
    points = np.asarray(points, dtype=float)
    keys = np.floor(points / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, points)
    return sums / counts[:, None]


def compose_template(scans, voxel_size=0.05, frame_id="template") -> PointCloud:
    """Merge ``(cloud, pose)`` scans into one voxel-downsampled cloud.

    Each pose maps its scan into the common template frame.
    """
    if not scans:
        raise EmptyInput("compose_template needs at least one scan")
    merged = np.concatenate([pose.apply(cloud.points) for cloud, pose in scans if len(cloud)])
    return PointCloud(voxel_downsample(merged, voxel_size), frame_id)


# --- file formats -----------------------------------------------------------

def write_ply(path, cloud: PointCloud):
    path = Path(path)
    lines = ["ply", "format ascii 1.0", f"comment frame_id {cloud.frame_id}",
             f"element vertex {len(cloud)}", "property float x", "property float y",
             "property float z", "end_header"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
    path.write_text("\n".join(lines) + "\n")


def read_ply(path) -> PointCloud:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n = None
    frame = "world"
    props = []
    i = 1
    while i < len(text):
        line = text[i].strip()
        i += 1
        if line.startswith("format") and "ascii" not in line:
            raise ValueError("only ASCII PLY is supported")
        if line.startswith("comment frame_id"):
            frame = line.split(maxsplit=2)[2]
        elif line.startswith("element vertex"):
            n = int(line.split()[2])
        elif line.startswith("property") and n is not None:
            props.append(line.split()[-1])
        elif line == "end_header":
            break
    if n is None:
        raise ValueError(f"{path}: no vertex element")
    cols = [props.index(a) for a in ("x", "y", "z")]
    rows = [text[i + k].split() for k in range(n)]
    pts = np.array([[float(r[c]) for c in cols] for r in rows]).reshape(n, 3)
    return PointCloud(pts, frame)


def write_cloud_csv(path, cloud: PointCloud, header=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(["x", "y", "z"])
        for row in cloud.points.tolist():
            w.writerow([repr(v) for v in row])


def read_cloud_csv(path, frame_id="world") -> PointCloud:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row[:3]])
            except ValueError:
                if rows:
                    raise
                # header line
    return PointCloud(np.array(rows).reshape(-1, 3), frame_id)


def save_pose(path, pose: Pose3D):
    Path(path).write_text(json.dumps(pose.to_json()))


def load_pose(path) -> Pose3D:
    return Pose3D.from_json(json.loads(Path(path).read_text()))
