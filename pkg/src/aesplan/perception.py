"""Simulated perception.

Produces the same outputs a camera/Lidar stack would hand the planner (rock
boxes, label mask, material class, truck pose, intruder flag) from ground
truth plus configurable noise.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from aesplan.errors import PoseRejected, ShapeError
from aesplan.geometry import Box3D, IcpParams, PointCloud, Pose3D, compose_template, icp_register


class MaterialClass(enum.IntEnum):
    DRY_SOIL = 0
    WET_SOIL = 1
    STONE = 2
    MUD_STONE = 3
    PHOSPHORUS_POWDER = 4
    PHOSPHORUS_LUMP = 5
    TITANIUM = 6
    TITANIUM_PHOSPHORUS_MIX = 7


@dataclass
class NoiseParams:
    miss_rate: float = 0.02
    fp_rate: float = 0.01
    sigma_pos: float = 0.03
    sigma_ext: float = 0.05
    scan_sigma: float = 0.01
    texture_sigma: float = 0.1

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class PerceptionFrame:
    rock_boxes: list
    label_mask: np.ndarray
    texture_class: MaterialClass
    truck_pose: Pose3D | None
    intruder_detected: bool
    timestamp: float
    obstacle_boxes: list = field(default_factory=list)

    def to_json(self):
        return {
            "timestamp": self.timestamp,
            "rock_boxes": [b.to_json() for b in self.rock_boxes],
            "obstacle_boxes": [b.to_json() for b in self.obstacle_boxes],
            "label_mask": np.asarray(self.label_mask).tolist(),
            "texture_class": self.texture_class.name,
            "truck_pose": self.truck_pose.to_json() if self.truck_pose is not None else None,
            "intruder_detected": bool(self.intruder_detected),
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            rock_boxes=[Box3D.from_json(b) for b in d["rock_boxes"]],
            label_mask=np.array(d["label_mask"], dtype=np.int8),
            texture_class=MaterialClass[d["texture_class"]],
            truck_pose=Pose3D.from_json(d["truck_pose"]) if d["truck_pose"] is not None else None,
            intruder_detected=bool(d["intruder_detected"]),
            timestamp=float(d["timestamp"]),
            obstacle_boxes=[Box3D.from_json(b) for b in d.get("obstacle_boxes", [])],
        )


@dataclass(frozen=True)
class EmergencyStop:
    timestamp: float
    reason: str = "intruder"


def _perturb_box(box, noise, rng):
    # sigma_pos is the RMS length of the 3D centre offset, so each axis gets sigma_pos / sqrt(3)
    dc = rng.normal(0.0, 1.0, 3) * (noise.sigma_pos / np.sqrt(3.0))
    dh = rng.normal(0.0, 1.0, 3) * noise.sigma_ext
    half = np.maximum(box.half_extents + dh, 0.1 * box.half_extents)
    return Box3D(Pose3D(box.center_pose.rotation, box.center + dc), half)


def detect_rocks(ground_truth, noise: NoiseParams, rng_seed, region=None):
    """Noisy detections of the true boxes in ``ground_truth``.

    Each rock is dropped with probability ``miss_rate``; survivors get
    Gaussian centre noise of RMS length ``sigma_pos`` and per-axis extent
    noise ``sigma_ext``. A Poisson(``fp_rate``) number of spurious
    boxes appear inside ``region`` = (xmin, ymin, xmax, ymax) when given.
    """
    rng = np.random.default_rng(rng_seed)
    out = []
    for box in ground_truth:
        missed = rng.random() < noise.miss_rate
        perturbed = _perturb_box(box, noise, rng)
        if not missed:
            out.append(perturbed)
    if region is not None and noise.fp_rate > 0:
        for _ in range(rng.poisson(noise.fp_rate)):
            xmin, ymin, xmax, ymax = region
            half = rng.uniform(0.2, 0.5, 3)
            c = (rng.uniform(xmin, xmax), rng.uniform(ymin, ymax), half[2])
            out.append(Box3D.upright(c, half, rng.uniform(-np.pi, np.pi)))
    return out


def default_centroids(n_classes=len(MaterialClass)):
    """Class centroids spaced exactly 1.0 apart."""
    return np.eye(n_classes) / np.sqrt(2.0)


def texture_features(material, centroids, sigma, rng):
    centroids = np.asarray(centroids, dtype=float)
    return centroids[int(material)] + rng.normal(0.0, sigma, centroids.shape[1])


def classify_texture(patch_features, centroids) -> MaterialClass:
    """Nearest-centroid class; ties go to the lowest class index."""
    f = np.asarray(patch_features, dtype=float)
    c = np.asarray(centroids, dtype=float)
    if c.ndim != 2 or f.shape != (c.shape[1],):
        raise ShapeError(f"feature shape {f.shape} does not match centroids {c.shape}")
    d = np.sum((c - f) ** 2, axis=1)
    return MaterialClass(int(np.argmin(d)))


def default_rejection_threshold(scan_sigma):
    return 3.0 * max(np.sqrt(3.0) * scan_sigma, 0.01)


def estimate_truck_pose(template: PointCloud, scan: PointCloud, last_pose: Pose3D,
                        params: IcpParams | None = None, threshold=None) -> Pose3D:
    """Register the truck template to a scan starting from ``last_pose``.

    Raises ``PoseRejected`` when the RMS residual exceeds ``threshold``.
    """
    threshold = default_rejection_threshold(0.01) if threshold is None else threshold
    res = icp_register(template, scan, last_pose, params)
    if res.fitness > threshold:
        raise PoseRejected(res.fitness, threshold)
    return res.pose


class TruckTracker:
    """Keeps the last accepted truck pose as the next ICP initial guess."""

    def __init__(self, template: PointCloud, initial_pose: Pose3D, threshold=None, params=None):
        self.template = template
        self.last_pose = initial_pose
        self.threshold = threshold
        self.params = params

    def update(self, scan: PointCloud) -> Pose3D:
        pose = estimate_truck_pose(self.template, scan, self.last_pose, self.params, self.threshold)
        self.last_pose = pose
        return pose


def watchdog(frame: PerceptionFrame):
    if frame.intruder_detected:
        return EmergencyStop(frame.timestamp)
    return None


# --- synthetic truck --------------------------------------------------------

def _face(center, u, v, nu, nv, spacing, normal, rng):
    # random rather than lattice sampling: lattices give ICP aliased minima
    n = max(4, int(round(nu * nv / spacing ** 2)))
    a = rng.uniform(-nu / 2, nu / 2, n)
    b = rng.uniform(-nv / 2, nv / 2, n)
    pts = np.asarray(center) + a[:, None] * u + b[:, None] * v
    return pts, np.tile(normal, (n, 1))


def box_surface(center, dims, spacing, skip_top=False, skip_bottom=True, rng=None):
    """Points and outward normals sampled uniformly on the faces of an axis-aligned box."""
    rng = np.random.default_rng(0) if rng is None else rng
    cx, cy, cz = center
    lx, ly, lz = dims
    ex, ey, ez = np.eye(3)
    faces = [
        ((cx + lx / 2, cy, cz), ey, ez, ly, lz, ex),
        ((cx - lx / 2, cy, cz), ey, ez, ly, lz, -ex),
        ((cx, cy + ly / 2, cz), ex, ez, lx, lz, ey),
        ((cx, cy - ly / 2, cz), ex, ez, lx, lz, -ey),
    ]
    if not skip_top:
        faces.append(((cx, cy, cz + lz / 2), ex, ey, lx, ly, ez))
    if not skip_bottom:
        faces.append(((cx, cy, cz - lz / 2), ex, ey, lx, ly, -ez))
    pts, nrm = zip(*(_face(c, u, v, nu, nv, spacing, n, rng) for c, u, v, nu, nv, n in faces))
    return np.concatenate(pts), np.concatenate(nrm)


def truck_surface(bed_dims=(3.0, 2.0, 1.0), bed_height=1.0, spacing=0.1, seed=0):
    """Truck frame: bed centred at the origin in xy, floor at ``bed_height``.

    An open-top bed plus a cab box ahead of it (+x), so the shape has no
    symmetry that would confuse registration.
    """
    rng = np.random.default_rng(seed)
    l, w, h = bed_dims
    bed_pts, bed_n = box_surface((0.0, 0.0, bed_height + h / 2), (l, w, h), spacing, skip_top=True,
                                 skip_bottom=False, rng=rng)
    floor_ = bed_pts[:, 2] < bed_height + 1e-9
    bed_n[floor_] = (0.0, 0.0, 1.0)
    cab_len = 1.2
    cab_pts, cab_n = box_surface((l / 2 + cab_len / 2 + 0.1, 0.0, (bed_height + h + 0.6) / 2),
                                 (cab_len, w * 0.9, bed_height + h + 0.6), spacing, rng=rng)
    return np.concatenate([bed_pts, cab_pts]), np.concatenate([bed_n, cab_n])


def truck_views(points, normals, n_views=4, distance=8.0, height=4.0):
    """Partial scans of the truck from viewpoints around it.

    Each view keeps the points facing its sensor and expresses them in the
    sensor frame. Returns a list of (PointCloud, sensor pose in truck frame).
    """
    views = []
    for k in range(n_views):
        ang = 2 * np.pi * k / n_views + np.pi / 4
        eye = np.array([distance * np.cos(ang), distance * np.sin(ang), height])
        visible = np.einsum("ij,ij->i", normals, eye - points) > 0
        sensor = Pose3D.from_xyz_yaw(*eye, ang + np.pi)
        local = sensor.inverse().apply(points[visible])
        views.append((PointCloud(local, f"view{k}"), sensor))
    return views


def build_truck_template(bed_dims=(3.0, 2.0, 1.0), bed_height=1.0, spacing=0.1, voxel=0.1):
    pts, nrm = truck_surface(bed_dims, bed_height, spacing)
    return compose_template(truck_views(pts, nrm), voxel)


def scan_truck(template: PointCloud, truck_pose: Pose3D, sigma, rng):
    pts = truck_pose.apply(template.points)
    if sigma > 0:
        pts = pts + rng.normal(0.0, sigma, pts.shape)
    return PointCloud(pts, "lidar")


def clutter_scan(n, region, rng, z_range=(0.0, 2.5)):
    xmin, ymin, xmax, ymax = region
    pts = np.column_stack([rng.uniform(xmin, xmax, n), rng.uniform(ymin, ymax, n), rng.uniform(*z_range, n)])
    return PointCloud(pts, "lidar")


@dataclass
class PerceptionSim:
    """Frame generator over a ground-truth world snapshot.

    Randomness is keyed by ``(seed, frame index)`` so any frame can be
    reproduced in isolation.
    """

    noise: NoiseParams
    seed: int
    material: MaterialClass = MaterialClass.DRY_SOIL
    centroids: np.ndarray = field(default_factory=default_centroids)
    truck_template: PointCloud | None = None
    tracker: TruckTracker | None = None
    frame_index: int = 0

    def observe(self, t, heightmap, obstacles=(), truck_pose=None, intruder=False, fp_region=None,
                estimate_pose=True):
        k = self.frame_index
        self.frame_index += 1
        rng = np.random.default_rng([self.seed, k])
        rocks = detect_rocks(heightmap.rock_boxes(), self.noise, [self.seed, k, 1], fp_region)
        obs = detect_rocks(list(obstacles), NoiseParams(0.0, 0.0, self.noise.sigma_pos, 0.0),
                           [self.seed, k, 2])
        texture = classify_texture(texture_features(self.material, self.centroids, self.noise.texture_sigma, rng),
                                   self.centroids)
        est = None
        if estimate_pose and self.tracker is not None:
            if truck_pose is not None:
                scan = scan_truck(self.tracker.template, truck_pose, self.noise.scan_sigma, rng)
            else:
                lp = self.tracker.last_pose.translation
                scan = clutter_scan(len(self.tracker.template), (lp[0] - 3, lp[1] - 3, lp[0] + 3, lp[1] + 3), rng)
            try:
                est = self.tracker.update(scan)
            except PoseRejected:
                est = None
        return PerceptionFrame(rocks, heightmap.labels.copy(), texture, est, bool(intruder), float(t), obs)


def noise_to_json(noise: NoiseParams):
    return asdict(noise)
