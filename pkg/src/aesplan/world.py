"""Ground-truth simulation state the planner acts on.

The excavator sits at the origin; the swing axis is +z. The world owns the
heightmap, static obstacles, the truck (with swaps when full), intruder
windows, optional material feed and the material tallies used for the
conservation check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from aesplan.geometry import Box3D, Pose3D
from aesplan.terrain import HeightMap, dump, place_rock

TICK_HZ = 10


@dataclass(frozen=True)
class WorkingZone:
    """Swing-reachable annulus intersected with the material rectangle."""

    r_min: float
    r_max: float
    rect: tuple

    def contains(self, xy):
        p = np.asarray(xy, dtype=float)
        r = np.hypot(p[..., 0], p[..., 1])
        xmin, ymin, xmax, ymax = self.rect
        return ((r >= self.r_min) & (r <= self.r_max) & (p[..., 0] >= xmin) & (p[..., 0] <= xmax)
                & (p[..., 1] >= ymin) & (p[..., 1] <= ymax))

    def intersects_box(self, box: Box3D, samples=7):
        """True if any point of the box footprint (sampled on a grid) lies in the zone."""
        u = np.linspace(-1.0, 1.0, samples)
        gx, gy = np.meshgrid(u, u)
        local = np.stack([gx.ravel() * box.half_extents[0], gy.ravel() * box.half_extents[1],
                          np.zeros(gx.size)], axis=1)
        pts = box.center_pose.apply(local)[:, :2]
        return bool(np.any(self.contains(pts)))

    def project(self, xy, inner_margin=0.0, margin=0.05):
        """Nearest-ish point of the zone: radius clamped first, then the rectangle (with margins)."""
        p = np.asarray(xy, dtype=float).copy()
        r = float(np.hypot(*p))
        lo, hi = self.r_min + inner_margin + margin, self.r_max - margin
        if r > 0 and not lo <= r <= hi:
            p *= min(max(r, lo), hi) / r
        xmin, ymin, xmax, ymax = self.rect
        p[0] = min(max(p[0], xmin + margin), xmax - margin)
        p[1] = min(max(p[1], ymin + margin), ymax - margin)
        return p

    def cell_mask(self, hmap: HeightMap):
        return self.contains(hmap.cell_centers())


@dataclass
class TruckSpec:
    pose: Pose3D
    bed_dims: tuple = (3.0, 2.0, 0.8)
    bed_height: float = 0.8
    capacity: float = math.inf
    swap_time: float = 30.0
    jitter_xy: float = 0.2
    jitter_yaw: float = math.radians(5.0)

    @property
    def wall_top(self):
        return self.bed_height + self.bed_dims[2]

    @property
    def dims(self):
        """(length, width, wall top above ground)."""
        return (self.bed_dims[0], self.bed_dims[1], self.wall_top)


@dataclass
class FeedSpec:
    """Replenish the pile when zone material falls below ``threshold``."""

    center: tuple
    threshold: float
    volume: float


@dataclass
class RockEvent:
    box: Box3D
    appear_at: float


@dataclass
class World:
    hmap: HeightMap
    zone: WorkingZone
    truck_spec: TruckSpec
    obstacles: list = field(default_factory=list)
    intruders: list = field(default_factory=list)
    feed: FeedSpec | None = None
    pending_rocks: list = field(default_factory=list)
    seed: int = 0
    tick: int = 0
    truck_pose: Pose3D | None = None
    truck_load: float = 0.0
    truck_arrives_at: float | None = None
    trucks_filled: int = 0
    truck_tally: float = 0.0
    spillage: float = 0.0
    returned: float = 0.0
    fed: float = 0.0
    initial_volume: float = 0.0
    dropped_rocks: list = field(default_factory=list)

    def __post_init__(self):
        if self.truck_pose is None and self.truck_arrives_at is None:
            self.truck_pose = self.truck_spec.pose
        self.initial_volume = self.hmap.material_volume()
        self._rng = np.random.default_rng([self.seed, 7])

    @property
    def time(self):
        return self.tick / TICK_HZ

    def intruder_active(self, t=None):
        t = self.time if t is None else t
        return any(a <= t < b for a, b in self.intruders)

    def update(self):
        """Per-tick bookkeeping: truck arrivals and scheduled rocks."""
        t = self.time
        if self.truck_pose is None and self.truck_arrives_at is not None and t >= self.truck_arrives_at:
            spec = self.truck_spec
            base = spec.pose
            dx, dy = self._rng.uniform(-spec.jitter_xy, spec.jitter_xy, 2)
            dyaw = self._rng.uniform(-spec.jitter_yaw, spec.jitter_yaw)
            x, y, z = base.translation
            self.truck_pose = Pose3D.from_xyz_yaw(x + dx, y + dy, z, base.yaw + dyaw)
            self.truck_arrives_at = None
            self.truck_load = 0.0
        placed = []
        if self.pending_rocks:
            for ev in self.pending_rocks:
                if t >= ev.appear_at:
                    try:
                        self.hmap, _ = place_rock(self.hmap, ev.box)
                    except ValueError:
                        continue
                    placed.append(ev)
            self.pending_rocks = [ev for ev in self.pending_rocks if ev not in placed]
        return placed

    def bed_contains(self, xy):
        if self.truck_pose is None:
            return False
        local = self.truck_pose.inverse().apply(np.array([xy[0], xy[1], 0.0]))
        l, w, _ = self.truck_spec.bed_dims
        return abs(local[0]) <= l / 2 and abs(local[1]) <= w / 2

    def deliver(self, volume, tip_xy):
        """Dump ``volume`` at ``tip_xy``: into the truck if over its bed, else spillage."""
        if self.bed_contains(tip_xy):
            self.truck_tally += volume
            self.truck_load += volume
            if self.truck_load >= self.truck_spec.capacity - 1e-12:
                self.trucks_filled += 1
                self.truck_pose = None
                self.truck_arrives_at = self.time + self.truck_spec.swap_time
            return True
        self.spillage += volume
        return False

    def return_to_terrain(self, volume, xy):
        if volume > 0:
            self.hmap = dump(self.hmap, xy, volume)
            self.returned += volume

    def zone_material(self):
        mask = self.zone.cell_mask(self.hmap)
        h = np.maximum(self.hmap.elevation - self.hmap.datum, 0.0)
        return float(np.sum(h[mask]) * self.hmap.cell_area)

    def apply_feed(self, force=False):
        if self.feed is None or (not force and self.zone_material() >= self.feed.threshold):
            return 0.0
        self.hmap = dump(self.hmap, self.feed.center, self.feed.volume)
        self.fed += self.feed.volume
        return self.feed.volume

    def removed(self):
        return self.initial_volume + self.fed - self.hmap.material_volume()

    def conservation_error(self, bucket_load):
        """Terrain removed minus (truck + spillage + bucket), net of material returned."""
        return self.removed() - (self.truck_tally + self.spillage + bucket_load)
