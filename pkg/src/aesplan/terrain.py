"""2.5D heightmap world model: scooping, dumping, rocks and observations.

Cell ``(ix, iy)`` addresses ``elevation[iy, ix]``; its centre sits at
``origin + (ix + 0.5, iy + 0.5) * cell_size``. Volumes are measured above
``datum``.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aesplan import kernels
from aesplan.errors import OutOfBounds
from aesplan.geometry import Box3D

DEFAULT_OVERFILL = 1.1
DEFAULT_REPOSE_DEG = 35.0
SETTLE_MAX_ITERS = 50


class CellLabel(enum.IntEnum):
    SOIL = 0
    WATER = 1
    IMPURITY = 2
    ROCK = 3
    EMPTY = 4


@dataclass
class RockRecord:
    box: Box3D
    cells: np.ndarray          # (n, 2) of (ix, iy)
    saved_elevation: np.ndarray
    saved_labels: np.ndarray


@dataclass
class HeightMap:
    origin: np.ndarray
    cell_size: float
    elevation: np.ndarray
    labels: np.ndarray
    datum: float = 0.0
    rocks: dict = field(default_factory=dict)
    next_rock_id: int = 0

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.elevation = np.ascontiguousarray(self.elevation, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.elevation.ndim != 2 or self.labels.shape != self.elevation.shape:
            raise ValueError("label grid must match elevation grid")
        if not np.all(np.isfinite(self.elevation)):
            raise ValueError("elevation must be finite")

    @classmethod
    def flat(cls, width=80, height=80, cell_size=0.25, origin=(0.0, 0.0), elevation=0.0,
             label=CellLabel.EMPTY):
        return cls(origin, cell_size, np.full((height, width), float(elevation)),
                   np.full((height, width), int(label), dtype=np.int8))

    @property
    def width(self):
        return self.elevation.shape[1]

    @property
    def height(self):
        return self.elevation.shape[0]

    @property
    def cell_area(self):
        return self.cell_size * self.cell_size

    def copy(self):
        return HeightMap(self.origin.copy(), self.cell_size, self.elevation.copy(), self.labels.copy(),
                         self.datum, dict(self.rocks), self.next_rock_id)

    def in_bounds(self, ix, iy):
        return 0 <= ix < self.width and 0 <= iy < self.height

    def cell_of(self, xy):
        """Cell ``(ix, iy)`` containing world point ``xy``, or None outside."""
        f = (np.asarray(xy, dtype=float)[:2] - self.origin) / self.cell_size
        ix, iy = int(math.floor(f[0])), int(math.floor(f[1]))
        return (ix, iy) if self.in_bounds(ix, iy) else None

    def cell_center(self, ix, iy):
        return self.origin + (np.array([ix, iy], dtype=float) + 0.5) * self.cell_size

    def cell_centers(self):
        """(ny, nx, 2) world coordinates of every cell centre."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.cell_size
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def surface_at(self, xy):
        c = self.cell_of(xy)
        if c is None:
            raise OutOfBounds(f"point {tuple(xy)} outside map")
        return float(self.elevation[c[1], c[0]])

    def total_volume(self):
        return float(np.sum(self.elevation - self.datum) * self.cell_area)

    def rock_volume(self):
        total = 0.0
        for rec in self.rocks.values():
            if len(rec.cells):
                cur = self.elevation[rec.cells[:, 1], rec.cells[:, 0]]
                total += float(np.sum(cur - rec.saved_elevation))
        return total * self.cell_area

    def material_volume(self):
        """Volume above datum excluding what rocks add."""
        return self.total_volume() - self.rock_volume()

    def rock_boxes(self):
        return [rec.box for _, rec in sorted(self.rocks.items())]


def scoop(hmap: HeightMap, footprint, capacity, overfill=DEFAULT_OVERFILL):
    """Remove material under ``footprint``; returns (map, volume, labels touched).

    Each cell loses ``min(depth, height above datum)``; rock and impurity
    cells are impenetrable. When the total would exceed
    ``capacity * overfill`` the shallowest cuts are taken first and the
    remaining budget truncates the deeper ones.
    """
    merged = {}
    for cell, depth in footprint:
        ix, iy = int(cell[0]), int(cell[1])
        if not hmap.in_bounds(ix, iy):
            raise OutOfBounds(f"footprint cell {(ix, iy)} outside {hmap.width}x{hmap.height} map")
        merged[(ix, iy)] = max(merged.get((ix, iy), 0.0), float(depth))
    out = hmap.copy()
    if not merged:
        return out, 0.0, set()

    touched = set()
    cuts = []
    for order, ((ix, iy), depth) in enumerate(merged.items()):
        if depth <= 0:
            continue
        label = CellLabel(int(out.labels[iy, ix]))
        touched.add(label)
        if label in (CellLabel.ROCK, CellLabel.IMPURITY):
            continue
        avail = max(0.0, out.elevation[iy, ix] - out.datum)
        r = min(depth, avail)
        if r > 0:
            cuts.append((r, order, ix, iy, avail))

    budget = capacity * overfill / out.cell_area
    removed_h = 0.0
    for r, _, ix, iy, avail in sorted(cuts):
        take = min(r, budget - removed_h)
        if take <= 0:
            break
        out.elevation[iy, ix] -= take
        removed_h += take
        if take >= avail:
            out.labels[iy, ix] = CellLabel.SOIL
    return out, removed_h * out.cell_area, touched


def dump(hmap: HeightMap, center_xy, volume, repose_deg=DEFAULT_REPOSE_DEG,
         settle_iters=SETTLE_MAX_ITERS):
    """Deposit ``volume`` as a cone at the angle of repose around ``center_xy``.

    Rock cells receive nothing; material is never taken from below the
    pre-dump surface, so no cell is lowered.
    """
    if volume < 0:
        raise ValueError("volume must be non-negative")
    if hmap.cell_of(center_xy) is None:
        raise OutOfBounds(f"dump centre {tuple(center_xy)} outside map")
    out = hmap.copy()
    if volume == 0:
        return out
    slope = math.tan(math.radians(repose_deg))
    free = out.labels != CellLabel.ROCK
    dist = np.linalg.norm(out.cell_centers() - np.asarray(center_xy, dtype=float)[:2], axis=-1)
    base = out.elevation
    target = volume / out.cell_area

    def added(h):
        return np.where(free, np.maximum(h - slope * dist - base, 0.0), 0.0)

    lo = float(base.min())
    hi = float(base[free].max()) + target + slope * out.cell_size * 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if added(mid).sum() < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    add = added(hi)
    add *= target / add.sum()
    before = base.copy()
    out.elevation = np.ascontiguousarray(base + add)
    fresh = (add > 0) & (out.labels == CellLabel.EMPTY)
    out.labels[fresh] = CellLabel.SOIL
    kernels.settle(out.elevation, before, ~free, slope * out.cell_size, settle_iters)
    return out


def max_slope(hmap: HeightMap, exclude_rocks=True):
    """Steepest 4-neighbour slope (rise over run) on the map."""
    e = hmap.elevation
    dx = np.abs(np.diff(e, axis=1)) / hmap.cell_size
    dy = np.abs(np.diff(e, axis=0)) / hmap.cell_size
    if exclude_rocks:
        rock = hmap.labels == CellLabel.ROCK
        dx[rock[:, 1:] | rock[:, :-1]] = 0
        dy[rock[1:, :] | rock[:-1, :]] = 0
    return float(max(dx.max(initial=0.0), dy.max(initial=0.0)))


def window_geometry(hmap: HeightMap, center_xy, w, h):
    """First cell indices of a ``w`` x ``h`` window and its geometric centre."""
    f = (np.asarray(center_xy, dtype=float)[:2] - hmap.origin) / hmap.cell_size
    ix0 = int(round(f[0] - w / 2))
    iy0 = int(round(f[1] - h / 2))
    center = hmap.origin + np.array([ix0 + w / 2, iy0 + h / 2]) * hmap.cell_size
    return ix0, iy0, center


def window_indices(hmap: HeightMap, center_xy, w, h):
    """Clamped (iy, ix) index arrays of the window, edge-padding style."""
    ix0, iy0, _ = window_geometry(hmap, center_xy, w, h)
    ix = np.clip(np.arange(ix0, ix0 + w), 0, hmap.width - 1)
    iy = np.clip(np.arange(iy0, iy0 + h), 0, hmap.height - 1)
    return iy, ix


def observation_window(hmap: HeightMap, center_xy, w, h, mask=None):
    """Zero-mean (h, w) elevation patch around ``center_xy``.

    Out-of-map cells repeat the nearest edge value. Cells where the optional
    full-map boolean ``mask`` is set are flattened to the lowest unmasked
    elevation in the window before normalisation.
    """
    iy, ix = window_indices(hmap, center_xy, w, h)
    patch = hmap.elevation[np.ix_(iy, ix)].copy()
    if mask is not None:
        m = np.asarray(mask)[np.ix_(iy, ix)]
        if m.any():
            floor_ = patch[~m].min() if (~m).any() else patch.min()
            patch[m] = floor_
    return patch - patch.mean()


def window_labels(hmap: HeightMap, center_xy, w, h):
    iy, ix = window_indices(hmap, center_xy, w, h)
    return hmap.labels[np.ix_(iy, ix)].copy()


def box_footprint_cells(hmap: HeightMap, box: Box3D):
    """Cells whose centres fall inside the box footprint; OutOfBounds if the box leaves the map."""
    corners = box.corners()[:, :2]
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    map_hi = hmap.origin + np.array([hmap.width, hmap.height]) * hmap.cell_size
    if np.any(lo < hmap.origin) or np.any(hi > map_hi):
        raise OutOfBounds("box footprint leaves the map")
    i_lo = np.floor((lo - hmap.origin) / hmap.cell_size).astype(int)
    i_hi = np.minimum(np.ceil((hi - hmap.origin) / hmap.cell_size).astype(int), [hmap.width, hmap.height])
    cells = [(ix, iy) for iy in range(i_lo[1], i_hi[1]) for ix in range(i_lo[0], i_hi[0])]
    if not cells:
        return np.zeros((0, 2), dtype=int)
    cells = np.array(cells, dtype=int)
    centers = hmap.origin + (cells + 0.5) * hmap.cell_size
    return cells[box.contains_xy(centers)]


def place_rock(hmap: HeightMap, box: Box3D):
    """Raise cells under ``box`` to its top and label them Rock.

    Returns ``(map, rock_id)``; the rock registry remembers what was under it.
    """
    cells = box_footprint_cells(hmap, box)
    out = hmap.copy()
    if len(cells) and np.any(out.labels[cells[:, 1], cells[:, 0]] == CellLabel.ROCK):
        raise ValueError("rock footprint overlaps an existing rock")
    saved_e = out.elevation[cells[:, 1], cells[:, 0]].copy()
    saved_l = out.labels[cells[:, 1], cells[:, 0]].copy()
    rid = out.next_rock_id
    out.next_rock_id += 1
    out.rocks[rid] = RockRecord(box, cells, saved_e, saved_l)
    if len(cells):
        out.elevation[cells[:, 1], cells[:, 0]] = np.maximum(saved_e, box.top)
        out.labels[cells[:, 1], cells[:, 0]] = CellLabel.ROCK
    return out, rid


def remove_rock(hmap: HeightMap, rock_id):
    out = hmap.copy()
    rec = out.rocks.pop(rock_id)
    if len(rec.cells):
        out.elevation[rec.cells[:, 1], rec.cells[:, 0]] = rec.saved_elevation
        out.labels[rec.cells[:, 1], rec.cells[:, 0]] = rec.saved_labels
    return out


def add_pile(hmap: HeightMap, center_xy, peak, radius, shape="cone"):
    """Heap material on the map (in place); touched empty cells become Soil."""
    d = np.linalg.norm(hmap.cell_centers() - np.asarray(center_xy, dtype=float), axis=-1)
    if shape == "cone":
        z = peak * np.clip(1.0 - d / radius, 0.0, None)
    elif shape == "dome":
        z = peak * np.clip(1.0 - (d / radius) ** 2, 0.0, None)
    elif shape == "gaussian":
        z = peak * np.exp(-0.5 * (d / (radius / 2.0)) ** 2)
        z[d > radius] = 0.0
    else:
        raise ValueError(f"unknown pile shape {shape!r}")
    hmap.elevation += z
    hmap.labels[(z > 0) & (hmap.labels == CellLabel.EMPTY)] = CellLabel.SOIL
    return hmap


def label_region(hmap: HeightMap, rect, label):
    """Set ``label`` on cells whose centres lie in ``rect`` = (xmin, ymin, xmax, ymax)."""
    c = hmap.cell_centers()
    xmin, ymin, xmax, ymax = rect
    m = (c[..., 0] >= xmin) & (c[..., 0] <= xmax) & (c[..., 1] >= ymin) & (c[..., 1] <= ymax)
    hmap.labels[m & (hmap.labels != CellLabel.ROCK)] = int(label)
    return m


# --- serialization ----------------------------------------------------------

def _rle(values):
    out = []
    for v in values.ravel().tolist():
        if out and out[-1][0] == v:
            out[-1][1] += 1
        else:
            out.append([v, 1])
    return out


def _unrle(runs, shape):
    flat = np.concatenate([np.full(n, v, dtype=np.int8) for v, n in runs]) if runs else np.zeros(0, np.int8)
    return flat.reshape(shape)


def save_heightmap(path, hmap: HeightMap):
    """Write the elevation CSV at ``path`` and a JSON sidecar next to it."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in hmap.elevation.tolist():
            w.writerow([repr(v) for v in row])
    meta = {
        "origin": [float(v) for v in hmap.origin],
        "cell_size": hmap.cell_size,
        "datum": hmap.datum,
        "width": hmap.width,
        "height": hmap.height,
        "labels_rle": _rle(hmap.labels),
        "rocks": [{"id": rid, "box": rec.box.to_json(), "cells": rec.cells.tolist(),
                   "saved_elevation": rec.saved_elevation.tolist(),
                   "saved_labels": rec.saved_labels.tolist()} for rid, rec in sorted(hmap.rocks.items())],
    }
    path.with_suffix(".json").write_text(json.dumps(meta))


def load_heightmap(path) -> HeightMap:
    path = Path(path)
    with open(path, newline="") as fh:
        elev = np.array([[float(v) for v in row] for row in csv.reader(fh) if row])
    meta = json.loads(path.with_suffix(".json").read_text())
    shape = (meta["height"], meta["width"])
    if elev.shape != shape:
        raise ValueError(f"elevation grid {elev.shape} does not match sidecar {shape}")
    hmap = HeightMap(meta["origin"], meta["cell_size"], elev, _unrle(meta["labels_rle"], shape), meta["datum"])
    for r in meta.get("rocks", []):
        hmap.rocks[r["id"]] = RockRecord(Box3D.from_json(r["box"]), np.array(r["cells"], dtype=int).reshape(-1, 2),
                                         np.array(r["saved_elevation"], dtype=float),
                                         np.array(r["saved_labels"], dtype=np.int8))
        hmap.next_rock_id = max(hmap.next_rock_id, r["id"] + 1)
    return hmap
