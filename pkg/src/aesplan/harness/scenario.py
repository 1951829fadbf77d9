"""Declarative worksite scenarios and their validation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

from aesplan.errors import ConfigError
from aesplan.geometry import Box3D, Pose3D
from aesplan.perception import NoiseParams
from aesplan.terrain import CellLabel, HeightMap, add_pile, box_footprint_cells, label_region, place_rock
from aesplan.world import FeedSpec, RockEvent, TruckSpec, World, WorkingZone

FLAG_NAMES = ("terrain_manipulation", "obstacle_avoidance", "water")


@dataclass
class PileSpec:
    center: tuple
    peak: float
    radius: float
    shape: str = "dome"


@dataclass
class RockSpec:
    center: tuple             # (x, y); the rock rests on the surface
    half_extents: tuple
    yaw: float = 0.0
    appear_at: float = 0.0


@dataclass
class ScenarioConfig:
    name: str
    flags: dict
    seed: int = 0
    cycles: int = 10
    max_hours: float = 36.0
    grid: dict = field(default_factory=lambda: {"width": 80, "height": 80, "cell_size": 0.25,
                                                "origin": [-6.0, -10.0]})
    piles: list = field(default_factory=list)
    water_regions: list = field(default_factory=list)
    impurity_regions: list = field(default_factory=list)
    rocks: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)
    truck: dict = field(default_factory=dict)
    intruders: list = field(default_factory=list)
    weather: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    feed: dict | None = None
    zone: dict = field(default_factory=lambda: {"r_min": 2.8, "r_max": 4.6, "rect": [2.0, -2.0, 6.0, 2.0]})
    window_center: tuple = (3.8, 0.0)

    # --- construction ---
    def noise_params(self):
        return NoiseParams(**self.noise) if self.noise else NoiseParams.zero()

    def working_zone(self):
        z = self.zone
        return WorkingZone(float(z["r_min"]), float(z["r_max"]), tuple(float(v) for v in z["rect"]))

    def truck_spec(self):
        t = self.truck
        x, y, yaw = t.get("pose", [0.0, 3.6, math.pi / 2])
        return TruckSpec(Pose3D.from_xyz_yaw(x, y, 0.0, yaw), tuple(t.get("bed_dims", (3.0, 2.0, 0.8))),
                         float(t.get("bed_height", 0.8)), float(t.get("capacity", math.inf)),
                         float(t.get("swap_time", 30.0)))

    def build_heightmap(self):
        g = self.grid
        hmap = HeightMap.flat(int(g["width"]), int(g["height"]), float(g["cell_size"]), tuple(g["origin"]))
        for p in self.piles:
            add_pile(hmap, p.center, p.peak, p.radius, p.shape)
        for r in self.water_regions:
            label_region(hmap, r, CellLabel.WATER)
        for r in self.impurity_regions:
            label_region(hmap, r, CellLabel.IMPURITY)
        return hmap

    def rock_box(self, hmap, spec: RockSpec):
        hx, hy, hz = spec.half_extents
        flat = Box3D.upright((spec.center[0], spec.center[1], hz), (hx, hy, hz), spec.yaw)
        cells = box_footprint_cells(hmap, flat)
        ground = float(hmap.elevation[cells[:, 1], cells[:, 0]].max()) if len(cells) else 0.0
        return Box3D.upright((spec.center[0], spec.center[1], ground + hz), (hx, hy, hz), spec.yaw)

    def build_world(self, seed=None):
        seed = self.seed if seed is None else seed
        hmap = self.build_heightmap()
        pending = []
        for spec in self.rocks:
            box = self.rock_box(hmap, spec)
            if spec.appear_at <= 0:
                hmap, _ = place_rock(hmap, box)
            else:
                pending.append(RockEvent(box, float(spec.appear_at)))
        obstacles = [Box3D.upright(tuple(o["center"]), tuple(o["half_extents"]), float(o.get("yaw", 0.0)))
                     for o in self.obstacles]
        feed = None
        if self.feed:
            feed = FeedSpec(tuple(self.feed["center"]), float(self.feed["threshold"]), float(self.feed["volume"]))
        return World(hmap, self.working_zone(), self.truck_spec(), obstacles,
                     [tuple(map(float, w)) for w in self.intruders], feed, pending, seed)

    # --- serialization ---
    def to_json(self):
        return {
            "name": self.name, "flags": dict(self.flags), "seed": self.seed, "cycles": self.cycles,
            "max_hours": self.max_hours, "grid": self.grid,
            "piles": [{"center": list(p.center), "peak": p.peak, "radius": p.radius, "shape": p.shape}
                      for p in self.piles],
            "water_regions": [list(r) for r in self.water_regions],
            "impurity_regions": [list(r) for r in self.impurity_regions],
            "rocks": [{"center": list(r.center), "half_extents": list(r.half_extents), "yaw": r.yaw,
                       "appear_at": r.appear_at} for r in self.rocks],
            "obstacles": self.obstacles, "truck": self.truck, "intruders": [list(w) for w in self.intruders],
            "weather": self.weather, "noise": self.noise, "feed": self.feed, "zone": self.zone,
            "window_center": list(self.window_center),
        }

    @classmethod
    def from_json(cls, d):
        return parse_scenario(d)


def _need(d, key, path, kind=None):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"{path}.{key}", "missing")
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _vec(v, n, path, positive=False):
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise ConfigError(path, f"expected a list of {n} numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(f"{path}[{i}]", "expected a finite number")
        if positive and x <= 0:
            raise ConfigError(f"{path}[{i}]", "must be positive")
        out.append(float(x))
    return tuple(out)


def _rect(v, path):
    r = _vec(v, 4, path)
    if r[0] >= r[2] or r[1] >= r[3]:
        raise ConfigError(path, "rectangle needs xmin < xmax and ymin < ymax")
    return r


def parse_scenario(d) -> ScenarioConfig:
    """Validate a scenario document; errors name the offending field."""
    root = "scenario"
    if not isinstance(d, dict):
        raise ConfigError(root, "expected an object")
    name = _need(d, "name", root, str)
    flags_in = _need(d, "flags", root, dict)
    flags = {}
    for f in FLAG_NAMES:
        v = _need(flags_in, f, f"{root}.flags")
        if not isinstance(v, bool):
            raise ConfigError(f"{root}.flags.{f}", "expected true or false")
        flags[f] = v
    extra = set(flags_in) - set(FLAG_NAMES)
    if extra:
        raise ConfigError(f"{root}.flags.{sorted(extra)[0]}", "unknown flag")
    cfg = ScenarioConfig(name, flags)
    if "seed" in d:
        seed = d["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError(f"{root}.seed", "expected an unsigned 64-bit integer")
        cfg.seed = seed
    if "cycles" in d:
        c = d["cycles"]
        if isinstance(c, bool) or not isinstance(c, int) or c < 1:
            raise ConfigError(f"{root}.cycles", "expected a positive integer")
        cfg.cycles = c
    if "max_hours" in d:
        cfg.max_hours = _vec([d["max_hours"]], 1, f"{root}.max_hours", positive=True)[0]
    if "grid" in d:
        g = _need(d, "grid", root, dict)
        for k in ("width", "height"):
            v = _need(g, k, f"{root}.grid")
            if isinstance(v, bool) or not isinstance(v, int) or v < 4:
                raise ConfigError(f"{root}.grid.{k}", "expected an integer >= 4")
        _vec([_need(g, "cell_size", f"{root}.grid")], 1, f"{root}.grid.cell_size", positive=True)
        _vec(_need(g, "origin", f"{root}.grid"), 2, f"{root}.grid.origin")
        cfg.grid = dict(g)
    for i, p in enumerate(d.get("piles", [])):
        path = f"{root}.piles[{i}]"
        shape = p.get("shape", "dome") if isinstance(p, dict) else None
        if shape not in ("cone", "dome", "gaussian"):
            raise ConfigError(f"{path}.shape", f"unknown pile shape {shape!r}")
        cfg.piles.append(PileSpec(_vec(_need(p, "center", path), 2, f"{path}.center"),
                                  _vec([_need(p, "peak", path)], 1, f"{path}.peak", positive=True)[0],
                                  _vec([_need(p, "radius", path)], 1, f"{path}.radius", positive=True)[0], shape))
    cfg.water_regions = [_rect(r, f"{root}.water_regions[{i}]") for i, r in enumerate(d.get("water_regions", []))]
    cfg.impurity_regions = [_rect(r, f"{root}.impurity_regions[{i}]")
                            for i, r in enumerate(d.get("impurity_regions", []))]
    for i, r in enumerate(d.get("rocks", [])):
        path = f"{root}.rocks[{i}]"
        cfg.rocks.append(RockSpec(_vec(_need(r, "center", path), 2, f"{path}.center"),
                                  _vec(_need(r, "half_extents", path), 3, f"{path}.half_extents", positive=True),
                                  float(r.get("yaw", 0.0)), float(r.get("appear_at", 0.0))))
    for i, o in enumerate(d.get("obstacles", [])):
        path = f"{root}.obstacles[{i}]"
        cfg.obstacles.append({"center": list(_vec(_need(o, "center", path), 3, f"{path}.center")),
                              "half_extents": list(_vec(_need(o, "half_extents", path), 3,
                                                        f"{path}.half_extents", positive=True)),
                              "yaw": float(o.get("yaw", 0.0))})
    if "truck" in d:
        t = _need(d, "truck", root, dict)
        truck = {}
        if "pose" in t:
            truck["pose"] = list(_vec(t["pose"], 3, f"{root}.truck.pose"))
        if "bed_dims" in t:
            truck["bed_dims"] = list(_vec(t["bed_dims"], 3, f"{root}.truck.bed_dims", positive=True))
        for k in ("bed_height", "capacity", "swap_time"):
            if k in t:
                truck[k] = _vec([t[k]], 1, f"{root}.truck.{k}", positive=True)[0]
        cfg.truck = truck
    for i, w in enumerate(d.get("intruders", [])):
        a, b = _vec(w, 2, f"{root}.intruders[{i}]")
        if b <= a:
            raise ConfigError(f"{root}.intruders[{i}]", "window must end after it starts")
        cfg.intruders.append((a, b))
    cfg.weather = dict(d.get("weather", {}))
    if "noise" in d:
        n = _need(d, "noise", root, dict)
        known = set(NoiseParams.__dataclass_fields__)
        for k, v in n.items():
            if k not in known:
                raise ConfigError(f"{root}.noise.{k}", "unknown noise parameter")
            x = _vec([v], 1, f"{root}.noise.{k}")[0]
            if x < 0 or (k in ("miss_rate",) and x > 1):
                raise ConfigError(f"{root}.noise.{k}", "out of range")
        cfg.noise = {k: float(v) for k, v in n.items()}
    if d.get("feed") is not None:
        f = _need(d, "feed", root, dict)
        cfg.feed = {"center": list(_vec(_need(f, "center", f"{root}.feed"), 2, f"{root}.feed.center")),
                    "threshold": _vec([_need(f, "threshold", f"{root}.feed")], 1, f"{root}.feed.threshold")[0],
                    "volume": _vec([_need(f, "volume", f"{root}.feed")], 1, f"{root}.feed.volume", positive=True)[0]}
    if "zone" in d:
        z = _need(d, "zone", root, dict)
        r_min = _vec([_need(z, "r_min", f"{root}.zone")], 1, f"{root}.zone.r_min", positive=True)[0]
        r_max = _vec([_need(z, "r_max", f"{root}.zone")], 1, f"{root}.zone.r_max", positive=True)[0]
        if r_max <= r_min:
            raise ConfigError(f"{root}.zone.r_max", "must exceed r_min")
        cfg.zone = {"r_min": r_min, "r_max": r_max, "rect": list(_rect(_need(z, "rect", f"{root}.zone"),
                                                                        f"{root}.zone.rect"))}
    if "window_center" in d:
        cfg.window_center = _vec(d["window_center"], 2, f"{root}.window_center")
    # flags must agree with what the scenario contains
    if flags["water"] != bool(cfg.water_regions):
        raise ConfigError(f"{root}.flags.water", "must be true exactly when water_regions is non-empty")
    if flags["terrain_manipulation"] != bool(cfg.rocks):
        raise ConfigError(f"{root}.flags.terrain_manipulation", "must be true exactly when rocks are placed")
    if flags["obstacle_avoidance"] != bool(cfg.obstacles):
        raise ConfigError(f"{root}.flags.obstacle_avoidance", "must be true exactly when obstacles are placed")
    return cfg


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("scenario", f"invalid JSON: {exc}") from None
    return parse_scenario(doc)


def bundled_scenario_names():
    return [f"scenario{i}.json" for i in range(1, 9)]


def load_bundled(i) -> ScenarioConfig:
    """Bundled scenario ``i`` in 1..8."""
    ref = resources.files("aesplan").joinpath("data", "scenarios", f"scenario{int(i)}.json")
    return parse_scenario(json.loads(ref.read_text()))


def scenario_fingerprint(cfg: ScenarioConfig):
    """Stable text of the config, used in report headers."""
    return json.dumps(cfg.to_json(), sort_keys=True)

