"""Task-level planner: decisions and the loading-cycle phase machine.

``decide`` picks one action per call with the priority
Halt > RemoveRock > Dump (when loaded) > Scoop. ``Planner.step`` advances
the phase machine one 10 Hz tick. Control is exact tracking: each segment
takes ``max_j |dq_j| / v_j`` per waypoint step, rounded up to whole ticks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from aesplan.errors import LimitViolation, NoValidTarget, PlanningFailed, Unreachable
from aesplan.geometry import Box3D, Pose3D
from aesplan.kinematics import (ArmModel, JointConfig, footprint_from_tips, forward_kinematics,
                                inverse_kinematics, tip_positions)
from aesplan.motion import PatternWeights, StompParams, Trajectory, stomp_optimize
from aesplan.motion.stomp import dense_collision_check
from aesplan.perception import PerceptionFrame, watchdog
from aesplan.selection import SelectionNet, forward
from aesplan.terrain import (CellLabel, HeightMap, observation_window, place_rock, remove_rock, scoop,
                             window_geometry)
from aesplan.world import TICK_HZ, World, WorkingZone


class Phase(str, enum.Enum):
    SCOOP = "Scoop"
    SWING_TO_TRUCK = "SwingToTruck"
    DUMP = "Dump"
    SWING_BACK = "SwingBack"
    REMOVE_ROCK = "RemoveRock"
    ESTOP = "EStop"
    IDLE = "Idle"


CYCLE_PHASES = (Phase.SCOOP, Phase.SWING_TO_TRUCK, Phase.DUMP, Phase.SWING_BACK)

# allowed phase transitions; EStop can interrupt anything and hands back to
# the halted phase (or to Idle when a scoop was interrupted)
TRANSITIONS = {
    Phase.IDLE: {Phase.SCOOP, Phase.REMOVE_ROCK, Phase.SWING_TO_TRUCK, Phase.IDLE},
    Phase.SCOOP: {Phase.SWING_TO_TRUCK, Phase.REMOVE_ROCK, Phase.SCOOP, Phase.IDLE},
    Phase.SWING_TO_TRUCK: {Phase.DUMP},
    Phase.DUMP: {Phase.SWING_BACK},
    Phase.SWING_BACK: {Phase.SCOOP, Phase.REMOVE_ROCK, Phase.IDLE, Phase.SWING_TO_TRUCK},
    Phase.REMOVE_ROCK: {Phase.SCOOP, Phase.REMOVE_ROCK, Phase.IDLE, Phase.SWING_TO_TRUCK},
    Phase.ESTOP: {Phase.IDLE} | set(Phase),
}
for _p in Phase:
    TRANSITIONS[_p] = TRANSITIONS[_p] | {Phase.ESTOP}

BLOCKING = (CellLabel.WATER, CellLabel.IMPURITY, CellLabel.ROCK)


# --- decisions --------------------------------------------------------------

@dataclass(frozen=True)
class ScoopTarget:
    poa: tuple
    end: tuple
    travel: float
    retries: int


@dataclass(frozen=True)
class Decision:
    action: str
    target: ScoopTarget | None = None
    box: Box3D | None = None
    drop_site: tuple | None = None
    dump_config: JointConfig | None = None
    reason: str = ""
    notes: tuple = ()


@dataclass
class PlannerConfig:
    model: ArmModel = field(default_factory=ArmModel)
    zone: WorkingZone = field(default_factory=lambda: WorkingZone(2.8, 4.6, (2.0, -2.0, 6.0, 2.0)))
    window_center: tuple = (3.8, 0.0)
    truck_dims: tuple = (3.0, 2.0, 1.6)
    dump_clearance: float = 0.5
    max_retries: int = 10
    refine_radius: float = 0.5
    min_material: float = 0.02
    attack_angle: float = -1.3
    curl_angle: float = -1.8
    carry_angle: float = -1.9
    dump_open: float = 1.9
    nominal_depth: float = 0.15
    # joints move slower while the bucket works against the soil and while
    # it breaks out of the pile with a full load
    dig_speed_factor: float = 0.16
    lift_speed_factor: float = 0.4
    fill_target: float = 1.05
    max_shift: float = 0.5
    lift_height: float = 2.3
    ready_tip: tuple = (3.4, 0.0, 1.9)
    overfill: float = 1.1
    grab_clearance: float = 0.05
    drop_margin: float = 0.3
    stomp: StompParams = field(default_factory=StompParams)

    def ready_config(self):
        return inverse_kinematics(self.model, self.ready_tip, self.attack_angle)


def dump_pose(truck_pose: Pose3D, truck_dims, model: ArmModel, clearance=0.5, bucket_angle=-1.9) -> JointConfig:
    """Config holding the bucket tip over the bed centroid, ``clearance`` above the walls.

    ``truck_dims`` is (length, width, wall top height); the truck frame origin
    is the bed centroid at ground level.
    """
    x, y, z = truck_pose.translation
    tip = (x, y, z + truck_dims[2] + clearance)
    if math.hypot(x, y) > model.max_reach:
        raise Unreachable(f"truck at {math.hypot(x, y):.2f} m is beyond reach {model.max_reach:.2f} m")
    return inverse_kinematics(model, tip, bucket_angle)


def _cells_along(hmap: HeightMap, p0, p1, width, step=None):
    """Cells swept by a bucket of ``width`` moving from p0 to p1, in path order with distance."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    d = p1 - p0
    length = float(np.hypot(*d))
    step = step or hmap.cell_size / 3
    n = max(2, int(math.ceil(length / step)) + 1)
    u = d / length if length > 0 else np.array([1.0, 0.0])
    side = np.array([-u[1], u[0]])
    k = max(1, int(round(width / hmap.cell_size)))
    offs = [((i + 0.5) / k - 0.5) * width for i in range(k)]
    out = []
    for s in np.linspace(0.0, length, n):
        for o in offs:
            c = hmap.cell_of(p0 + s * u + o * side)
            if c is not None:
                out.append((c, s))
    return out


def _mask_around(mask, cell, radius=1):
    ix, iy = cell
    mask[max(0, iy - radius):iy + radius + 1, max(0, ix - radius):ix + radius + 1] = True


def select_target(hmap: HeightMap, net: SelectionNet, cfg: PlannerConfig):
    """Query the net and filter its target; returns (ScoopTarget, notes).

    Notes are ``(action, payload)`` pairs recording masked re-selections and
    truncated drags. Raises NoValidTarget after ``cfg.max_retries`` retries.
    """
    nc = net.config
    model = cfg.model
    # cells outside the working zone are flattened out of the observation
    mask = ~cfg.zone.cell_mask(hmap)
    notes = []
    _, _, wc = window_geometry(hmap, cfg.window_center, nc.window_w, nc.window_h)
    labels = hmap.labels
    for attempt in range(cfg.max_retries + 1):
        obs = observation_window(hmap, wc, nc.window_w, nc.window_h, mask)
        z = forward(net, obs)
        poa = cfg.zone.project(np.array([wc[0] + z.poa_xy[0], wc[1] + z.poa_xy[1]]), nc.min_travel)
        cell = hmap.cell_of(poa)
        if attempt and cell is not None and mask[cell[1], cell[0]]:
            # the net keeps aiming at a masked spot; search outward from it,
            # a little wider on every retry
            poa = _refine_poa(hmap, poa, mask, cfg.refine_radius * (1 + attempt))
            cell = hmap.cell_of(poa)
        reason, bad_label, bad_cells = None, None, []
        if cell is None or not cfg.zone.contains(poa):
            reason = "outside_zone"
        else:
            lab = CellLabel(int(labels[cell[1], cell[0]]))
            if lab in BLOCKING:
                reason, bad_label = "poa_label", lab
            else:
                poa = _refine_poa(hmap, poa, mask, cfg.refine_radius)
                cell = hmap.cell_of(poa)
                if hmap.elevation[cell[1], cell[0]] - hmap.datum < cfg.min_material:
                    reason = "no_material"
        travel = z.travel_length
        end = None
        if reason is None:
            r = float(np.hypot(*poa))
            radial = poa / r
            travel = min(travel, r - cfg.zone.r_min)
            if travel < nc.min_travel:
                reason = "short_travel"
            else:
                end = poa - travel * radial
                swept = _cells_along(hmap, poa, end, model.bucket_width)
                hits = [(c, s) for c, s in swept if CellLabel(int(labels[c[1], c[0]])) in BLOCKING]
                if hits:
                    c0, s0 = hits[0]
                    bad_label = CellLabel(int(labels[c0[1], c0[0]]))
                    cut = s0 - hmap.cell_size
                    if cut >= nc.min_travel:
                        notes.append(("travel_truncated", {"label": bad_label.name, "from": round(travel, 6),
                                                           "to": round(cut, 6)}))
                        travel = cut
                        end = poa - travel * radial
                    else:
                        reason = "swept_label"
                        bad_cells = [c for c, _ in hits]
        if reason is None:
            try:
                _dig_endpoints(hmap, poa, end, cfg)
            except (Unreachable, LimitViolation):
                reason = "unreachable"
        if reason is None:
            return ScoopTarget((float(poa[0]), float(poa[1])), (float(end[0]), float(end[1])), float(travel),
                               attempt), tuple(notes)
        payload = {"attempt": attempt, "reason": reason, "poa": [round(float(v), 6) for v in poa]}
        if bad_label is not None:
            payload["label"] = bad_label.name
            # mask every window cell carrying the offending label
            mask |= labels == int(bad_label)
            for c in bad_cells:
                mask[c[1], c[0]] = True
        if cell is not None:
            _mask_around(mask, cell)
        notes.append(("mask_retry", payload))
    exc = NoValidTarget(f"no valid target after {cfg.max_retries} retries")
    exc.notes = tuple(notes)
    raise exc


def _refine_poa(hmap: HeightMap, poa, mask, radius):
    """Move the POA to the highest eligible cell within ``radius`` (ties: lowest row-major index).

    The network's POA is only accurate to a few cells; this local step keeps
    it on the crest it was aiming at. Masked and blocking cells are skipped.
    """
    if radius <= 0:
        return poa
    c0 = hmap.cell_of(poa)
    k = int(math.ceil(radius / hmap.cell_size))
    ys = slice(max(0, c0[1] - k), min(hmap.height, c0[1] + k + 1))
    xs = slice(max(0, c0[0] - k), min(hmap.width, c0[0] + k + 1))
    centers = hmap.cell_centers()[ys, xs]
    near = np.hypot(*(centers - poa).transpose(2, 0, 1)) <= radius
    ok = near & ~mask[ys, xs] & ~np.isin(hmap.labels[ys, xs], [int(b) for b in BLOCKING])
    if not ok.any():
        return poa
    elev = np.where(ok, hmap.elevation[ys, xs], -np.inf)
    iy, ix = np.unravel_index(int(np.argmax(elev)), elev.shape)
    return centers[iy, ix].copy()


def _dig_endpoints(hmap, poa, end, cfg: PlannerConfig):
    model = cfg.model
    zs = hmap.surface_at(poa) - cfg.nominal_depth
    ze = hmap.surface_at(end) - cfg.nominal_depth
    qs = inverse_kinematics(model, (poa[0], poa[1], zs), cfg.attack_angle)
    qe = inverse_kinematics(model, (end[0], end[1], ze), cfg.curl_angle)
    return qs, qe


def drop_site(box: Box3D, hmap: HeightMap, cfg: PlannerConfig):
    """Nearest spot outside the zone along the rock's bearing where the rock fits.

    Candidates sit just inside the annulus, just outside it, and past the
    material rectangle; if none fits on the bearing, nearby bearings are tried.
    """
    c = box.center[:2]
    r0 = float(np.hypot(*c))
    base = math.atan2(c[1], c[0])
    rad = float(np.hypot(*box.half_extents[:2]))
    zone = cfg.zone
    m = cfg.drop_margin
    for dtheta in [0.0] + [s * k * math.radians(10) for k in range(1, 10) for s in (1, -1)]:
        th = base + dtheta
        u = np.array([math.cos(th), math.sin(th)])
        cands = {zone.r_min - m - rad, zone.r_max + m + rad}
        # leaving the rectangle along this bearing
        for radius in np.arange(zone.r_min, zone.r_max + 1e-9, hmap.cell_size):
            if not zone.contains(radius * u):
                cands.add(radius + m + rad)
                break
        for radius in sorted(cands, key=lambda v: abs(v - r0)):
            if radius < 1.5:
                continue
            xy = radius * u
            moved = Box3D.upright((xy[0], xy[1], box.center[2]), box.half_extents, box.center_pose.yaw)
            if zone.intersects_box(moved):
                continue
            try:
                _, rid = place_rock(hmap, moved)
            except (ValueError, IndexError):
                continue
            try:
                inverse_kinematics(cfg.model, (xy[0], xy[1], box.top + cfg.grab_clearance + 0.3), -math.pi / 2)
            except (Unreachable, LimitViolation):
                continue
            return (float(xy[0]), float(xy[1]))
    raise NoValidTarget("no drop site for rock")


def decide(frame: PerceptionFrame, hmap: HeightMap, net: SelectionNet, state: "CycleState",
           cfg: PlannerConfig | None = None) -> Decision:
    """One action for the current snapshot (see module docstring for the order)."""
    cfg = cfg or PlannerConfig()
    if watchdog(frame) is not None:
        return Decision("Halt", reason="estop")
    for box in frame.rock_boxes:
        if cfg.zone.intersects_box(box):
            return Decision("RemoveRock", box=box, drop_site=drop_site(box, hmap, cfg))
    if state.bucket_load > 0:
        if frame.truck_pose is None:
            return Decision("Halt", reason="no_truck")
        q = dump_pose(frame.truck_pose, cfg.truck_dims, cfg.model, cfg.dump_clearance, cfg.carry_angle)
        return Decision("Dump", dump_config=q)
    target, notes = select_target(hmap, net, cfg)
    return Decision("Scoop", target=target, notes=notes)


# --- execution ---------------------------------------------------------------

@dataclass
class Segment:
    name: str
    trajectory: Trajectory
    ticks: int
    checked: bool = True
    obstacle_avoided: bool = False


def segment_ticks(traj: Trajectory, model: ArmModel, speed_factor=1.0):
    """Whole ticks needed to follow ``traj`` at ``speed_factor`` x the joint speed limits."""
    steps = np.abs(np.diff(traj.configs, axis=0)) / (model.speeds * speed_factor)
    duration = float(np.sum(np.max(steps, axis=1)))
    return max(1, int(math.ceil(duration * TICK_HZ - 1e-9)))


@dataclass
class CycleState:
    phase: Phase = Phase.IDLE
    q: np.ndarray = field(default_factory=lambda: np.zeros(4))
    decision: Decision | None = None
    segments: list = field(default_factory=list)
    seg_index: int = 0
    seg_tick: int = 0
    bucket_load: float = 0.0
    halted_from: Phase | None = None
    phase_start: int = 0
    cycle: dict = field(default_factory=dict)
    cycles: list = field(default_factory=list)
    interventions: int = 0
    violations: list = field(default_factory=list)
    footprint: list = field(default_factory=list)
    poa_labels: list = field(default_factory=list)
    carrying: Box3D | None = None
    next_decision_tick: int = 0
    finished: bool = False
    plan_count: int = 0
    stuck: int = 0

    @property
    def trajectory(self):
        if self.seg_index < len(self.segments):
            return self.segments[self.seg_index].trajectory
        return None


def _interp(traj: Trajectory, frac):
    c = traj.configs
    x = frac * (len(c) - 1)
    i = min(int(x), len(c) - 2)
    a = x - i
    return c[i] * (1 - a) + c[i + 1] * a


class Planner:
    """Glue between perception, decisions, motion planning and the world."""

    def __init__(self, net: SelectionNet, weights: PatternWeights, cfg: PlannerConfig, perception, seed=0,
                 check_invariants=True):
        self.net = net
        self.weights = weights
        self.cfg = cfg
        self.perception = perception
        self.seed = seed
        self.check = check_invariants
        self.ready = cfg.ready_config()

    def initial_state(self):
        return CycleState(q=self.ready.as_array())

    # --- planning helpers ---
    def _obstacles(self, world: World):
        return list(world.obstacles) + list(world.dropped_rocks)

    def _plan(self, state, world, q_from, q_to, name, weights=None, events=None):
        state.plan_count += 1
        seed = [self.seed, state.plan_count]
        obstacles = self._obstacles(world)
        res = stomp_optimize(JointConfig.from_array(q_from), JointConfig.from_array(q_to), weights, obstacles,
                             self.cfg.stomp, seed, self.cfg.model)
        seg = Segment(name, res.trajectory, segment_ticks(res.trajectory, self.cfg.model))
        if not res.feasible:
            state.interventions += 1
            seg.checked = False
            events.append(("intervention", {"reason": "planning_failed", "segment": name,
                                            "max_penetration": round(res.max_penetration, 6)}))
        elif not res.seed_feasible:
            seg.obstacle_avoided = True
            events.append(("obstacle_avoidance", {"segment": name, "iterations": res.iterations,
                                                  "seed_penetration": round(res.seed_obstacle_cost, 6)}))
        return seg

    def _linear(self, q_from, q_to, name, speed_factor=1.0):
        traj = Trajectory(np.linspace(q_from, q_to, 3), 0.1)
        return Segment(name, traj, segment_ticks(traj, self.cfg.model, speed_factor))

    def _plan_scoop(self, state, world, target: ScoopTarget, events):
        cfg, model, hmap = self.cfg, self.cfg.model, world.hmap
        qs, qe = _dig_endpoints(hmap, np.array(target.poa), np.array(target.end), cfg)
        dig = self._plan(state, world, qs.as_array(), qe.as_array(), "dig", self.weights, events)
        configs = self._deepen(dig.trajectory.configs, hmap)
        dig.trajectory = Trajectory(configs, dig.trajectory.dt)
        dig.ticks = segment_ticks(dig.trajectory, model, cfg.dig_speed_factor)
        approach = self._plan(state, world, state.q, configs[0], "approach", None, events)
        tips = tip_positions(model, configs)
        state.footprint = footprint_from_tips(tips, hmap, model.bucket_width)
        return [approach, dig]

    def _deepen(self, configs, hmap):
        """Shift the dig path vertically so its cut volume is ``fill_target`` x capacity."""
        cfg, model = self.cfg, self.cfg.model
        tips = tip_positions(model, configs)
        phis = configs[:, 1] + configs[:, 2] + configs[:, 3]
        fp = footprint_from_tips(tips - np.array([0, 0, cfg.max_shift]), hmap, model.bucket_width)
        if not fp:
            return configs
        cells = np.array([c for c, _ in fp])
        depth = np.array([d for _, d in fp]) - cfg.max_shift
        lab = hmap.labels[cells[:, 1], cells[:, 0]]
        ok = ~np.isin(lab, [int(CellLabel.ROCK), int(CellLabel.IMPURITY)])
        avail = np.maximum(hmap.elevation[cells[:, 1], cells[:, 0]] - hmap.datum, 0.0)
        target = cfg.fill_target * model.bucket_capacity / hmap.cell_area

        def vol(shift):
            return float(np.sum(np.where(ok, np.clip(depth + shift, 0.0, avail), 0.0)))

        lo, hi = -cfg.max_shift, cfg.max_shift
        if vol(hi) < target:
            shift = hi
        elif vol(lo) > target:
            shift = lo
        else:
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if vol(mid) < target:
                    lo = mid
                else:
                    hi = mid
            shift = hi
        for _ in range(8):
            try:
                out = np.array([inverse_kinematics(model, t - np.array([0, 0, shift]), p).as_array()
                                for t, p in zip(tips, phis)])
                return out
            except (Unreachable, LimitViolation):
                shift *= 0.5
        return configs

    def _lift_config(self, q_end):
        """Carry pose above the end of the dig, pulled inward if the arm cannot hold it there."""
        model = self.cfg.model
        tip, _ = forward_kinematics(model, JointConfig.from_array(q_end))
        r0 = max(float(np.hypot(tip[0], tip[1])), self.cfg.zone.r_min)
        th = float(q_end[0])
        for r in np.arange(r0, 1.5, -0.25):
            try:
                return inverse_kinematics(model, (r * math.cos(th), r * math.sin(th), self.cfg.lift_height),
                                          self.cfg.carry_angle).as_array()
            except (Unreachable, LimitViolation):
                continue
        raise Unreachable(f"no carry pose on bearing {th:.3f}")

    def _dump_segments(self, q_dump):
        model = self.cfg.model
        q_open = q_dump.copy()
        q_open[3] = min(q_dump[3] + self.cfg.dump_open, model.upper[3])
        return [self._linear(q_dump, q_open, "open"), self._linear(q_open, q_dump, "close")]

    def _rock_segments(self, state, world, box: Box3D, site, events):
        cfg, model = self.cfg, self.cfg.model
        c = box.center
        above = cfg.grab_clearance
        grab = inverse_kinematics(model, (c[0], c[1], box.top + above), -math.pi / 2).as_array()
        held = grab.copy()
        held[3] = max(min(grab[3] - 0.8, model.upper[3]), model.lower[3])
        lift_r = max(float(np.hypot(c[0], c[1])), cfg.zone.r_min)
        th = math.atan2(c[1], c[0])
        lift = inverse_kinematics(model, (lift_r * math.cos(th), lift_r * math.sin(th), cfg.lift_height),
                                  cfg.carry_angle).as_array()
        place = inverse_kinematics(model, (site[0], site[1], box.top + above + 0.3), -math.pi / 2).as_array()
        return [
            self._plan(state, world, state.q, grab, "rock_approach", None, events),
            self._linear(grab, held, "grab"),
            self._plan(state, world, held, lift, "rock_lift", None, events),
            self._plan(state, world, lift, place, "rock_carry", None, events),
            self._linear(place, place, "release"),
            self._plan(state, world, place, self.ready.as_array(), "rock_return", None, events),
        ]

    # --- phase machine ---
    def _enter(self, state, world, phase, segments, events, action, payload=None, check=True):
        prev = state.phase
        if self.check and phase not in TRANSITIONS[prev]:
            state.violations.append(f"t={world.time:.1f}: illegal transition {prev.value}->{phase.value}")
        self._close_phase(state, world)
        state.phase = phase
        state.segments = segments
        state.seg_index = 0
        state.seg_tick = 0
        state.phase_start = world.tick
        events.append(("transition", prev, phase, action, payload or {}))
        if check:
            for seg in segments:
                self._check_segment(state, world, seg)

    def _check_segment(self, state, world, seg):
        if not self.check or not seg.checked or seg.name in ("grab", "release", "open", "close"):
            return
        ok, min_sd, _ = dense_collision_check(seg.trajectory, self._obstacles(world), self.cfg.model,
                                              self.cfg.stomp.clearance, 10)
        if not ok:
            state.violations.append(f"t={world.time:.1f}: segment {seg.name} fails dense collision check ({min_sd:.4f} m)")

    def _close_phase(self, state, world):
        if state.phase in CYCLE_PHASES:
            ticks = world.tick - state.phase_start
            if ticks > 0:
                state.cycle[state.phase.value] = state.cycle.get(state.phase.value, 0) + ticks

    def _frame(self, world, estimate_pose):
        return self.perception.observe(world.time, world.hmap, world.obstacles,
                                       world.truck_pose, world.intruder_active(), None, estimate_pose)

    def _decide_and_enter(self, state, world, events):
        needs_pose = state.bucket_load > 0
        frame = self._frame(world, needs_pose)
        try:
            d = decide(frame, world.hmap, self.net, state, self.cfg)
        except NoValidTarget as exc:
            # an operator has to step in: material is brought in if the site
            # has a feed, otherwise (or if that did not help) the run ends
            for action, payload in getattr(exc, "notes", ()):
                events.append(("event", action, payload))
            state.interventions += 1
            state.stuck += 1
            events.append(("event", "intervention", {"reason": "no_valid_target", "detail": str(exc)}))
            fed = world.apply_feed(force=True) if state.stuck == 1 else 0.0
            if fed:
                events.append(("event", "feed", {"volume": fed}))
            else:
                state.finished = True
            self._go_idle(state, world, events)
            return
        except (Unreachable, LimitViolation) as exc:
            self._unreachable(state, world, events, "Dump", exc)
            return
        for action, payload in d.notes:
            events.append(("event", action, payload))
        state.decision = d
        try:
            self._start(state, world, d, events)
        except (Unreachable, LimitViolation) as exc:
            self._unreachable(state, world, events, d.action, exc)
            return
        state.stuck = 0

    def _unreachable(self, state, world, events, action, exc):
        state.interventions += 1
        state.stuck += 1
        events.append(("event", "intervention", {"reason": "unreachable", "action": action, "detail": str(exc)}))
        if state.stuck > 1:
            state.finished = True
        self._go_idle(state, world, events)

    def _start(self, state, world, d: Decision, events):
        plan_events = []
        if d.action == "Halt":
            self._go_idle(state, world, events, d.reason)
            return
        if d.action == "RemoveRock":
            segs = self._rock_segments(state, world, d.box, d.drop_site, plan_events)
            payload = {"box": d.box.to_json(), "drop_site": list(d.drop_site)}
            self._enter(state, world, Phase.REMOVE_ROCK, segs, events, "RemoveRock", payload)
        elif d.action == "Dump":
            q_lift = self._lift_config(state.q)
            segs = [self._linear(state.q, q_lift, "lift", self.cfg.lift_speed_factor),
                    self._plan(state, world, q_lift, d.dump_config.as_array(), "swing_to_truck", None, plan_events)]
            self._enter(state, world, Phase.SWING_TO_TRUCK, segs, events, "Dump",
                        {"dump_config": [round(v, 6) for v in d.dump_config.as_array()]})
        else:
            t = d.target
            cell = world.hmap.cell_of(t.poa)
            lab = CellLabel(int(world.hmap.labels[cell[1], cell[0]]))
            state.poa_labels.append(lab)
            if self.check and lab == CellLabel.WATER:
                state.violations.append(f"t={world.time:.1f}: scoop POA on water")
            segs = self._plan_scoop(state, world, t, plan_events)
            self._enter(state, world, Phase.SCOOP, segs, events, "Scoop",
                        {"poa": [round(v, 6) for v in t.poa], "travel": round(t.travel, 6), "retries": t.retries})
        for action, payload in plan_events:
            events.append(("event", action, payload))

    def _go_idle(self, state, world, events, reason=""):
        if state.phase != Phase.IDLE:
            self._enter(state, world, Phase.IDLE, [], events, "Halt", {"reason": reason} if reason else {})
        state.next_decision_tick = world.tick + TICK_HZ

    def _complete_phase(self, state, world, events):
        phase = state.phase
        if phase == Phase.SCOOP:
            world.hmap, vol, touched = scoop(world.hmap, state.footprint, self.cfg.model.bucket_capacity,
                                             self.cfg.overfill)
            state.bucket_load = vol
            state.cycle["fill"] = vol / self.cfg.model.bucket_capacity * 100.0
            state.cycle["load"] = vol
            events.append(("event", "scooped", {"volume": round(vol, 9), "labels": sorted(l.name for l in touched)}))
            self._check_load(state, world)
            self._decide_and_enter(state, world, events)
        elif phase == Phase.SWING_TO_TRUCK:
            self._enter(state, world, Phase.DUMP, self._dump_segments(state.q), events, "Dump")
        elif phase == Phase.DUMP:
            tip, _ = forward_kinematics(self.cfg.model, JointConfig.from_array(state.q))
            load = state.bucket_load
            into = world.deliver(load, tip[:2])
            state.bucket_load = 0.0
            state.cycle["delivered"] = state.cycle.get("delivered", 0.0) + (load if into else 0.0)
            events.append(("event", "dumped", {"volume": round(load, 9), "into_truck": into}))
            plan = []
            back = self._plan(state, world, state.q, self.ready.as_array(), "swing_back", None, plan)
            self._enter(state, world, Phase.SWING_BACK, [back], events, "SwingBack")
            for action, payload in plan:
                events.append(("event", action, payload))
        elif phase == Phase.SWING_BACK:
            self._close_phase(state, world)
            state.phase_start = world.tick
            if all(p.value in state.cycle for p in CYCLE_PHASES):
                rec = {p.value: state.cycle[p.value] / TICK_HZ for p in CYCLE_PHASES}
                rec["fill"] = state.cycle.get("fill", 0.0)
                rec["load"] = state.cycle.get("load", 0.0)
                rec["delivered"] = state.cycle.get("delivered", 0.0)
                rec["t_end"] = world.time
                state.cycles.append(rec)
                events.append(("event", "cycle_complete", {"n": len(state.cycles)}))
            state.cycle = {}
            fed = world.apply_feed()
            if fed:
                events.append(("event", "feed", {"volume": fed}))
            self._check_conservation(state, world)
            self._decide_and_enter(state, world, events)
        elif phase == Phase.REMOVE_ROCK:
            self._decide_and_enter(state, world, events)

    def _segment_done(self, state, world, seg, events):
        if seg.name == "grab":
            box = state.decision.box
            rid = _rock_id(world.hmap, box)
            if rid is not None:
                world.hmap = remove_rock(world.hmap, rid)
            state.carrying = box
        elif seg.name == "release" and state.carrying is not None:
            box = state.carrying
            site = state.decision.drop_site
            if state.bucket_load > 0:
                world.return_to_terrain(state.bucket_load, site)
                events.append(("event", "spill_returned", {"volume": round(state.bucket_load, 9)}))
                state.bucket_load = 0.0
            iy_ix = world.hmap.cell_of(site)
            ground = float(world.hmap.elevation[iy_ix[1], iy_ix[0]])
            moved = Box3D.upright((site[0], site[1], ground + box.half_extents[2]), box.half_extents,
                                  box.center_pose.yaw)
            try:
                world.hmap, _ = place_rock(world.hmap, moved)
            except ValueError:
                pass
            world.dropped_rocks.append(moved)
            state.carrying = None
            events.append(("event", "rock_removed", {"drop_site": [round(v, 6) for v in site]}))

    def _check_load(self, state, world):
        cap = self.cfg.model.bucket_capacity * self.cfg.overfill
        if self.check and not (0.0 <= state.bucket_load <= cap + 1e-12):
            state.violations.append(f"t={world.time:.1f}: bucket load {state.bucket_load} outside [0, {cap}]")

    def _check_conservation(self, state, world):
        err = world.conservation_error(state.bucket_load)
        if self.check and abs(err) > 1e-6:
            state.violations.append(f"t={world.time:.1f}: conservation error {err:.3e} m3")

    def step(self, state: CycleState, world: World):
        """Advance one tick. Returns the list of events emitted during it."""
        events = []
        world.update()
        intruder = world.intruder_active()
        if intruder and state.phase != Phase.ESTOP:
            seg = state.segments[state.seg_index] if state.seg_index < len(state.segments) else None
            if seg is not None:
                state.q = _interp(seg.trajectory, state.seg_tick / seg.ticks)
            state.halted_from = state.phase
            kept = (state.segments, state.seg_index, state.seg_tick)
            self._enter(state, world, Phase.ESTOP, [], events, "Halt", {"reason": "intruder"}, check=False)
            state.segments, state.seg_index, state.seg_tick = kept
        elif state.phase == Phase.ESTOP:
            if not intruder:
                if state.halted_from == Phase.SCOOP:
                    # an interrupted scoop is dropped without touching the terrain
                    self._enter(state, world, Phase.IDLE, [], events, "Resume", {"aborted": "Scoop"})
                    state.cycle = {}
                    state.next_decision_tick = world.tick
                else:
                    # the halted trajectory resumes from the tick it stopped at
                    kept = (state.segments, state.seg_index, state.seg_tick)
                    self._enter(state, world, state.halted_from, [], events, "Resume", {}, check=False)
                    state.segments, state.seg_index, state.seg_tick = kept
                state.halted_from = None
        elif state.phase == Phase.IDLE:
            if world.tick >= state.next_decision_tick and not state.finished:
                self._decide_and_enter(state, world, events)
        else:
            state.seg_tick += 1
            while state.seg_index < len(state.segments):
                seg = state.segments[state.seg_index]
                if state.seg_tick < seg.ticks:
                    break
                state.q = seg.trajectory.configs[-1].copy()
                self._segment_done(state, world, seg, events)
                state.seg_index += 1
                state.seg_tick = 0
                if state.seg_index < len(state.segments):
                    break
            if state.seg_index >= len(state.segments):
                self._complete_phase(state, world, events)
        world.tick += 1
        return events


def _rock_id(hmap: HeightMap, box: Box3D):
    best, best_d = None, np.inf
    for rid, rec in hmap.rocks.items():
        d = float(np.linalg.norm(rec.box.center - box.center))
        if d < best_d:
            best, best_d = rid, d
    return best if best_d < 1.0 else None


def step(state: CycleState, world: World, planner: Planner):
    """Module-level alias for ``planner.step``; returns (state, events)."""
    return state, planner.step(state, world)
