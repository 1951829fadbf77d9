import math

import numpy as np
import pytest

from aesplan.errors import NoValidTarget, Unreachable
from aesplan.geometry import Box3D, Pose3D
from aesplan.harness import load_bundled, run_scenario
from aesplan.harness.runner import make_planner
from aesplan.kinematics import ArmModel, JointConfig, forward_kinematics
from aesplan.motion import Trajectory
from aesplan.perception import MaterialClass, PerceptionFrame
from aesplan.planner import (BLOCKING, TRANSITIONS, CycleState, Phase, PlannerConfig, _cells_along, decide,
                             dump_pose, segment_ticks, select_target)
from aesplan.terrain import CellLabel, label_region

MODEL = ArmModel()
TRUCK = Pose3D.from_xyz_yaw(0.0, 3.6, 0.0, math.pi / 2)
DIMS = (3.0, 2.0, 1.6)


def frame(rocks=(), truck=TRUCK, intruder=False, t=0.0):
    return PerceptionFrame(list(rocks), np.zeros((1, 1), np.int8), MaterialClass.DRY_SOIL, truck, intruder, t)


@pytest.fixture(scope="module")
def site():
    cfg = load_bundled(1)
    return cfg, cfg.build_world(), make_planner(cfg, 0)


# --- decide ----------------------------------------------------------------

def in_zone_rock(rng):
    r, th = rng.uniform(3.2, 4.2), rng.uniform(-0.35, 0.35)
    return Box3D.upright((r * math.cos(th), r * math.sin(th), 0.3), (0.25, 0.2, 0.25), rng.uniform(-1, 1))


def far_rock(rng):
    # behind the machine, well clear of the material rectangle
    return Box3D.upright((rng.uniform(-5.0, -2.0), rng.uniform(-3.0, 3.0), 0.3), (0.25, 0.2, 0.25))


def expected_action(intruder, rocks_in, loaded, truck):
    if intruder:
        return "Halt"
    if rocks_in:
        return "RemoveRock"
    if loaded:
        return "Dump" if truck else "Halt"
    return "Scoop"


def test_priority_order_fuzz(site):
    _, world, planner = site
    rng = np.random.default_rng(0)
    counts = {}
    for _ in range(10_000):
        intruder = rng.random() < 0.25
        n_in, n_out = rng.integers(0, 2), rng.integers(0, 3)
        rocks = [in_zone_rock(rng) for _ in range(n_in)] + [far_rock(rng) for _ in range(n_out)]
        rng.shuffle(rocks)
        loaded = rng.random() < 0.5
        truck = TRUCK if rng.random() < 0.8 else None
        state = CycleState(bucket_load=0.2 if loaded else 0.0)
        d = decide(frame(rocks, truck, intruder), world.hmap, planner.net, state, planner.cfg)
        want = expected_action(intruder, n_in > 0, loaded, truck is not None)
        assert d.action == want
        counts[want] = counts.get(want, 0) + 1
        if d.action == "RemoveRock":
            assert planner.cfg.zone.intersects_box(d.box)
            moved = Box3D.upright((*d.drop_site, d.box.center[2]), d.box.half_extents, d.box.center_pose.yaw)
            assert not planner.cfg.zone.intersects_box(moved)
    assert set(counts) == {"Halt", "RemoveRock", "Dump", "Scoop"}


def test_intruder_beats_everything(site):
    _, world, planner = site
    rng = np.random.default_rng(1)
    d = decide(frame([in_zone_rock(rng)], intruder=True), world.hmap, planner.net, CycleState(bucket_load=0.2),
               planner.cfg)
    assert d.action == "Halt" and d.reason == "estop"


def test_rock_removed_before_scoop(site):
    _, world, planner = site
    rng = np.random.default_rng(2)
    d = decide(frame([far_rock(rng), in_zone_rock(rng)]), world.hmap, planner.net, CycleState(), planner.cfg)
    assert d.action == "RemoveRock"
    assert np.hypot(*d.drop_site) > 1.5


def test_dump_needs_truck_pose(site):
    _, world, planner = site
    d = decide(frame(truck=None), world.hmap, planner.net, CycleState(bucket_load=0.1), planner.cfg)
    assert d.action == "Halt" and d.reason == "no_truck"
    d = decide(frame(), world.hmap, planner.net, CycleState(bucket_load=0.1), planner.cfg)
    assert d.action == "Dump" and d.dump_config is not None


# --- target filtering --------------------------------------------------------

def assert_clean_target(hmap, target, width):
    cell = hmap.cell_of(target.poa)
    assert CellLabel(int(hmap.labels[cell[1], cell[0]])) not in BLOCKING
    for c, _ in _cells_along(hmap, target.poa, target.end, width):
        assert CellLabel(int(hmap.labels[c[1], c[0]])) not in BLOCKING


def first_poa(site):
    _, world, planner = site
    target, _ = select_target(world.hmap, planner.net, planner.cfg)
    return target


def test_water_poa_is_reselected(site):
    cfg, _, planner = site
    poa = first_poa(site).poa
    hmap = cfg.build_world().hmap
    label_region(hmap, (poa[0] - 0.4, poa[1] - 0.4, poa[0] + 0.4, poa[1] + 0.4), CellLabel.WATER)
    target, notes = select_target(hmap, planner.net, planner.cfg)
    assert notes and any(p.get("label") == "WATER" for _, p in notes)
    assert_clean_target(hmap, target, MODEL.bucket_width)


def test_impurity_on_drag_path(site):
    cfg, _, planner = site
    first = first_poa(site)
    mid = 0.5 * (np.array(first.poa) + np.array(first.end))
    hmap = cfg.build_world().hmap
    label_region(hmap, (mid[0] - 0.15, mid[1] - 0.6, mid[0] + 0.15, mid[1] + 0.6), CellLabel.IMPURITY)
    target, notes = select_target(hmap, planner.net, planner.cfg)
    assert any(p.get("label") == "IMPURITY" for _, p in notes)
    assert_clean_target(hmap, target, MODEL.bucket_width)


def test_all_water_exhausts_retries(site):
    cfg, _, planner = site
    hmap = cfg.build_world().hmap
    label_region(hmap, (1.0, -5.0, 7.0, 5.0), CellLabel.WATER)
    with pytest.raises(NoValidTarget) as info:
        select_target(hmap, planner.net, planner.cfg)
    retries = [p for a, p in info.value.notes if a == "mask_retry"]
    assert len(retries) == planner.cfg.max_retries + 1


# --- dump pose ----------------------------------------------------------------

def test_dump_pose_bearing():
    q = dump_pose(TRUCK, DIMS, MODEL)
    assert q.swing == pytest.approx(math.pi / 2, abs=1e-9)
    tip, _ = forward_kinematics(MODEL, q)
    np.testing.assert_allclose(tip, [0.0, 3.6, 2.1], atol=1e-9)


def test_dump_pose_out_of_reach():
    with pytest.raises(Unreachable):
        dump_pose(Pose3D.from_xyz_yaw(0.0, 9.0, 0.0, 0.0), DIMS, MODEL)


def test_dump_pose_random_trucks():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r, th = rng.uniform(2.5, 4.0), rng.uniform(-math.pi, math.pi)
        pose = Pose3D.from_xyz_yaw(r * math.cos(th), r * math.sin(th), 0.0, rng.uniform(-math.pi, math.pi))
        q = dump_pose(pose, DIMS, MODEL)
        tip, _ = forward_kinematics(MODEL, q)
        assert np.hypot(*(tip[:2] - pose.translation[:2])) < 0.05
        assert tip[2] == pytest.approx(DIMS[2] + 0.5, abs=1e-6)


# --- execution ------------------------------------------------------------------

def test_segment_ticks_matches_speed_limits():
    q = np.array([[0.0, 0.0, 0.0, 0.0], [0.3, 0.1, 0.0, 0.0], [0.3, 0.1, -0.4, 0.2]])
    traj = Trajectory(q, 0.1)
    steps = np.abs(np.diff(q, axis=0)) / MODEL.speeds
    want = math.ceil(np.sum(steps.max(axis=1)) * 10 - 1e-9)
    assert segment_ticks(traj, MODEL) == want
    assert segment_ticks(traj, MODEL, 0.5) == math.ceil(np.sum(steps.max(axis=1)) * 20 - 1e-9)


def test_nominal_cycle_sequence():
    res = run_scenario(load_bundled(1), cycles=3)
    assert not res.violations
    phases = [e["phase_to"] for e in res.events if e["phase_from"] != e["phase_to"]
              or e["action"] == "Scoop"]
    i = phases.index("Scoop")
    assert phases[i:i + 9] == ["Scoop", "SwingToTruck", "Dump", "SwingBack"] * 2 + ["Scoop"]
    assert not any(e["action"] == "RemoveRock" or e["action"] == "mask_retry" for e in res.events)


def test_transitions_follow_the_graph():
    res = run_scenario(load_bundled(8), cycles=6)
    assert not res.violations
    for e in res.events:
        if e["phase_from"] != e["phase_to"]:
            assert Phase(e["phase_to"]) in TRANSITIONS[Phase(e["phase_from"])]


def drive(planner, state, world, until, limit=5000):
    for _ in range(limit):
        if until(state):
            return
        planner.step(state, world)
    raise AssertionError("condition never reached")


def fresh(i=1):
    cfg = load_bundled(i)
    return cfg.build_world(), make_planner(cfg, cfg.seed)


def test_estop_during_swing_holds_waypoint():
    world, planner = fresh()
    state = planner.initial_state()
    drive(planner, state, world, lambda s: s.phase == Phase.SWING_TO_TRUCK and s.seg_index == 1 and s.seg_tick == 5)
    seg = state.segments[1]
    world.intruders = [(world.time, world.time + 2.0)]
    events = planner.step(state, world)
    assert state.phase == Phase.ESTOP
    assert any(e[0] == "transition" and e[2] == Phase.ESTOP for e in events)
    held = state.q.copy()
    c = seg.trajectory.configs
    x = (5 / seg.ticks) * (len(c) - 1)
    i = int(x)
    np.testing.assert_allclose(held, c[i] + (x - i) * (c[i + 1] - c[i]), atol=1e-12)
    for _ in range(10):
        planner.step(state, world)
        assert state.phase == Phase.ESTOP
        np.testing.assert_array_equal(state.q, held)
        assert state.seg_index == 1 and state.seg_tick == 5
    drive(planner, state, world, lambda s: s.phase != Phase.ESTOP)
    assert state.phase == Phase.SWING_TO_TRUCK and state.seg_index == 1


def test_estop_aborts_scoop_without_touching_terrain():
    world, planner = fresh()
    state = planner.initial_state()
    drive(planner, state, world, lambda s: s.phase == Phase.SCOOP and s.seg_tick == 3)
    before = world.hmap.elevation.copy()
    world.intruders = [(world.time, world.time + 1.0)]
    drive(planner, state, world, lambda s: s.phase == Phase.IDLE)
    np.testing.assert_array_equal(world.hmap.elevation, before)
    assert state.bucket_load == 0.0


def test_dump_hands_load_to_truck():
    world, planner = fresh()
    state = planner.initial_state()
    drive(planner, state, world, lambda s: s.phase == Phase.DUMP)
    load, tally = state.bucket_load, world.truck_tally
    assert load > 0
    drive(planner, state, world, lambda s: s.phase == Phase.SWING_BACK)
    assert state.bucket_load == 0.0
    assert world.truck_tally == tally + load
    assert world.spillage == 0.0


def test_bucket_load_bounds_and_conservation():
    world, planner = fresh(8)
    state = planner.initial_state()
    cap = planner.cfg.model.bucket_capacity * planner.cfg.overfill
    for _ in range(3000):
        planner.step(state, world)
        assert 0.0 <= state.bucket_load <= cap + 1e-12
        assert abs(world.conservation_error(state.bucket_load)) < 1e-6
    assert not state.violations


def test_water_never_scooped():
    for i in (4, 8):
        res = run_scenario(load_bundled(i), cycles=8)
        assert res.state.poa_labels
        assert CellLabel.WATER not in res.state.poa_labels
        assert not res.violations


def test_ready_config_is_valid():
    cfg = PlannerConfig()
    q = cfg.ready_config()
    tip, _ = forward_kinematics(cfg.model, q)
    np.testing.assert_allclose(tip, cfg.ready_tip, atol=1e-9)
    assert isinstance(q, JointConfig)
