"""End-to-end scenario runs: tick loop, event log, invariants, flag check."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field

from aesplan.harness.defaults import default_selector, default_weights
from aesplan.harness.report import compute_metrics, report
from aesplan.harness.scenario import FLAG_NAMES, ScenarioConfig
from aesplan.kinematics import ArmModel
from aesplan.perception import PerceptionSim, TruckTracker, build_truck_template
from aesplan.planner import Phase, Planner, PlannerConfig
from aesplan.world import TICK_HZ

CONSERVATION_TOL = 1e-6


@dataclass
class RunResult:
    config: ScenarioConfig
    seed: int
    metrics: object
    events: list
    world: object
    state: object
    violations: list
    wall_seconds: float
    flag_check: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.violations

    def event_log(self):
        """The event log as JSONL text (stable key order and float formatting)."""
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events)


def _clean(v):
    if isinstance(v, float):
        return round(v, 9) if math.isfinite(v) else str(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "item"):
        return _clean(v.item())
    return v


def observed_tasks(events):
    """Which flagged tasks the log shows: rock removal, obstacle-avoiding plans, water handling."""
    tm = any(e["action"] == "RemoveRock" and e["phase_to"] == Phase.REMOVE_ROCK.value for e in events)
    oa = any(e["action"] == "obstacle_avoidance" for e in events)
    water = any(e["action"] in ("mask_retry", "travel_truncated") and e["payload"].get("label") == "WATER"
                for e in events)
    return {"terrain_manipulation": tm, "obstacle_avoidance": oa, "water": water}


def flag_conformance(config: ScenarioConfig, events):
    seen = observed_tasks(events)
    mismatches = [f for f in FLAG_NAMES if seen[f] != config.flags[f]]
    return seen, mismatches


def make_planner(config: ScenarioConfig, seed, net=None, weights=None, model=None, check=True):
    model = model or ArmModel()
    spec = config.truck_spec()
    pcfg = PlannerConfig(model=model, zone=config.working_zone(), window_center=tuple(config.window_center),
                         truck_dims=spec.dims)
    template = build_truck_template(spec.bed_dims, spec.bed_height)
    tracker = TruckTracker(template, spec.pose)
    perception = PerceptionSim(config.noise_params(), seed, truck_template=template, tracker=tracker)
    return Planner(net or default_selector(), weights or default_weights(), pcfg, perception, seed, check)


def run_scenario(config: ScenarioConfig, seed=None, cycles=None, hours=None, out_dir=None, net=None,
                 weights=None, check=True, check_flags=True):
    """Run until the cycle budget, the time budget or the material runs out.

    ``cycles`` defaults to the config's budget; with ``hours`` given the run
    is time-bounded instead (and ``cycles`` becomes an optional extra cap).
    """
    t0 = time.perf_counter()
    seed = config.seed if seed is None else int(seed)
    world = config.build_world(seed)
    planner = make_planner(config, seed, net, weights, check=check)
    state = planner.initial_state()
    if hours is None:
        budget_cycles = config.cycles if cycles is None else int(cycles)
        limit_ticks = int(round(config.max_hours * 3600 * TICK_HZ))
    else:
        budget_cycles = math.inf if cycles is None else int(cycles)
        limit_ticks = int(round(float(hours) * 3600 * TICK_HZ))
    events = []
    while len(state.cycles) < budget_cycles and world.tick < limit_ticks and not state.finished:
        t = world.time
        phase = state.phase.value
        for ev in planner.step(state, world):
            if ev[0] == "transition":
                _, prev, nxt, action, payload = ev
                phase = nxt.value
                events.append({"t": t, "phase_from": prev.value, "phase_to": nxt.value, "action": action,
                               "payload": _clean(payload)})
            else:
                _, action, payload = ev
                events.append({"t": t, "phase_from": phase, "phase_to": phase, "action": action,
                               "payload": _clean(payload)})
    violations = list(state.violations)
    err = world.conservation_error(state.bucket_load)
    if check and abs(err) > CONSERVATION_TOL:
        violations.append(f"final conservation error {err:.3e} m3")
    hours_run = world.time / 3600.0
    extra = {"truck_tally": world.truck_tally, "spillage": world.spillage, "returned": world.returned,
             "fed": world.fed, "removed": world.removed(), "conservation_error": err,
             "trucks_filled": world.trucks_filled, "plans": state.plan_count}
    metrics = compute_metrics(state.cycles, hours_run, state.interventions, planner.cfg.model.bucket_capacity,
                              extra)
    res = RunResult(config, seed, metrics, events, world, state, violations, time.perf_counter() - t0)
    if check_flags:
        seen, mismatches = flag_conformance(config, events)
        res.flag_check = {"observed": seen, "expected": dict(config.flags), "mismatches": mismatches}
    if out_dir is not None:
        write_outputs(res, out_dir)
    return res


def write_outputs(res: RunResult, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "events.jsonl"), "w") as fh:
        fh.write(res.event_log())
    with open(os.path.join(out_dir, "invariants.json"), "w") as fh:
        json.dump({"violations": res.violations, "flag_check": res.flag_check}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if res.metrics.n_cycles:
        report(res.metrics, out_dir, res.config.name)
