"""Stochastic trajectory optimisation in joint space.

Each iteration draws smooth noisy rollouts around the current trajectory,
scores every waypoint (pattern cost + obstacle penetration + joint-limit
penalty), and moves each waypoint toward the rollouts that scored well there,
weighted by ``exp(-h * normalised cost)``. The update is smoothed by the
inverse of the acceleration metric so the trajectory stays smooth. Endpoints
never move. If progress stalls before any clear trajectory is found, the
search restarts from the best iterate with a wider noise scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from aesplan import kernels
from aesplan.errors import PlanningFailed
from aesplan.geometry import stack_boxes
from aesplan.kinematics import ArmModel, JointConfig, is_valid
from aesplan.motion.features import waypoint_features
from aesplan.motion.trajectory import PatternWeights, Trajectory


@dataclass
class StompParams:
    rollouts: int = 20
    iterations: int = 50
    waypoints: int = 30
    h: float = 10.0
    clearance: float = 0.15
    # extra margin held while optimising so the dense check passes between waypoints
    buffer: float = 0.05
    noise_std: float = 0.2
    # while no clear trajectory exists, a stall restarts from the best iterate with wider noise
    noise_growth: float = 1.5
    max_noise_std: float = 0.8
    obstacle_weight: float = 1e5
    limit_weight: float = 1e3
    smooth_weight: float = 1.0
    pattern_blend: float = 1.0
    patience: int = 10
    # extra iterations allowed while no clear trajectory has been found
    max_iterations: int = 200
    # obstacle cost is also evaluated this many times between waypoints
    substeps: int = 3
    oracle_density: int = 10
    dt: float | None = None


class SmoothNoise:
    """Zero-endpoint Gaussian noise with covariance proportional to R^-1.

    ``R = A^T A`` where A is the second-difference operator on the interior
    waypoints. Scaled so the largest per-waypoint standard deviation is 1.
    """

    def __init__(self, n_waypoints):
        if n_waypoints < 3:
            raise ValueError("need at least 3 waypoints")
        n = n_waypoints - 2
        a = np.zeros((n + 2, n))
        for i in range(n):
            a[i, i] = 1.0
            a[i + 1, i] = -2.0
            a[i + 2, i] = 1.0
        r = a.T @ a
        rinv = np.linalg.inv(r)
        self.n_waypoints = n_waypoints
        self.R = r
        self.cov = rinv / np.max(np.diag(rinv))
        self.chol = np.linalg.cholesky(self.cov + 1e-12 * np.eye(n))
        # smoothing projection: columns scaled to a peak of 1/n
        self.M = rinv / (np.max(rinv, axis=0, keepdims=True) * n)

    def sample(self, rng, n_samples, n_joints, std):
        std = np.broadcast_to(np.asarray(std, dtype=float), (n_joints,))
        z = rng.standard_normal((n_samples, n_joints, self.n_waypoints - 2))
        inner = np.einsum("ij,snj->sin", self.chol, z) * std[None, None, :]
        out = np.zeros((n_samples, self.n_waypoints, n_joints))
        out[:, 1:-1, :] = inner
        return out


def _penalty_arrays(obstacles):
    if not obstacles:
        return None
    return stack_boxes(list(obstacles))


def collision_cost(traj, obstacles, model: ArmModel, clearance):
    """Per-waypoint sum over obstacles of max(0, clearance - sd)^2 over the three arm points."""
    configs = traj.configs if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    return _collision_cost_configs(configs, _penalty_arrays(obstacles), model, clearance)[0]


def _collision_cost_configs(configs, boxes, model, clearance):
    shape = configs.shape[:-1]
    flat = configs.reshape(-1, 4)
    if boxes is None:
        return np.zeros(shape), np.full(shape, np.inf)
    pts = kernels.arm_points(np.ascontiguousarray(flat), model.base_height, model.boom_length,
                             model.stick_length, model.bucket_length)
    rot, cen, half = boxes
    cost, mind = kernels.box_penalty(pts, rot, cen, half, clearance)
    return cost.reshape(shape), mind.reshape(shape)


def limit_penalty(configs, model: ArmModel):
    q = np.asarray(configs, dtype=float)
    below = np.maximum(model.lower - q, 0.0)
    above = np.maximum(q - model.upper, 0.0)
    return np.sum(below ** 2 + above ** 2, axis=-1)


def dense_configs(configs, density):
    """Linear joint-space resampling with ``density`` sub-steps per segment."""
    c = np.asarray(configs, dtype=float)
    s = np.arange(density) / density
    seg = c[:-1, None, :] + s[None, :, None] * (c[1:] - c[:-1])[:, None, :]
    return np.concatenate([seg.reshape(-1, c.shape[1]), c[-1:]], axis=0)


def dense_collision_check(traj, obstacles, model: ArmModel, clearance, density=10):
    """(ok, min signed distance, max penetration of the clearance margin)."""
    if not obstacles:
        return True, np.inf, 0.0
    dense = dense_configs(traj.configs if isinstance(traj, Trajectory) else traj, density)
    pts = kernels.arm_points(dense, model.base_height, model.boom_length, model.stick_length,
                             model.bucket_length)
    rot, cen, half = stack_boxes(list(obstacles))
    sd = kernels.box_signed_distance(pts.reshape(-1, 3), rot, cen, half)
    min_sd = float(sd.min())
    return min_sd >= clearance, min_sd, max(0.0, clearance - min_sd)


@dataclass
class StompResult:
    trajectory: Trajectory
    cost: float
    cost_history: list
    iterations: int
    feasible: bool
    max_penetration: float
    seed_obstacle_cost: float
    seed_feasible: bool
    history: list = field(default_factory=list)


class _Scorer:
    def __init__(self, goal, weights, obstacles, model, params, dt):
        self.goal = goal
        self.w = np.asarray(getattr(weights, "w", weights), dtype=float)
        self.boxes = _penalty_arrays(obstacles)
        self.model = model
        self.p = params
        self.dt = dt

    def waypoint_costs(self, configs):
        """State cost per waypoint for (..., K, 4) configs."""
        p = self.p
        cost = p.limit_weight * limit_penalty(configs, self.model)
        if p.pattern_blend and np.any(self.w):
            cost = cost + p.pattern_blend * (waypoint_features(configs, self.goal, self.dt) @ self.w)
        if self.boxes is not None:
            cost = cost + p.obstacle_weight * self.obstacle_costs(configs)
        return cost

    def obstacle_costs(self, configs):
        """Penetration cost per waypoint, including samples on the segment leading to it."""
        p = self.p
        clear = p.clearance + p.buffer
        obs, _ = _collision_cost_configs(configs, self.boxes, self.model, clear)
        n = p.substeps
        if n > 0:
            prev = configs[..., :-1, :]
            step = configs[..., 1:, :] - prev
            for i in range(1, n + 1):
                sub = prev + step * (i / (n + 1))
                c, _ = _collision_cost_configs(sub, self.boxes, self.model, clear)
                obs[..., 1:] += c
        return obs

    def total(self, configs):
        acc = configs[2:] - 2 * configs[1:-1] + configs[:-2]
        return float(self.waypoint_costs(configs).sum()) + self.p.smooth_weight * 0.5 * float(np.sum(acc ** 2))


def stomp_optimize(start: JointConfig, goal: JointConfig, weights: PatternWeights | None, obstacles,
                   params: StompParams | None = None, rng_seed=0, model: ArmModel | None = None) -> StompResult:
    """Run the optimiser and report the outcome without raising on infeasibility."""
    params = params or StompParams()
    model = model or ArmModel()
    obstacles = list(obstacles or [])
    weights = weights if weights is not None else PatternWeights.zeros()
    a, b = start.as_array(), goal.as_array()
    k = params.waypoints
    seed_configs = a + np.linspace(0.0, 1.0, k)[:, None] * (b - a)
    # keep the inputs bit-exact at the ends
    seed_configs[0], seed_configs[-1] = a, b
    if params.dt is not None:
        dt = float(params.dt)
    else:
        step = float(np.max(np.abs(b - a) / model.speeds)) / (k - 1)
        dt = max(step, 1e-3)
    scorer = _Scorer(b, weights, obstacles, model, params, dt)
    seed_obs = float(collision_cost(seed_configs, obstacles, model, params.clearance).sum())
    seed_ok, _, seed_pen = dense_collision_check(seed_configs, obstacles, model, params.clearance,
                                                 params.oracle_density)
    theta = seed_configs.copy()
    state = scorer.waypoint_costs(theta)
    best = theta.copy()
    best_cost = scorer.total(theta)
    history = [best_cost]
    if np.all(state == 0.0) and seed_ok:
        return StompResult(Trajectory(theta, dt), best_cost, history, 0, True, 0.0, seed_obs, True)
    best_feasible = theta.copy() if seed_ok and not np.any(limit_penalty(theta, model)) else None
    best_feasible_cost = best_cost if best_feasible is not None else np.inf
    noise = SmoothNoise(k)
    rng = np.random.default_rng(rng_seed)
    stale = 0
    it = 0
    std = params.noise_std
    for it in range(1, max(params.iterations, params.max_iterations) + 1):
        if it > params.iterations and best_feasible is not None:
            break
        eps = noise.sample(rng, params.rollouts, 4, std)
        rollouts = theta[None] + eps
        s = scorer.waypoint_costs(rollouts)
        lo = s.min(axis=0)
        span = s.max(axis=0) - lo
        norm = np.where(span > 0, (s - lo) / np.where(span > 0, span, 1.0), 0.0)
        prob = np.exp(-params.h * norm)
        prob /= prob.sum(axis=0, keepdims=True)
        d_tilde = np.einsum("rk,rkj->kj", prob, eps)[1:-1]
        delta = noise.M @ d_tilde
        theta = theta.copy()
        theta[1:-1] = np.clip(theta[1:-1] + delta, model.lower, model.upper)
        cost = scorer.total(theta)
        improved = cost < best_cost * (1 - 1e-9) - 1e-12
        if cost < best_cost:
            best, best_cost = theta.copy(), cost
        if cost < best_feasible_cost:
            ok = dense_collision_check(theta, obstacles, model, params.clearance, params.oracle_density)[0]
            if ok:
                best_feasible, best_feasible_cost = theta.copy(), cost
        history.append(best_cost)
        stale = 0 if improved else stale + 1
        if improved:
            std = max(params.noise_std, std / params.noise_growth)
        if stale >= params.patience:
            if best_feasible is not None:
                break
            theta = best.copy()
            std = min(std * params.noise_growth, params.max_noise_std)
            stale = 0
    out = best_feasible if best_feasible is not None else best
    out_cost = best_feasible_cost if best_feasible is not None else best_cost
    ok, _, pen = dense_collision_check(out, obstacles, model, params.clearance, params.oracle_density)
    feasible = ok and all(is_valid(model, JointConfig.from_array(q)) for q in out)
    return StompResult(Trajectory(out, dt), out_cost, history, it, feasible, pen, seed_obs, seed_ok)


def stomp_plan(start: JointConfig, goal: JointConfig, weights: PatternWeights | None, obstacles,
               params: StompParams | None = None, rng_seed=0, model: ArmModel | None = None) -> Trajectory:
    """Optimised trajectory from ``start`` to ``goal``; raises PlanningFailed if none is clear."""
    res = stomp_optimize(start, goal, weights, obstacles, params, rng_seed, model)
    if not res.feasible:
        reason = "collision" if res.max_penetration > 0 else "joint limits"
        raise PlanningFailed(res.trajectory, res.max_penetration, reason)
    return res.trajectory
