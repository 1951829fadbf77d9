import numpy as np
import pytest
from scipy.stats import spearmanr

from aesplan.errors import DegenerateSamples, EmptyInput, PlanningFailed, ShapeError
from aesplan.geometry import Box3D
from aesplan.harness.defaults import DEMO_W_STAR, motion_demos
from aesplan.kinematics import ArmModel, JointConfig, inverse_kinematics, tip_positions
from aesplan.motion import (IrlParams, PatternWeights, SmoothNoise, StompParams, Trajectory, collision_cost,
                            dense_collision_check, features, irl_objective, learn_weights, optimal_demo,
                            pattern_cost, solve_irl, stomp_optimize, stomp_plan)
from aesplan.motion.irl import feature_gaps, feature_scale, sample_perturbations

from oracles import dense_min_distance

MODEL = ArmModel()


def random_traj(rng, k=12):
    return Trajectory(rng.uniform(-1, 1, (k, 4)), 0.1)


class TestFeatures:
    def test_resting_at_goal(self):
        q = np.tile([0.1, 0.2, -1.0, -0.5], (10, 1))
        per, total = features(Trajectory(q, 0.1))
        assert np.all(per == 0) and np.all(total == 0)
        assert pattern_cost(np.ones(8), Trajectory(q, 0.1)) == 0.0

    def test_linear_approach_closed_form(self):
        k, delta, dt = 11, 0.7, 0.2
        q = np.zeros((k, 4))
        q[:, 1] = np.linspace(delta, 0.0, k)
        per, total = features(Trajectory(q, dt))
        s = 1 - np.arange(k) / (k - 1)
        err = s ** 2 * delta ** 2
        np.testing.assert_allclose(per[:, 1], err, atol=1e-15)
        assert np.all(np.diff(per[:, 1]) < 0)
        assert total[1] == pytest.approx(np.sum(s ** 2) * delta ** 2)
        rate = np.concatenate([[0.0], (np.diff(err) / dt) ** 2])
        assert total[5] == pytest.approx(rate.sum())
        assert np.all(total[[0, 2, 3, 4, 6, 7]] == 0)

    @pytest.mark.parametrize("c", [0.0, 0.5, 3.0])
    def test_cost_is_linear_in_weights(self, c):
        rng = np.random.default_rng(0)
        traj, w = random_traj(rng), rng.uniform(0, 1, 8)
        assert pattern_cost(c * w, traj) == pytest.approx(c * pattern_cost(w, traj), rel=1e-14)

    def test_feature_dimension(self):
        per, total = features(random_traj(np.random.default_rng(1)))
        assert per.shape == (12, 8) and total.shape == (8,) and np.all(np.isfinite(total))


def irl_instance(seed, n_demos=2, k=6):
    rng = np.random.default_rng(seed)
    demos = [random_traj(rng) for _ in range(n_demos)]
    return feature_gaps(demos, k, seed, 0.05), rng.uniform(0.0, 1.0, 8)


class TestIrlObjective:
    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_central_differences(self, seed):
        gaps, w = irl_instance(seed)
        scale = feature_scale(gaps)
        d = np.stack(gaps)
        # evaluate in the preconditioned coordinates the solver uses
        v = w * scale
        scaled = d / scale
        _, g = irl_objective(v, scaled, 1e-3)
        h = 1e-6
        fd = np.array([(irl_objective(v + h * e, scaled, 1e-3)[0] - irl_objective(v - h * e, scaled, 1e-3)[0]) / (2 * h)
                       for e in np.eye(8)])
        rel = np.abs(fd - g) / np.maximum(np.abs(g), 1e-8)
        assert rel.max() < 1e-5

    def test_convex_along_lines(self):
        gaps, w = irl_instance(3)
        d = np.stack(gaps) / feature_scale(gaps)
        u = np.random.default_rng(0).normal(size=8)
        f = [irl_objective(w + t * u, d, 1e-3)[0] for t in np.linspace(-1, 1, 41)]
        assert np.all(np.diff(f, 2) >= -1e-9)

    def test_ten_initialisations_agree(self):
        demos = motion_demos(n=4, seed=2)
        gaps = feature_gaps(demos, 50, 0)
        rng = np.random.default_rng(0)
        vals = [solve_irl(gaps, w0=rng.uniform(0, 5, 8))[1] for _ in range(10)]
        assert max(vals) - min(vals) < 1e-6


class TestLearnWeights:
    @pytest.mark.parametrize("coord", [0, 3, 6])
    def test_single_worse_coordinate(self, coord):
        # one demo whose 50 samples are all strictly worse in one feature and mixed in the rest
        rng = np.random.default_rng(coord)
        gap = rng.normal(0.0, 1.0, (50, 8))
        gap[:, coord] = rng.uniform(0.2, 1.0, 50)
        w, _ = solve_irl([gap])
        assert w[coord] > 0
        assert w[coord] == w.max()
        # the demo's own gap is zero, so it is cheapest iff every sample gap costs more
        assert np.all(gap @ w > 0)

    def test_demo_cheaper_than_median_sample(self):
        demos = motion_demos(n=6, seed=4)
        w = learn_weights(demos, 50, 1).w
        for gap in feature_gaps(demos, 50, 1):
            assert 0.0 <= np.median(gap @ w)

    def test_weight_recovery_rank_correlation(self):
        demos = motion_demos(n=8, seed=0)
        w_hat = learn_weights(demos, 50, 0).w
        w_star = np.array(DEMO_W_STAR)
        rng = np.random.default_rng(11)
        trajs = []
        for i in range(100):
            demo = demos[i % len(demos)]
            noisy = sample_perturbations(demo, 1, rng, rng.uniform(0.01, 0.2))[0]
            trajs.append(Trajectory(noisy, demo.dt))
        c_star = [pattern_cost(w_star, t) for t in trajs]
        c_hat = [pattern_cost(w_hat, t) for t in trajs]
        assert spearmanr(c_star, c_hat)[0] >= 0.95

    def test_errors(self):
        with pytest.raises(EmptyInput):
            learn_weights([], 10, 0)
        demo = random_traj(np.random.default_rng(0))
        with pytest.raises(DegenerateSamples):
            learn_weights([demo], 10, 0, IrlParams(noise_std=0.0))

    def test_deterministic(self):
        demos = motion_demos(n=3, seed=1)
        a = learn_weights(demos, 20, 5).w
        b = learn_weights(demos, 20, 5).w
        np.testing.assert_array_equal(a, b)


class TestSmoothNoise:
    def test_endpoints_zero_and_covariance(self):
        noise = SmoothNoise(12)
        s = noise.sample(np.random.default_rng(0), 4000, 2, 1.0)
        assert np.all(s[:, 0] == 0) and np.all(s[:, -1] == 0)
        emp = np.cov(s[:, 1:-1, 0].T)
        np.testing.assert_allclose(emp, noise.cov, atol=0.08)
        np.testing.assert_allclose(noise.cov * np.max(np.diag(np.linalg.inv(noise.R))), np.linalg.inv(noise.R),
                                   atol=1e-9)

    def test_too_short(self):
        with pytest.raises(ValueError):
            SmoothNoise(2)


def blocking_problem():
    """A box sitting on the straight joint-space path between two dig-height poses."""
    a = inverse_kinematics(MODEL, (4.0, -1.8, 1.2), -1.5)
    b = inverse_kinematics(MODEL, (4.0, 1.8, 1.2), -1.5)
    mid = tip_positions(MODEL, [0.5 * (a.as_array() + b.as_array())])[0]
    return a, b, [Box3D.upright(mid, [0.25, 0.25, 0.25])]


class TestStomp:
    def test_start_equals_goal(self):
        q = JointConfig(0.2, 0.5, -1.0, -0.5)
        res = stomp_optimize(q, q, PatternWeights(np.ones(8)), [])
        assert res.iterations == 0 and res.cost == 0.0
        assert np.all(res.trajectory.configs == q.as_array())

    def test_free_space_keeps_straight_line(self):
        a, b = JointConfig(-0.5, 0.4, -1.2, -0.6), JointConfig(0.7, 0.6, -0.9, -1.0)
        res = stomp_optimize(a, b, None, [])
        straight = Trajectory.straight(a, b, StompParams().waypoints)
        assert res.trajectory.smoothness_cost() <= 1.05 * straight.smoothness_cost() + 1e-12
        assert res.feasible

    @pytest.mark.parametrize("seed", range(5))
    def test_avoids_blocking_box(self, seed):
        a, b, boxes = blocking_problem()
        seed_ok = dense_collision_check(Trajectory.straight(a, b, 30), boxes, MODEL, 0.15)[0]
        assert not seed_ok
        traj = stomp_plan(a, b, None, boxes, rng_seed=seed)
        assert dense_min_distance(MODEL, traj.configs, boxes) >= 0.15

    def test_endpoints_bit_identical(self):
        a, b, boxes = blocking_problem()
        traj = stomp_optimize(a, b, PatternWeights(np.ones(8)), boxes, rng_seed=3).trajectory
        assert traj.configs[0].tobytes() == a.as_array().tobytes()
        assert traj.configs[-1].tobytes() == b.as_array().tobytes()

    def test_deterministic(self):
        a, b, boxes = blocking_problem()
        r1 = stomp_optimize(a, b, None, boxes, rng_seed=9)
        r2 = stomp_optimize(a, b, None, boxes, rng_seed=9)
        assert r1.trajectory.configs.tobytes() == r2.trajectory.configs.tobytes()
        assert r1.cost_history == r2.cost_history

    def test_best_cost_history_never_rises(self):
        a, b, boxes = blocking_problem()
        hist = stomp_optimize(a, b, PatternWeights(np.ones(8)), boxes, rng_seed=1).cost_history
        assert np.all(np.diff(hist) <= 0)

    def test_unsolvable_raises_with_best_attempt(self):
        a, b, _ = blocking_problem()
        goal_tip = tip_positions(MODEL, [b.as_array()])[0]
        boxes = [Box3D.upright(goal_tip, [0.5, 0.5, 0.5])]
        with pytest.raises(PlanningFailed) as exc:
            stomp_plan(a, b, None, boxes, StompParams(max_iterations=30))
        assert exc.value.max_penetration > 0
        assert isinstance(exc.value.trajectory, Trajectory)

    def test_respects_joint_limits(self):
        a, b, boxes = blocking_problem()
        traj = stomp_plan(a, b, None, boxes, rng_seed=2)
        assert np.all(traj.configs >= MODEL.lower - 1e-12) and np.all(traj.configs <= MODEL.upper + 1e-12)


class TestCollisionCost:
    def test_no_obstacles(self):
        traj = random_traj(np.random.default_rng(0))
        np.testing.assert_array_equal(collision_cost(traj, [], MODEL, 0.15), 0.0)

    def test_tip_at_box_centre(self):
        q = JointConfig(0.3, 0.5, -1.2, -0.8)
        tip = tip_positions(MODEL, [q.as_array()])[0]
        box = Box3D.upright(tip, [0.2, 0.3, 0.1])
        cost = collision_cost(np.tile(q.as_array(), (3, 1)), [box], MODEL, 0.15)
        assert np.all(cost >= 0.15 ** 2)

    def test_lipschitz_fuzz(self):
        rng = np.random.default_rng(0)
        a, b, boxes = blocking_problem()
        base = Trajectory.straight(a, b, 30).configs
        worst = 0.0
        for _ in range(1000):
            q = base[rng.integers(0, 30)][None]
            eps = 1e-6
            step = rng.normal(size=(1, 4))
            step *= eps / np.linalg.norm(step)
            c0 = collision_cost(q, boxes, MODEL, 0.15)[0]
            c1 = collision_cost(q + step, boxes, MODEL, 0.15)[0]
            worst = max(worst, abs(c1 - c0) / eps)
        # squared-hinge penalties of Lipschitz distances: bounded slope near the box
        assert worst < 100.0

    def test_backends_agree(self, backend):
        from aesplan.geometry import stack_boxes
        from aesplan.kernels import available_backends

        rng = np.random.default_rng(0)
        pts = rng.uniform(-2, 2, (40, 3, 3))
        boxes = [Box3D.upright(rng.uniform(-1, 1, 3), rng.uniform(0.2, 0.8, 3), rng.uniform(-1, 1)) for _ in range(3)]
        rot, cen, half = stack_boxes(boxes)
        ref = available_backends()["python"].box_penalty(pts, rot, cen, half, 0.3)
        got = backend.box_penalty(pts, rot, cen, half, 0.3)
        np.testing.assert_allclose(got[0], ref[0], atol=1e-12)
        np.testing.assert_allclose(got[1], ref[1], atol=1e-12)


class TestTrajectory:
    def test_csv_round_trip(self, tmp_path):
        t = random_traj(np.random.default_rng(0))
        t.to_csv(tmp_path / "t.csv")
        back = Trajectory.from_csv(tmp_path / "t.csv")
        np.testing.assert_array_equal(back.configs, t.configs)
        assert back.dt == pytest.approx(t.dt)

    def test_validation(self):
        with pytest.raises(ShapeError):
            Trajectory(np.zeros((2, 4)), 0.1)
        with pytest.raises(ShapeError):
            Trajectory(np.zeros((5, 3)), 0.1)
        with pytest.raises(ValueError):
            Trajectory(np.zeros((5, 4)), 0.0)

    def test_retimed_meets_speed_limits(self):
        t = random_traj(np.random.default_rng(2)).retimed(MODEL)
        assert t.within_speed_limits(MODEL)
        assert not Trajectory(t.configs, t.dt * 0.9).within_speed_limits(MODEL)

    def test_weights_json(self, tmp_path):
        w = PatternWeights([1, 2, 3, 4, 5, 6, 7, 8])
        w.save(tmp_path / "w.json")
        np.testing.assert_array_equal(PatternWeights.load(tmp_path / "w.json").w, w.w)
        with pytest.raises(ValueError):
            PatternWeights([np.nan])
