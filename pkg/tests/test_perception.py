import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aesplan.errors import PoseRejected, ShapeError
from aesplan.geometry import Box3D, Pose3D, rot_z, rotation_angle
from aesplan.perception import (EmergencyStop, MaterialClass, NoiseParams, PerceptionFrame, PerceptionSim,
                                TruckTracker, classify_texture, clutter_scan, default_centroids, detect_rocks,
                                estimate_truck_pose, scan_truck, texture_features, watchdog)
from aesplan.terrain import HeightMap, place_rock

ROCKS = [Box3D.upright([1.0, 2.0, 0.3], [0.3, 0.2, 0.3], 0.4), Box3D.upright([4.0, -1.0, 0.2], [0.2, 0.2, 0.2])]


def pose_error(a, b):
    return np.linalg.norm(a.translation - b.translation), np.degrees(rotation_angle(a.rotation.T @ b.rotation))


class TestDetectRocks:
    def test_noiseless_passthrough(self):
        out = detect_rocks(ROCKS, NoiseParams.zero(), 0)
        assert len(out) == 2
        for a, b in zip(out, ROCKS):
            np.testing.assert_array_equal(a.center, b.center)
            np.testing.assert_array_equal(a.half_extents, b.half_extents)

    def test_all_missed(self):
        assert detect_rocks(ROCKS, NoiseParams(miss_rate=1.0), 5) == []

    @given(st.integers(0, 2 ** 32 - 1))
    def test_deterministic(self, seed):
        noise = NoiseParams(miss_rate=0.3, fp_rate=2.0)
        a = detect_rocks(ROCKS, noise, seed, (0, 0, 5, 5))
        b = detect_rocks(ROCKS, noise, seed, (0, 0, 5, 5))
        assert [x.to_json() for x in a] == [x.to_json() for x in b]

    def test_monte_carlo_error_and_recall(self):
        noise = NoiseParams(miss_rate=0.1, fp_rate=0.0, sigma_pos=0.05, sigma_ext=0.0)
        errs, hits = [], 0
        for seed in range(1000):
            out = detect_rocks(ROCKS[:1], noise, seed)
            if out:
                hits += 1
                errs.append(np.linalg.norm(out[0].center - ROCKS[0].center))
        assert np.mean(errs) < 0.06
        assert abs(hits / 1000 - 0.9) <= 0.02

    def test_false_positives_inside_region(self):
        out = detect_rocks([], NoiseParams(fp_rate=5.0), 1, (0.0, 0.0, 2.0, 3.0))
        assert out
        for b in out:
            assert 0.0 <= b.center[0] <= 2.0 and 0.0 <= b.center[1] <= 3.0


class TestTexture:
    def test_exact_centroid(self):
        c = default_centroids()
        for k in MaterialClass:
            assert classify_texture(c[k], c) is k
        assert len(MaterialClass) == 8

    def test_tie_goes_to_lowest_index(self):
        c = default_centroids()
        assert classify_texture(0.5 * (c[0] + c[3]), c) is MaterialClass(0)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            classify_texture(np.zeros(3), default_centroids())

    def test_accuracy_on_synthetic_clusters(self):
        c = default_centroids()
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 8, 1000)
        pred = [classify_texture(texture_features(k, c, 0.1, rng), c) for k in truth]
        assert np.mean(np.array(pred) == truth) >= 0.99


class TestTruckPose:
    @pytest.mark.parametrize("seed", range(10))
    def test_recovers_known_pose(self, seed, truck_template):
        rng = np.random.default_rng(seed)
        true = Pose3D.from_xyz_yaw(0.0, 3.6, 0.0, np.pi / 2 + rng.uniform(-0.1, 0.1))
        last = Pose3D.from_xyz_yaw(*(true.translation + rng.uniform(-0.1, 0.1, 3) * [1, 1, 0]),
                                   true.yaw + np.radians(rng.uniform(-10, 10)))
        est = estimate_truck_pose(truck_template, scan_truck(truck_template, true, 0.01, rng), last)
        dt, dr = pose_error(est, true)
        assert dt < 0.02 and dr < 1.0

    def test_clutter_is_rejected(self, truck_template):
        rng = np.random.default_rng(0)
        scan = clutter_scan(len(truck_template), (-3, 0, 3, 6), rng)
        with pytest.raises(PoseRejected):
            estimate_truck_pose(truck_template, scan, Pose3D.from_xyz_yaw(0, 3, 0, 0))

    def test_stationary_truck_does_not_drift(self, truck_template):
        true = Pose3D.from_xyz_yaw(0.0, 3.6, 0.0, 1.5)
        tracker = TruckTracker(truck_template, true)
        rng = np.random.default_rng(0)
        prev = true
        for _ in range(5):
            est = tracker.update(scan_truck(truck_template, true, 0.0, rng))
            assert np.linalg.norm(est.translation - prev.translation) < 1e-3
            prev = est
        assert tracker.last_pose is est

    def test_error_grows_with_noise(self, truck_template):
        means = []
        for sigma in (0.0, 0.01, 0.02, 0.05):
            errs = []
            for seed in range(50):
                rng = np.random.default_rng([seed, 3])
                true = Pose3D.from_xyz_yaw(0.0, 3.6, 0.0, np.pi / 2)
                last = Pose3D.from_xyz_yaw(0.05, 3.55, 0.0, np.pi / 2 + 0.05)
                est = estimate_truck_pose(truck_template, scan_truck(truck_template, true, sigma, rng), last,
                                          threshold=1.0)
                errs.append(pose_error(est, true)[0])
            means.append(np.mean(errs))
        for a, b in zip(means, means[1:]):
            assert b >= 0.9 * a


class TestWatchdog:
    def frame(self, intruder):
        return PerceptionFrame([], np.zeros((2, 2)), MaterialClass.DRY_SOIL, None, intruder, 1.5)

    def test_intruder(self):
        assert watchdog(self.frame(True)) == EmergencyStop(1.5)

    def test_clear(self):
        assert watchdog(self.frame(False)) is None


class TestPerceptionSim:
    def world(self):
        hm = HeightMap.flat(40, 40, 0.25)
        hm, _ = place_rock(hm, Box3D.upright([5.0, 5.0, 0.2], [0.3, 0.3, 0.2]))
        return hm

    def test_noiseless_frame_is_ground_truth(self, truck_template):
        hm = self.world()
        true = Pose3D.from_xyz_yaw(0.0, 3.6, 0.0, np.pi / 2)
        sim = PerceptionSim(NoiseParams.zero(), 0, tracker=TruckTracker(truck_template, true))
        f = sim.observe(0.0, hm, truck_pose=true)
        np.testing.assert_array_equal(f.label_mask, hm.labels)
        assert len(f.rock_boxes) == 1
        np.testing.assert_array_equal(f.rock_boxes[0].center, hm.rock_boxes()[0].center)
        assert f.truck_pose.allclose(true, atol=1e-9)
        assert f.texture_class is MaterialClass.DRY_SOIL

    def test_frames_reproducible(self, truck_template):
        hm = self.world()
        true = Pose3D.from_xyz_yaw(0.0, 3.6, 0.0, np.pi / 2)
        a = PerceptionSim(NoiseParams(), 4, tracker=TruckTracker(truck_template, true))
        b = PerceptionSim(NoiseParams(), 4, tracker=TruckTracker(truck_template, true))
        for t in range(3):
            assert a.observe(t, hm, truck_pose=true).to_json() == b.observe(t, hm, truck_pose=true).to_json()

    def test_missing_truck_gives_no_pose(self, truck_template):
        sim = PerceptionSim(NoiseParams(), 0,
                            tracker=TruckTracker(truck_template, Pose3D.from_xyz_yaw(0.0, 3.6, 0.0, 1.57)))
        assert sim.observe(0.0, self.world(), truck_pose=None).truck_pose is None

    def test_frame_json_round_trip(self):
        f = PerceptionFrame(ROCKS, np.ones((3, 3), dtype=np.int8), MaterialClass.STONE,
                            Pose3D.from_xyz_yaw(1, 2, 0, 0.3), True, 2.0, ROCKS[:1])
        g = PerceptionFrame.from_json(f.to_json())
        assert g.truck_pose.allclose(f.truck_pose, atol=1e-12)
        for a, b in zip(g.rock_boxes + g.obstacle_boxes, f.rock_boxes + f.obstacle_boxes):
            assert a.center_pose.allclose(b.center_pose, atol=1e-12)
            np.testing.assert_array_equal(a.half_extents, b.half_extents)
        np.testing.assert_array_equal(g.label_mask, f.label_mask)
        assert (g.texture_class, g.intruder_detected, g.timestamp) == (f.texture_class, True, 2.0)
