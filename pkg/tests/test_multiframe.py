import numpy as np
import pytest

from edgecalib.camera import CameraIntrinsics
from edgecalib.geometry import Se3Transform, TwistVector, exp_map
from edgecalib.image_edges import EdgeMap, build_attraction_field
from edgecalib.lidar_edges import EdgePointSet
from edgecalib.multiframe import (
    ConsistencyWeights,
    EmptyWindow,
    FramePose,
    LengthMismatch,
    LocalEdgeMap,
    ScoresNotPopulated,
    build_map,
    camera_poses_to_lidar,
    combine_weights,
    load_kitti_poses,
    load_tum_poses,
    populate_scores,
    position_weight,
    projection_weight,
)


def points_set(xyz, frame_id=0):
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    n = len(xyz)
    return EdgePointSet(
        xyz=xyz,
        ring=np.zeros(n, dtype=int),
        azimuth=np.arange(n, dtype=float),
        own_range=np.linalg.norm(xyz, axis=1),
        partner_range=np.full(n, np.inf),
        weight=np.ones(n),
        frame_id=frame_id,
    )


IDENT = Se3Transform.identity()


class TestBuildMap:
    def test_single_identity_frame(self):
        xyz = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        m = build_map([(points_set(xyz), FramePose(0, IDENT))])
        assert np.array_equal(m.world_xyz, xyz)
        assert np.array_equal(m.local_xyz, xyz)

    def test_two_frames_with_offset(self):
        xyz = np.array([[1.0, 0.0, 0.0]])
        shift = Se3Transform(np.eye(3), [1.0, 0.0, 0.0])
        m = build_map(
            [
                (points_set(xyz, 0), FramePose(0, IDENT)),
                (points_set(xyz, 1), FramePose(1, shift)),
            ]
        )
        assert len(m) == 2
        assert np.allclose(sorted(m.world_xyz[:, 0]), [1.0, 2.0])

    def test_empty_window(self):
        with pytest.raises(EmptyWindow):
            build_map([])

    def test_frame_ids_must_increase(self):
        xyz = np.array([[0.0, 0.0, 0.0]])
        with pytest.raises(Exception):
            build_map(
                [
                    (points_set(xyz, 1), FramePose(1, IDENT)),
                    (points_set(xyz, 1), FramePose(1, IDENT)),
                ]
            )

    def test_radius_query_matches_brute_force(self):
        rng = np.random.default_rng(40)
        xyz = rng.uniform(0, 3, size=(300, 3))
        m = build_map([(points_set(xyz), FramePose(0, IDENT))], radius=0.3)
        for _ in range(50):
            q = rng.uniform(-0.2, 3.2, size=3)
            idx = np.sort(m.neighbors(q))
            brute = np.flatnonzero(np.linalg.norm(xyz - q, axis=1) < 0.3)
            assert np.array_equal(idx, brute)


class TestPositionWeight:
    def test_isolated_point_counts_itself(self):
        xyz = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
        m = build_map([(points_set(xyz), FramePose(0, IDENT))], radius=0.5)
        assert position_weight(m, xyz[0]) == 1

    def test_coincident_copies(self):
        xyz = np.zeros((5, 3))
        m = build_map([(points_set(xyz), FramePose(0, IDENT))], radius=0.5)
        assert position_weight(m, np.zeros(3)) == 5

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(41)
        xyz = rng.uniform(0, 2, size=(200, 3))
        m = build_map([(points_set(xyz), FramePose(0, IDENT))], radius=0.4)
        for _ in range(50):
            q = xyz[rng.integers(0, 200)]
            expected = int(np.sum(np.linalg.norm(xyz - q, axis=1) < 0.4))
            assert position_weight(m, q) == expected

    def test_strict_inequality_at_radius(self):
        xyz = np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]])
        m = build_map([(points_set(xyz), FramePose(0, IDENT))], radius=0.3)
        assert position_weight(m, xyz[0]) == 1  # d == r excluded

    def test_translation_equivariance(self):
        rng = np.random.default_rng(42)
        xyz = rng.uniform(-1, 1, size=(100, 3))
        g = exp_map(TwistVector([5.0, -2.0, 1.0], [0.3, 0.2, -0.4]))
        m1 = build_map([(points_set(xyz), FramePose(0, IDENT))], radius=0.4)
        m2 = build_map([(points_set(xyz), FramePose(0, g))], radius=0.4)
        for _ in range(20):
            q = rng.uniform(-1, 1, size=3)
            assert position_weight(m1, q) == position_weight(m2, g.apply(q))

    def test_monotone_in_radius(self):
        rng = np.random.default_rng(43)
        xyz = rng.uniform(0, 1, size=(150, 3))
        m = build_map([(points_set(xyz), FramePose(0, IDENT))], radius=0.2)
        q = xyz[0]
        counts = [position_weight(m, q, r) for r in (0.05, 0.1, 0.2, 0.4, 0.8)]
        assert all(a <= b for a, b in zip(counts, counts[1:]))


def _field_with_edge_at(u, v, width=64, height=48):
    em = EdgeMap.empty(width, height)
    em.grid[v, u] = True
    return build_attraction_field(em)


K = CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=24.0, width=64, height=48)


class TestProjectionScores:
    def test_requires_population(self):
        m = build_map([(points_set([[0, 0, 5]]), FramePose(0, IDENT))])
        with pytest.raises(ScoresNotPopulated):
            projection_weight(m, np.zeros(3))

    def test_score_one_on_edge_pixel(self):
        m = build_map([(points_set([[0.0, 0.0, 5.0]]), FramePose(0, IDENT))])
        scored = populate_scores(m, {0: _field_with_edge_at(32, 24)}, IDENT, K)
        assert np.isclose(scored.scores[0], 1.0)

    def test_score_at_sigma_distance(self):
        # the only edge pixel is 10 px from the projection; sigma_a = 10
        m = build_map([(points_set([[0.0, 0.0, 5.0]]), FramePose(0, IDENT))])
        scored = populate_scores(m, {0: _field_with_edge_at(42, 24)}, IDENT, K, sigma_a=10.0)
        assert np.isclose(scored.scores[0], np.exp(-1.0))

    def test_behind_camera_absent(self):
        m = build_map([(points_set([[0.0, 0.0, -5.0]]), FramePose(0, IDENT))])
        scored = populate_scores(m, {0: _field_with_edge_at(32, 24)}, IDENT, K)
        assert np.isnan(scored.scores[0])
        assert projection_weight(scored, np.array([0.0, 0.0, -5.0])) == 0.0

    def test_sum_of_neighbor_scores(self):
        xyz = np.array([[0.0, 0.0, 5.0], [0.01, 0.0, 5.0], [0.0, 0.01, 5.0]])
        m = build_map([(points_set(xyz), FramePose(0, IDENT))], radius=0.3)
        scored = populate_scores(m, {0: _field_with_edge_at(32, 24)}, IDENT, K)
        expected = np.nansum(scored.scores)
        assert np.isclose(projection_weight(scored, xyz[0]), expected)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(44)
        xyz = rng.uniform([-0.5, -0.5, 4], [0.5, 0.5, 8], size=(150, 3))
        m = build_map([(points_set(xyz), FramePose(0, IDENT))], radius=0.25)
        rng2 = np.random.default_rng(45)
        em = EdgeMap(rng2.random((48, 64)) < 0.05)
        scored = populate_scores(m, {0: build_attraction_field(em)}, IDENT, K)
        for _ in range(50):
            q = xyz[rng.integers(0, len(xyz))]
            near = np.linalg.norm(xyz - q, axis=1) < 0.25
            expected = np.nansum(scored.scores[near])
            assert np.isclose(projection_weight(scored, q), expected)


class TestCombineWeights:
    def test_alpha_only(self):
        w = combine_weights([2.0, 4.0, 1.0], [5.0, 5.0, 5.0], alpha=1.0, beta=0.0)
        assert np.allclose(w.w_combined, [0.5, 1.0, 0.25])

    def test_uniform_inputs(self):
        w = combine_weights([3.0, 3.0], [7.0, 7.0], alpha=0.4, beta=0.6)
        assert np.allclose(w.w_combined, 1.0)

    def test_hand_computed_example(self):
        w = combine_weights([2.0, 4.0], [1.0, 0.0], alpha=0.5, beta=0.5)
        assert np.allclose(w.w_combined, [0.75, 0.5])

    def test_zero_max_gives_zeros(self):
        w = combine_weights([0.0, 0.0], [0.0, 0.0], alpha=0.5, beta=0.5)
        assert np.allclose(w.w_combined, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            combine_weights([1.0], [1.0, 2.0])

    def test_scaling_preserves_order(self):
        rng = np.random.default_rng(46)
        pos = rng.uniform(0, 10, 30)
        proj = rng.uniform(0, 2, 30)
        a = combine_weights(pos, proj, alpha=0.3, beta=0.7).w_combined
        b = combine_weights(pos, proj, alpha=1.2, beta=2.8).w_combined
        assert np.array_equal(np.argsort(a, kind="stable"), np.argsort(b, kind="stable"))


class TestPoseFiles:
    def test_kitti_poses_round_trip(self, tmp_path):
        rng = np.random.default_rng(47)
        poses = [exp_map(TwistVector.from_array(rng.uniform(-1, 1, 6))) for _ in range(5)]
        path = tmp_path / "poses.txt"
        path.write_text("\n".join(p.to_kitti_line() for p in poses) + "\n")
        back = load_kitti_poses(path)
        for a, b in zip(poses, back):
            assert np.array_equal(a.rotation, b.rotation)
            assert np.array_equal(a.translation, b.translation)

    def test_tum_poses(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("# comment\n1.5 1 2 3 0 0 0 1\n2.5 0 0 0 0 0 0.7071067811865476 0.7071067811865476\n")
        out = load_tum_poses(path)
        assert out[0][0] == 1.5
        assert np.allclose(out[0][1].translation, [1, 2, 3])
        assert np.allclose(out[0][1].rotation, np.eye(3))
        # 90 degrees about z
        assert np.allclose(out[1][1].rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)

    def test_camera_to_lidar_conversion(self):
        rng = np.random.default_rng(48)
        extr = exp_map(TwistVector.from_array(rng.uniform(-0.5, 0.5, 6)))
        cam_pose = exp_map(TwistVector.from_array(rng.uniform(-1, 1, 6)))
        (lidar_pose,) = camera_poses_to_lidar([cam_pose], extr)
        p_l = rng.uniform(-2, 2, 3)
        world_via_cam = cam_pose.apply(extr.apply(p_l))
        assert np.allclose(lidar_pose.apply(p_l), world_via_cam, atol=1e-12)
