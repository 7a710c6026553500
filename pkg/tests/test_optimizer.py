import numpy as np
import pytest

from edgecalib.camera import CameraIntrinsics
from edgecalib.geometry import (
    Se3Transform,
    TwistVector,
    exp_map,
    left_perturb,
)
from edgecalib.image_edges import (
    AttractionField,
    EdgeMap,
    FieldPyramid,
    build_attraction_field,
    build_field_pyramid,
)
from edgecalib.lidar_edges import EdgePointSet
from edgecalib.multiframe import FramePose
from edgecalib.optimizer import (
    CalibrationWindow,
    Diverged,
    InvalidProjection,
    NoValidProjections,
    SolveReport,
    SolverConfig,
    WindowFrame,
    alternate,
    evaluate_cost,
    residual_jacobian,
    reweight_window,
    solve,
)
from edgecalib.synthetic import standard_scene

from helpers import build_window, perturbed_init

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=24.0, width=64, height=48)
IDENT = Se3Transform.identity()


def tiny_points(xyz, weights=None):
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    n = len(xyz)
    return EdgePointSet(
        xyz=xyz,
        ring=np.zeros(n, dtype=int),
        azimuth=np.arange(n, dtype=float),
        own_range=np.linalg.norm(xyz, axis=1),
        partner_range=np.full(n, np.inf),
        weight=np.ones(n) if weights is None else np.asarray(weights, dtype=float),
    )


def tiny_window(points, edge_grid, sigmas=(0.0,), k=K):
    pyramid = FieldPyramid(base=build_attraction_field(EdgeMap(edge_grid)), sigmas=sigmas)
    frame = WindowFrame(points=points, pyramid=pyramid, pose=FramePose(0, IDENT))
    return CalibrationWindow(frames=(frame,), intrinsics=k)


class TestEvaluateCost:
    def test_point_on_edge_pixel_zero_cost(self):
        grid = np.zeros((48, 64), dtype=bool)
        grid[24, 32] = True
        w = tiny_window(tiny_points([[0.0, 0.0, 5.0]]), grid)
        cost, res = evaluate_cost(w, IDENT, 0)
        assert cost == 0.0
        assert res.valid.all()

    def test_all_weights_zero_leaves_penalty_only(self):
        grid = np.zeros((48, 64), dtype=bool)
        grid[24, 32] = True
        pts = tiny_points([[0.0, 0.0, 5.0], [50.0, 0.0, 5.0]], weights=[0.0, 0.0])
        w = tiny_window(pts, grid)
        cost, res = evaluate_cost(w, IDENT, 0, lambda_oob=0.5)
        d_max = w.frames[0].pyramid.base.d_max
        assert cost == 0.5 * (1.0 - 0.5) * d_max  # one of two points is valid

    def test_no_valid_projections(self):
        grid = np.zeros((48, 64), dtype=bool)
        grid[1, 1] = True
        w = tiny_window(tiny_points([[0.0, 0.0, -5.0]]), grid)
        with pytest.raises(NoValidProjections):
            evaluate_cost(w, IDENT, 0)

    def test_ground_truth_beats_perturbations(self, standard_noise_free):
        spec, window = standard_noise_free
        gt = spec.extrinsic
        c_gt, _ = evaluate_cost(window, gt, len(window.frames[0].pyramid.sigmas) - 1)
        rng = np.random.default_rng(60)
        for _ in range(20):
            signs = rng.choice([-1.0, 1.0], size=6)
            t = left_perturb(gt, TwistVector(0.10 * signs[:3], np.radians(2.0) * signs[3:]))
            c_p, _ = evaluate_cost(window, t, len(window.frames[0].pyramid.sigmas) - 1)
            assert c_gt < c_p


@pytest.fixture(scope="module")
def standard_noise_free():
    spec = standard_scene(frames=20, range_sigma=0.0, lidar_spurious_fraction=0.0)
    window = build_window(spec, key="opt-noise-free", seed=0)
    return spec, window


class TestResidualJacobian:
    def test_constant_field_gives_zero_row(self):
        field = AttractionField(values=np.full((48, 64), 7.0), d_max=80.0)
        row = residual_jacobian([0.3, -0.2, 5.0], IDENT, K, field)
        assert np.allclose(row, 0.0)

    def test_invalid_projection_raises(self):
        field = AttractionField(values=np.zeros((48, 64)), d_max=80.0)
        with pytest.raises(InvalidProjection):
            residual_jacobian([0.0, 0.0, -5.0], IDENT, K, field)

    def test_on_axis_z_translation_column_zero(self):
        yy, xx = np.mgrid[0:48, 0:64]
        radial = np.hypot(xx - K.cx, yy - K.cy)
        field = AttractionField(values=radial, d_max=80.0)
        row = residual_jacobian([0.0, 0.0, 5.0], IDENT, K, field)
        assert abs(row[2]) <= 1e-12

    def test_matches_finite_differences(self, standard_noise_free):
        spec, window = standard_noise_free
        gt = spec.extrinsic
        rng = np.random.default_rng(61)
        finest = len(window.frames[0].pyramid.sigmas) - 1
        step = 1e-6
        checked = 0
        while checked < 100:
            frame = window.frames[rng.integers(0, len(window.frames))]
            pts = frame.points
            if len(pts) == 0:
                continue
            p = pts.xyz[rng.integers(0, len(pts))]
            level = int(rng.integers(0, finest + 1))
            fld = frame.pyramid.level(level)
            t = left_perturb(gt, TwistVector.from_array(rng.uniform(-0.01, 0.01, 6)))
            weight = float(rng.uniform(0.2, 2.0))
            try:
                row = residual_jacobian(p, t, window.intrinsics, fld, weight=weight)
            except InvalidProjection:
                continue
            fd = np.zeros(6)
            ok = True
            base_cell = _cell_of(p, t, window.intrinsics)
            for j in range(6):
                e = np.zeros(6)
                e[j] = step
                try:
                    up = _weighted_residual(p, left_perturb(t, TwistVector.from_array(e)), window.intrinsics, fld, weight)
                    dn = _weighted_residual(p, left_perturb(t, TwistVector.from_array(-e)), window.intrinsics, fld, weight)
                except InvalidProjection:
                    ok = False
                    break
                if _cell_of(p, left_perturb(t, TwistVector.from_array(e)), window.intrinsics) != base_cell:
                    ok = False
                    break
                fd[j] = (up - dn) / (2 * step)
            if not ok:
                continue
            denom = max(np.max(np.abs(row)), np.max(np.abs(fd)), 1e-9)
            if denom < 1e-6:
                continue
            assert np.max(np.abs(fd - row)) / denom <= 1e-4
            checked += 1


def _weighted_residual(p, t, k, fld, weight):
    from edgecalib.camera import project_batch

    uv, _, valid, _ = project_batch(np.asarray(p)[None, :], t, k)
    if not valid[0]:
        raise InvalidProjection
    val, _ = fld.sample_batch(uv)
    return weight * float(val[0])


def _cell_of(p, t, k):
    from edgecalib.camera import project_batch

    uv, _, valid, _ = project_batch(np.asarray(p)[None, :], t, k)
    if not valid[0]:
        raise InvalidProjection
    return (int(uv[0, 0]), int(uv[0, 1]))


class TestSolve:
    def test_fixed_point_at_ground_truth(self, standard_noise_free):
        spec, window = standard_noise_free
        rep = solve(window, spec.extrinsic, SolverConfig(), ground_truth=spec.extrinsic)
        assert rep.converged
        assert rep.rotation_error[0] <= 0.01
        assert rep.translation_error[0] <= 0.1

    def test_recovers_small_offset(self, standard_noise_free):
        spec, window = standard_noise_free
        t_init = perturbed_init(spec.extrinsic, 2.0, 10.0, seed=3)
        rep = solve(window, t_init, SolverConfig(), ground_truth=spec.extrinsic)
        assert rep.converged
        assert rep.rotation_error[0] <= 0.3
        assert rep.translation_error[0] <= 2.0

    def test_all_points_behind_camera(self):
        grid = np.zeros((48, 64), dtype=bool)
        grid[24, 32] = True
        w = tiny_window(tiny_points([[0.0, 0.0, -5.0], [0.1, 0.0, -4.0]]), grid)
        with pytest.raises(NoValidProjections):
            solve(w, IDENT, SolverConfig(pyramid_sigmas=(0.0,)))

    def test_deterministic(self, standard_noise_free):
        spec, window = standard_noise_free
        t_init = perturbed_init(spec.extrinsic, 2.0, 10.0, seed=5)
        a = solve(window, t_init, SolverConfig(), ground_truth=spec.extrinsic)
        b = solve(window, t_init, SolverConfig(), ground_truth=spec.extrinsic)
        assert np.array_equal(a.estimate.rotation, b.estimate.rotation)
        assert np.array_equal(a.estimate.translation, b.estimate.translation)
        assert a.final_cost == b.final_cost
        assert a.iterations == b.iterations

    def test_cost_nonnegative_and_valid_fraction(self, standard_noise_free):
        spec, window = standard_noise_free
        rep = solve(window, spec.extrinsic, SolverConfig(), ground_truth=spec.extrinsic)
        assert rep.final_cost >= 0.0
        assert 0.0 <= rep.valid_fraction <= 1.0

    def test_pose_premultiplication_invariance(self, standard_noise_free):
        spec, window = standard_noise_free
        g = exp_map(TwistVector([3.0, -1.0, 0.5], [0.2, -0.1, 0.4]))
        moved = CalibrationWindow(
            frames=tuple(
                WindowFrame(
                    points=f.points,
                    pyramid=f.pyramid,
                    pose=FramePose(f.pose.frame_id, g.compose(f.pose.pose), f.pose.timestamp),
                )
                for f in window.frames
            ),
            intrinsics=window.intrinsics,
        )
        t_init = perturbed_init(spec.extrinsic, 2.0, 10.0, seed=11)
        cfg = SolverConfig(alternations=2)
        a = alternate(window, t_init, cfg, ground_truth=spec.extrinsic)
        b = alternate(moved, t_init, cfg, ground_truth=spec.extrinsic)
        assert np.max(np.abs(a.estimate.as_matrix() - b.estimate.as_matrix())) <= 1e-6


class TestAlternate:
    def test_single_alternation_equals_solve(self, standard_noise_free):
        spec, window = standard_noise_free
        t_init = perturbed_init(spec.extrinsic, 2.0, 10.0, seed=7)
        cfg = SolverConfig(alternations=1)
        a = alternate(window, t_init, cfg, ground_truth=spec.extrinsic)
        b = solve(window, t_init, cfg, ground_truth=spec.extrinsic)
        assert np.array_equal(a.estimate.rotation, b.estimate.rotation)
        assert np.array_equal(a.estimate.translation, b.estimate.translation)
        assert a.alternations_run == 1

    def test_early_stop_when_already_converged(self, standard_noise_free):
        spec, window = standard_noise_free
        rep = alternate(window, spec.extrinsic, SolverConfig(alternations=3),
                        ground_truth=spec.extrinsic)
        assert rep.alternations_run == 1

    def test_reweighting_suppresses_spurious_points(self):
        spec = standard_scene(frames=20, range_sigma=0.0, lidar_spurious_fraction=0.20)
        errors = []
        for alternations in (1, 3):
            rots = []
            for seed in (1, 2, 3, 4):
                window = build_window(spec, key="opt-spurious", seed=seed)
                t_init = perturbed_init(spec.extrinsic, 2.0, 10.0, seed=seed)
                rep = alternate(
                    window, t_init, SolverConfig(alternations=alternations),
                    ground_truth=spec.extrinsic,
                )
                rots.append(rep.rotation_error[0])
            errors.append(np.mean(rots))
        assert errors[1] <= errors[0] + 1e-9

    def test_reweight_window_shapes(self, standard_noise_free):
        spec, window = standard_noise_free
        out = reweight_window(window, spec.extrinsic, SolverConfig())
        assert len(out.frames) == len(window.frames)
        for a, b in zip(out.frames, window.frames):
            assert len(a.points) == len(b.points)
            assert np.all(a.points.weight >= 0.0)
            assert np.all(np.isfinite(a.points.weight))


class TestSolverConfig:
    def test_from_json(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{"window_size": 5, "pyramid_sigmas": [4.0, 0.0], "alpha": 0.7}')
        cfg = SolverConfig.from_file(p)
        assert cfg.window_size == 5
        assert cfg.pyramid_sigmas == (4.0, 0.0)
        assert cfg.alpha == 0.7
        assert cfg.beta == 0.5

    def test_from_toml(self, tmp_path):
        p = tmp_path / "cfg.toml"
        p.write_text('window_size = 8\npyramid_sigmas = [8.0, 2.0, 0.0]\nhuber_delta = 15.0\n')
        cfg = SolverConfig.from_file(p)
        assert cfg.window_size == 8
        assert cfg.pyramid_sigmas == (8.0, 2.0, 0.0)
        assert cfg.huber_delta == 15.0
