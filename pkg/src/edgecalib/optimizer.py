"""Weighted multi-frame edge-alignment optimization on SE(3).

The objective projects every frame's edge points into that frame's image with
the candidate extrinsic and reads the attraction field (distance to the
nearest image edge):

    cost(T) = sum_i W_i * D_i / N_valid + lambda_oob * (1 - N_valid/N_total) * d_max

Normalizing by the valid-projection count and charging for out-of-image
points removes the degenerate minimum at "project everything outside the
image". Levenberg-Marquardt runs on per-point residuals r_i = sqrt(W_i) * D_i
with the analytic chain Jacobian

    dr/dxi = sqrt(W_i) * (field gradient) @ (projection Jacobian) @ [I | -p_cam^x]

under left perturbation T <- exp(delta) o T, coarse-to-fine over a blurred
pyramid of the field so large initial offsets still see a useful gradient.
Accepted steps never increase the evaluated cost. Optional alternation
rounds recompute the multi-frame consistency weights with the current
estimate between solves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, project_batch, projection_jacobian_batch
from .geometry import (
    Se3Transform,
    TwistVector,
    left_perturb,
    log_map,
    rotation_error_deg,
    translation_error_cm,
)
from .image_edges import AttractionField, FieldPyramid
from .multiframe import FramePose, build_map, combine_weights, populate_scores


class OptimizerError(RuntimeError):
    pass


class NoValidProjections(OptimizerError):
    """Every point was rejected; the initial guess is grossly wrong."""


class InvalidProjection(OptimizerError):
    pass


class Diverged(OptimizerError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    window_size: int = 10
    pyramid_sigmas: tuple = (8.0, 4.0, 2.0, 0.0)
    max_iters: int = 50
    lm_lambda_init: float = 1e-3
    huber_delta: float = 20.0  # pixels; 0 disables the robust loss
    lambda_oob: float = 0.5
    alternations: int = 3
    alpha: float = 0.5
    beta: float = 0.5
    radius_r: float = 0.3
    sigma_a: float = 10.0
    step_tol: float = 1e-7
    max_consecutive_rejects: int = 30

    @classmethod
    def from_file(cls, path) -> "SolverConfig":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(path.read_text())
        else:
            data = json.loads(path.read_text())
        if "pyramid_sigmas" in data:
            data["pyramid_sigmas"] = tuple(data["pyramid_sigmas"])
        return cls(**data)

    def to_json_dict(self) -> dict:
        return {
            "window_size": self.window_size,
            "pyramid_sigmas": list(self.pyramid_sigmas),
            "max_iters": self.max_iters,
            "lm_lambda_init": self.lm_lambda_init,
            "huber_delta": self.huber_delta,
            "lambda_oob": self.lambda_oob,
            "alternations": self.alternations,
            "alpha": self.alpha,
            "beta": self.beta,
            "radius_r": self.radius_r,
            "sigma_a": self.sigma_a,
            "step_tol": self.step_tol,
            "max_consecutive_rejects": self.max_consecutive_rejects,
        }


@dataclass(frozen=True)
class WindowFrame:
    points: object  # EdgePointSet; .weight carries the combined weights
    pyramid: FieldPyramid
    pose: FramePose


@dataclass(frozen=True)
class CalibrationWindow:
    frames: tuple
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        if not self.frames:
            raise OptimizerError("window needs at least one frame")

    def total_points(self) -> int:
        return sum(len(f.points) for f in self.frames)


@dataclass(frozen=True)
class ResidualSet:
    """Flat per-point residual data for one cost evaluation."""

    frame_index: np.ndarray  # (n,)
    uv: np.ndarray  # (n, 2), meaningful where valid
    p_cam: np.ndarray  # (n, 3)
    distance: np.ndarray  # (n,), 0 where invalid
    weight: np.ndarray  # (n,)
    valid: np.ndarray  # (n,) bool

    def __len__(self):
        return len(self.valid)


@dataclass(frozen=True)
class SolveReport:
    estimate: Se3Transform
    iterations: tuple  # per pyramid level
    final_cost: float
    valid_fraction: float
    converged: bool
    rotation_error: tuple | None = None  # (mean, roll, pitch, yaw) degrees
    translation_error: tuple | None = None  # (mean, x, y, z) centimeters
    alternations_run: int = 1

    def to_json_dict(self) -> dict:
        d = {
            "estimate": self.estimate.to_json_dict(),
            "iterations": list(self.iterations),
            "final_cost": self.final_cost,
            "valid_fraction": self.valid_fraction,
            "converged": self.converged,
            "alternations_run": self.alternations_run,
        }
        if self.rotation_error is not None:
            d["rotation_error_deg"] = list(self.rotation_error)
        if self.translation_error is not None:
            d["translation_error_cm"] = list(self.translation_error)
        return d


def evaluate_cost(
    window: CalibrationWindow, t: Se3Transform, level: int, lambda_oob: float = 0.5
):
    """Normalized weighted field cost plus the out-of-image penalty."""
    frame_idx, uvs, p_cams, dists, weights, valids = [], [], [], [], [], []
    d_max = window.frames[0].pyramid.base.d_max
    for fi, frame in enumerate(window.frames):
        pts = frame.points.xyz
        if len(pts) == 0:
            continue
        uv, _, valid, _ = project_batch(pts, t, window.intrinsics)
        p_cam = pts @ t.rotation.T + t.translation
        dist = np.zeros(len(pts))
        if valid.any():
            dist[valid], _ = frame.pyramid.level(level).sample_batch(uv[valid])
        frame_idx.append(np.full(len(pts), fi))
        uvs.append(uv)
        p_cams.append(p_cam)
        dists.append(dist)
        weights.append(frame.points.weight)
        valids.append(valid)
    if not frame_idx:
        raise NoValidProjections("window has no points")
    res = ResidualSet(
        frame_index=np.concatenate(frame_idx),
        uv=np.concatenate(uvs),
        p_cam=np.concatenate(p_cams),
        distance=np.concatenate(dists),
        weight=np.concatenate(weights),
        valid=np.concatenate(valids),
    )
    n_total = len(res)
    n_valid = int(res.valid.sum())
    if n_valid == 0:
        raise NoValidProjections("every projection was rejected")
    data_term = float(np.sum(res.weight[res.valid] * res.distance[res.valid])) / n_valid
    oob_term = lambda_oob * (1.0 - n_valid / n_total) * d_max
    return data_term + oob_term, res


def residual_jacobian(
    p_lidar, t: Se3Transform, k: CameraIntrinsics, fld: AttractionField, weight: float = 1.0
) -> np.ndarray:
    """1x6 Jacobian of the weighted residual w.r.t. a left perturbation.

    `fld` is the pyramid level the residual reads. Raises InvalidProjection
    when the point does not project into the image.
    """
    p = np.asarray(p_lidar, dtype=float).reshape(1, 3)
    uv, _, valid, _ = project_batch(p, t, k)
    if not valid[0]:
        raise InvalidProjection("point does not project into the image")
    p_cam = (t.apply(p[0]))
    _, grad = fld.sample_batch(uv)
    j_proj = projection_jacobian_batch(p_cam[None, :], k)[0]
    x, y, z = p_cam
    perturb = np.array(
        [
            [1.0, 0.0, 0.0, 0.0, z, -y],
            [0.0, 1.0, 0.0, -z, 0.0, x],
            [0.0, 0.0, 1.0, y, -x, 0.0],
        ]
    )
    return weight * (grad[0] @ j_proj @ perturb)


def _jacobian_rows(res: ResidualSet, window: CalibrationWindow, level: int):
    """(m, 6) rows and (m,) residuals for the valid entries, in stable order."""
    idx = np.flatnonzero(res.valid)
    if len(idx) == 0:
        return np.zeros((0, 6)), np.zeros(0)
    sqrt_w = np.sqrt(res.weight[idx])
    r = sqrt_w * res.distance[idx]

    grads = np.zeros((len(idx), 2))
    pos = 0
    for fi, frame in enumerate(window.frames):
        sel = res.frame_index[idx] == fi
        if not sel.any():
            continue
        _, g = frame.pyramid.level(level).sample_batch(res.uv[idx[sel]])
        grads[sel] = g
    p_cam = res.p_cam[idx]
    j_proj = projection_jacobian_batch(p_cam, window.intrinsics)  # (m, 2, 3)
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    zeros = np.zeros_like(x)
    ones = np.ones_like(x)
    perturb = np.stack(
        [
            np.stack([ones, zeros, zeros, zeros, z, -y], axis=1),
            np.stack([zeros, ones, zeros, -z, zeros, x], axis=1),
            np.stack([zeros, zeros, ones, y, -x, zeros], axis=1),
        ],
        axis=1,
    )  # (m, 3, 6)
    j_uv = np.einsum("mij,mjk->mik", j_proj, perturb)  # (m, 2, 6)
    rows = sqrt_w[:, None] * np.einsum("mi,mik->mk", grads, j_uv)
    return rows, r


def _lm_step(rows: np.ndarray, r: np.ndarray, lam: float, huber_delta: float):
    if huber_delta > 0:
        scale = np.where(np.abs(r) > huber_delta, huber_delta / np.maximum(np.abs(r), 1e-12), 1.0)
    else:
        scale = np.ones_like(r)
    a = (rows * scale[:, None]).T @ rows
    b = (rows * scale[:, None]).T @ r
    damped = a + lam * np.diag(np.maximum(np.diag(a), 1e-12))
    try:
        delta = np.linalg.solve(damped, -b)
    except np.linalg.LinAlgError:
        return None
    return delta


def _lm_at_level(window, t, level, cfg):
    """LM iterations on one pyramid level; returns (t, cost, res, iters,
    converged-by-step-norm). Raises Diverged only at the finest level."""
    finest = len(window.frames[0].pyramid.sigmas) - 1
    lam = cfg.lm_lambda_init
    rejects = 0
    converged = False
    cost, res = evaluate_cost(window, t, level, cfg.lambda_oob)
    iters = 0
    for _ in range(cfg.max_iters):
        iters += 1
        rows, r = _jacobian_rows(res, window, level)
        delta = _lm_step(rows, r, lam, cfg.huber_delta)
        if delta is None:
            lam *= 10.0
            continue
        if np.linalg.norm(delta) < cfg.step_tol:
            converged = True
            break
        t_new = left_perturb(t, TwistVector.from_array(delta))
        try:
            cost_new, res_new = evaluate_cost(window, t_new, level, cfg.lambda_oob)
        except NoValidProjections:
            cost_new, res_new = np.inf, None
        if cost_new < cost:
            t, cost, res = t_new, cost_new, res_new
            lam = max(lam * 0.1, 1e-12)
            rejects = 0
        else:
            lam *= 10.0
            rejects += 1
            if rejects >= cfg.max_consecutive_rejects:
                if level == finest:
                    raise Diverged(
                        f"{rejects} consecutive rejected steps at the finest level"
                    )
                break
    return t, cost, res, iters, converged


def solve(
    window: CalibrationWindow,
    t_init: Se3Transform,
    cfg: SolverConfig | None = None,
    ground_truth: Se3Transform | None = None,
) -> SolveReport:
    """Coarse-to-fine Levenberg-Marquardt over the field pyramid.

    Blurred levels widen the basin but their optima sit slightly off the true
    (unblurred) objective's, so each coarse level's result is kept only when
    it does not worsen the finest-level cost; otherwise the level is skipped.
    A well-initialized solve therefore never walks away from its optimum.
    """
    cfg = cfg or SolverConfig()
    t = t_init
    levels = len(window.frames[0].pyramid.sigmas)
    finest = levels - 1
    iterations = []

    def finest_cost(tt):
        try:
            c, _ = evaluate_cost(window, tt, finest, cfg.lambda_oob)
        except NoValidProjections:
            return np.inf
        return c

    candidates = [t_init]
    for level in range(levels):
        t, cost, res, iters, converged_level = _lm_at_level(window, t, level, cfg)
        iterations.append(iters)
        candidates.append(t)

    scores = [finest_cost(c) for c in candidates]
    best = int(np.argmin(scores))
    if best != len(candidates) - 1:
        # a blurred level walked off a better optimum; refine the best
        # candidate on the true objective instead
        t, cost, res, extra, converged_level = _lm_at_level(
            window, candidates[best], finest, cfg
        )
        iterations[-1] += extra

    valid_fraction = float(res.valid.mean())
    rot_err = rotation_error_deg(t, ground_truth) if ground_truth is not None else None
    trans_err = translation_error_cm(t, ground_truth) if ground_truth is not None else None
    return SolveReport(
        estimate=t,
        iterations=tuple(iterations),
        final_cost=float(cost),
        valid_fraction=valid_fraction,
        converged=converged_level,
        rotation_error=rot_err,
        translation_error=trans_err,
    )


def reweight_window(
    window: CalibrationWindow, t: Se3Transform, cfg: SolverConfig
) -> CalibrationWindow:
    """Recompute the multi-frame consistency weights with the estimate t."""
    pairs = [(f.points, f.pose) for f in window.frames]
    edge_map = build_map(pairs, radius=cfg.radius_r)
    fields = {f.pose.frame_id: f.pyramid.base for f in window.frames}
    scored = populate_scores(edge_map, fields, t, window.intrinsics, sigma_a=cfg.sigma_a)
    n = len(scored)
    w_pos = np.zeros(n)
    w_proj = np.zeros(n)
    for i in range(n):
        idx = scored.neighbors(scored.world_xyz[i])
        w_pos[i] = len(idx)
        w_proj[i] = np.nansum(scored.scores[idx])
    combined = combine_weights(w_pos, w_proj, cfg.alpha, cfg.beta).w_combined

    frames = []
    offset = 0
    for f in window.frames:
        n_f = len(f.points)
        frames.append(
            WindowFrame(
                points=f.points.with_weights(combined[offset : offset + n_f]),
                pyramid=f.pyramid,
                pose=f.pose,
            )
        )
        offset += n_f
    return CalibrationWindow(frames=tuple(frames), intrinsics=window.intrinsics)


def alternate(
    window: CalibrationWindow,
    t_init: Se3Transform,
    cfg: SolverConfig | None = None,
    ground_truth: Se3Transform | None = None,
) -> SolveReport:
    """Alternate weight recomputation and solving until the estimate settles.

    Round 1 solves with the window's existing weights; each further round
    recomputes weights at the current estimate first. Stops early when two
    successive estimates differ by under 0.01 degrees and 0.1 cm.
    """
    cfg = cfg or SolverConfig()
    report = solve(window, t_init, cfg, ground_truth)
    rounds = 1
    prev = t_init
    while rounds < max(1, cfg.alternations):
        rot_delta, _, _, _ = rotation_error_deg(report.estimate, prev)
        trans_delta, _, _, _ = translation_error_cm(report.estimate, prev)
        if rot_delta < 0.01 and trans_delta < 0.1:
            break
        prev = report.estimate
        window = reweight_window(window, report.estimate, cfg)
        report = solve(window, report.estimate, cfg, ground_truth)
        rounds += 1
    return replace(report, alternations_run=rounds)
