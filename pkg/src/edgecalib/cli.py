"""Command-line entry points: calibrate, sweep, overlay, ablate.

The pipeline behind `calibrate` is: extract point edges per frame, build the
image edge maps (mask contours or Canny fallback) plus attraction pyramids,
weight the points by multi-frame consistency, then alternate weighting and
Levenberg-Marquardt solving over consecutive windows with warm starts.

All machine-readable output is JSON; tables are views over it. The result
JSON contains nothing volatile, so a fixed seed reproduces it byte for byte;
wall-clock timing goes to a separate run_meta.json.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import project_batch
from .dataset_io import DatasetError, SequenceManifest, load_frame, open_sequence
from .geometry import GeometryError, Se3Transform, TwistVector, left_perturb
from .image_edges import (
    EdgeMap,
    adaptive_edge_filter,
    build_field_pyramid,
    canny_fallback,
)
from .lidar_edges import EdgeExtractConfig, cluster_filter, extract_edges
from .optimizer import (
    CalibrationWindow,
    Diverged,
    NoValidProjections,
    SolverConfig,
    WindowFrame,
    alternate,
    reweight_window,
)

GOLD = (255, 215, 0)
RED = (255, 0, 0)

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_NO_VALID_PROJECTIONS = 2
EXIT_DIVERGED = 3
EXIT_DATASET = 4
EXIT_USAGE = 5


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Pipeline assembly
# ---------------------------------------------------------------------------


def build_frames(
    manifest: SequenceManifest,
    frame_ids,
    edges_mode: str,
    cfg: SolverConfig,
    extract_cfg: EdgeExtractConfig | None = None,
    canny_low: float = 40.0,
    canny_high: float = 110.0,
):
    """Load and preprocess the selected frames into WindowFrame objects."""
    extract_cfg = extract_cfg or EdgeExtractConfig()
    frames = []
    for fid in frame_ids:
        scan, image, masks, pose = load_frame(manifest, fid)
        points = cluster_filter(
            extract_edges(scan, extract_cfg),
            eps=extract_cfg.cluster_eps,
            min_points=extract_cfg.cluster_min_points,
        )
        if edges_mode == "masks" and masks is not None:
            edge_map = adaptive_edge_filter(masks, image)
        else:
            edge_map = canny_fallback(image, canny_low, canny_high)
        pyramid = build_field_pyramid(edge_map, cfg.pyramid_sigmas)
        frames.append(WindowFrame(points=points, pyramid=pyramid, pose=pose))
    return frames


def parse_perturb_spec(spec: str):
    """'rot=2deg,trans=10cm,seed=7' -> (degrees, centimeters, seed)."""
    rot_deg = trans_cm = 0.0
    seed = 0
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        key, _, value = token.partition("=")
        if key == "rot":
            rot_deg = float(value.removesuffix("deg"))
        elif key == "trans":
            trans_cm = float(value.removesuffix("cm"))
        elif key == "seed":
            seed = int(value)
        else:
            raise CliError(f"unknown perturb field {key!r}")
    return rot_deg, trans_cm, seed


def perturb_transform(gt: Se3Transform, rot_deg: float, trans_cm: float, seed: int):
    """Per-axis biases of fixed magnitude with seeded random signs."""
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=6)
    twist = TwistVector(trans_cm / 100.0 * signs[:3], np.radians(rot_deg) * signs[3:])
    return left_perturb(gt, twist)


def resolve_init(manifest: SequenceManifest, init: str | None, perturb: str | None):
    """(t_init, ground_truth | None) from --init / --perturb flags."""
    gt = manifest.extrinsic_gt
    if init is not None:
        path = Path(init)
        if path.is_file():
            text = path.read_text().strip()
            if text.startswith("{"):
                return Se3Transform.from_json(text), gt
            return Se3Transform.from_kitti_line(text), gt
        return Se3Transform.from_kitti_line(init), gt
    if perturb is not None:
        if gt is None:
            raise CliError("--perturb needs a ground-truth extrinsic in the calib")
        rot_deg, trans_cm, seed = parse_perturb_spec(perturb)
        return perturb_transform(gt, rot_deg, trans_cm, seed), gt
    if gt is not None:
        return gt, gt
    raise CliError("no --init, no --perturb, and no ground truth in the sequence")


@dataclass
class RunResult:
    """Everything one calibrate run produces, JSON-serializable."""

    final: dict  # final SolveReport dict
    windows: list  # per-window report dicts
    frame_diagnostics: list
    config: dict
    edges_mode: str
    frame_ids: list
    wall_clock_sec: float

    def to_json_dict(self, include_timing: bool = False) -> dict:
        d = {
            "final": self.final,
            "windows": self.windows,
            "frame_diagnostics": self.frame_diagnostics,
            "config": self.config,
            "edges_mode": self.edges_mode,
            "frame_ids": self.frame_ids,
        }
        if include_timing:
            d["wall_clock_sec"] = self.wall_clock_sec
        return d


def dump_json(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True)


def run_calibration(
    manifest: SequenceManifest,
    t_init: Se3Transform,
    cfg: SolverConfig,
    edges_mode: str = "masks",
    frame_count: int | None = None,
    ground_truth: Se3Transform | None = None,
) -> RunResult:
    """Chunk the selected frames into windows, alternate-solve each with a
    warm start, and report the final window's estimate."""
    start = time.perf_counter()
    n = len(manifest) if frame_count is None else min(frame_count, len(manifest))
    frame_ids = list(range(n))
    frames = build_frames(manifest, frame_ids, edges_mode, cfg)

    w = max(1, cfg.window_size)
    estimate = t_init
    window_reports = []
    diagnostics = []
    for f, fid in zip(frames, frame_ids):
        diagnostics.append(
            {"frame_id": fid, "edge_points": len(f.points), "edge_pixels": int(f.pyramid.base.values.size - np.count_nonzero(f.pyramid.base.values))}
        )
    for begin in range(0, len(frames), w):
        chunk = frames[begin : begin + w]
        window = CalibrationWindow(frames=tuple(chunk), intrinsics=manifest.intrinsics)
        window = reweight_window(window, estimate, cfg)
        report = alternate(window, estimate, cfg, ground_truth=ground_truth)
        estimate = report.estimate
        window_reports.append(
            {"first_frame": frame_ids[begin], "frames": len(chunk), **report.to_json_dict()}
        )
    return RunResult(
        final=window_reports[-1],
        windows=window_reports,
        frame_diagnostics=diagnostics,
        config=cfg.to_json_dict(),
        edges_mode=edges_mode,
        frame_ids=frame_ids,
        wall_clock_sec=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# Overlay rendering
# ---------------------------------------------------------------------------


def overlay_frame(
    manifest: SequenceManifest,
    frame_id: int,
    t: Se3Transform,
    edges_mode: str = "masks",
    cfg: SolverConfig | None = None,
):
    """(RGB image, stats): point edges in red (2 px), image edges golden."""
    cfg = cfg or SolverConfig()
    scan, image, masks, pose = load_frame(manifest, frame_id)
    points = cluster_filter(extract_edges(scan))
    if edges_mode == "masks" and masks is not None:
        edge_map = adaptive_edge_filter(masks, image)
    else:
        edge_map = canny_fallback(image, 40.0, 110.0)

    rgb = np.stack([image] * 3, axis=2).astype(np.uint8)
    rgb[edge_map.grid] = GOLD
    uv, _, valid, _ = project_batch(points.xyz, t, manifest.intrinsics)
    height, width = image.shape
    red_mask = np.zeros_like(edge_map.grid)
    for u, v in uv[valid]:
        c, r = int(round(u)), int(round(v))
        red_mask[max(0, r - 1) : min(height, r + 1), max(0, c - 1) : min(width, c + 1)] = True
    rgb[red_mask] = RED

    from scipy import ndimage

    golden_dilated = ndimage.binary_dilation(edge_map.grid, iterations=2)
    n_red = int(red_mask.sum())
    overlap = float((red_mask & golden_dilated).sum() / n_red) if n_red else 0.0
    stats = {
        "projected_points": int(valid.sum()),
        "red_pixels": n_red,
        "golden_pixels": int(edge_map.grid.sum()),
        "overlap_within_2px": overlap,
    }
    return rgb, stats


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _load_config(args) -> SolverConfig:
    path = args.config or os.environ.get("EDGECALIB_CONFIG")
    cfg = SolverConfig.from_file(path) if path else SolverConfig()
    if getattr(args, "window", None):
        cfg = replace(cfg, window_size=args.window)
    return cfg


def cmd_calibrate(args) -> int:
    manifest = open_sequence(args.sequence, layout=args.layout)
    cfg = _load_config(args)
    t_init, gt = resolve_init(manifest, args.init, args.perturb)
    result = run_calibration(
        manifest,
        t_init,
        cfg,
        edges_mode=args.edges,
        frame_count=args.frames,
        ground_truth=gt,
    )
    out_dir = Path(args.out_dir) if args.out_dir else None
    payload = dump_json(result.to_json_dict())
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "result.json").write_text(payload + "\n")
        (out_dir / "run_meta.json").write_text(
            dump_json({"wall_clock_sec": result.wall_clock_sec}) + "\n"
        )
        est = Se3Transform.from_json_dict(result.final["estimate"])
        rgb, _ = overlay_frame(manifest, result.frame_ids[-1], est, args.edges, cfg)
        Image.fromarray(rgb).save(out_dir / "overlay.png")
    else:
        print(payload)
    return EXIT_OK if result.final["converged"] else EXIT_NOT_CONVERGED


def _sweep_trial(params):
    (root, layout, edges, frames, cfg_dict, rot_deg, trans_cm, seed) = params
    manifest = open_sequence(root, layout=layout)
    cfg = SolverConfig(**{**cfg_dict, "pyramid_sigmas": tuple(cfg_dict["pyramid_sigmas"])})
    gt = manifest.extrinsic_gt
    if gt is None:
        raise CliError("sweep needs a ground-truth extrinsic")
    t_init = perturb_transform(gt, rot_deg, trans_cm, seed)
    result = run_calibration(
        manifest, t_init, cfg, edges_mode=edges, frame_count=frames, ground_truth=gt
    )
    return {
        "rot_deg": rot_deg,
        "trans_cm": trans_cm,
        "seed": seed,
        "rotation_error_deg": result.final.get("rotation_error_deg"),
        "translation_error_cm": result.final.get("translation_error_cm"),
        "converged": result.final["converged"],
        "final_cost": result.final["final_cost"],
    }


def parse_offsets(spec: str):
    """'2deg:10cm,5deg:50cm' -> [(2.0, 10.0), (5.0, 50.0)]."""
    offsets = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        rot, _, trans = token.partition(":")
        offsets.append((float(rot.removesuffix("deg")), float(trans.removesuffix("cm"))))
    return offsets


def sweep_table(rows):
    """Markdown table over the sweep rows, one line per offset."""
    lines = [
        "| Offset | Trials | Conv | Mean(deg) | Roll(deg) | Pitch(deg) | Yaw(deg) | Mean(cm) | X(cm) | Y(cm) | Z(cm) |",
        "|---|---|---|---|---|---|---|---|---|---|---|",
    ]
    grouped: dict = {}
    for row in rows:
        grouped.setdefault((row["rot_deg"], row["trans_cm"]), []).append(row)
    for (rot, trans), group in sorted(grouped.items()):
        conv = sum(1 for g in group if g["converged"])
        rots = np.array([g["rotation_error_deg"] for g in group if g["rotation_error_deg"]])
        transs = np.array([g["translation_error_cm"] for g in group if g["translation_error_cm"]])
        r = rots.mean(axis=0) if len(rots) else np.full(4, np.nan)
        t = transs.mean(axis=0) if len(transs) else np.full(4, np.nan)
        lines.append(
            f"| {rot:g}deg/{trans:g}cm | {len(group)} | {conv} "
            f"| {r[0]:.3f} | {r[1]:.3f} | {r[2]:.3f} | {r[3]:.3f} "
            f"| {t[0]:.3f} | {t[1]:.3f} | {t[2]:.3f} | {t[3]:.3f} |"
        )
    return "\n".join(lines)


def sweep_csv(rows):
    lines = ["rot_offset_deg,trans_offset_cm,seed,converged,rot_mean_deg,roll_deg,pitch_deg,yaw_deg,trans_mean_cm,x_cm,y_cm,z_cm,final_cost"]
    for row in rows:
        r = row["rotation_error_deg"] or [np.nan] * 4
        t = row["translation_error_cm"] or [np.nan] * 4
        lines.append(
            f"{row['rot_deg']:g},{row['trans_cm']:g},{row['seed']},{int(row['converged'])},"
            f"{r[0]:.6f},{r[1]:.6f},{r[2]:.6f},{r[3]:.6f},"
            f"{t[0]:.6f},{t[1]:.6f},{t[2]:.6f},{t[3]:.6f},{row['final_cost']:.6f}"
        )
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    offsets = parse_offsets(args.offsets)
    tasks = []
    for rot_deg, trans_cm in offsets:
        for trial in range(args.trials):
            tasks.append(
                (
                    args.sequence,
                    args.layout,
                    args.edges,
                    args.frames,
                    cfg.to_json_dict(),
                    rot_deg,
                    trans_cm,
                    args.seed + trial,
                )
            )
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_trial, tasks))
    else:
        rows = [_sweep_trial(t) for t in tasks]
    table = sweep_table(rows)
    print(table)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(dump_json({"rows": rows}) + "\n")
        (out / "sweep.md").write_text(table + "\n")
        (out / "sweep.csv").write_text(sweep_csv(rows) + "\n")
    return EXIT_OK


def cmd_overlay(args) -> int:
    manifest = open_sequence(args.sequence, layout=args.layout)
    if args.init:
        t, _ = resolve_init(manifest, args.init, None)
    elif manifest.extrinsic_gt is not None:
        t = manifest.extrinsic_gt
    else:
        raise CliError("overlay needs --init or a ground-truth extrinsic")
    rgb, stats = overlay_frame(manifest, args.frame_id, t, args.edges)
    out = Path(args.out or "overlay.png")
    Image.fromarray(rgb).save(out)
    print(dump_json(stats))
    return EXIT_OK


def ablate_variants(cfg: SolverConfig):
    """(name, edges_mode override, config) for the ablation runs."""
    uniform = replace(cfg, alternations=1, alpha=1.0, beta=0.0)
    return [
        ("full", None, cfg),
        ("canny_edges", "canny", cfg),
        ("no_weighting", None, uniform),
    ]


def cmd_ablate(args) -> int:
    manifest = open_sequence(args.sequence, layout=args.layout)
    cfg = _load_config(args)
    gt = manifest.extrinsic_gt
    if gt is None:
        raise CliError("ablate needs a ground-truth extrinsic")
    rot_deg, trans_cm, seed = parse_perturb_spec(args.perturb or "rot=2deg,trans=10cm,seed=0")
    t_init = perturb_transform(gt, rot_deg, trans_cm, seed + args.seed)
    rows = []
    for name, edges_override, variant_cfg in ablate_variants(cfg):
        edges_mode = edges_override or args.edges
        if name == "no_weighting":
            result = run_ablation_uniform(manifest, t_init, variant_cfg, edges_mode, args.frames, gt)
        else:
            result = run_calibration(
                manifest, t_init, variant_cfg, edges_mode=edges_mode,
                frame_count=args.frames, ground_truth=gt,
            )
        rows.append({"setting": name, **result.final})
    table = ablate_table(rows)
    print(table)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(dump_json({"rows": rows}) + "\n")
        (out / "ablation.md").write_text(table + "\n")
    return EXIT_OK


def run_ablation_uniform(manifest, t_init, cfg, edges_mode, frame_count, gt) -> RunResult:
    """The no-weighting variant: uniform weights, no alternation."""
    start = time.perf_counter()
    n = len(manifest) if frame_count is None else min(frame_count, len(manifest))
    frame_ids = list(range(n))
    frames = build_frames(manifest, frame_ids, edges_mode, cfg)
    w = max(1, cfg.window_size)
    estimate = t_init
    window_reports = []
    for begin in range(0, len(frames), w):
        chunk = frames[begin : begin + w]
        window = CalibrationWindow(frames=tuple(chunk), intrinsics=manifest.intrinsics)
        report = alternate(window, estimate, replace(cfg, alternations=1), ground_truth=gt)
        estimate = report.estimate
        window_reports.append({"first_frame": frame_ids[begin], **report.to_json_dict()})
    return RunResult(
        final=window_reports[-1],
        windows=window_reports,
        frame_diagnostics=[],
        config=cfg.to_json_dict(),
        edges_mode=edges_mode,
        frame_ids=frame_ids,
        wall_clock_sec=time.perf_counter() - start,
    )


def ablate_table(rows):
    lines = [
        "| Setting | Mean(cm) | X(cm) | Y(cm) | Z(cm) | Mean(deg) | Roll(deg) | Pitch(deg) | Yaw(deg) |",
        "|---|---|---|---|---|---|---|---|---|",
    ]
    for row in rows:
        t = row.get("translation_error_cm") or [np.nan] * 4
        r = row.get("rotation_error_deg") or [np.nan] * 4
        lines.append(
            f"| {row['setting']} | {t[0]:.3f} | {t[1]:.3f} | {t[2]:.3f} | {t[3]:.3f} "
            f"| {r[0]:.3f} | {r[1]:.3f} | {r[2]:.3f} | {r[3]:.3f} |"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgecalib",
        description="Targetless LiDAR-camera extrinsic calibration from edge alignment",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--sequence", required=True, help="sequence directory")
        p.add_argument("--layout", choices=["native", "kitti"], default="native")
        p.add_argument("--edges", choices=["masks", "canny"], default="masks")
        p.add_argument("--frames", type=int, default=None, help="use the first N frames")
        p.add_argument("--window", type=int, default=None, help="window size override")
        p.add_argument("--config", default=None, help="solver config TOML/JSON")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("calibrate", help="run the calibration pipeline")
    common(p)
    p.add_argument("--init", default=None, help="initial extrinsic (file or 12 numbers)")
    p.add_argument("--perturb", default=None, help="e.g. rot=2deg,trans=10cm,seed=7")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="error sweep over initial offsets")
    common(p)
    p.add_argument("--offsets", required=True, help="e.g. 2deg:10cm,5deg:50cm")
    p.add_argument("--trials", type=int, default=5)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("overlay", help="render point edges over image edges")
    common(p)
    p.add_argument("--frame-id", type=int, default=0)
    p.add_argument("--init", default=None, help="transform to visualize")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("ablate", help="full vs canny-edges vs no-weighting")
    common(p)
    p.add_argument("--perturb", default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoValidProjections as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_VALID_PROJECTIONS
    except Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except (CliError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
