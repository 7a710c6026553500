"""Sequence ingestion: KITTI-odometry layout and the native recording layout.

KITTI layout (one sequence directory):
    velodyne/*.bin, image_0/*.png (or image_2/), calib.txt (P0..P3, Tr),
    times.txt, optional poses.txt (camera-0 frame, one 3x4 line per frame).

Native layout:
    velodyne/*.bin, images/*.png, masks/*.ecmk (optional), poses.txt,
    calib.json, optional times.txt. calib.json carries the intrinsics, the
    sensor's elevation table, the pose frame ("lidar" or "camera"), and an
    optional ground-truth extrinsic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics
from .geometry import Se3Transform
from .image_edges import MaskSet, load_masks
from .lidar_edges import RingScan, load_sensor_profile, organize_rings, read_velodyne_bin
from .multiframe import FramePose, load_kitti_poses


class DatasetError(ValueError):
    pass


class MissingFile(DatasetError):
    pass


class CountMismatch(DatasetError):
    pass


class CalibParseError(DatasetError):
    pass


class DecodeError(DatasetError):
    pass


@dataclass(frozen=True)
class SequenceManifest:
    root: Path
    layout: str  # "kitti" | "native"
    cloud_files: tuple
    image_files: tuple
    mask_files: tuple  # entries may be None
    timestamps: tuple
    intrinsics: CameraIntrinsics
    poses: tuple  # FramePose per frame, LiDAR -> world
    extrinsic_gt: Se3Transform | None
    elevations_deg: tuple | None

    def __len__(self):
        return len(self.cloud_files)


def _sorted_files(directory: Path, suffix: str):
    return tuple(sorted(directory.glob(f"*{suffix}")))


def _parse_kitti_calib(path: Path):
    entries = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, vals = line.split(":", 1)
        entries[key.strip()] = vals.strip()
    return entries


def open_sequence(root, layout: str = "native") -> SequenceManifest:
    """Validate a sequence directory and build its manifest."""
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(f"sequence root {root} does not exist")
    if layout == "kitti":
        return _open_kitti(root)
    if layout == "native":
        return _open_native(root)
    raise DatasetError(f"unknown layout {layout!r}")


def _image_size(path: Path):
    with Image.open(path) as im:
        return im.size  # (width, height)


def _open_kitti(root: Path) -> SequenceManifest:
    velo_dir = root / "velodyne"
    image_dir = next((root / d for d in ("image_0", "image_2") if (root / d).is_dir()), None)
    calib_path = root / "calib.txt"
    if not velo_dir.is_dir():
        raise MissingFile(f"{velo_dir} missing")
    if image_dir is None:
        raise MissingFile(f"{root}/image_0 (or image_2) missing")
    if not calib_path.is_file():
        raise MissingFile(f"{calib_path} missing")

    clouds = _sorted_files(velo_dir, ".bin")
    images = _sorted_files(image_dir, ".png")
    if len(clouds) == 0:
        raise MissingFile(f"no .bin scans under {velo_dir}")
    if len(clouds) != len(images):
        raise CountMismatch(f"{len(clouds)} scans vs {len(images)} images")

    calib = _parse_kitti_calib(calib_path)
    p_key = "P0" if image_dir.name == "image_0" else "P2"
    if p_key not in calib:
        raise CalibParseError(f"calib.txt lacks {p_key}")
    width, height = _image_size(images[0])
    try:
        intrinsics = CameraIntrinsics.from_kitti_projection(calib[p_key], width, height)
    except Exception as exc:
        raise CalibParseError(f"bad {p_key} line: {exc}") from exc
    extrinsic_gt = None
    if "Tr" in calib:
        try:
            extrinsic_gt = Se3Transform.from_kitti_line(calib["Tr"])
        except Exception as exc:
            raise CalibParseError(f"bad Tr line: {exc}") from exc

    times_path = root / "times.txt"
    if times_path.is_file():
        timestamps = tuple(
            float(tok) for tok in times_path.read_text().split() if tok.strip()
        )
        if len(timestamps) < len(clouds):
            raise CountMismatch("times.txt shorter than the frame list")
        timestamps = timestamps[: len(clouds)]
    else:
        timestamps = tuple(0.1 * i for i in range(len(clouds)))

    poses_path = root / "poses.txt"
    poses = []
    if poses_path.is_file():
        cam_poses = load_kitti_poses(poses_path)
        if len(cam_poses) < len(clouds):
            raise CountMismatch("poses.txt shorter than the frame list")
        # camera-frame poses; conversion to LiDAR frame happens downstream
        # once an extrinsic estimate exists. With a GT Tr available, use it.
        base = extrinsic_gt if extrinsic_gt is not None else Se3Transform.identity()
        poses = [
            FramePose(i, cam_poses[i].compose(base), timestamps[i])
            for i in range(len(clouds))
        ]
    else:
        poses = [
            FramePose(i, Se3Transform.identity(), timestamps[i])
            for i in range(len(clouds))
        ]

    profile = load_sensor_profile("hdl64e")
    return SequenceManifest(
        root=root,
        layout="kitti",
        cloud_files=clouds,
        image_files=images,
        mask_files=tuple(None for _ in clouds),
        timestamps=timestamps,
        intrinsics=intrinsics,
        poses=tuple(poses),
        extrinsic_gt=extrinsic_gt,
        elevations_deg=tuple(profile["elevations_deg"]),
    )


def _open_native(root: Path) -> SequenceManifest:
    velo_dir = root / "velodyne"
    image_dir = root / "images"
    calib_path = root / "calib.json"
    poses_path = root / "poses.txt"
    for p in (velo_dir, image_dir):
        if not p.is_dir():
            raise MissingFile(f"{p} missing")
    for p in (calib_path, poses_path):
        if not p.is_file():
            raise MissingFile(f"{p} missing")

    clouds = _sorted_files(velo_dir, ".bin")
    images = _sorted_files(image_dir, ".png")
    if len(clouds) == 0:
        raise MissingFile(f"no .bin scans under {velo_dir}")
    if len(clouds) != len(images):
        raise CountMismatch(f"{len(clouds)} scans vs {len(images)} images")
    mask_dir = root / "masks"
    masks = []
    for cloud in clouds:
        candidate = mask_dir / (cloud.stem + ".ecmk")
        masks.append(candidate if candidate.is_file() else None)

    try:
        calib = json.loads(calib_path.read_text())
        intrinsics = CameraIntrinsics(**calib["intrinsics"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibParseError(f"bad calib.json: {exc}") from exc
    extrinsic_gt = (
        Se3Transform.from_json_dict(calib["extrinsic_gt"])
        if "extrinsic_gt" in calib
        else None
    )
    elevations = None
    if "lidar_profile" in calib:
        elevations = tuple(calib["lidar_profile"]["elevations_deg"])

    times_path = root / "times.txt"
    if times_path.is_file():
        timestamps = tuple(float(tok) for tok in times_path.read_text().split())
    else:
        timestamps = tuple(0.1 * i for i in range(len(clouds)))
    if len(timestamps) < len(clouds):
        raise CountMismatch("times.txt shorter than the frame list")
    timestamps = timestamps[: len(clouds)]
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        raise DatasetError("timestamps must be strictly increasing")

    raw_poses = load_kitti_poses(poses_path)
    if len(raw_poses) < len(clouds):
        raise CountMismatch("poses.txt shorter than the frame list")
    pose_frame = calib.get("pose_frame", "lidar")
    poses = [FramePose(i, raw_poses[i], timestamps[i]) for i in range(len(clouds))]
    if pose_frame == "camera" and extrinsic_gt is not None:
        poses = [
            FramePose(p.frame_id, p.pose.compose(extrinsic_gt), p.timestamp)
            for p in poses
        ]

    return SequenceManifest(
        root=root,
        layout="native",
        cloud_files=clouds,
        image_files=images,
        mask_files=tuple(masks),
        timestamps=timestamps,
        intrinsics=intrinsics,
        poses=tuple(poses),
        extrinsic_gt=extrinsic_gt,
        elevations_deg=elevations,
    )


def load_frame(manifest: SequenceManifest, frame_id: int):
    """(RingScan, grayscale image, MaskSet | None, FramePose) for one frame."""
    if not (0 <= frame_id < len(manifest)):
        raise DatasetError(f"frame {frame_id} outside manifest")
    try:
        xyz, _ = read_velodyne_bin(manifest.cloud_files[frame_id])
    except Exception as exc:
        raise DecodeError(f"scan {frame_id}: {exc}") from exc
    scan = organize_rings(
        xyz, elevations_deg=manifest.elevations_deg, frame_id=frame_id
    )
    try:
        image = np.asarray(Image.open(manifest.image_files[frame_id]).convert("L"))
    except Exception as exc:
        raise DecodeError(f"image {frame_id}: {exc}") from exc
    maskset: MaskSet | None = None
    mask_path = manifest.mask_files[frame_id]
    if mask_path is not None:
        try:
            maskset = load_masks(mask_path)
        except Exception as exc:
            raise DecodeError(f"masks {frame_id}: {exc}") from exc
    return scan, image, maskset, manifest.poses[frame_id]
