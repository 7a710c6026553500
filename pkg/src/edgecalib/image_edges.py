"""Image-side edge machinery: filtered edge maps and the edge attraction field.

Edge maps come either from segmentation-mask contours (adaptive, per-object
gradient filtering) or from a built-in Canny detector when no masks exist.
The attraction field stores, per pixel, the L2 distance to the nearest edge
pixel; its negative bilinear gradient points toward better edge alignment.

Mask archives use the "ECMK" container: little-endian header
{magic "ECMK", version u16, width u32, height u32, count u32}, then per mask
{id u32, run_count u32, run_count x u32}. Runs are row-major and alternate
starting with a run of zeros; mask ids are >= 1 (0 is reserved for "no mask"
in edge-map provenance).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

ECMK_MAGIC = b"ECMK"
ECMK_VERSION = 1
ECDT_MAGIC = b"ECDT"

TAN_22_5 = math.tan(math.radians(22.5))
TAN_67_5 = math.tan(math.radians(67.5))

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=float)


class ImageEdgeError(ValueError):
    pass


class FormatError(ImageEdgeError):
    pass


class EmptyArchive(ImageEdgeError):
    pass


class DimensionMismatch(ImageEdgeError):
    pass


class OutOfBounds(ImageEdgeError):
    pass


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mask:
    id: int
    grid: np.ndarray  # bool, (height, width)

    def __post_init__(self):
        if self.id < 1:
            raise FormatError(f"mask id must be >= 1, got {self.id}")
        g = np.asarray(self.grid, dtype=bool)
        if g.ndim != 2 or not g.any():
            raise FormatError("mask grid must be 2-D and nonempty")
        object.__setattr__(self, "grid", g)


@dataclass(frozen=True)
class MaskSet:
    masks: tuple
    width: int
    height: int
    source: str = "foundation-model"

    def __post_init__(self):
        for m in self.masks:
            if m.grid.shape != (self.height, self.width):
                raise DimensionMismatch(
                    f"mask {m.id} shape {m.grid.shape} != ({self.height}, {self.width})"
                )

    def __len__(self):
        return len(self.masks)


def _rle_encode(grid: np.ndarray) -> np.ndarray:
    """Row-major RLE, alternating runs starting with zeros."""
    flat = np.asarray(grid, dtype=np.uint8).ravel()
    edges = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [flat.size]])
    runs = ends - starts
    if flat[0] == 1:
        runs = np.concatenate([[0], runs])
    return runs.astype(np.uint32)


def _rle_decode(runs: np.ndarray, width: int, height: int) -> np.ndarray:
    total = int(runs.sum(dtype=np.uint64))
    if total != width * height:
        raise FormatError(f"RLE covers {total} pixels, expected {width * height}")
    values = np.zeros(len(runs), dtype=np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, runs)
    return flat.reshape(height, width).astype(bool)


def write_masks(maskset: MaskSet, path) -> None:
    with open(path, "wb") as f:
        f.write(ECMK_MAGIC)
        f.write(
            struct.pack(
                "<HIII", ECMK_VERSION, maskset.width, maskset.height, len(maskset.masks)
            )
        )
        for m in maskset.masks:
            runs = _rle_encode(m.grid)
            f.write(struct.pack("<II", m.id, len(runs)))
            f.write(runs.tobytes())


def load_masks(path) -> MaskSet:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 18 or data[:4] != ECMK_MAGIC:
        raise FormatError("not an ECMK archive")
    version, width, height, count = struct.unpack_from("<HIII", data, 4)
    if version != ECMK_VERSION:
        raise FormatError(f"unsupported ECMK version {version}")
    if count == 0:
        raise EmptyArchive("archive declares zero masks")
    offset = 18
    masks = []
    for _ in range(count):
        if offset + 8 > len(data):
            raise FormatError("truncated mask header")
        mask_id, run_count = struct.unpack_from("<II", data, offset)
        offset += 8
        end = offset + 4 * run_count
        if end > len(data):
            raise FormatError("truncated RLE data")
        runs = np.frombuffer(data[offset:end], dtype="<u4")
        offset += 4 * run_count
        masks.append(Mask(id=int(mask_id), grid=_rle_decode(runs, width, height)))
    return MaskSet(masks=tuple(masks), width=width, height=height)


# ---------------------------------------------------------------------------
# Edge maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EdgeMap:
    grid: np.ndarray  # bool, (height, width)
    provenance: np.ndarray | None = None  # int32 mask ids, 0 = none

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=bool)
        object.__setattr__(self, "grid", g)
        if self.provenance is None:
            object.__setattr__(
                self, "provenance", np.zeros(g.shape, dtype=np.int32)
            )

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    def count(self) -> int:
        return int(self.grid.sum())

    @classmethod
    def empty(cls, width: int, height: int) -> "EdgeMap":
        return cls(np.zeros((height, width), dtype=bool))

    def to_png(self, path) -> None:
        Image.fromarray(np.where(self.grid, 255, 0).astype(np.uint8)).save(path)

    @classmethod
    def from_png(cls, path) -> "EdgeMap":
        arr = np.asarray(Image.open(path).convert("L"))
        return cls(arr >= 128)


def mask_contour(grid: np.ndarray) -> np.ndarray:
    """Pixels of the mask with a 4-neighbor outside it (or on the border)."""
    cross = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    interior = ndimage.binary_erosion(grid, structure=cross, border_value=0)
    return grid & ~interior


def sobel_magnitude(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    gx = ndimage.correlate(img, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(img, SOBEL_Y, mode="nearest")
    return np.hypot(gx, gy)


def adaptive_edge_filter(
    masks: MaskSet,
    image: np.ndarray,
    contour_stat: str = "mean",
    k_std: float = 0.0,
    tolerance: float = 0.98,
) -> EdgeMap:
    """Keep, per mask contour, only the pixels at or above the contour's own
    reference gradient magnitude.

    The reference is the mean Sobel magnitude along the contour (optionally
    mean + k_std * std). `tolerance` slightly relaxes the cut so a contour of
    uniform strength survives its own corner pixels, which score a few percent
    high under a 3x3 Sobel.
    """
    img = np.asarray(image)
    if img.shape != (masks.height, masks.width):
        raise DimensionMismatch(
            f"image shape {img.shape} != mask dims ({masks.height}, {masks.width})"
        )
    magnitude = sobel_magnitude(img)
    grid = np.zeros(img.shape, dtype=bool)
    provenance = np.zeros(img.shape, dtype=np.int32)
    for m in sorted(masks.masks, key=lambda m: m.id):
        contour = mask_contour(m.grid)
        mags = magnitude[contour]
        if mags.size == 0:
            continue
        reference = float(mags.mean())
        if contour_stat == "mean+k*std":
            reference += k_std * float(mags.std())
        elif contour_stat != "mean":
            raise ImageEdgeError(f"unknown contour_stat {contour_stat!r}")
        keep = contour & (magnitude >= tolerance * reference)
        newly = keep & ~grid
        grid |= keep
        provenance[newly] = m.id
    return EdgeMap(grid=grid, provenance=provenance)


# ---------------------------------------------------------------------------
# Canny fallback
# ---------------------------------------------------------------------------


def _gaussian_kernel_q8(size: int = 5, sigma: float = 1.4) -> np.ndarray:
    """Gaussian taps quantized to 1/256 units (sum forced to 256)."""
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma * sigma))
    ki = np.rint(k / k.sum() * 256).astype(np.int64)
    ki[size // 2] += 256 - ki.sum()
    return ki


def gaussian_blur_u8(image: np.ndarray, size: int = 5, sigma: float = 1.4) -> np.ndarray:
    """Separable fixed-point Gaussian blur of a uint8 image (mirror border).

    Integer arithmetic with a single round-half-up at the end keeps the
    result deterministic across platforms.
    """
    k = _gaussian_kernel_q8(size, sigma)
    acc = ndimage.correlate1d(np.asarray(image, dtype=np.int64), k, axis=0, mode="mirror")
    acc = ndimage.correlate1d(acc, k, axis=1, mode="mirror")
    return ((acc + 32768) >> 16).astype(np.uint8)


def canny_fallback(image: np.ndarray, low: float, high: float) -> EdgeMap:
    """Classical Canny: 5x5 Gaussian (sigma 1.4), 3x3 Sobel, sector-quantized
    non-maximum suppression, and 8-connected hysteresis."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(np.asarray(img, dtype=float)), 0, 255).astype(np.uint8)
    blurred = gaussian_blur_u8(img, 5, 1.4).astype(float)
    gx = ndimage.correlate(blurred, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(blurred, SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)

    h, w = mag.shape
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = mag
    center = padded[1:-1, 1:-1]
    left, right = padded[1:-1, :-2], padded[1:-1, 2:]
    up, down = padded[:-2, 1:-1], padded[2:, 1:-1]
    up_left, up_right = padded[:-2, :-2], padded[:-2, 2:]
    down_left, down_right = padded[2:, :-2], padded[2:, 2:]

    ax, ay = np.abs(gx), np.abs(gy)
    horizontal = ay < TAN_22_5 * ax
    vertical = ay > TAN_67_5 * ax
    diagonal = ~horizontal & ~vertical
    same_sign = (gx * gy) >= 0

    keep = np.zeros_like(mag, dtype=bool)
    keep |= horizontal & (center > left) & (center >= right)
    keep |= vertical & (center > up) & (center >= down)
    keep |= diagonal & same_sign & (center > up_left) & (center > down_right)
    keep |= diagonal & ~same_sign & (center > up_right) & (center > down_left)

    candidates = keep & (mag > low)
    strong = candidates & (mag > high)
    labels, n = ndimage.label(candidates, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return EdgeMap(np.zeros_like(candidates))
    strong_labels = np.unique(labels[strong])
    strong_labels = strong_labels[strong_labels > 0]
    grid = np.isin(labels, strong_labels) & candidates
    return EdgeMap(grid=grid)


# ---------------------------------------------------------------------------
# Attraction field
# ---------------------------------------------------------------------------


def _bilinear_cell(grid: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Cell indices and offsets with the left/lower tie-break at boundaries."""
    h, w = grid.shape
    i = np.floor(u).astype(np.int64)
    j = np.floor(v).astype(np.int64)
    # exact-integer coordinates use the left/lower cell (deterministic
    # gradient at cell boundaries); clamp keeps the top/right edge usable
    i = np.where((u == i) & (i > 0), i - 1, i)
    j = np.where((v == j) & (j > 0), j - 1, j)
    i = np.clip(i, 0, w - 2)
    j = np.clip(j, 0, h - 2)
    return i, j, u - i, v - j


def _sample_grid(grid: np.ndarray, u, v):
    i, j, du, dv = _bilinear_cell(grid, np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    f00 = grid[j, i]
    f10 = grid[j, i + 1]
    f01 = grid[j + 1, i]
    f11 = grid[j + 1, i + 1]
    value = (
        (1 - du) * (1 - dv) * f00
        + du * (1 - dv) * f10
        + (1 - du) * dv * f01
        + du * dv * f11
    )
    grad_u = (1 - dv) * (f10 - f00) + dv * (f11 - f01)
    grad_v = (1 - du) * (f01 - f00) + du * (f11 - f10)
    return value, grad_u, grad_v


@dataclass(frozen=True)
class AttractionField:
    """Per-pixel L2 distance to the nearest edge pixel, bilinear-sampled."""

    values: np.ndarray  # float64, (height, width)
    d_max: float

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def _check_bounds(self, u, v):
        if np.any(u < 0) or np.any(u > self.width - 1) or np.any(v < 0) or np.any(v > self.height - 1):
            raise OutOfBounds("sample outside field domain")

    def sample(self, u: float, v: float):
        """Bilinear value and the analytic gradient of the bilinear surface."""
        self._check_bounds(np.asarray(u), np.asarray(v))
        value, gu, gv = _sample_grid(self.values, u, v)
        return float(value), np.array([float(gu), float(gv)])

    def sample_batch(self, uv: np.ndarray):
        """(N,) values and (N, 2) gradients for (N, 2) in-bounds samples."""
        uv = np.asarray(uv, dtype=float)
        self._check_bounds(uv[:, 0], uv[:, 1])
        value, gu, gv = _sample_grid(self.values, uv[:, 0], uv[:, 1])
        return value, np.stack([gu, gv], axis=1)

    def to_binary(self, path) -> None:
        with open(path, "wb") as f:
            f.write(ECDT_MAGIC)
            f.write(struct.pack("<III", self.width, self.height, 0))
            f.write(self.values.astype("<f4").tobytes())

    @classmethod
    def from_binary(cls, path) -> "AttractionField":
        with open(path, "rb") as f:
            data = f.read()
        if len(data) < 16 or data[:4] != ECDT_MAGIC:
            raise FormatError("not an ECDT grid")
        width, height, _ = struct.unpack_from("<III", data, 4)
        vals = np.frombuffer(data[16:], dtype="<f4")
        if vals.size != width * height:
            raise FormatError("ECDT payload size mismatch")
        grid = vals.reshape(height, width).astype(np.float64)
        return cls(values=grid, d_max=float(math.hypot(width, height)))


def build_attraction_field(edges: EdgeMap, d_max: float | None = None) -> AttractionField:
    """Exact Euclidean distance transform of the edge map.

    An empty edge map yields a constant field at d_max (default: the image
    diagonal), so edge-free frames never dominate the objective.
    """
    if d_max is None:
        d_max = float(math.hypot(edges.width, edges.height))
    if not edges.grid.any():
        values = np.full((edges.height, edges.width), d_max, dtype=np.float64)
    else:
        values = ndimage.distance_transform_edt(~edges.grid)
        np.minimum(values, d_max, out=values)
    return AttractionField(values=values, d_max=d_max)


@dataclass(frozen=True)
class FieldPyramid:
    """Gaussian-blurred copies of an attraction field, coarse to fine.

    Blurring widens the usable convergence basin for badly initialized
    extrinsics; level sigmas run coarse (large) to fine (0 = unblurred).
    """

    base: AttractionField
    sigmas: tuple
    levels: tuple = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.levels is None:
            levels = []
            for s in self.sigmas:
                if s > 0:
                    levels.append(
                        AttractionField(
                            values=ndimage.gaussian_filter(self.base.values, s, mode="nearest"),
                            d_max=self.base.d_max,
                        )
                    )
                else:
                    levels.append(self.base)
            object.__setattr__(self, "levels", tuple(levels))

    def __len__(self):
        return len(self.levels)

    def level(self, index: int) -> AttractionField:
        return self.levels[index]


def build_field_pyramid(edges: EdgeMap, sigmas=(8.0, 4.0, 2.0, 0.0)) -> FieldPyramid:
    return FieldPyramid(base=build_attraction_field(edges), sigmas=tuple(sigmas))
