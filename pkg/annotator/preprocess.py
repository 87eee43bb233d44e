"""
CT volume -> normalized 3-channel lesion patch.

Steps: in-plane resampling to 1 mm/pixel, three axial planes at -2/0/+2 mm,
a 120x120 crop centred on the lesion, and a linear HU window to [0, 1].
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from utils.errors import DataError
from utils.storage import read_json, read_raw_array, sidecar_path, write_json, write_raw_array

logger = logging.getLogger(__name__)

PATCH_SIZE = 120
PATCH_CENTER = PATCH_SIZE // 2
SLICE_OFFSETS_MM = (-2.0, 0.0, 2.0)
HU_MIN = -1024.0
HU_MAX = 3071.0
FILL_HU = -1024.0


@dataclass
class Volume:
    """Voxels indexed (z, y, x); spacing and origin given as (x, y, z) in mm."""

    voxels: np.ndarray
    spacing_mm: Tuple[float, float, float]
    origin_mm: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise DataError(
                f"Volume must be a non-empty 3D array, got shape {self.voxels.shape}",
                code="invalid_volume",
            )
        if any(s <= 0 for s in self.spacing_mm):
            raise DataError(
                f"Voxel spacing must be positive, got {self.spacing_mm}",
                code="invalid_volume",
            )

    @property
    def z_extent_mm(self) -> Tuple[float, float]:
        z0 = self.origin_mm[2]
        return z0, z0 + (self.voxels.shape[0] - 1) * self.spacing_mm[2]

    def inplane_center_mm(self) -> Tuple[float, float]:
        _, ny, nx = self.voxels.shape
        sx, sy, _ = self.spacing_mm
        return (
            self.origin_mm[0] + (nx - 1) * sx / 2.0,
            self.origin_mm[1] + (ny - 1) * sy / 2.0,
        )


@dataclass
class Patch:
    pixels: np.ndarray
    center_mm: Tuple[float, float, float]
    lesion_bbox_px: Tuple[float, float, float, float]


def resample_inplane(v: Volume) -> Volume:
    """Bilinear resampling of every axial slice to 1 mm/pixel."""
    sx, sy, sz = v.spacing_mm
    if sx == 1.0 and sy == 1.0:
        return Volume(v.voxels.astype(np.float64), (1.0, 1.0, sz), v.origin_mm)

    nz, ny, nx = v.voxels.shape
    ny_out = max(1, int(round(ny * sy)))
    nx_out = max(1, int(round(nx * sx)))
    zz, yy, xx = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny_out, dtype=np.float64) / sy,
        np.arange(nx_out, dtype=np.float64) / sx,
        indexing="ij",
    )
    # integer z coordinates keep the 3D linear interpolation bilinear per slice
    resampled = ndimage.map_coordinates(
        v.voxels.astype(np.float64), [zz, yy, xx], order=1, mode="nearest"
    )
    return Volume(resampled, (1.0, 1.0, sz), v.origin_mm)


def extract_slices(v: Volume, center_z_mm: float) -> np.ndarray:
    """Three axial images at center-2mm, center, center+2mm (linear in z, clamped)."""
    z_lo, z_hi = v.z_extent_mm
    if not z_lo - 1e-9 <= center_z_mm <= z_hi + 1e-9:
        raise DataError(
            f"Slice position {center_z_mm} mm outside volume z-range [{z_lo}, {z_hi}]",
            code="slice_out_of_range",
        )

    nz = v.voxels.shape[0]
    sz = v.spacing_mm[2]
    planes = []
    for offset in SLICE_OFFSETS_MM:
        index = (center_z_mm + offset - v.origin_mm[2]) / sz
        index = min(max(index, 0.0), nz - 1.0)
        lo = int(np.floor(index))
        weight = index - lo
        if weight < 1e-9 or lo + 1 >= nz:
            planes.append(v.voxels[lo].astype(np.float64))
        else:
            planes.append(
                (1.0 - weight) * v.voxels[lo].astype(np.float64)
                + weight * v.voxels[lo + 1].astype(np.float64)
            )
    return np.stack(planes)


def crop_patch(
    imgs: np.ndarray,
    center_xy_px: Tuple[float, float],
    size: int = PATCH_SIZE,
    fill_value: float = FILL_HU,
) -> np.ndarray:
    """
    size x size crop whose pixel (size//2, size//2) sits on the rounded centre.
    Regions outside the images are filled with air.
    """
    imgs = np.asarray(imgs, dtype=np.float64)
    if imgs.ndim != 3:
        raise DataError(f"Expected (channels, H, W) images, got {imgs.shape}", code="invalid_images")
    channels, height, width = imgs.shape
    cx = int(np.floor(center_xy_px[0] + 0.5))
    cy = int(np.floor(center_xy_px[1] + 0.5))
    half = size // 2

    out = np.full((channels, size, size), fill_value, dtype=np.float64)
    y0, x0 = cy - half, cx - half
    src_y0, src_y1 = max(y0, 0), min(y0 + size, height)
    src_x0, src_x1 = max(x0, 0), min(x0 + size, width)
    if src_y0 < src_y1 and src_x0 < src_x1:
        out[:, src_y0 - y0 : src_y1 - y0, src_x0 - x0 : src_x1 - x0] = imgs[
            :, src_y0:src_y1, src_x0:src_x1
        ]
    return out


def normalize_intensity(hu: np.ndarray) -> np.ndarray:
    """Clip to [-1024, 3071] HU and map linearly onto [0, 1]."""
    return (np.clip(hu, HU_MIN, HU_MAX) - HU_MIN) / (HU_MAX - HU_MIN)


def clamp_bbox(bbox: Sequence[float], size: int = PATCH_SIZE) -> Tuple[float, float, float, float]:
    x0, y0, x1, y1 = (min(max(float(c), 0.0), float(size)) for c in bbox)
    return x0, y0, x1, y1


def make_patch(
    v: Volume,
    center_xy_mm: Optional[Tuple[float, float]],
    center_z_mm: float,
    bbox_mm: Sequence[float],
) -> Patch:
    """Full pipeline for one lesion. bbox_mm is given in the patch frame."""
    resampled = resample_inplane(v)
    if center_xy_mm is None:
        center_xy_mm = v.inplane_center_mm()
    planes = extract_slices(resampled, center_z_mm)
    center_px = (
        center_xy_mm[0] - resampled.origin_mm[0],
        center_xy_mm[1] - resampled.origin_mm[1],
    )
    pixels = normalize_intensity(crop_patch(planes, center_px))
    return Patch(
        pixels=pixels,
        center_mm=(center_xy_mm[0], center_xy_mm[1], center_z_mm),
        lesion_bbox_px=clamp_bbox(bbox_mm),
    )


# Volume store: raw int16 little-endian + {dims:[z,y,x], spacing_mm:[x,y,z], origin_mm?}


def load_volume(path: Union[str, Path]) -> Volume:
    meta = read_json(sidecar_path(path))
    try:
        dims = [int(d) for d in meta["dims"]]
        spacing = tuple(float(s) for s in meta["spacing_mm"])
        origin = tuple(float(o) for o in meta.get("origin_mm", (0.0, 0.0, 0.0)))
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{sidecar_path(path)}: malformed volume sidecar", code="sidecar_mismatch")
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise DataError(f"{sidecar_path(path)}: dims/spacing must have 3 entries", code="sidecar_mismatch")
    voxels = read_raw_array(path, "<i2", dims)
    logger.debug(f"Loaded volume {path} dims={dims} spacing={spacing}")
    return Volume(voxels, spacing, origin)


def save_volume(path: Union[str, Path], v: Volume) -> None:
    write_raw_array(path, np.rint(v.voxels), "<i2")
    write_json(
        sidecar_path(path),
        {
            "dims": list(v.voxels.shape),
            "spacing_mm": list(v.spacing_mm),
            "origin_mm": list(v.origin_mm),
        },
    )
