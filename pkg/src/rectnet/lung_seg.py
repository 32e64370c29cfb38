"""Lung area segmentation: threshold, per-slice flood fill, dilation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume_io import BinaryMask, Volume

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SegmentationConfig:
    threshold_hu: float = -480.0
    dilate_radius: int = 3


def threshold_mask(volume: Volume, threshold_hu: float = -480.0) -> BinaryMask:
    """Voxels strictly below ``threshold_hu``."""
    return BinaryMask(volume.dims, volume.data < threshold_hu)


def remove_background_fill(mask_slice: np.ndarray) -> np.ndarray:
    """Drop true components touching the slice border, then fill interior holes.

    Components use 4-connectivity.
    """
    m = np.asarray(mask_slice, dtype=bool)
    if m.ndim != 2:
        raise ValueError("expected a 2D slice")
    labels, n = ndimage.label(m, structure=_FOUR)
    if n == 0:
        return np.zeros_like(m)
    edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    keep = np.ones(n + 1, dtype=bool)
    keep[0] = False
    keep[edge] = False
    return ndimage.binary_fill_holes(keep[labels])


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def dilate(mask, radius_px: int):
    """Per-slice dilation by a disk. Accepts a BinaryMask, a 3D ``[z, y, x]`` or a 2D array."""
    if radius_px < 0:
        raise ValueError("radius_px must be >= 0")
    data = mask.data if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    if radius_px == 0:
        out = data.copy()
    else:
        se = disk(radius_px)
        if data.ndim == 3:
            se = se[None]
        out = ndimage.binary_dilation(data, structure=se)
    return BinaryMask(mask.dims, out) if isinstance(mask, BinaryMask) else out


def fill_slices(mask: BinaryMask) -> BinaryMask:
    return BinaryMask(mask.dims, np.stack([remove_background_fill(s) for s in mask.data]))


def segment_lungs(volume: Volume, config: SegmentationConfig | None = None) -> BinaryMask:
    config = config or SegmentationConfig()
    filled = fill_slices(threshold_mask(volume, config.threshold_hu))
    return dilate(filled, config.dilate_radius)
