"""Small image-processing helpers shared by preprocessing and extraction."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage as ndi
from skimage.draw import line as draw_line

EIGHT = np.ones((3, 3), dtype=bool)


@lru_cache(maxsize=None)
def line_footprint(length: int, angle_deg: float) -> np.ndarray:
    """Centered linear structuring element of ``length`` pixels at ``angle_deg``."""
    half = (length - 1) / 2.0
    t = np.deg2rad(angle_deg)
    dx, dy = half * np.cos(t), -half * np.sin(t)
    size = int(np.ceil(half)) * 2 + 1
    c = size // 2
    fp = np.zeros((size, size), dtype=bool)
    rr, cc = draw_line(
        int(round(c - dy)), int(round(c - dx)), int(round(c + dy)), int(round(c + dx))
    )
    fp[rr, cc] = True
    fp.setflags(write=False)
    return fp


def orientations(count: int) -> np.ndarray:
    """``count`` evenly spaced angles over a half turn, in degrees."""
    return np.arange(count) * (180.0 / count)


def fill_outside(arr: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace pixels outside ``mask`` with the value of the nearest pixel inside."""
    if mask.all() or not mask.any():
        return arr.copy()
    idx = ndi.distance_transform_edt(~mask, return_distances=False, return_indices=True)
    return arr[tuple(idx)]


def disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return xx ** 2 + yy ** 2 <= radius ** 2


def hysteresis_labels(response: np.ndarray, low: float, high: float,
                      mask: np.ndarray | None = None) -> tuple[np.ndarray, list[int]]:
    """Label components of ``response >= low`` and keep those peaking at ``>= high``.

    Components are fixed by ``low`` alone, so raising ``high`` can only drop
    whole components.
    """
    support = response >= low
    if mask is not None:
        support &= mask
    labels, n = ndi.label(support, structure=EIGHT)
    if n == 0:
        return labels, []
    peaks = ndi.maximum(response, labels, index=np.arange(1, n + 1))
    keep = [i + 1 for i, p in enumerate(np.atleast_1d(peaks)) if p >= high]
    return labels, keep


def component_peaks(response: np.ndarray, labels: np.ndarray, keep: list[int]) -> list[tuple[int, int]]:
    """(row, col) of the maximum of ``response`` inside each kept component."""
    if not keep:
        return []
    pos = ndi.maximum_position(response, labels, index=keep)
    return [tuple(int(v) for v in p) for p in pos]


def region_grow(inv: np.ndarray, background: np.ndarray, seed: tuple[int, int], *,
                rel_tol: float, window: int, max_area: int, min_height: float):
    """Grow a bright region from ``seed`` on an inverted (lesions bright) image.

    Pixels 8-connected to the seed join while their value stays within
    ``rel_tol`` times the seed's height above the local background. The
    region is rejected (``None``) when the seed is too faint, the region
    exceeds ``max_area``, or it reaches the border of the search window,
    which is what elongated structures such as vessels do.
    """
    r0, c0 = seed
    height = inv[r0, c0] - background[r0, c0]
    if height < min_height:
        return None
    h, w = inv.shape
    top, left = max(r0 - window, 0), max(c0 - window, 0)
    bottom, right = min(r0 + window + 1, h), min(c0 + window + 1, w)
    patch = inv[top:bottom, left:right] >= inv[r0, c0] - rel_tol * height
    labels, _ = ndi.label(patch, structure=EIGHT)
    region = labels == labels[r0 - top, c0 - left]
    area = int(region.sum())
    if area > max_area:
        return None
    if region[0, :].any() or region[-1, :].any() or region[:, 0].any() or region[:, -1].any():
        return None
    rr, cc = np.nonzero(region)
    return rr + top, cc + left


def points_in_mask(points: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Boolean selector of ``(x, y)`` points whose nearest pixel lies in ``mask``."""
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    h, w = mask.shape
    cols = np.clip(np.rint(points[:, 0]).astype(int), 0, w - 1)
    rows = np.clip(np.rint(points[:, 1]).astype(int), 0, h - 1)
    inside = (points[:, 0] >= 0) & (points[:, 0] <= w - 1) & (points[:, 1] >= 0) & (points[:, 1] <= h - 1)
    return inside & mask[rows, cols]
