"""Preprocessing operators: GrayImage -> GrayImage, dimensions and FOV preserved."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from . import _ops
from .core import ConfigError, DegenerateInputError, GrayImage, PreconditionError, Preprocessing


@dataclass(frozen=True)
class WalterKleinParams:
    """Transition exponent and output range of the gray-level transform.

    ``out_min``/``out_max`` default to the input image's declared range.
    """

    r: float = 2.0
    out_min: float | None = None
    out_max: float | None = None

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigError(f"walter_klein.r must be > 0, got {self.r}")
        if (self.out_min is None) != (self.out_max is None):
            raise ConfigError("walter_klein.out_min and out_max must be given together")
        if self.out_min is not None and not self.out_min < self.out_max:
            raise ConfigError("walter_klein.out_min must be < out_max")


@dataclass(frozen=True)
class ClaheParams:
    tile_grid: tuple[int, int] = (8, 8)
    clip_limit: float = 3.0
    bins: int = 256

    def __post_init__(self):
        object.__setattr__(self, "tile_grid", tuple(int(v) for v in self.tile_grid))
        if len(self.tile_grid) != 2 or min(self.tile_grid) < 1:
            raise ConfigError(f"clahe.tile_grid must be two positive ints, got {self.tile_grid}")
        if not self.clip_limit > 0:
            raise ConfigError("clahe.clip_limit must be > 0")
        if self.bins < 2:
            raise ConfigError("clahe.bins must be >= 2")


@dataclass(frozen=True)
class IlluminationEqParams:
    """``desired_mean`` is in the image's declared units; ``None`` keeps the FOV mean.

    ``window`` ``None`` picks 1/8 of the image width, rounded to odd.
    """

    desired_mean: float | None = None
    window: int | None = None

    def __post_init__(self):
        if self.window is not None and (self.window < 3 or self.window % 2 == 0):
            raise ConfigError(f"illumination.window must be odd and >= 3, got {self.window}")


@dataclass(frozen=True)
class VesselParams:
    """Vessel segmentation by oriented linear openings and inpainting settings."""

    line_length: int = 11
    orientations: int = 12
    background_size: int = 15
    percentile: float = 95.0
    min_response: float = 0.03
    min_area: int = 20
    dilation: int = 1
    inpaint_tol: float = 1e-3
    inpaint_max_iter: int = 500

    def __post_init__(self):
        if self.line_length < 3 or self.orientations < 1 or self.background_size < 3:
            raise ConfigError("vessel line_length/background_size must be >= 3 and orientations >= 1")
        if not 0 < self.percentile < 100:
            raise ConfigError("vessel.percentile must lie in (0, 100)")


@dataclass(frozen=True)
class PreprocessParams:
    walter_klein: WalterKleinParams = field(default_factory=WalterKleinParams)
    clahe: ClaheParams = field(default_factory=ClaheParams)
    illumination: IlluminationEqParams = field(default_factory=IlluminationEqParams)
    vessel: VesselParams = field(default_factory=VesselParams)


# ---------------------------------------------------------------------------
# Walter-Klein contrast enhancement
# ---------------------------------------------------------------------------


def walter_klein_map(f, f_min: float, f_max: float, mu: float, r: float,
                     out_min: float, out_max: float):
    """Piecewise power-law gray-level transform around the mean ``mu``.

    Values at or below the mean follow ``half * ((f - f_min)/(mu - f_min))**r
    + out_min``; values above it mirror that curve down from ``out_max``.
    ``f_min``, ``mu`` and ``f_max`` land exactly on ``out_min``, the
    midpoint and ``out_max``.
    """
    if not f_min < mu < f_max:
        raise DegenerateInputError(
            f"walter_klein needs f_min < mean < f_max, got {f_min}, {mu}, {f_max}"
        )
    f = np.clip(np.asarray(f, dtype=np.float64), f_min, f_max)
    half = 0.5 * (out_max - out_min)
    low = half * ((f - f_min) / (mu - f_min)) ** r + out_min
    high = out_max - half * ((f_max - f) / (f_max - mu)) ** r
    out = np.where(f <= mu, low, high)
    return out if out.ndim else float(out)


def walter_klein(img: GrayImage, p: WalterKleinParams = WalterKleinParams()) -> GrayImage:
    inside = img.data[img.fov_mask]
    if inside.size == 0:
        raise DegenerateInputError("walter_klein: empty field of view")
    f_min, f_max = float(inside.min()), float(inside.max())
    if f_min == f_max:
        raise DegenerateInputError("walter_klein: constant image has no intensity range")
    mu = float(inside.mean())
    out_min = img.vmin if p.out_min is None else p.out_min
    out_max = img.vmax if p.out_max is None else p.out_max
    out = walter_klein_map(img.data, f_min, f_max, mu, p.r, out_min, out_max)
    return img.with_data(out, out_min, out_max)


# ---------------------------------------------------------------------------
# CLAHE
# ---------------------------------------------------------------------------


def _tile_lut(values: np.ndarray, bins: int, clip_limit: float) -> np.ndarray | None:
    """Clipped-histogram equalization lookup table on [0, 1]; ``None`` for flat tiles."""
    n = values.size
    if n == 0:
        return None
    hist = np.bincount(values, minlength=bins).astype(np.float64)
    occupied = np.flatnonzero(hist)
    if len(occupied) < 2:
        return None
    clip = clip_limit * n / bins
    excess = np.maximum(hist - clip, 0.0).sum()
    hist = np.minimum(hist, clip) + excess / bins
    cdf = np.cumsum(hist)
    lo = cdf[occupied[0]]
    lut = (cdf - lo) / (cdf[-1] - lo)
    return np.clip(lut, 0.0, 1.0)


def _axis_weights(coord: np.ndarray, centers: np.ndarray):
    """Lower neighbour index and interpolation weight toward the upper one."""
    if len(centers) == 1:
        return np.zeros(coord.shape, dtype=int), np.zeros(coord.shape)
    i0 = np.clip(np.searchsorted(centers, coord, side="right") - 1, 0, len(centers) - 2)
    t = (coord - centers[i0]) / (centers[i0 + 1] - centers[i0])
    return i0, np.clip(t, 0.0, 1.0)


def clahe(img: GrayImage, p: ClaheParams = ClaheParams()) -> GrayImage:
    """Contrast limited adaptive histogram equalization.

    Histograms are built per tile from FOV pixels only, clipped at
    ``clip_limit`` times the uniform bin height with the excess spread
    evenly, and mapped so that a tile's darkest occupied level goes to the
    bottom of the range. Per-tile mappings are blended bilinearly between
    tile centers. Tiles with fewer than two occupied levels leave
    intensities unchanged.
    """
    rows, cols = p.tile_grid
    h, w = img.shape
    if h < rows or w < cols:
        raise PreconditionError(f"image {h}x{w} smaller than the tile grid {rows}x{cols}")
    x = img.normalized()
    q = np.minimum((x * p.bins).astype(int), p.bins - 1)
    identity = (np.arange(p.bins) + 0.5) / p.bins
    ry = np.linspace(0, h, rows + 1).round().astype(int)
    rx = np.linspace(0, w, cols + 1).round().astype(int)
    luts = np.empty((rows, cols, p.bins))
    flat = np.zeros((rows, cols), dtype=bool)
    for i in range(rows):
        for j in range(cols):
            sl = (slice(ry[i], ry[i + 1]), slice(rx[j], rx[j + 1]))
            lut = _tile_lut(q[sl][img.fov_mask[sl]], p.bins, p.clip_limit)
            flat[i, j] = lut is None
            luts[i, j] = identity if lut is None else lut
    cy = (ry[:-1] + ry[1:] - 1) / 2.0
    cx = (rx[:-1] + rx[1:] - 1) / 2.0
    iy, ty = _axis_weights(np.arange(h, dtype=float), cy)
    ix, tx = _axis_weights(np.arange(w, dtype=float), cx)
    iy1 = np.minimum(iy + 1, rows - 1)
    ix1 = np.minimum(ix + 1, cols - 1)
    I0, J0 = np.meshgrid(iy, ix, indexing="ij")
    I1, J1 = np.meshgrid(iy1, ix1, indexing="ij")
    TY, TX = np.meshgrid(ty, tx, indexing="ij")

    def look(I, J):
        v = luts[I, J, q]
        # flat tiles act as identity on the exact input value
        return np.where(flat[I, J], x, v)

    out = ((1 - TY) * ((1 - TX) * look(I0, J0) + TX * look(I0, J1))
           + TY * ((1 - TX) * look(I1, J0) + TX * look(I1, J1)))
    out = img.vmin + np.clip(out, 0.0, 1.0) * (img.vmax - img.vmin)
    out = np.where(img.fov_mask, out, img.data)
    return img.with_data(out)


# ---------------------------------------------------------------------------
# Vessel removal and inpainting
# ---------------------------------------------------------------------------


def vessel_response(img: GrayImage, p: VesselParams = VesselParams()) -> np.ndarray:
    """Top-hat response of dark elongated structures (vessels are bright here).

    Maximum over rotated linear openings of the inverted image, minus a
    square opening that removes every structure narrower than
    ``background_size``. Round blobs shorter than the line are removed by
    every oriented opening and so give no response.
    """
    inv = _ops.fill_outside(1.0 - img.normalized(), img.fov_mask)
    lines = np.max(
        [ndi.grey_opening(inv, footprint=_ops.line_footprint(p.line_length, a))
         for a in _ops.orientations(p.orientations)],
        axis=0,
    )
    background = ndi.grey_opening(inv, size=(p.background_size, p.background_size))
    return np.maximum(lines - background, 0.0)


def vessel_mask(img: GrayImage, p: VesselParams = VesselParams()) -> np.ndarray:
    resp = vessel_response(img, p)
    inside = resp[img.fov_mask]
    if inside.size == 0:
        return np.zeros(img.shape, dtype=bool)
    thr = max(float(np.percentile(inside, p.percentile)), p.min_response)
    mask = (resp > thr) & img.fov_mask
    labels, n = ndi.label(mask, structure=_ops.EIGHT)
    if n:
        areas = ndi.sum(mask, labels, index=np.arange(1, n + 1))
        mask = np.isin(labels, np.flatnonzero(np.asarray(areas) >= p.min_area) + 1)
    if p.dilation > 0 and mask.any():
        mask = ndi.binary_dilation(mask, structure=_ops.EIGHT, iterations=p.dilation)
    return mask & img.fov_mask


def diffusion_inpaint(values: np.ndarray, hole: np.ndarray, tol: float = 1e-3,
                      max_iter: int = 500) -> np.ndarray:
    """Fill ``hole`` pixels by isotropic diffusion from the surrounding pixels.

    Holes are seeded with a Gaussian-weighted average of known pixels and
    then relaxed with 4-neighbour averaging until the largest per-pixel
    update drops below ``tol``.
    """
    out = values.astype(np.float64, copy=True)
    if not hole.any():
        return out
    known = (~hole).astype(np.float64)
    if not known.any():
        raise DegenerateInputError("inpainting needs at least one known pixel")
    num = ndi.gaussian_filter(out * known, 3.0, mode="nearest")
    den = ndi.gaussian_filter(known, 3.0, mode="nearest")
    seed = np.divide(num, den, out=np.full_like(num, out[~hole].mean()), where=den > 1e-8)
    out[hole] = seed[hole]
    rows, cols = np.nonzero(hole)
    for _ in range(max_iter):
        padded = np.pad(out, 1, mode="edge")
        avg = 0.25 * (padded[rows, cols + 1] + padded[rows + 2, cols + 1]
                      + padded[rows + 1, cols] + padded[rows + 1, cols + 2])
        change = np.abs(avg - out[rows, cols]).max()
        out[rows, cols] = avg
        if change < tol:
            break
    return out


def vessel_removal_inpaint(img: GrayImage, p: VesselParams = VesselParams(),
                           mask: np.ndarray | None = None) -> GrayImage:
    """Remove the segmented vessel tree and diffuse surrounding intensities into it."""
    if mask is None:
        mask = vessel_mask(img, p)
    mask = mask & img.fov_mask
    if not mask.any():
        return img
    if mask.sum() >= img.fov_mask.sum():
        raise DegenerateInputError("vessel mask covers the entire field of view")
    x = img.normalized()
    # pixels outside the FOV must not leak the dark surround into the fill
    hole = mask | ~img.fov_mask
    filled = diffusion_inpaint(x, hole, p.inpaint_tol, p.inpaint_max_iter)
    out = np.where(mask, filled, x)
    return img.with_data(img.vmin + np.clip(out, 0, 1) * (img.vmax - img.vmin))


# ---------------------------------------------------------------------------
# Illumination equalization
# ---------------------------------------------------------------------------


def default_window(width: int) -> int:
    w = max(3, int(round(width / 8)))
    return w if w % 2 else w + 1


def local_mean(img: GrayImage, window: int) -> np.ndarray:
    """Mean over a ``window`` square, counting FOV pixels only."""
    m = img.fov_mask.astype(np.float64)
    inside = img.data[img.fov_mask]
    # centering on an actual pixel level keeps constant images exact
    ref = float(np.median(inside)) if inside.size else 0.0
    dev = np.where(img.fov_mask, img.data - ref, 0.0)
    num = ndi.uniform_filter(dev, window, mode="constant")
    den = ndi.uniform_filter(m, window, mode="constant")
    return ref + np.divide(num, den, out=np.zeros_like(num), where=den > 1e-12)


def illumination_equalize(img: GrayImage, p: IlluminationEqParams = IlluminationEqParams()) -> GrayImage:
    window = p.window or default_window(img.width)
    target = p.desired_mean
    if target is None:
        inside = img.data[img.fov_mask]
        target = float(inside.mean()) if inside.size else 0.5 * (img.vmin + img.vmax)
    if not img.vmin <= target <= img.vmax:
        raise ConfigError(f"desired mean {target} outside intensity range")
    mu_l = local_mean(img, window)
    out = np.clip(target + (img.data - mu_l), img.vmin, img.vmax)
    out = np.where(img.fov_mask, out, img.data)
    return img.with_data(out)


def no_preprocessing(img: GrayImage) -> GrayImage:
    return img


def apply_preprocessing(kind: Preprocessing, img: GrayImage,
                        params: PreprocessParams = PreprocessParams()) -> GrayImage:
    kind = Preprocessing(kind)
    if kind is Preprocessing.WALTER_KLEIN:
        return walter_klein(img, params.walter_klein)
    if kind is Preprocessing.CLAHE:
        return clahe(img, params.clahe)
    if kind is Preprocessing.VESSEL_REMOVAL:
        return vessel_removal_inpaint(img, params.vessel)
    if kind is Preprocessing.ILLUMINATION_EQ:
        return illumination_equalize(img, params.illumination)
    return no_preprocessing(img)
