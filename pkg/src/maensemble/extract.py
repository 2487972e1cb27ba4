"""Microaneurysm candidate extractors: GrayImage -> CandidateSet.

All extractors work on the inverted, [0, 1]-normalized image with the area
outside the FOV filled from the nearest FOV pixel, so lesions are bright
maxima. Each exposes one final threshold (``threshold``) that acts on whole
connected components fixed by a lower ``support`` level; raising it can
only remove candidates.

Length parameters are given in pixels at a 768-pixel-wide reference
resolution; :func:`scaled` converts a parameter bundle to other widths.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import ndimage as ndi
from skimage.feature import canny, match_template
from skimage.morphology import area_opening, diameter_closing

from . import _ops
from .core import CandidateSet, ConfigError, Extractor, GrayImage
from .preprocess import VesselParams, vessel_mask


def _check_positive(obj, names):
    for n in names:
        v = getattr(obj, n)
        if not v > 0:
            raise ConfigError(f"{type(obj).__name__}.{n} must be > 0, got {v}")


@dataclass(frozen=True)
class WalterParams:
    max_diameter: float = 9.0
    smooth_sigma: float = 0.8
    low: float = 0.012
    threshold: float = 0.025

    def __post_init__(self):
        _check_positive(self, ("max_diameter", "low", "threshold"))


@dataclass(frozen=True)
class SpencerParams:
    line_length: float = 11.0
    orientations: int = 12
    matched_sigma: float = 1.0
    support: float = 0.008
    threshold: float = 0.016
    region_tol: float = 0.5
    min_height: float = 0.02
    max_area: int = 120
    window: float = 9.0

    def __post_init__(self):
        _check_positive(self, ("line_length", "orientations", "matched_sigma", "support",
                               "threshold", "max_area", "window"))
        if not 0 < self.region_tol <= 1:
            raise ConfigError("SpencerParams.region_tol must lie in (0, 1]")


@dataclass(frozen=True)
class HoughParams:
    radii: tuple[float, float] = (2.0, 8.0)
    edge_sigma: float = 1.5
    edge_low: float = 0.02
    edge_high: float = 0.05
    threshold: float = 0.45
    min_distance: float = 3.0
    min_height: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        if len(self.radii) != 2 or not 0 < self.radii[0] <= self.radii[1]:
            raise ConfigError(f"HoughParams.radii must be an increasing positive range, got {self.radii}")
        _check_positive(self, ("edge_sigma", "edge_low", "edge_high", "threshold", "min_distance"))


@dataclass(frozen=True)
class ZhangParams:
    sigmas: tuple[float, ...] = (1.0, 1.25, 1.5, 1.75, 2.0)
    support: float = 0.6
    threshold: float = 0.8
    region_tol: float = 0.5
    min_height: float = 0.02
    max_area: int = 120
    window: float = 9.0
    remove_vessels: bool = True

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if len(self.sigmas) != 5 or min(self.sigmas) <= 0:
            raise ConfigError("ZhangParams.sigmas must hold exactly five positive values")
        if not 0 < self.threshold <= 1 or not 0 < self.support <= 1:
            raise ConfigError("ZhangParams correlation thresholds must lie in (0, 1]")
        _check_positive(self, ("max_area", "window"))


@dataclass(frozen=True)
class LazarParams:
    orientations: int = 8
    profile_length: float = 15.0
    smooth_sigma: float = 1.0
    max_area: int = 120
    support: float = 0.008
    threshold: float = 0.02

    def __post_init__(self):
        _check_positive(self, ("orientations", "profile_length", "smooth_sigma", "max_area",
                               "support", "threshold"))


@dataclass(frozen=True)
class ExtractParams:
    walter: WalterParams = field(default_factory=WalterParams)
    spencer: SpencerParams = field(default_factory=SpencerParams)
    hough: HoughParams = field(default_factory=HoughParams)
    zhang: ZhangParams = field(default_factory=ZhangParams)
    lazar: LazarParams = field(default_factory=LazarParams)
    fov_margin: float = 3.0


# fields holding pixel lengths (areas scale quadratically)
_LENGTHS = {
    WalterParams: ("max_diameter", "smooth_sigma"),
    SpencerParams: ("line_length", "matched_sigma", "window"),
    HoughParams: ("radii", "edge_sigma", "min_distance"),
    ZhangParams: ("sigmas", "window"),
    LazarParams: ("profile_length", "smooth_sigma"),
}
_AREAS = {SpencerParams: ("max_area",), ZhangParams: ("max_area",), LazarParams: ("max_area",)}


def scaled(params, factor: float):
    """Copy of an extractor parameter bundle with pixel lengths multiplied by ``factor``."""
    if factor == 1.0:
        return params
    if isinstance(params, ExtractParams):
        return ExtractParams(**{f.name: scaled(getattr(params, f.name), factor)
                                for f in fields(params) if f.name != "fov_margin"},
                             fov_margin=params.fov_margin * factor)
    changes = {}
    for name in _LENGTHS.get(type(params), ()):
        v = getattr(params, name)
        changes[name] = tuple(x * factor for x in v) if isinstance(v, tuple) else v * factor
    for name in _AREAS.get(type(params), ()):
        changes[name] = max(1, int(round(getattr(params, name) * factor ** 2)))
    return replace(params, **changes)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _inverted(img: GrayImage) -> np.ndarray:
    return _ops.fill_outside(1.0 - img.normalized(), img.fov_mask)


def _valid_region(img: GrayImage, margin: float) -> np.ndarray:
    m = int(np.ceil(margin))
    if m <= 0:
        return img.fov_mask
    return ndi.binary_erosion(img.fov_mask, structure=_ops.disk(m), border_value=0)


def _finish(img: GrayImage, points, margin: float) -> CandidateSet:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts):
        pts = pts[_ops.points_in_mask(pts, _valid_region(img, margin))]
        pts = np.unique(np.round(pts, 9), axis=0)
    return CandidateSet(pts)


def _background(inv: np.ndarray, window: float) -> np.ndarray:
    size = max(3, int(round(window)) | 1)
    return ndi.grey_opening(inv, size=(size, size))


def _grow_all(inv, seeds, *, rel_tol, window, max_area, min_height):
    bg = _background(inv, window + 2)
    win = max(2, int(round(window)))
    pts = []
    for seed in seeds:
        region = _ops.region_grow(inv, bg, seed, rel_tol=rel_tol, window=win,
                                  max_area=max_area, min_height=min_height)
        if region is not None:
            rr, cc = region
            pts.append((cc.mean(), rr.mean()))
    return pts


def _weighted_centroids(response, labels, keep):
    if not keep:
        return []
    com = ndi.center_of_mass(np.maximum(response, 0), labels, keep)
    return [(c, r) for r, c in com]


# ---------------------------------------------------------------------------
# extractors
# ---------------------------------------------------------------------------


def extract_walter(img: GrayImage, p: WalterParams = WalterParams(), *, fov_margin: float = 3.0) -> CandidateSet:
    """Grayscale diameter closing residue with a double threshold.

    Closing by the ``max_diameter`` attribute fills every dark structure
    whose extent is below that diameter; vessels extend further and stay.
    Residue components above ``low`` are kept when they reach ``threshold``.
    """
    x = 1.0 - _inverted(img)
    if p.smooth_sigma > 0:
        x = ndi.gaussian_filter(x, p.smooth_sigma)
    closed = diameter_closing(x, diameter_threshold=max(1, int(round(p.max_diameter))))
    residue = closed - x
    labels, keep = _ops.hysteresis_labels(residue, p.low, p.threshold)
    return _finish(img, _weighted_centroids(residue, labels, keep), fov_margin)


def spencer_response(img: GrayImage, p: SpencerParams = SpencerParams()):
    inv = _inverted(img)
    length = max(3, int(round(p.line_length)))
    vascular = np.max(
        [ndi.grey_opening(inv, footprint=_ops.line_footprint(length, a))
         for a in _ops.orientations(p.orientations)],
        axis=0,
    )
    tophat = inv - vascular
    return inv, ndi.gaussian_filter(tophat, p.matched_sigma)


def extract_spencer(img: GrayImage, p: SpencerParams = SpencerParams(), *, fov_margin: float = 3.0) -> CandidateSet:
    """Top-hat against rotated linear openings, Gaussian matched filter, region growing."""
    inv, resp = spencer_response(img, p)
    labels, keep = _ops.hysteresis_labels(resp, p.support, p.threshold)
    seeds = _ops.component_peaks(resp, labels, keep)
    smooth = ndi.gaussian_filter(inv, 1.0)
    pts = _grow_all(smooth, seeds, rel_tol=p.region_tol, window=p.window,
                    max_area=p.max_area, min_height=p.min_height)
    return _finish(img, pts, fov_margin)


def hough_accumulator(img: GrayImage, p: HoughParams = HoughParams()) -> np.ndarray:
    """Circle-center evidence, normalized to the fraction of a full circumference.

    Each edge pixel votes at distance ``r`` against its gradient (toward
    the darker side) for every integer radius in range. Votes for a radius
    are pooled over a 3x3 neighbourhood. Votes arriving from only two
    opposite sides, as the two edges of a vessel produce, are discounted by
    the resultant of their doubled-angle vectors, so only centers enclosed
    from all around keep their count. The result is divided by ``2 pi r``
    and the best radius is kept per pixel.
    """
    x = 1.0 - _inverted(img)
    smooth = ndi.gaussian_filter(x, p.edge_sigma)
    edges = canny(x, sigma=p.edge_sigma, low_threshold=p.edge_low, high_threshold=p.edge_high)
    gy = ndi.sobel(smooth, axis=0) / 8.0
    gx = ndi.sobel(smooth, axis=1) / 8.0
    rows, cols = np.nonzero(edges)
    h, w = x.shape
    best = np.zeros((h, w))
    if len(rows) == 0:
        return best
    mag = np.hypot(gx[rows, cols], gy[rows, cols])
    ok = mag > 0
    rows, cols, mag = rows[ok], cols[ok], mag[ok]
    ux, uy = gx[rows, cols] / mag, gy[rows, cols] / mag
    c2, s2 = ux * ux - uy * uy, 2 * ux * uy
    lo, hi = int(np.floor(p.radii[0])), int(np.ceil(p.radii[1]))
    for r in range(max(lo, 1), hi + 1):
        cr = np.rint(rows - r * uy).astype(int)
        cc = np.rint(cols - r * ux).astype(int)
        inside = (cr >= 0) & (cr < h) & (cc >= 0) & (cc < w)
        idx = (cr[inside], cc[inside])
        acc = np.zeros((3, h, w))
        np.add.at(acc[0], idx, 1.0)
        np.add.at(acc[1], idx, c2[inside])
        np.add.at(acc[2], idx, s2[inside])
        acc = ndi.uniform_filter(acc, (1, 3, 3), mode="constant") * 9.0
        iso = acc[0] - np.hypot(acc[1], acc[2])
        np.maximum(best, iso / (2 * np.pi * r), out=best)
    return best


def extract_hough(img: GrayImage, p: HoughParams = HoughParams(), *, fov_margin: float = 3.0) -> CandidateSet:
    """Circular Hough transform on an edge map; accumulator maxima become candidates."""
    acc = hough_accumulator(img, p)
    size = 2 * max(1, int(round(p.min_distance))) + 1
    peaks = (acc >= p.threshold) & (acc == ndi.maximum_filter(acc, size=size))
    labels, n = ndi.label(peaks, structure=_ops.EIGHT)
    if n == 0:
        return CandidateSet.empty()
    com = ndi.center_of_mass(peaks, labels, range(1, n + 1))
    inv = ndi.gaussian_filter(_inverted(img), 1.0)
    bg = _background(inv, 2 * p.radii[1] + 1)
    pts = []
    for r, c in com:
        ri, ci = int(round(r)), int(round(c))
        if inv[ri, ci] - bg[ri, ci] >= p.min_height:
            pts.append((c, r))
    return _finish(img, pts, fov_margin)


def _gaussian_mask(sigma: float) -> np.ndarray:
    half = int(np.ceil(3 * sigma))
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1]
    return np.exp(-(xx ** 2 + yy ** 2) / (2 * sigma ** 2))


def zhang_response(img: GrayImage, p: ZhangParams = ZhangParams()) -> np.ndarray:
    """Per-pixel maximum normalized cross-correlation with the Gaussian masks."""
    inv = _inverted(img)
    resp = np.full(inv.shape, -1.0)
    for s in p.sigmas:
        ncc = match_template(inv, _gaussian_mask(s), pad_input=True, mode="edge")
        np.maximum(resp, ncc, out=resp)
    return resp


def extract_zhang(img: GrayImage, p: ZhangParams = ZhangParams(), *, fov_margin: float = 3.0,
                  vessel: VesselParams = VesselParams()) -> CandidateSet:
    """Maximal Gaussian correlation, thresholded, vessel-filtered and region-grown."""
    resp = zhang_response(img, p)
    labels, keep = _ops.hysteresis_labels(resp, p.support, p.threshold)
    if keep and p.remove_vessels:
        vmask = vessel_mask(img, vessel)
        if vmask.any():
            hit = set(np.unique(labels[vmask]).tolist())
            keep = [k for k in keep if k not in hit]
    seeds = _ops.component_peaks(resp, labels, keep)
    smooth = ndi.gaussian_filter(_inverted(img), 1.0)
    pts = _grow_all(smooth, seeds, rel_tol=p.region_tol, window=p.window,
                    max_area=p.max_area, min_height=p.min_height)
    return _finish(img, pts, fov_margin)


def _shift(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[i, j] = a[i + dy, j + dx]`` with edge replication."""
    pad = max(abs(dy), abs(dx))
    if pad == 0:
        return a
    padded = np.pad(a, pad, mode="edge")
    h, w = a.shape
    return padded[pad + dy:pad + dy + h, pad + dx:pad + dx + w]


def lazar_height_map(img: GrayImage, p: LazarParams = LazarParams()) -> np.ndarray:
    """Minimum over orientations of the cross-section peak height.

    Along each orientation the profile through a pixel is split into two
    arms; the pixel's height is its value minus the higher of the two arm
    minima. Round spots stand out in every direction, while an elongated
    structure is flat along its own axis and scores near zero. Each arm
    sample takes the best of three laterally offset pixels so that an arm
    running a few degrees off a thin vessel still follows its ridge.
    """
    s = ndi.gaussian_filter(_inverted(img), p.smooth_sigma)
    half = max(1, int(round((p.profile_length - 1) / 2)))
    heights = None
    for a in _ops.orientations(p.orientations):
        t = np.deg2rad(a)
        ux, uy = np.cos(t), -np.sin(t)
        left = right = None
        for k in range(1, half + 1):
            for sign in (1, -1):
                vals = None
                for j in (-1, 0, 1):
                    dx = int(round(sign * k * ux - j * uy))
                    dy = int(round(sign * k * uy + j * ux))
                    v = _shift(s, dy, dx)
                    vals = v if vals is None else np.maximum(vals, v)
                if sign > 0:
                    right = vals if right is None else np.minimum(right, vals)
                else:
                    left = vals if left is None else np.minimum(left, vals)
        hgt = s - np.maximum(left, right)
        heights = hgt if heights is None else np.minimum(heights, hgt)
    return np.maximum(heights, 0.0)


def lazar_score_map(img: GrayImage, p: LazarParams = LazarParams()) -> np.ndarray:
    """Height map minus its area opening: keeps only compact peaks."""
    hmap = lazar_height_map(img, p)
    return hmap - area_opening(hmap, area_threshold=int(p.max_area))


def extract_lazar(img: GrayImage, p: LazarParams = LazarParams(), *, fov_margin: float = 3.0) -> CandidateSet:
    score = lazar_score_map(img, p)
    labels, keep = _ops.hysteresis_labels(score, p.support, p.threshold)
    return _finish(img, _weighted_centroids(score, labels, keep), fov_margin)


def run_extractor(kind: Extractor, img: GrayImage, params: ExtractParams = ExtractParams(),
                  vessel: VesselParams = VesselParams()) -> CandidateSet:
    kind = Extractor(kind)
    m = params.fov_margin
    if kind is Extractor.WALTER:
        return extract_walter(img, params.walter, fov_margin=m)
    if kind is Extractor.SPENCER:
        return extract_spencer(img, params.spencer, fov_margin=m)
    if kind is Extractor.HOUGH:
        return extract_hough(img, params.hough, fov_margin=m)
    if kind is Extractor.ZHANG:
        return extract_zhang(img, params.zhang, fov_margin=m, vessel=vessel)
    return extract_lazar(img, params.lazar, fov_margin=m)


def with_threshold(params, value: float):
    """Same bundle with its final detection threshold replaced."""
    return replace(params, threshold=value)
