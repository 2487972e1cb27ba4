"""Shared domain types and geometric primitives.

Coordinates follow the image convention used everywhere in the package:
``x`` is the column, ``y`` is the row, both measured in pixels and allowed
to be fractional.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class MAError(Exception):
    """Base class for all errors raised by the package."""


class DegenerateInputError(MAError):
    """Input image (or mask) leaves an operator with nothing to work on."""


class ConfigError(MAError):
    """Invalid or inconsistent configuration."""


class PreconditionError(MAError, ValueError):
    """A documented precondition of an operation was violated."""


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def circular_fov(height: int, width: int, radius: float | None = None) -> np.ndarray:
    """Boolean disc centered in a ``height x width`` frame."""
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    if radius is None:
        radius = min(height, width) / 2.0 - 1.0
    yy, xx = np.mgrid[:height, :width]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel float raster with a declared intensity range and FOV.

    ``data`` is indexed ``[row, col]``. Both arrays are copied and made
    read-only on construction.
    """

    data: np.ndarray
    fov_mask: np.ndarray | None = None
    vmin: float = 0.0
    vmax: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise PreconditionError(f"GrayImage expects a 2-D array, got shape {data.shape}")
        if not self.vmin < self.vmax:
            raise PreconditionError(f"empty intensity range [{self.vmin}, {self.vmax}]")
        if not np.all(np.isfinite(data)):
            raise PreconditionError("image contains non-finite values")
        tol = 1e-9 * (self.vmax - self.vmin)
        if data.size and (data.min() < self.vmin - tol or data.max() > self.vmax + tol):
            raise PreconditionError(
                f"intensities [{data.min():.6g}, {data.max():.6g}] outside "
                f"declared range [{self.vmin}, {self.vmax}]"
            )
        data = np.clip(data, self.vmin, self.vmax)
        if self.fov_mask is None:
            mask = np.ones(data.shape, dtype=bool)
        else:
            mask = np.asarray(self.fov_mask, dtype=bool)
            if mask.shape != data.shape:
                raise PreconditionError(
                    f"fov_mask shape {mask.shape} does not match image shape {data.shape}"
                )
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "fov_mask", _frozen(mask))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def normalized(self) -> np.ndarray:
        """Intensities mapped linearly onto [0, 1] (a fresh writable array)."""
        return (self.data - self.vmin) / (self.vmax - self.vmin)

    def with_data(self, data: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> "GrayImage":
        return GrayImage(
            data,
            self.fov_mask,
            self.vmin if vmin is None else vmin,
            self.vmax if vmax is None else vmax,
        )

    def contains(self, x: float, y: float) -> bool:
        return 0 <= x <= self.width - 1 and 0 <= y <= self.height - 1


# ---------------------------------------------------------------------------
# Candidates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    x: float
    y: float
    confidence: float | None = None

    def __post_init__(self):
        if self.confidence is not None and not 0.0 < self.confidence <= 1.0:
            raise PreconditionError(f"confidence {self.confidence} outside (0, 1]")


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 2))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise PreconditionError(f"points must have shape (n, 2), got {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Array-backed set of candidate points, optionally with confidences.

    Points are stored as an ``(n, 2)`` array of ``(x, y)`` rows, sorted by
    ``(y, x)`` so that equal sets compare equal element-wise.
    """

    points: np.ndarray
    confidence: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        conf = None
        if self.confidence is not None:
            conf = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
            if conf.shape[0] != pts.shape[0]:
                raise PreconditionError("confidence length does not match number of points")
            if conf.size and (conf.min() <= 0.0 or conf.max() > 1.0):
                raise PreconditionError("confidences must lie in (0, 1]")
        order = np.lexsort((pts[:, 0], pts[:, 1])) if len(pts) else np.zeros(0, dtype=int)
        pts = pts[order]
        object.__setattr__(self, "points", _frozen(pts))
        if conf is not None:
            object.__setattr__(self, "confidence", _frozen(conf[order]))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        conf = self.confidence
        for i, (x, y) in enumerate(self.points):
            yield Candidate(float(x), float(y), None if conf is None else float(conf[i]))

    @classmethod
    def empty(cls, with_confidence: bool = False) -> "CandidateSet":
        return cls(np.zeros((0, 2)), np.zeros(0) if with_confidence else None)

    @classmethod
    def from_candidates(cls, cands: Iterable[Candidate]) -> "CandidateSet":
        cands = list(cands)
        pts = [(c.x, c.y) for c in cands]
        confs = [c.confidence for c in cands]
        if cands and all(c is not None for c in confs):
            return cls(pts, confs)
        if any(c is not None for c in confs):
            raise PreconditionError("either all or none of the candidates carry a confidence")
        return cls(pts)


# ---------------------------------------------------------------------------
# Pairs and ensembles
# ---------------------------------------------------------------------------


class Preprocessing(str, enum.Enum):
    WALTER_KLEIN = "walter_klein"
    CLAHE = "clahe"
    VESSEL_REMOVAL = "vessel_removal"
    ILLUMINATION_EQ = "illumination_eq"
    NONE = "none"


class Extractor(str, enum.Enum):
    WALTER = "walter"
    SPENCER = "spencer"
    HOUGH = "hough"
    ZHANG = "zhang"
    LAZAR = "lazar"


_PP_ORDER = {p: i for i, p in enumerate(Preprocessing)}
_CE_ORDER = {e: i for i, e in enumerate(Extractor)}


@dataclass(frozen=True, order=False)
class DetectorPair:
    """A preprocessing method composed with a candidate extractor.

    Parameters for both components live in the pipeline configuration
    (:class:`maensemble.config.PipelineConfig`), so every pair in a pool
    shares one parameter bundle per component.
    """

    preprocessing: Preprocessing
    extractor: Extractor

    def __post_init__(self):
        object.__setattr__(self, "preprocessing", Preprocessing(self.preprocessing))
        object.__setattr__(self, "extractor", Extractor(self.extractor))

    @property
    def id(self) -> str:
        return f"{self.preprocessing.value}/{self.extractor.value}"

    @classmethod
    def parse(cls, text: str) -> "DetectorPair":
        try:
            pp, ce = text.strip().split("/")
            return cls(Preprocessing(pp), Extractor(ce))
        except ValueError as exc:
            raise ConfigError(
                f"bad pair id {text!r}; expected '<preprocessing>/<extractor>', e.g. 'clahe/walter'"
            ) from exc

    def sort_key(self) -> tuple[int, int]:
        return (_PP_ORDER[self.preprocessing], _CE_ORDER[self.extractor])

    def __lt__(self, other: "DetectorPair") -> bool:
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        return self.id


def all_pairs() -> list[DetectorPair]:
    """The full 5 x 5 pool in canonical order."""
    return [DetectorPair(p, e) for p in Preprocessing for e in Extractor]


@dataclass(frozen=True)
class Ensemble:
    members: tuple[DetectorPair, ...]
    merge_radius: float = 5.0

    def __post_init__(self):
        members = tuple(sorted(DetectorPair(m.preprocessing, m.extractor) for m in self.members))
        if len(set(members)) != len(members):
            raise ConfigError("ensemble contains duplicate pairs")
        if not self.merge_radius > 0:
            raise ConfigError(f"merge radius must be positive, got {self.merge_radius}")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def signature(self) -> str:
        return "+".join(m.id for m in self.members)

    @classmethod
    def from_ids(cls, ids: Sequence[str], merge_radius: float = 5.0) -> "Ensemble":
        return cls(tuple(DetectorPair.parse(i) for i in ids), merge_radius)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def euclidean_distance(a, b) -> float:
    return math.hypot(float(a[0]) - float(b[0]), float(a[1]) - float(b[1]))


def centroid(points) -> tuple[float, float]:
    pts = _as_points(points)
    if len(pts) == 0:
        raise PreconditionError("centroid of an empty point set")
    m = pts.mean(axis=0)
    return float(m[0]), float(m[1])


def scale_length(value: float, width: int, reference_width: int = 768) -> float:
    """Scale a pixel length defined at ``reference_width`` to an image ``width``."""
    return value * width / reference_width
