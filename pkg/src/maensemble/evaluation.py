"""Lesion-level and image-level scoring.

Matching follows a strict-distance rule: a candidate is a true positive
when some ground-truth point lies strictly closer than the radius; a
ground-truth point is found when some candidate lies strictly closer.
Several candidates may match one ground-truth point; sensitivity counts
found ground-truth points, so duplicates never inflate it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CandidateSet, MAError, PreconditionError

CPM_RATES = (1 / 8, 1 / 4, 1 / 2, 1.0, 2.0, 4.0, 8.0)
PAUC_RANGE = (1 / 8, 8.0)


class UndefinedMetricError(MAError):
    """A metric's denominator is empty (no lesions, no healthy images, ...)."""


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    matched_gt: int


def _distances(points: np.ndarray, gt: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    return np.hypot(points[:, None, 0] - gt[None, :, 0], points[:, None, 1] - gt[None, :, 1])


def match(candidates, gt, radius: float) -> MatchResult:
    if not radius > 0:
        raise PreconditionError(f"match radius must be positive, got {radius}")
    pts = candidates.points if isinstance(candidates, CandidateSet) else np.asarray(candidates).reshape(-1, 2)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
    close = _distances(pts, gt) < radius
    tp = int(close.any(axis=1).sum()) if len(gt) else 0
    matched = int(close.any(axis=0).sum()) if len(pts) else 0
    return MatchResult(tp=tp, fp=len(pts) - tp, fn=len(gt) - matched, matched_gt=matched)


# ---------------------------------------------------------------------------
# FROC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrocCurve:
    """Operating points ordered by decreasing confidence threshold."""

    thresholds: tuple[float, ...]
    avg_fp: tuple[float, ...]
    sensitivity: tuple[float, ...]
    n_images: int = 0
    n_lesions: int = 0

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.avg_fp, self.sensitivity))

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]]) -> "FrocCurve":
        pts = sorted(points)
        return cls(tuple(float("nan") for _ in pts), tuple(p[0] for p in pts), tuple(p[1] for p in pts))


def _image_votes(points: np.ndarray, conf: np.ndarray, gt: np.ndarray, radius: float):
    """Confidences of false positives and, per GT point, the best confidence that finds it."""
    if len(gt) == 0:
        return conf, np.zeros(0)
    if len(points) == 0:
        return np.zeros(0), np.zeros(len(gt))
    close = _distances(points, gt) < radius
    fp_conf = conf[~close.any(axis=1)]
    gt_best = np.where(close, conf[:, None], 0.0).max(axis=0)
    return fp_conf, gt_best


def froc_from_arrays(per_image: Sequence[tuple[np.ndarray, np.ndarray]], gts: Sequence[np.ndarray],
                     radius: float) -> FrocCurve:
    """FROC from ``(points, confidence)`` arrays; see :func:`froc`."""
    if len(per_image) == 0:
        raise PreconditionError("froc needs at least one image")
    if len(per_image) != len(gts):
        raise PreconditionError("one ground-truth set per image is required")
    fps, bests, confs = [], [], []
    for (pts, conf), gt in zip(per_image, gts):
        gt = np.asarray(gt, dtype=np.float64).reshape(-1, 2)
        conf = np.asarray(conf, dtype=np.float64)
        fp_conf, gt_best = _image_votes(np.asarray(pts).reshape(-1, 2), conf, gt, radius)
        fps.append(fp_conf)
        bests.append(gt_best)
        confs.append(conf)
    n_lesions = sum(len(b) for b in bests)
    if n_lesions == 0:
        raise UndefinedMetricError("sensitivity is undefined: no ground-truth lesions")
    n_images = len(per_image)
    all_conf = np.concatenate(confs)
    if all_conf.size == 0:
        return FrocCurve((1.0,), (0.0,), (0.0,), n_images, n_lesions)
    thresholds = np.unique(all_conf)[::-1]
    fp_sorted = np.sort(np.concatenate(fps))
    best_sorted = np.sort(np.concatenate(bests))
    # counts of values >= t for every threshold t
    n_fp = len(fp_sorted) - np.searchsorted(fp_sorted, thresholds, side="left")
    n_hit = len(best_sorted) - np.searchsorted(best_sorted, thresholds, side="left")
    return FrocCurve(
        tuple(float(t) for t in thresholds),
        tuple(float(v) for v in n_fp / n_images),
        tuple(float(v) for v in n_hit / n_lesions),
        n_images,
        n_lesions,
    )


def froc(fused: Sequence[CandidateSet], gts: Sequence[np.ndarray], radius: float) -> FrocCurve:
    """Sweep every distinct confidence value, from the highest down.

    At threshold ``t`` an image keeps its candidates with confidence >= t;
    sensitivity pools found lesions over all images and the false-positive
    rate is averaged per image. Images without lesions contribute only
    false positives. With no candidates at all the curve is the single
    point (0, 0).
    """
    arrays = []
    for f in fused:
        if f.confidence is None:
            raise PreconditionError("froc needs candidates with confidences")
        arrays.append((f.points, f.confidence))
    return froc_from_arrays(arrays, gts, radius)


def _step_sensitivity(avg_fp: np.ndarray, sens: np.ndarray, rate: float) -> float:
    ok = avg_fp <= rate
    return float(sens[ok].max()) if ok.any() else 0.0


def cpm(curve: FrocCurve, rates: Sequence[float] = CPM_RATES) -> float:
    """Mean sensitivity at the seven false-positive rates, step-interpolated.

    The sensitivity at a rate is the best one reached by any operating
    point at or below that rate, 0 when there is none.
    """
    if not curve.avg_fp:
        raise PreconditionError("cpm needs a non-empty curve")
    fp = np.asarray(curve.avg_fp)
    se = np.asarray(curve.sensitivity)
    return float(np.mean([_step_sensitivity(fp, se, r) for r in rates]))


def partial_auc(curve: FrocCurve, fp_range: tuple[float, float] = PAUC_RANGE) -> float:
    """Normalized trapezoidal area under the FROC for FP/image in ``fp_range``.

    The false-positive axis is divided by its upper limit. Operating points
    inside the range are joined linearly; the curve's value at each end of
    the range is the step value (best sensitivity at or below that rate).
    The area is divided by the width of the normalized interval, so a
    constant sensitivity ``s`` scores ``s``.
    """
    if not curve.avg_fp:
        raise PreconditionError("partial_auc needs a non-empty curve")
    lo, hi = fp_range
    fp = np.asarray(curve.avg_fp)
    se = np.asarray(curve.sensitivity)
    inner = sorted((f, s) for f, s in zip(fp, se) if lo < f < hi)
    xs = [lo] + [f for f, _ in inner] + [hi]
    ys = [_step_sensitivity(fp, se, lo)] + [s for _, s in inner] + [_step_sensitivity(fp, se, hi)]
    xs = np.asarray(xs) / hi
    area = float(np.sum(np.diff(xs) * (np.asarray(ys[1:]) + np.asarray(ys[:-1])) / 2.0))
    return area / (xs[-1] - xs[0])


# ---------------------------------------------------------------------------
# image-level grading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradeRow:
    threshold: float
    tp: int
    fn: int
    tn: int
    fp: int
    sensitivity: float
    specificity: float
    accuracy: float
    per_grade: tuple[float, float, float, float]


@dataclass(frozen=True)
class GradeReport:
    rows: tuple[GradeRow, ...]
    auc: float | None


def _rate(num: int, den: int) -> float:
    return num / den if den else math.nan


def grade(fused: Sequence[CandidateSet], labels: Sequence[int], thresholds: Sequence[float]) -> GradeReport:
    """DR / no-DR decision per image: diseased iff some candidate has confidence >= t.

    ``labels`` are grades 0..3 (R0..R3); R0 is healthy. Per-grade rates are
    the fraction of R0 images called healthy and of R1..R3 images called
    diseased. Undefined rates are NaN. The empirical AUC is the trapezoid
    over the (1 - specificity, sensitivity) points of the thresholds plus
    the (0, 0) and (1, 1) corners; it is ``None`` when either class is
    absent.
    """
    if len(fused) != len(labels):
        raise PreconditionError("one grade label per image is required")
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() > 3):
        raise PreconditionError("grades must lie in 0..3 (R0..R3)")
    score = np.array([
        f.confidence.max() if len(f) and f.confidence is not None and f.confidence.size else -np.inf
        for f in fused
    ])
    if any(len(f) and f.confidence is None for f in fused):
        raise PreconditionError("grading needs candidates with confidences")
    diseased = labels > 0
    rows = []
    for t in thresholds:
        pred = score >= t
        tp = int((pred & diseased).sum())
        fn = int((~pred & diseased).sum())
        tn = int((~pred & ~diseased).sum())
        fp = int((pred & ~diseased).sum())
        per = []
        for g in range(4):
            sel = labels == g
            correct = (~pred[sel]).sum() if g == 0 else pred[sel].sum()
            per.append(_rate(int(correct), int(sel.sum())))
        rows.append(GradeRow(
            float(t), tp, fn, tn, fp,
            _rate(tp, tp + fn), _rate(tn, tn + fp), _rate(tp + tn, tp + tn + fp + fn), tuple(per),
        ))
    auc = None
    if diseased.any() and (~diseased).any() and rows:
        pts = sorted({(0.0, 0.0), (1.0, 1.0)} | {(1 - r.specificity, r.sensitivity) for r in rows})
        x = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        auc = float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))
    return GradeReport(tuple(rows), auc)
