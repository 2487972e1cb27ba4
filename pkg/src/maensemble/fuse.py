"""Spatial voting fusion of per-pair candidate sets.

For every candidate ``c`` of every member pair, the nearest candidate of
each *other* member within the merge radius is gathered into ``I_c``; the
centroid of ``I_c`` is emitted with confidence ``|I_c| / |E|``. Emitted
points closer than ``DEDUP_TOL`` are merged, keeping the highest
confidence.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import CandidateSet, ConfigError, DetectorPair, Ensemble

DEDUP_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FusedCandidateSet(CandidateSet):
    ensemble: Ensemble | None = None

    def __post_init__(self):
        if self.confidence is None:
            raise ConfigError("fused candidates need confidences")
        super().__post_init__()


def dedupe(points: np.ndarray, conf: np.ndarray, tol: float = DEDUP_TOL, groups: np.ndarray | None = None):
    """Merge points closer than ``tol``; each group keeps its most confident point.

    Ties go to the point that sorts first by ``(y, x)``. With ``groups``
    (one integer label per point, e.g. the image index) points of
    different groups are never merged; the result is then ordered by
    ``(group, y, x)`` and the surviving labels are returned as a third
    element.
    """
    grouped = groups is not None
    g = np.zeros(len(points)) if groups is None else np.asarray(groups, dtype=np.float64)
    if len(points) < 2:
        return (points, conf, g.astype(int)) if grouped else (points, conf)
    # exact copies are common (identical gathered sets); collapse them first
    keyed, inv = np.unique(np.column_stack([g, points]), axis=0, return_inverse=True)
    best = np.full(len(keyed), -np.inf)
    np.maximum.at(best, inv.ravel(), conf)
    order = np.lexsort((keyed[:, 1], keyed[:, 2], keyed[:, 0]))
    keyed, conf = keyed[order], best[order]
    n = len(keyed)
    pairs = np.zeros((0, 2), dtype=int)
    if n > 1:
        # group labels are spread far apart so groups never come within tol
        spread = keyed * np.array([1e12, 1.0, 1.0])
        pairs = cKDTree(spread).query_pairs(tol, output_type="ndarray")
    if len(pairs):
        parent = list(range(n))

        def root(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in pairs.tolist():
            ra, rb = root(a), root(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        labels = [root(i) for i in range(n)]
        # stable: highest confidence first, then (group, y, x) order
        rank = np.lexsort((np.arange(n), -conf))
        keep = {}
        for i in rank.tolist():
            keep.setdefault(labels[i], i)
        idx = np.sort(np.fromiter(keep.values(), dtype=int))
        keyed, conf = keyed[idx], conf[idx]
    pts = np.ascontiguousarray(keyed[:, 1:])
    return (pts, conf, keyed[:, 0].astype(int)) if grouped else (pts, conf)


def nearest_within(seeds: np.ndarray, others: np.ndarray, radius: float) -> np.ndarray:
    """Index of the nearest row of ``others`` strictly closer than ``radius``, else -1.

    Ties resolve to the lowest index.
    """
    if len(seeds) == 0:
        return np.zeros(0, dtype=int)
    if len(others) == 0:
        return np.full(len(seeds), -1)
    d = np.hypot(seeds[:, None, 0] - others[None, :, 0], seeds[:, None, 1] - others[None, :, 1])
    idx = np.argmin(d, axis=1)
    return np.where(d[np.arange(len(seeds)), idx] < radius, idx, -1)


def _accumulate(neighbours: np.ndarray, coords: Sequence[np.ndarray]):
    """Sum gathered coordinates column by column (member order) and count them.

    Column-sequential accumulation makes identical gathered sets produce
    bit-identical centroids regardless of which member seeded them.
    """
    n = neighbours.shape[0]
    total = np.zeros((n, 2))
    count = np.zeros(n, dtype=int)
    for j, pts in enumerate(coords):
        col = neighbours[:, j]
        ok = col >= 0
        if ok.any():
            total[ok] += pts[col[ok]]
        count += ok
    return total / count[:, None], count


def fuse(per_pair_outputs: Mapping[DetectorPair, CandidateSet], ensemble: Ensemble) -> FusedCandidateSet:
    members = list(ensemble.members)
    if not members:
        raise ConfigError("cannot fuse an empty ensemble")
    if set(per_pair_outputs) != set(members):
        missing = sorted(set(members) - set(per_pair_outputs))
        extra = sorted(set(per_pair_outputs) - set(members))
        raise ConfigError(f"pair outputs do not match ensemble members (missing {missing}, extra {extra})")
    coords = [np.asarray(per_pair_outputs[m].points, dtype=np.float64) for m in members]
    r = ensemble.merge_radius
    out_pts, out_conf = [], []
    for i, seeds in enumerate(coords):
        if len(seeds) == 0:
            continue
        nb = np.empty((len(seeds), len(members)), dtype=int)
        for j, other in enumerate(coords):
            nb[:, j] = np.arange(len(seeds)) if j == i else nearest_within(seeds, other, r)
        pts, count = _accumulate(nb, coords)
        out_pts.append(pts)
        out_conf.append(count / len(members))
    if not out_pts:
        return FusedCandidateSet(np.zeros((0, 2)), np.zeros(0), ensemble)
    pts, conf = dedupe(np.vstack(out_pts), np.concatenate(out_conf))
    return FusedCandidateSet(pts, conf, ensemble)


def threshold_by_confidence(fused: CandidateSet, t: float) -> CandidateSet:
    """Candidates with confidence at least ``t``; ``t = 0`` keeps everything."""
    if fused.confidence is None:
        raise ConfigError("thresholding needs confidences")
    keep = fused.confidence >= t
    return CandidateSet(fused.points[keep], fused.confidence[keep])


class PoolFusionIndex:
    """Neighbour table over a whole pool, for fusing many subsets fast.

    ``pool_outputs[q]`` is pair ``q``'s candidate set; pass a list of such
    lists to index several images at once. ``table[k, q]`` holds the row
    (into the stacked points) of the nearest candidate of pool pair ``q``
    within the radius of candidate ``k`` on the same image, ``-1`` when
    none, and ``k`` itself in its own pair's column. :meth:`fuse` gives
    the same result as :func:`fuse` for any subset, up to floating-point
    summation order.
    """

    def __init__(self, pool_outputs, radius: float):
        self.radius = radius
        per_image = pool_outputs if pool_outputs and isinstance(pool_outputs[0], (list, tuple)) else [pool_outputs]
        self.n_images = len(per_image)
        n_pool = len(per_image[0]) if per_image else 0
        coords, owners, images, tables = [], [], [], []
        base = 0
        for img, outputs in enumerate(per_image):
            if len(outputs) != n_pool:
                raise ConfigError("every image needs one candidate set per pool pair")
            cs = [np.asarray(c.points, dtype=np.float64).reshape(-1, 2) for c in outputs]
            offs = base + np.concatenate([[0], np.cumsum([len(c) for c in cs])]).astype(int)
            for i, seeds in enumerate(cs):
                tab = np.empty((len(seeds), n_pool), dtype=int)
                for q, other in enumerate(cs):
                    local = np.arange(len(seeds)) if q == i else nearest_within(seeds, other, radius)
                    tab[:, q] = np.where(local >= 0, local + offs[q], -1)
                tables.append(tab)
                coords.append(seeds)
                owners.append(np.full(len(seeds), i))
                images.append(np.full(len(seeds), img))
            base = offs[-1]
        self.points = np.vstack(coords) if coords else np.zeros((0, 2))
        self.owner = np.concatenate(owners).astype(int) if owners else np.zeros(0, dtype=int)
        self.image = np.concatenate(images).astype(int) if images else np.zeros(0, dtype=int)
        self.table = np.vstack(tables) if tables else np.zeros((0, n_pool), dtype=int)
        self.n_pool = n_pool

    def fuse_all(self, members: Sequence[int]):
        """Fused ``(points, confidence)`` per image for the sorted pool indices ``members``."""
        members = list(members)
        chosen = np.zeros(self.n_pool, dtype=bool)
        chosen[members] = True
        seeds = np.flatnonzero(chosen[self.owner])
        if len(seeds) == 0:
            return [(np.zeros((0, 2)), np.zeros(0)) for _ in range(self.n_images)]
        nb = self.table[np.ix_(seeds, members)]
        ok = nb >= 0
        gathered = self.points[np.where(ok, nb, 0)] * ok[..., None]
        count = ok.sum(axis=1)
        pts = gathered.sum(axis=1) / count[:, None]
        pts, conf, img = dedupe(pts, count / len(members), groups=self.image[seeds])
        cuts = np.searchsorted(img, np.arange(1, self.n_images))
        return list(zip(np.split(pts, cuts), np.split(conf, cuts)))

    def fuse(self, members: Sequence[int]):
        """Fused ``(points, confidence)`` of the first (or only) image."""
        return self.fuse_all(members)[0]
