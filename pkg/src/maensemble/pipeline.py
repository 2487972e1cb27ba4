"""Running pairs on images, with per-(pair, image) caching."""
from __future__ import annotations

import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .core import CandidateSet, DetectorPair, Ensemble, GrayImage, MAError, Preprocessing
from .extract import ExtractParams, run_extractor, scaled
from .fuse import FusedCandidateSet, fuse
from .preprocess import PreprocessParams, apply_preprocessing


@dataclass(frozen=True)
class PairParams:
    """Parameters shared by every pair: one bundle per preprocessing method and extractor."""

    preprocess: PreprocessParams = field(default_factory=PreprocessParams)
    extract: ExtractParams = field(default_factory=ExtractParams)

    def at_scale(self, factor: float) -> "PairParams":
        if factor == 1.0:
            return self
        v = self.preprocess.vessel
        vessel = replace(
            v,
            line_length=max(3, int(round(v.line_length * factor))),
            background_size=max(3, int(round(v.background_size * factor)) | 1),
            min_area=max(1, int(round(v.min_area * factor ** 2))),
        )
        return PairParams(replace(self.preprocess, vessel=vessel), scaled(self.extract, factor))


def run_pair(pair: DetectorPair, img: GrayImage, params: PairParams = PairParams()) -> CandidateSet:
    pre = apply_preprocessing(pair.preprocessing, img, params.preprocess)
    return run_extractor(pair.extractor, pre, params.extract, params.preprocess.vessel)


class CandidateCache:
    """Raw candidates of each pool pair on each image, computed exactly once.

    Preprocessed images are cached as well, so a preprocessing method runs
    once per image no matter how many extractors consume it. ``counts``
    records how often each ``(pair id, image index)`` was extracted.
    """

    def __init__(self, images: Sequence[GrayImage], params: PairParams = PairParams(), jobs: int = 1):
        self.images = list(images)
        self.params = params
        self.jobs = max(1, int(jobs))
        self._pre: dict[tuple[Preprocessing, int], GrayImage] = {}
        self._cands: dict[tuple[DetectorPair, int], CandidateSet] = {}
        self._lock = threading.Lock()
        self.counts: Counter = Counter()

    def _preprocessed(self, pp: Preprocessing, i: int) -> GrayImage:
        key = (pp, i)
        if key not in self._pre:
            self._pre[key] = apply_preprocessing(pp, self.images[i], self.params.preprocess)
        return self._pre[key]

    def _compute(self, pair: DetectorPair, i: int) -> CandidateSet:
        pre = self._preprocessed(pair.preprocessing, i)
        out = run_extractor(pair.extractor, pre, self.params.extract, self.params.preprocess.vessel)
        with self._lock:
            self.counts[(pair.id, i)] += 1
        return out

    def build(self, pairs: Iterable[DetectorPair]) -> "CandidateCache":
        """Fill the cache for ``pairs`` on every image (parallel over images)."""
        todo = [(p, i) for p in sorted(set(pairs)) for i in range(len(self.images))
                if (p, i) not in self._cands]
        if not todo:
            return self
        # preprocessing first so worker threads never race on it
        for pp in sorted({p.preprocessing for p, _ in todo}, key=lambda v: list(Preprocessing).index(v)):
            needed = sorted({i for p, i in todo if p.preprocessing is pp})
            if self.jobs > 1:
                with ThreadPoolExecutor(self.jobs) as ex:
                    for i, img in zip(needed, ex.map(lambda k: apply_preprocessing(pp, self.images[k], self.params.preprocess), needed)):
                        self._pre[(pp, i)] = img
            else:
                for i in needed:
                    self._preprocessed(pp, i)
        if self.jobs > 1:
            with ThreadPoolExecutor(self.jobs) as ex:
                results = list(ex.map(lambda t: self._compute(*t), todo))
        else:
            results = [self._compute(p, i) for p, i in todo]
        for key, res in zip(todo, results):
            self._cands[key] = res
        return self

    def get(self, pair: DetectorPair, i: int) -> CandidateSet:
        try:
            return self._cands[(pair, i)]
        except KeyError:
            raise MAError(f"candidate cache miss for pair {pair.id} on image {i}") from None

    def __contains__(self, key) -> bool:
        return key in self._cands


def detect(ensemble: Ensemble, img: GrayImage, params: PairParams = PairParams()) -> FusedCandidateSet:
    """Run every member pair on ``img`` and fuse their candidates."""
    cache = CandidateCache([img], params).build(ensemble.members)
    return fuse({m: cache.get(m, 0) for m in ensemble.members}, ensemble)


def fuse_cached(ensemble: Ensemble, cache: CandidateCache) -> list[FusedCandidateSet]:
    return [fuse({m: cache.get(m, i) for m in ensemble.members}, ensemble)
            for i in range(len(cache.images))]
