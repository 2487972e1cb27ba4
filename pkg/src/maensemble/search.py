"""Selecting the ensemble that maximizes CPM on a training set."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ConfigError, DetectorPair, Ensemble, MAError, all_pairs
from .evaluation import cpm, froc_from_arrays
from .fuse import PoolFusionIndex, fuse
from .pipeline import CandidateCache


@dataclass(frozen=True)
class AnnealingConfig:
    initial_temperature: float = 0.2
    cooling: float = 0.93
    iterations: int = 40
    min_temperature: float = 1e-3
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.cooling < 1:
            raise ConfigError(f"annealing.cooling must lie in (0, 1), got {self.cooling}")
        if self.iterations < 1 or self.restarts < 1:
            raise ConfigError("annealing.iterations and restarts must be >= 1")
        if not 0 < self.min_temperature <= self.initial_temperature:
            raise ConfigError("annealing needs 0 < min_temperature <= initial_temperature")


@dataclass(frozen=True)
class SearchConfig:
    pool: tuple[DetectorPair, ...] = field(default_factory=lambda: tuple(all_pairs()))
    mode: str = "annealing"
    annealing: AnnealingConfig = field(default_factory=AnnealingConfig)
    exhaustive_cap: int = 12
    merge_radius: float = 5.0
    eval_radius: float = 5.0

    def __post_init__(self):
        pool = tuple(sorted(DetectorPair(p.preprocessing, p.extractor) for p in self.pool))
        if not pool:
            raise ConfigError("search pool is empty")
        if len(set(pool)) != len(pool):
            raise ConfigError("search pool contains duplicate pairs")
        if self.mode not in ("exhaustive", "annealing"):
            raise ConfigError(f"search mode must be 'exhaustive' or 'annealing', got {self.mode!r}")
        if not (self.merge_radius > 0 and self.eval_radius > 0):
            raise ConfigError("merge and evaluation radii must be positive")
        object.__setattr__(self, "pool", pool)


@dataclass
class SearchResult:
    best_ensemble: Ensemble
    best_cpm: float
    evaluation_log: list[tuple[str, float]]


class EnsembleEvaluator:
    """Training-set CPM of pool subsets, memoized by member tuple.

    Fusion runs on precomputed neighbour tables, so the cost of one
    evaluation is a handful of array operations per image.
    """

    def __init__(self, pool: Sequence[DetectorPair], cache: CandidateCache, gts: Sequence[np.ndarray],
                 merge_radius: float = 5.0, eval_radius: float = 5.0):
        self.pool = tuple(sorted(pool))
        self.cache = cache
        self.gts = [np.asarray(g, dtype=np.float64).reshape(-1, 2) for g in gts]
        if len(self.gts) != len(cache.images):
            raise MAError("ground truth count does not match cached images")
        self.merge_radius = merge_radius
        self.eval_radius = eval_radius
        self.index = PoolFusionIndex(
            [[cache.get(p, i) for p in self.pool] for i in range(len(cache.images))], merge_radius
        )
        self._memo: dict[tuple[int, ...], float] = {}
        self.calls = 0

    def ensemble(self, members: Sequence[int]) -> Ensemble:
        return Ensemble(tuple(self.pool[m] for m in members), self.merge_radius)

    def __call__(self, members: Sequence[int]) -> float:
        key = tuple(sorted(members))
        if not key:
            raise MAError("the empty ensemble is not part of the search space")
        hit = self._memo.get(key)
        if hit is None:
            self.calls += 1
            fused = self.index.fuse_all(key)
            hit = cpm(froc_from_arrays(fused, self.gts, self.eval_radius))
            self._memo[key] = hit
        return hit


def evaluate_ensemble(e: Ensemble, training_gts: Sequence[np.ndarray], cache: CandidateCache,
                      eval_radius: float | None = None) -> float:
    """CPM of an ensemble on the cached training images (direct fusion path)."""
    r = e.merge_radius if eval_radius is None else eval_radius
    fused = []
    for i in range(len(cache.images)):
        f = fuse({m: cache.get(m, i) for m in e.members}, e)
        fused.append((f.points, f.confidence))
    return cpm(froc_from_arrays(fused, training_gts, r))


def _better(a: tuple[float, tuple[int, ...], str], b: tuple[float, tuple[int, ...], str] | None) -> bool:
    """Higher CPM wins, then the smaller ensemble, then the lexicographically smaller signature."""
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] > b[0]
    if len(a[1]) != len(b[1]):
        return len(a[1]) < len(b[1])
    return a[2] < b[2]


def _prepare(cfg: SearchConfig, cache: CandidateCache, gts, evaluator: EnsembleEvaluator | None):
    if evaluator is None:
        cache.build(cfg.pool)
        evaluator = EnsembleEvaluator(cfg.pool, cache, gts, cfg.merge_radius, cfg.eval_radius)
    elif evaluator.pool != cfg.pool:
        raise ConfigError("evaluator pool does not match the search pool")
    return evaluator


def search_exhaustive(cfg: SearchConfig, cache: CandidateCache, gts: Sequence[np.ndarray],
                      evaluator: EnsembleEvaluator | None = None) -> SearchResult:
    n = len(cfg.pool)
    if n > cfg.exhaustive_cap:
        raise ConfigError(
            f"exhaustive search over {n} pairs means {2 ** n - 1} ensembles "
            f"(cap {cfg.exhaustive_cap}); use mode 'annealing' instead"
        )
    ev = _prepare(cfg, cache, gts, evaluator)
    log, best = [], None
    for size in range(1, n + 1):
        for members in itertools.combinations(range(n), size):
            score = ev(members)
            sig = ev.ensemble(members).signature
            log.append((sig, score))
            cand = (score, members, sig)
            if _better(cand, best):
                best = cand
    return SearchResult(ev.ensemble(best[1]), best[0], log)


def search_annealing(cfg: SearchConfig, cache: CandidateCache, gts: Sequence[np.ndarray],
                     evaluator: EnsembleEvaluator | None = None) -> SearchResult:
    """Simulated annealing over member bitmasks, maximizing CPM.

    A move flips one uniformly chosen pair in or out; moves to the empty
    ensemble are rejected. Worse moves are accepted with probability
    ``exp(delta / T)``. Each restart begins from a fresh random state and
    the best state seen in any restart is returned.
    """
    ev = _prepare(cfg, cache, gts, evaluator)
    a = cfg.annealing
    n = len(cfg.pool)
    rng = np.random.default_rng(a.seed)
    log, best = [], None

    def visit(state):
        members = tuple(int(i) for i in np.flatnonzero(state))
        score = ev(members)
        sig = ev.ensemble(members).signature
        log.append((sig, score))
        return score, members, sig

    n_levels = max(1, int(math.floor(math.log(a.min_temperature / a.initial_temperature)
                                     / math.log(a.cooling) + 1e-9)) + 1)
    for _ in range(a.restarts):
        state = rng.random(n) < 0.5
        if not state.any():
            state[rng.integers(n)] = True
        current = visit(state)
        if _better(current, best):
            best = current
        temp = a.initial_temperature
        for _level in range(n_levels):
            for _it in range(a.iterations):
                k = int(rng.integers(n))
                state[k] = not state[k]
                if not state.any():
                    state[k] = True
                    continue
                proposal = visit(state)
                delta = proposal[0] - current[0]
                if delta >= 0 or rng.random() < math.exp(delta / temp):
                    current = proposal
                    if _better(current, best):
                        best = current
                else:
                    state[k] = not state[k]
            temp *= a.cooling
    return SearchResult(ev.ensemble(best[1]), best[0], log)


def run_search(cfg: SearchConfig, cache: CandidateCache, gts: Sequence[np.ndarray],
               evaluator: EnsembleEvaluator | None = None) -> SearchResult:
    if cfg.mode == "exhaustive":
        return search_exhaustive(cfg, cache, gts, evaluator)
    return search_annealing(cfg, cache, gts, evaluator)


TABLE_COLUMNS = ("walter", "spencer", "hough", "lazar", "zhang")
TABLE_ROWS = ("walter_klein", "clahe", "vessel_removal", "illumination_eq", "none")


def membership_table(e: Ensemble) -> list[list[str]]:
    """Preprocessing x extractor grid with ``x`` marking selected pairs."""
    chosen = {(m.preprocessing.value, m.extractor.value) for m in e.members}
    header = ["preprocessing"] + list(TABLE_COLUMNS)
    rows = [header]
    for pp in TABLE_ROWS:
        rows.append([pp] + ["x" if (pp, ce) in chosen else "" for ce in TABLE_COLUMNS])
    return rows
