import numpy as np
import pytest
from hypothesis import given, strategies as st

from maensemble.core import CandidateSet, ConfigError, Ensemble, all_pairs
from maensemble.fuse import FusedCandidateSet, PoolFusionIndex, dedupe, fuse, threshold_by_confidence

from oracles import brute_fuse

POOL = all_pairs()


def _ens(k, r=5.0):
    return Ensemble(tuple(POOL[:k]), r)


def _as_rows(fused):
    return [(x, y, c) for (x, y), c in zip(fused.points.tolist(), fused.confidence.tolist())]


def _same(rows_a, rows_b, tol=1e-6):
    if len(rows_a) != len(rows_b):
        return False
    used = [False] * len(rows_b)
    for a in rows_a:
        for j, b in enumerate(rows_b):
            if not used[j] and abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol and abs(a[2] - b[2]) <= 1e-12:
                used[j] = True
                break
        else:
            return False
    return True


def test_single_member_single_candidate():
    e = _ens(1)
    f = fuse({e.members[0]: CandidateSet([(10, 10)])}, e)
    assert f.points.tolist() == [[10, 10]] and f.confidence.tolist() == [1.0]


def test_two_close_candidates_merge_to_midpoint():
    e = _ens(2)
    f = fuse({e.members[0]: CandidateSet([(10, 10)]), e.members[1]: CandidateSet([(12, 10)])}, e)
    assert f.points.tolist() == [[11, 10]] and f.confidence.tolist() == [1.0]


def test_two_far_candidates_stay_apart():
    e = _ens(2)
    f = fuse({e.members[0]: CandidateSet([(10, 10)]), e.members[1]: CandidateSet([(100, 100)])}, e)
    assert f.points.tolist() == [[10, 10], [100, 100]]
    assert f.confidence.tolist() == [0.5, 0.5]
    assert len(threshold_by_confidence(f, 0.6)) == 0


def test_distance_equal_to_radius_is_not_gathered():
    e = _ens(2, r=2.0)
    f = fuse({e.members[0]: CandidateSet([(10, 10)]), e.members[1]: CandidateSet([(12, 10)])}, e)
    assert len(f) == 2


def test_same_pair_candidates_never_gathered():
    e = _ens(1)
    f = fuse({e.members[0]: CandidateSet([(10, 10), (11, 10)])}, e)
    assert f.points.tolist() == [[10, 10], [11, 10]] and f.confidence.tolist() == [1.0, 1.0]


def test_mismatched_outputs_rejected():
    e = _ens(2)
    with pytest.raises(ConfigError):
        fuse({e.members[0]: CandidateSet([(1, 1)])}, e)
    with pytest.raises(ConfigError):
        fuse({POOL[0]: CandidateSet.empty(), POOL[1]: CandidateSet.empty(), POOL[5]: CandidateSet.empty()}, e)


def test_fused_set_requires_confidence():
    with pytest.raises(ConfigError):
        FusedCandidateSet(np.zeros((0, 2)))


def test_threshold_examples():
    e = _ens(2)
    f = fuse({e.members[0]: CandidateSet([(10, 10), (50, 50)]), e.members[1]: CandidateSet([(11, 10)])}, e)
    assert len(threshold_by_confidence(f, 0)) == len(f)
    full = threshold_by_confidence(f, 1.0)
    assert full.points.tolist() == [[10.5, 10]]


def test_dedupe_keeps_most_confident():
    pts = np.array([[1.0, 1.0], [1.0, 1.0 + 5e-7], [3.0, 3.0]])
    p, c = dedupe(pts, np.array([0.5, 1.0, 0.25]))
    assert len(p) == 2 and c.tolist() == [1.0, 0.25]


# --- property tests ------------------------------------------------------------------

layouts = st.lists(
    st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40)), max_size=6),
    min_size=1, max_size=5,
)


def _outputs(layout, scale=1.0):
    e = _ens(len(layout))
    return e, {m: CandidateSet(np.asarray(pts, float).reshape(-1, 2) * scale) for m, pts in zip(e.members, layout)}


@given(layouts)
def test_matches_brute_force(layout):
    e, outs = _outputs(layout, 0.5)
    ref = brute_fuse([[tuple(p) for p in outs[m].points.tolist()] for m in e.members], e.merge_radius)
    assert _same(_as_rows(fuse(outs, e)), ref)


@given(layouts)
def test_confidence_bounds_and_grid(layout):
    e, outs = _outputs(layout)
    f = fuse(outs, e)
    k = f.confidence * len(e)
    assert np.all(f.confidence >= 1 / len(e) - 1e-12) and np.all(f.confidence <= 1)
    assert np.allclose(k, np.round(k))


@given(layouts, st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone(layout, a, b):
    e, outs = _outputs(layout)
    f = fuse(outs, e)
    lo, hi = sorted((a, b))
    big = {tuple(p) for p in threshold_by_confidence(f, lo).points.tolist()}
    small = {tuple(p) for p in threshold_by_confidence(f, hi).points.tolist()}
    assert small <= big


@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 100)), unique=True, max_size=15))
def test_single_member_reproduces_raw_candidates(pts):
    e = _ens(1)
    raw = CandidateSet(np.asarray(pts, float).reshape(-1, 2))
    f = fuse({e.members[0]: raw}, e)
    assert np.array_equal(f.points, raw.points) and np.all(f.confidence == 1.0)


@given(layouts, st.randoms(use_true_random=False))
def test_member_order_irrelevant(layout, rnd):
    e, outs = _outputs(layout)
    items = list(outs.items())
    rnd.shuffle(items)
    assert _same(_as_rows(fuse(dict(items), e)), _as_rows(fuse(outs, e)))


@given(layouts, st.integers(-50, 50), st.integers(-50, 50))
def test_translation_equivariance(layout, dx, dy):
    e, outs = _outputs(layout)
    moved = {m: CandidateSet(c.points + [dx, dy]) for m, c in outs.items()}
    a = [(x + dx, y + dy, c) for x, y, c in _as_rows(fuse(outs, e))]
    assert _same(a, _as_rows(fuse(moved, e)), tol=1e-9)


@given(st.lists(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), max_size=5), min_size=2, max_size=6),
       st.data())
def test_pool_index_agrees_with_fuse(layout, data):
    outs = [CandidateSet(np.asarray(p, float).reshape(-1, 2)) for p in layout]
    members = sorted(data.draw(st.sets(st.integers(0, len(layout) - 1), min_size=1)))
    idx = PoolFusionIndex(outs, 5.0)
    pts, conf = idx.fuse(members)
    e = Ensemble(tuple(POOL[m] for m in members), 5.0)
    ref = fuse({POOL[m]: outs[m] for m in members}, e)
    assert _same(list(zip(pts[:, 0], pts[:, 1], conf)), _as_rows(ref), tol=1e-9)


def test_pool_index_batches_images():
    a = [CandidateSet([(1, 1)]), CandidateSet([(2, 1)])]
    b = [CandidateSet([(1, 1)]), CandidateSet.empty()]
    idx = PoolFusionIndex([a, b], 5.0)
    res = idx.fuse_all([0, 1])
    assert res[0][0].tolist() == [[1.5, 1.0]] and res[0][1].tolist() == [1.0]
    assert res[1][0].tolist() == [[1.0, 1.0]] and res[1][1].tolist() == [0.5]
