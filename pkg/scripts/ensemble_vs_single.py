"""Search an ensemble on a synthetic training split and compare it with single pairs on the test split.

    python3 scripts/ensemble_vs_single.py --images 60 --seed 5
"""
import argparse
import time

from maensemble.core import Ensemble
from maensemble.evaluation import cpm, froc_from_arrays, partial_auc
from maensemble.pipeline import CandidateCache, fuse_cached
from maensemble.search import AnnealingConfig, EnsembleEvaluator, SearchConfig, membership_table, run_search
from maensemble.synthetic import SyntheticSpec, generate_synthetic


def curve_of(ens, cache, gts):
    fused = fuse_cached(ens, cache)
    return froc_from_arrays([(f.points, f.confidence) for f in fused], gts, 5.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=60, help="total images, split in half")
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--mode", choices=("annealing", "exhaustive"), default="annealing")
    ap.add_argument("--restarts", type=int, default=3)
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    ds = generate_synthetic(SyntheticSpec(n_images=args.images, seed=args.seed, ma_counts=((5, 9),) * 4))
    half = len(ds) // 2
    train, test = ds.subset(range(half)), ds.subset(range(half, len(ds)))
    tr_gt, te_gt = [s.gt for s in train], [s.gt for s in test]
    cfg = SearchConfig(mode=args.mode, annealing=AnnealingConfig(restarts=args.restarts, seed=args.seed))
    tr = CandidateCache([s.image for s in train]).build(cfg.pool)
    te = CandidateCache([s.image for s in test]).build(cfg.pool)
    print(f"extraction: {time.perf_counter() - t0:.1f}s")

    ev = EnsembleEvaluator(cfg.pool, tr, tr_gt)
    res = run_search(cfg, tr, tr_gt, ev)
    print(f"search: {time.perf_counter() - t0:.1f}s, {ev.calls} distinct ensembles evaluated")

    print(f"{'pair':32s} {'train CPM':>9s} {'test CPM':>9s} {'test pAUC':>9s}")
    for i, p in enumerate(cfg.pool):
        c = curve_of(Ensemble((p,)), te, te_gt)
        print(f"{p.id:32s} {ev((i,)):9.4f} {cpm(c):9.4f} {partial_auc(c):9.4f}")
    c = curve_of(res.best_ensemble, te, te_gt)
    print(f"{'ensemble (' + str(len(res.best_ensemble)) + ' pairs)':32s} {res.best_cpm:9.4f} "
          f"{cpm(c):9.4f} {partial_auc(c):9.4f}")
    for row in membership_table(res.best_ensemble):
        print("  ".join(f"{v:16s}" if j == 0 else f"{v:8s}" for j, v in enumerate(row)))


if __name__ == "__main__":
    main()
