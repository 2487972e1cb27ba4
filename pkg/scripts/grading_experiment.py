"""Image-level grading table of a searched ensemble on a synthetic graded dataset.

    python3 scripts/grading_experiment.py --images 80
"""
import argparse

from maensemble.core import DetectorPair
from maensemble.evaluation import grade
from maensemble.pipeline import CandidateCache, fuse_cached
from maensemble.search import SearchConfig, search_exhaustive
from maensemble.synthetic import SyntheticSpec, generate_synthetic

POOL = ("none/walter", "clahe/spencer", "walter_klein/hough", "illumination_eq/lazar",
        "vessel_removal/zhang", "clahe/walter", "none/lazar", "illumination_eq/spencer")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=80)
    ap.add_argument("--train-images", type=int, default=20)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--thresholds", default="0.4,0.5,0.6,0.7,0.8,0.9,1.0")
    args = ap.parse_args(argv)

    train = generate_synthetic(SyntheticSpec(n_images=args.train_images, seed=args.seed + 49,
                                             ma_counts=((4, 9),) * 4))
    graded = generate_synthetic(SyntheticSpec(n_images=args.images, seed=args.seed))
    cfg = SearchConfig(pool=tuple(DetectorPair.parse(p) for p in POOL), mode="exhaustive")
    res = search_exhaustive(cfg, CandidateCache([s.image for s in train]), [s.gt for s in train])
    print(f"ensemble: {res.best_ensemble.signature} (train CPM {res.best_cpm:.4f})")

    cache = CandidateCache([s.image for s in graded]).build(res.best_ensemble.members)
    thresholds = [float(t) for t in args.thresholds.split(",")]
    rep = grade(fuse_cached(res.best_ensemble, cache), [s.grade for s in graded], thresholds)
    print("threshold  sens   spec   acc    R0     R1     R2     R3")
    for r in rep.rows:
        vals = [r.sensitivity, r.specificity, r.accuracy, *r.per_grade]
        print(f"{r.threshold:9.2f}  " + "  ".join(f"{v:5.2f}" for v in vals))
    print(f"ROC AUC: {rep.auc if rep.auc is None else round(rep.auc, 4)}")


if __name__ == "__main__":
    main()
