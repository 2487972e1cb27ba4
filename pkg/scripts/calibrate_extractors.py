"""Blob sensitivity and line false positives of every pair on the calibration suites.

    python3 scripts/calibrate_extractors.py --images 10
"""
import argparse
import csv
import sys

from maensemble.core import all_pairs
from maensemble.evaluation import match
from maensemble.pipeline import CandidateCache
from maensemble.synthetic import blob_suite, line_suite


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=10)
    ap.add_argument("--radius", type=float, default=5.0)
    ap.add_argument("--csv", help="also write the table to this file")
    args = ap.parse_args(argv)

    blobs, lines = blob_suite(args.images), line_suite(args.images)
    pairs = all_pairs()
    bc = CandidateCache([s.image for s in blobs]).build(pairs)
    lc = CandidateCache([s.image for s in lines]).build(pairs)
    rows = [["pair", "blob_sensitivity", "blob_fp_per_image", "line_candidates"]]
    for p in pairs:
        hit = fp = 0
        for i, s in enumerate(blobs):
            r = match(bc.get(p, i), s.gt, args.radius)
            hit += r.matched_gt
            fp += r.fp
        n_gt = sum(len(s.gt) for s in blobs)
        n_line = sum(len(lc.get(p, i)) for i in range(len(lines)))
        rows.append([p.id, f"{hit / n_gt:.3f}", f"{fp / len(blobs):.2f}", n_line])

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerows(rows)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)


if __name__ == "__main__":
    main()
