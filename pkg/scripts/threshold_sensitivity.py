"""Sensitivity of the ensemble gain to the merge IoU threshold, the matching
level and the fusion thresholds, on the recovery and edge scenarios."""

import argparse
import itertools

import numpy as np

from panens.ensemble import EnsembleConfig, query_wise_merge
from panens.fusion import VIPSEG_CATEGORIES, FusionConfig, fuse
from panens.metrics import vpq_mean
from panens.scenarios import edge_case, recovery_case


def _gain(cases, cfg, fcfg):
    deltas = []
    for case in cases:
        before = vpq_mean(fuse(case.reference, VIPSEG_CATEGORIES, fcfg), case.gt).vpq
        merged = query_wise_merge(case.reference, case.member, cfg)
        deltas.append(vpq_mean(fuse(merged, VIPSEG_CATEGORIES, fcfg), case.gt).vpq - before)
    return float(np.mean(deltas)), sum(d > 0 for d in deltas)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=12)
    args = ap.parse_args()
    scenarios = {
        "recovery": [recovery_case(s) for s in range(args.seeds)],
        "edge": [edge_case(s) for s in range(args.seeds)],
    }

    print("merge threshold x matching level (default fusion)")
    print(f"{'scenario':>9} {'level':>9} {'thr':>5} {'mean dVPQ':>10} wins")
    for (name, cases), level, thr in itertools.product(scenarios.items(), ("tube", "per_frame"), (0.3, 0.5, 0.7, 0.9)):
        gain, wins = _gain(cases, EnsembleConfig(thr, level), FusionConfig())
        print(f"{name:>9} {level:>9} {thr:5.1f} {gain:+10.4f} {wins}/{len(cases)}")

    print("\nfusion thresholds (default merge)")
    print(f"{'scenario':>9} {'obj':>5} {'pix':>5} {'ovl':>5} {'mean dVPQ':>10} wins")
    for (name, cases), obj, pix, ovl in itertools.product(scenarios.items(), (0.3, 0.6), (0.25, 0.5), (0.5, 0.8)):
        gain, wins = _gain(cases, EnsembleConfig(), FusionConfig(obj, pix, ovl))
        print(f"{name:>9} {obj:5.2f} {pix:5.2f} {ovl:5.2f} {gain:+10.4f} {wins}/{len(cases)}")


if __name__ == "__main__":
    main()
