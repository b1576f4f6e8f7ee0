"""Edge refinement: reference and member carry independent boundary jitter.

Sweeps the jitter radius and reports mean VPQ / STQ for the reference alone and
after merging, plus the paired win count.
"""

import argparse

import numpy as np

from panens.ensemble import query_wise_merge
from panens.fusion import VIPSEG_CATEGORIES, fuse
from panens.metrics import evaluate
from panens.scenarios import edge_case


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=30)
    ap.add_argument("--jitters", default="1,2,3")
    args = ap.parse_args()

    print(f"{'jitter':>6} {'ref vpq':>8} {'ens vpq':>8} {'ref stq':>8} {'ens stq':>8} wins")
    for jitter in (int(j) for j in args.jitters.split(",")):
        ref, ens = [], []
        for seed in range(args.seeds):
            case = edge_case(seed, jitter)
            ref.append(evaluate(fuse(case.reference, VIPSEG_CATEGORIES), case.gt)["fraction"])
            merged = query_wise_merge(case.reference, case.member)
            ens.append(evaluate(fuse(merged, VIPSEG_CATEGORIES), case.gt)["fraction"])
        wins = sum(e["vpq"] > r["vpq"] for e, r in zip(ens, ref))

        def mean(rows, key):
            return float(np.mean([r[key] for r in rows]))

        print(
            f"{jitter:>6} {mean(ref, 'vpq'):8.4f} {mean(ens, 'vpq'):8.4f} "
            f"{mean(ref, 'stq'):8.4f} {mean(ens, 'stq'):8.4f} {wins}/{args.seeds}"
        )


if __name__ == "__main__":
    main()
