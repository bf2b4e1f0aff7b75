"""Compare the package metrics with the brute-force references in tests/oracles.py.

Enumerates duplicate-free rankings over a small universe (plus optional
never-relevant distractors) and every relevant set of the given sizes.

    python scripts/metric_oracle_sweep.py --universe 5 --distractors 1 --max-len 5
"""

import argparse
import itertools
import string
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from oracles import ref_ap, ref_ndcg, ref_recall, ref_rr  # noqa: E402
from reposearch.metrics import average_precision, ndcg_at_k, recall_at_k, reciprocal_rank  # noqa: E402


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--universe", type=int, default=4)
    parser.add_argument("--distractors", type=int, default=1)
    parser.add_argument("--max-len", type=int, default=5)
    parser.add_argument("--max-relevant", type=int, default=3)
    parser.add_argument("--ks", type=int, nargs="+", default=[1, 3, 5])
    parser.add_argument("--tol", type=float, default=1e-9)
    args = parser.parse_args(argv)

    items = string.ascii_lowercase[: args.universe]
    pool = items + string.ascii_uppercase[: args.distractors]
    worst = {"ndcg": 0.0, "recall": 0.0, "ap": 0.0, "rr": 0.0}
    cases = 0
    started = time.perf_counter()
    for size in range(1, args.max_relevant + 1):
        for relevant in map(set, itertools.combinations(items, size)):
            for n in range(min(args.max_len, len(pool)) + 1):
                for ranked in map(list, itertools.permutations(pool, n)):
                    for k in args.ks:
                        worst["ndcg"] = max(worst["ndcg"], abs(ndcg_at_k(ranked, relevant, k) - ref_ndcg(ranked, relevant, k)))
                        worst["recall"] = max(worst["recall"], abs(recall_at_k(ranked, relevant, k) - ref_recall(ranked, relevant, k)))
                    worst["ap"] = max(worst["ap"], abs(average_precision(ranked, relevant) - ref_ap(ranked, relevant)))
                    worst["rr"] = max(worst["rr"], abs(reciprocal_rank(ranked, relevant) - ref_rr(ranked, relevant)))
                    cases += 1
    elapsed = time.perf_counter() - started
    for name, value in worst.items():
        print(f"{name:>7}: max |diff| {value:.3e}")
    ok = all(v <= args.tol for v in worst.values())
    print(f"{cases} (ranking, relevant set) cases in {elapsed:.2f}s: {'agree' if ok else 'DISAGREE'} within {args.tol}")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
