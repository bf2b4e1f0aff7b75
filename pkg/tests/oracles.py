"""Brute-force reference metrics, written from the definitions without sharing
any code with the package. Deliberately slow and literal."""

import math


def _gains(ranked, relevant):
    return [1 if item in relevant else 0 for item in ranked]


def ref_ndcg(ranked, relevant, k):
    gains = _gains(ranked, relevant)[:k]
    dcg = 0.0
    for pos in range(len(gains)):
        dcg += gains[pos] / math.log(pos + 2, 2)
    # ideal list: every relevant item first, then nothing
    ideal = sorted([1] * len(relevant) + [0] * k, reverse=True)[:k]
    idcg = 0.0
    for pos in range(len(ideal)):
        idcg += ideal[pos] / math.log(pos + 2, 2)
    return dcg / idcg


def ref_recall(ranked, relevant, k):
    found = 0
    for item in relevant:
        if item in ranked[:k]:
            found += 1
    return found / len(relevant)


def ref_precision(ranked, relevant, k):
    return sum(_gains(ranked[:k], relevant)) / k


def ref_ap(ranked, relevant):
    total = 0.0
    for k in range(1, len(ranked) + 1):
        if ranked[k - 1] in relevant:
            total += ref_precision(ranked, relevant, k)
    return total / len(relevant)


def ref_rr(ranked, relevant):
    ranks = [i + 1 for i, item in enumerate(ranked) if item in relevant]
    return 1.0 / min(ranks) if ranks else 0.0
