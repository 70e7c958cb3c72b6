"""Independent brute-force oracles used to cross-check the metric stack.

Everything here recomputes metrics straight from raw (pred, label, attr)
triples with plain Python arithmetic, deliberately sharing no code with
the package implementation.
"""
from __future__ import annotations

import itertools


def brute_force_rates(triples, num_classes):
    """Conditional prediction rates P(pred = c | label, attr) from raw triples."""
    rates = {}
    for a in (0, 1):
        for y in range(num_classes):
            group = [p for (p, label, attr) in triples if attr == a and label == y]
            for c in range(num_classes):
                rates[(c, y, a)] = (
                    sum(1 for p in group if p == c) / len(group) if group else None
                )
    return rates


def brute_force_criteria(triples, num_classes, aggregation="max"):
    """(eopp0, eopp1, eodd) per the group-gap definitions, or None if no class
    is evaluable.  Binary tasks evaluate the positive class; multi-class
    macro-averages one-vs-rest values over evaluable classes."""
    classes = [1] if num_classes == 2 else list(range(num_classes))
    eopp0s, eopp1s, eodds = [], [], []
    for c in classes:
        ok = True
        for a in (0, 1):
            pos = [1 for (p, y, attr) in triples if attr == a and y == c]
            neg = [1 for (p, y, attr) in triples if attr == a and y != c]
            if not pos or not neg:
                ok = False
        if not ok:
            continue

        def rate(pred_is_c, label_is_c, a):
            sel = [
                1 if (p == c) == pred_is_c else 0
                for (p, y, attr) in triples
                if attr == a and (y == c) == label_is_c
            ]
            return sum(sel) / len(sel)

        tpr_gap = abs(rate(True, True, 1) - rate(True, True, 0))
        tnr_gap = abs(rate(False, False, 1) - rate(False, False, 0))
        fpr_gap = abs(rate(True, False, 1) - rate(True, False, 0))
        eopp0s.append(tnr_gap)
        eopp1s.append(tpr_gap)
        if aggregation == "max":
            eodds.append(max(tpr_gap, fpr_gap))
        elif aggregation == "sum":
            eodds.append(tpr_gap + fpr_gap)
        else:
            eodds.append((tpr_gap + fpr_gap) / 2)
    if not eopp0s:
        return None
    n = len(eopp0s)
    return (sum(eopp0s) / n, sum(eopp1s) / n, sum(eodds) / n)


def brute_force_utility(triples, num_classes):
    """(accuracy, macro precision, macro recall, macro f1) with 0/0 -> 0."""
    n = len(triples)
    accuracy = sum(1 for (p, y, _a) in triples if p == y) / n
    present = sorted({y for (_p, y, _a) in triples} | {p for (p, _y, _a) in triples})
    precs, recs, f1s = [], [], []
    for c in present:
        tp = sum(1 for (p, y, _a) in triples if p == c and y == c)
        fp = sum(1 for (p, y, _a) in triples if p == c and y != c)
        fn = sum(1 for (p, y, _a) in triples if p != c and y == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precs.append(prec)
        recs.append(rec)
        f1s.append(f1)
    k = len(present)
    return accuracy, sum(precs) / k, sum(recs) / k, sum(f1s) / k


def enumerate_binary_histograms(max_n):
    """All multisets of (pred, label, attr) triples over {0,1}^3, size 1..max_n.

    Metrics are invariant to sample order, so enumerating histograms over
    the 8 possible cells is exhaustive over prediction sets.
    """
    cells = list(itertools.product((0, 1), (0, 1), (0, 1)))
    for total in range(1, max_n + 1):
        for counts in _compositions(total, len(cells)):
            triples = []
            for cell, k in zip(cells, counts):
                triples.extend([cell] * k)
            yield triples


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest
