"""Slow, obviously-correct reference implementations used as independent oracles."""

import itertools
import math


def accuracy_ref(proba, labels):
    hits = 0
    for row, y in zip(proba, labels):
        best = max(range(len(row)), key=lambda j: (row[j], -j))
        hits += best == y
    return hits / len(labels)


def _pred(proba):
    return [max(range(len(row)), key=lambda j: (row[j], -j)) for row in proba]


def f1_ref(proba, labels):
    pred = _pred(proba)
    n_cols = len(proba[0])
    classes = [1] if n_cols == 2 else sorted(set(labels) | set(pred))
    scores = []
    for c in classes:
        tp = sum(1 for p, y in zip(pred, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(pred, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(pred, labels) if p != c and y == c)
        scores.append(0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(scores) / len(scores)


def auc_pairs(scores, positive):
    """Probability a random positive outscores a random negative, ties one half."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    if not pos or not neg:
        return math.nan
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def ovo_auc_ref(proba, labels):
    c = len(proba[0])
    if c == 2:
        return auc_pairs([r[1] for r in proba], [y == 1 for y in labels])
    if any(k not in labels for k in range(c)):
        return math.nan
    vals = []
    for a, b in itertools.combinations(range(c), 2):
        rows = [i for i, y in enumerate(labels) if y in (a, b)]
        ab = auc_pairs([proba[i][a] for i in rows], [labels[i] == a for i in rows])
        ba = auc_pairs([proba[i][b] for i in rows], [labels[i] == b for i in rows])
        vals.append((ab + ba) / 2)
    return sum(vals) / len(vals)


def ranks_ref(column):
    """Rank 1 = largest value, ties get the average of the ranks they span."""
    order = sorted(range(len(column)), key=lambda i: -column[i])
    ranks = [0.0] * len(column)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and column[order[j + 1]] == column[order[i]]:
            j += 1
        for t in range(i, j + 1):
            ranks[order[t]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def friedman_ref(table):
    """Chi-square form 12n/(m(m+1)) * sum_j (R_j - (m+1)/2)^2 on models x datasets."""
    m, n = len(table), len(table[0])
    cols = [ranks_ref([table[i][d] for i in range(m)]) for d in range(n)]
    mean = [sum(col[i] for col in cols) / n for i in range(m)]
    return 12 * n / (m * (m + 1)) * sum((r - (m + 1) / 2) ** 2 for r in mean), cols
