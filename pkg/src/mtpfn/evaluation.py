"""Classification metrics, cross-validation, multitask gain and rank statistics."""

import csv
import itertools
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.base import clone
from sklearn.model_selection import KFold

METRICS = ("accuracy", "f1", "roc_auc")

# Nemenyi critical values q_0.05 (studentized range / sqrt 2, infinite df) for m = 2..20.
NEMENYI_Q05 = {
    2: 1.959964, 3: 2.343701, 4: 2.569032, 5: 2.727774, 6: 2.849705, 7: 2.948320,
    8: 3.030878, 9: 3.101730, 10: 3.163684, 11: 3.218654, 12: 3.268004, 13: 3.312739,
    14: 3.353618, 15: 3.391230, 16: 3.426041, 17: 3.458425, 18: 3.488685, 19: 3.517073,
    20: 3.543799,
}


def accuracy(proba, labels):
    """Fraction of rows whose argmax column equals the label code."""
    proba = np.asarray(proba)
    labels = np.asarray(labels)
    return float(np.mean(np.argmax(proba, axis=1) == labels))


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def macro_f1(proba, labels):
    """Binary F1 for class 1 with two columns, otherwise the macro average.

    The macro average runs over classes present in the labels or the predictions.
    """
    proba = np.asarray(proba)
    labels = np.asarray(labels)
    pred = np.argmax(proba, axis=1)
    if proba.shape[1] == 2:
        classes = [1]
    else:
        classes = np.union1d(labels, pred)
    scores = []
    for c in classes:
        tp = int(np.sum((pred == c) & (labels == c)))
        fp = int(np.sum((pred == c) & (labels != c)))
        fn = int(np.sum((pred != c) & (labels == c)))
        scores.append(_f1(tp, fp, fn))
    return float(np.mean(scores))


def binary_auc(scores, positive):
    """Area under the ROC curve via the rank-sum statistic; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = stats.rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def ovo_auc(proba, labels):
    """Binary AUC on column 1, or the one-vs-one macro average over class pairs.

    For a pair (a, b) only rows labelled a or b count, and the pair score is the
    mean of AUC(a vs b on column a) and AUC(b vs a on column b).  NaN when any
    class is absent from the labels.
    """
    proba = np.asarray(proba, dtype=np.float64)
    labels = np.asarray(labels)
    c = proba.shape[1]
    if c == 2:
        keep = (labels == 0) | (labels == 1)
        return binary_auc(proba[keep, 1], labels[keep] == 1)
    if any(not np.any(labels == k) for k in range(c)):
        return math.nan
    pair_scores = []
    for a, b in itertools.combinations(range(c), 2):
        keep = (labels == a) | (labels == b)
        ab = binary_auc(proba[keep, a], labels[keep] == a)
        ba = binary_auc(proba[keep, b], labels[keep] == b)
        pair_scores.append((ab + ba) / 2)
    return float(np.mean(pair_scores))


def nan_mean(values):
    kept = [v for v in values if not math.isnan(v)]
    return float(np.mean(kept)) if kept else math.nan


@dataclass
class MetricSet:
    """Per-target metric values; undefined entries are NaN and skipped by the means."""

    accuracy: list = field(default_factory=list)
    f1: list = field(default_factory=list)
    roc_auc: list = field(default_factory=list)

    def mean(self, metric):
        return nan_mean(getattr(self, metric))

    def means(self):
        return {m: self.mean(m) for m in METRICS}


def target_metrics(probabilities, labels):
    """MetricSet for per-task probability arrays against (n, T) label codes.

    A code of -1 marks a label outside the task's probability columns.
    """
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    out = MetricSet()
    for t, p in enumerate(probabilities):
        out.accuracy.append(accuracy(p, labels[:, t]))
        out.f1.append(macro_f1(p, labels[:, t]))
        out.roc_auc.append(ovo_auc(p, labels[:, t]))
    return out


def multitask_gain(model_metrics, baseline_metrics):
    """Mean relative change of the model over the baseline across tasks; positive is better."""
    m = np.asarray(model_metrics, dtype=np.float64)
    b = np.asarray(baseline_metrics, dtype=np.float64)
    if m.shape != b.shape or m.ndim != 1 or len(m) == 0:
        raise ValueError("model and baseline need the same non-zero number of tasks")
    if np.any(b == 0):
        raise ZeroDivisionError("baseline metric is zero")
    return float(np.mean((m - b) / b))


def fold_indices(n_rows, folds, seed):
    """Test-row index arrays of a shuffled k-fold split."""
    if n_rows < folds:
        raise ValueError(f"{n_rows} rows cannot fill {folds} folds")
    kf = KFold(n_splits=folds, shuffle=True, random_state=seed)
    return [test for _, test in kf.split(np.zeros(n_rows))]


@dataclass
class CVResult:
    mean: dict
    std: dict
    per_fold: list


def cross_validate(estimator, X, Y, folds=5, seeds=(0, 1, 2)):
    """Repeated k-fold evaluation of an estimator with ``fit``/``predict_proba``.

    ``predict_proba`` may return one array (single target) or a list per target.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[:, None]
    per_fold = []
    for seed in seeds:
        for test in fold_indices(len(X), folds, seed):
            train = np.setdiff1d(np.arange(len(X)), test)
            y_fit = Y[train, 0] if Y.shape[1] == 1 else Y[train]
            est = clone(estimator).fit(X[train], y_fit)
            probs = est.predict_proba(X[test])
            if not isinstance(probs, list):
                probs = [probs]
            classes = getattr(est, "classes_", None)
            if classes is None or not isinstance(classes, list):
                classes = [np.asarray(classes if classes is not None else np.unique(Y[train, 0]))]
            codes = np.column_stack([_codes(Y[test, t], classes[t]) for t in range(Y.shape[1])])
            per_fold.append(target_metrics(probs, codes).means())
    mean = {m: nan_mean([f[m] for f in per_fold]) for m in METRICS}
    std = {m: float(np.nanstd([f[m] for f in per_fold])) for m in METRICS}
    return CVResult(mean, std, per_fold)


def _codes(labels, classes):
    lookup = {c: i for i, c in enumerate(classes.tolist())}
    return np.array([lookup.get(v, -1) for v in labels.tolist()], dtype=np.int64)


def rank_table(scores):
    """Ranks per dataset (column), 1 = best, ties averaged; ``scores`` is models x datasets."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.column_stack([stats.rankdata(-scores[:, d]) for d in range(scores.shape[1])])


@dataclass
class FriedmanNemenyi:
    statistic: float
    p_value: float
    reject: object  # True / False, or None when every dataset is a full tie
    critical_difference: float
    mean_ranks: np.ndarray
    significant: np.ndarray
    cliques: list


def friedman_statistic(mean_ranks, n_datasets):
    m = len(mean_ranks)
    r = np.asarray(mean_ranks, dtype=np.float64)
    return float(12 * n_datasets / (m * (m + 1)) * (np.sum(r ** 2) - m * (m + 1) ** 2 / 4))


def friedman_nemenyi(scores, alpha=0.05):
    """Friedman chi-square over mean ranks plus the Nemenyi critical difference."""
    scores = np.asarray(scores, dtype=np.float64)
    m, n = scores.shape
    if m < 2 or n < 2:
        raise ValueError("need at least two models and two datasets")
    if alpha != 0.05 or m not in NEMENYI_Q05:
        raise ValueError("critical values are tabulated for alpha=0.05 and 2..20 models")
    ranks = rank_table(scores)
    mean_ranks = ranks.mean(axis=1)
    cd = NEMENYI_Q05[m] * math.sqrt(m * (m + 1) / (6 * n))
    if np.all(ranks == (m + 1) / 2):
        return FriedmanNemenyi(0.0, 1.0, None, cd, mean_ranks,
                               np.zeros((m, m), dtype=bool), [list(range(m))])
    stat = max(friedman_statistic(mean_ranks, n), 0.0)
    p = float(stats.chi2.sf(stat, m - 1))
    diff = np.abs(mean_ranks[:, None] - mean_ranks[None, :])
    return FriedmanNemenyi(stat, p, bool(p < alpha), cd, mean_ranks, diff > cd,
                           cliques(mean_ranks, cd))


def cliques(mean_ranks, cd):
    """Maximal runs of rank-sorted models whose rank spread is within ``cd``."""
    order = list(np.argsort(mean_ranks, kind="stable"))
    out = []
    last_end = -1
    for i in range(len(order)):
        j = i
        while j + 1 < len(order) and mean_ranks[order[j + 1]] - mean_ranks[order[i]] <= cd:
            j += 1
        if j > i and j > last_end:
            out.append([int(x) for x in order[i:j + 1]])
            last_end = j
    return out


def emit_report(results, out_dir):
    """Write ``metrics.csv``, ``summary.json`` and ``cd.json``.

    ``results`` maps model -> dataset -> metric -> value.  Output is fully
    determined by ``results``.
    """
    if not results:
        raise ValueError("no results to report")
    os.makedirs(out_dir, exist_ok=True)
    models = sorted(results)
    datasets = sorted(set().union(*(results[m] for m in models)))
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "dataset", *METRICS])
        for m in models:
            for d in sorted(results[m]):
                w.writerow([m, d, *(_fmt(results[m][d].get(k, math.nan)) for k in METRICS)])

    summary = {"models": {}, "datasets": datasets}
    cd_data = {}
    for metric in METRICS:
        table = np.array([[results[m].get(d, {}).get(metric, math.nan) for d in datasets]
                          for m in models])
        complete = ~np.isnan(table).any(axis=0)
        for i, m in enumerate(models):
            summary["models"].setdefault(m, {})[metric] = nan_mean(list(table[i]))
        if len(models) >= 2 and complete.sum() >= 2:
            res = friedman_nemenyi(table[:, complete])
            cd_data[metric] = {
                "models": models,
                "mean_ranks": [float(r) for r in res.mean_ranks],
                "critical_difference": res.critical_difference,
                "friedman_statistic": res.statistic,
                "p_value": res.p_value,
                "reject": res.reject,
                "cliques": [[models[i] for i in c] for c in res.cliques],
                "n_datasets": int(complete.sum()),
            }
            for i, m in enumerate(models):
                summary["models"][m][metric + "_rank"] = float(res.mean_ranks[i])
    for name, obj in (("summary.json", summary), ("cd.json", cd_data)):
        with open(os.path.join(out_dir, name), "w") as fh:
            json.dump(_clean(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj
