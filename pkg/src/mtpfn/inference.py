"""In-context prediction and permutation ensembling on a fitted model."""

from dataclasses import dataclass

import numpy as np

from .model import forward, make_batch, slice_and_normalize
from .preprocessing import TabularPreprocessor

MAX_MEMBERS = 32


@dataclass
class TaskPredictions:
    """Per-task class probabilities for every query row.

    ``probabilities[t]`` has shape ``(n_query, len(classes[t]))`` and its
    columns follow ``classes[t]``.
    """

    probabilities: list
    classes: list

    @property
    def n_tasks(self):
        return len(self.probabilities)

    def joint_probability(self, row, labels):
        """Probability of a full label vector under the factorized predictive."""
        out = 1.0
        for t, y in enumerate(labels):
            j = int(np.flatnonzero(self.classes[t] == y)[0])
            out *= self.probabilities[t][row, j]
        return out

    def predict(self):
        """Most probable label per task, shape (n_query, T)."""
        return np.column_stack([c[np.argmax(p, axis=1)]
                                for p, c in zip(self.probabilities, self.classes)])


@dataclass(frozen=True)
class EnsembleMember:
    feature_shift: int = 0
    label_shift: int = 0
    power: bool = False


def enumerate_ensemble(k, class_counts, max_members=MAX_MEMBERS):
    """Distinct preprocessing members, ``min(max_members, 2*k*j)`` of them.

    ``j`` is the largest class count.  Members are ordered with the power flag
    varying fastest, then the label shift, then the feature shift; the first
    member is the identity.
    """
    if k < 1:
        raise ValueError("need at least one feature")
    j = max(class_counts) if len(class_counts) else 1
    n = min(max_members, 2 * k * j)
    return [EnsembleMember(feature_shift=i // (2 * j), label_shift=(i // 2) % j, power=bool(i % 2))
            for i in range(n)]


def encode_labels(labels):
    """Integer codes per task plus each task's sorted vocabulary."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    codes = np.empty(labels.shape, dtype=np.int64)
    classes = []
    for t in range(labels.shape[1]):
        vocab, inv = np.unique(labels[:, t], return_inverse=True)
        codes[:, t] = inv.ravel()
        classes.append(vocab)
    return codes, classes


def _check_inputs(params, X_ctx, codes, classes, X_query):
    cfg = params.config
    if X_ctx.shape[0] == 0:
        raise ValueError("context is empty")
    if X_query.shape[1] != X_ctx.shape[1]:
        raise ValueError(f"query has {X_query.shape[1]} features, context {X_ctx.shape[1]}")
    if X_ctx.shape[1] > cfg.k_max:
        raise ValueError(f"{X_ctx.shape[1]} features exceed k_max={cfg.k_max}")
    if codes.shape[1] > cfg.t_max:
        raise ValueError(f"{codes.shape[1]} targets exceed t_max={cfg.t_max}")
    for t, c in enumerate(classes):
        if len(c) > cfg.c_max:
            raise ValueError(f"target {t} has {len(c)} classes, more than c_max={cfg.c_max}")


def rotate_labels(codes, shifts, counts):
    """Cyclically shift each task's class codes: c -> (c + r) mod n."""
    return (codes + np.asarray(shifts)) % np.asarray(counts)


def unrotate_probabilities(probs, shifts):
    """Undo :func:`rotate_labels` on per-task probability columns."""
    # rotated class (c + r) mod n carries original class c
    return [p[:, (np.arange(p.shape[1]) + r) % p.shape[1]] for p, r in zip(probs, shifts)]


def _run_member(params, X_ctx, codes, counts, X_query, member, nominal):
    k = X_ctx.shape[1]
    s = member.feature_shift % k
    X = np.roll(np.vstack([X_ctx, X_query]), s, axis=1)
    nominal = [(j + s) % k for j in nominal]
    shifts = [member.label_shift % c for c in counts]
    rotated = rotate_labels(codes, shifts, counts)
    split = X_ctx.shape[0]
    pre = TabularPreprocessor(nominal=nominal, power=member.power).fit(X[:split])
    batch = make_batch(pre.transform(X), rotated, counts, params.config)
    logits = forward(params, batch).data
    probs = slice_and_normalize(logits, len(counts), counts, params.config.c_max, inference=True)
    return unrotate_probabilities(probs, shifts)


def predict(params, X_ctx, Y_ctx, X_query, nominal=()):
    """All tasks for all query rows from a single forward pass.

    Classes not observed in the context for a task receive no probability.
    """
    return predict_ensembled(params, X_ctx, Y_ctx, X_query, max_members=1, nominal=nominal)


def predict_ensembled(params, X_ctx, Y_ctx, X_query, max_members=MAX_MEMBERS, nominal=()):
    """Arithmetic mean of member predictions; member order is fixed."""
    X_ctx = np.asarray(X_ctx, dtype=np.float64)
    X_query = np.asarray(X_query, dtype=np.float64)
    codes, classes = encode_labels(Y_ctx)
    _check_inputs(params, X_ctx, codes, classes, X_query)
    counts = [len(c) for c in classes]
    members = enumerate_ensemble(X_ctx.shape[1], counts, max_members)
    acc = [np.zeros((X_query.shape[0], c)) for c in counts]
    for m in members:
        for a, p in zip(acc, _run_member(params, X_ctx, codes, counts, X_query, m, nominal)):
            a += p
    return TaskPredictions([a / len(members) for a in acc], classes)
