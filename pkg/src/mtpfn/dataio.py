"""Real tabular data: CSV ingestion, preprocessing and multitask dataset construction."""

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .preprocessing import TabularPreprocessor
from .prior import C_MAX, quantile_bin

SUBSAMPLE_SIZES = (500, 1000, 2500, 5000)
SUBSAMPLE_SEEDS = (0, 1, 2, 3, 4)
IR_THRESHOLD = 16
BIN_CYCLE = (3, 4, 5, 6)


class DerivationSkipped(ValueError):
    """The dataset cannot supply the requested targets and keep one input feature."""


@dataclass
class TabularDataset:
    """Columns of a table with nominal values stored as codes into ``vocabularies``.

    ``values`` is (N, n_columns) float with NaN where ``missing`` is set.
    """

    names: list
    kinds: list
    values: np.ndarray
    missing: np.ndarray
    vocabularies: dict = field(default_factory=dict)
    targets: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.names) != len(set(self.names)):
            raise ValueError("duplicate column names")
        for name, kind in zip(self.names, self.kinds):
            if kind == "nominal" and name not in self.vocabularies:
                raise ValueError(f"nominal column {name!r} lacks a vocabulary")
        if not set(self.targets) <= set(self.names):
            raise ValueError("unknown target column")

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def feature_names(self):
        return [n for n in self.names if n not in self.targets]

    def column(self, name):
        return self.values[:, self.names.index(name)]

    def kind(self, name):
        return self.kinds[self.names.index(name)]

    def features(self):
        idx = [self.names.index(n) for n in self.feature_names]
        return self.values[:, idx]

    def nominal_feature_indices(self):
        return [i for i, n in enumerate(self.feature_names) if self.kind(n) == "nominal"]

    def target_codes(self):
        """(N, T) integer codes, -1 where missing."""
        cols = [self.column(n) for n in self.targets]
        out = np.column_stack(cols) if cols else np.empty((self.n_rows, 0))
        return np.where(np.isnan(out), -1, out).astype(np.int64)

    def take(self, rows):
        return replace(self, values=self.values[rows], missing=self.missing[rows])

    def select(self, names, targets=None):
        idx = [self.names.index(n) for n in names]
        return TabularDataset(list(names), [self.kinds[i] for i in idx], self.values[:, idx],
                              self.missing[:, idx],
                              {n: v for n, v in self.vocabularies.items() if n in names},
                              list(targets if targets is not None else
                                   [t for t in self.targets if t in names]))


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path, nominal=(), targets=()):
    """Parse a headed CSV; columns whose non-empty cells all parse as numbers are numeric.

    ``nominal`` forces columns to be nominal; ``targets`` names target columns.
    Empty cells are missing.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append(row)
    cells = np.array(rows, dtype=object).reshape(len(rows), len(header))
    missing = cells == ""
    values = np.full(cells.shape, np.nan)
    kinds, vocab = [], {}
    for j, name in enumerate(header):
        present = cells[~missing[:, j], j]
        if name not in nominal and all(_is_float(s) for s in present):
            kinds.append("numeric")
            values[~missing[:, j], j] = [float(s) for s in present]
        else:
            kinds.append("nominal")
            voc = sorted(set(present))
            vocab[name] = voc
            lookup = {s: i for i, s in enumerate(voc)}
            values[~missing[:, j], j] = [lookup[s] for s in present]
    return TabularDataset(list(header), kinds, values, missing, vocab, list(targets))


def _cell(ds, j, v):
    if math.isnan(v):
        return ""
    name = ds.names[j]
    if ds.kinds[j] == "nominal":
        return ds.vocabularies[name][int(v)]
    return repr(float(v))


def write_csv(ds, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        for row in ds.values:
            w.writerow([_cell(ds, j, v) for j, v in enumerate(row)])


def preprocess(ds, context_rows):
    """Model-ready ``(features, target_codes)``; statistics come from context rows only.

    ``context_rows`` is a row count (leading rows) or an index array.
    """
    if not ds.feature_names:
        raise ValueError("no input features remain")
    rows = np.arange(context_rows) if np.isscalar(context_rows) else np.asarray(context_rows)
    if len(rows) == 0:
        raise ValueError("context is empty")
    X = ds.features()
    pre = TabularPreprocessor(nominal=ds.nominal_feature_indices()).fit(X[rows])
    return pre.transform(X), ds.target_codes()


@dataclass
class DerivationPlan:
    n_targets: int
    picks: list = field(default_factory=list)

    def bin_counts(self):
        return [p["bins"] for p in self.picks if p["kind"] == "numeric"]

    def to_dict(self):
        return asdict(self)


def derive_mtl(ds, T, rng):
    """Repurpose ``T`` feature columns as targets, alternating nominal and numeric picks.

    The original targets are dropped first.  Numeric picks are quantile-binned
    with bin counts cycling through 3, 4, 5, 6.  Picked columns leave the
    feature set.  Raises :class:`DerivationSkipped` when the table cannot
    supply ``T`` targets and still keep one input feature.
    """
    if not 2 <= T <= 5:
        raise ValueError("T must be in {2, 3, 4, 5}")
    base = ds.select(ds.feature_names, targets=[])
    nominal, numeric = [], []
    for j, name in enumerate(base.names):
        if base.missing[:, j].any():
            continue
        if base.kinds[j] == "nominal":
            if 2 <= len(np.unique(base.values[:, j])) <= C_MAX:
                nominal.append(name)
        elif len(np.unique(base.values[:, j])) >= max(BIN_CYCLE):
            numeric.append(name)
    if len(nominal) + len(numeric) < T or len(base.names) - T < 1:
        raise DerivationSkipped(
            f"{len(nominal)} nominal + {len(numeric)} numeric candidates, "
            f"{len(base.names)} features; need {T} targets and one remaining input")
    nominal = [nominal[i] for i in rng.permutation(len(nominal))]
    numeric = [numeric[i] for i in rng.permutation(len(numeric))]

    plan = DerivationPlan(T)
    want_nominal = bool(nominal)
    n_numeric = 0
    values = base.values.copy()
    kinds = list(base.kinds)
    vocab = dict(base.vocabularies)
    for _ in range(T):
        take_nominal = (want_nominal and nominal) or not numeric
        if take_nominal:
            name = nominal.pop(0)
            plan.picks.append({"column": name, "kind": "nominal", "bins": None})
        else:
            name = numeric.pop(0)
            b = BIN_CYCLE[n_numeric % len(BIN_CYCLE)]
            n_numeric += 1
            j = base.names.index(name)
            values[:, j] = quantile_bin(values[:, j], n_bins=b)
            kinds[j] = "nominal"
            vocab[name] = [str(i) for i in range(b)]
            plan.picks.append({"column": name, "kind": "numeric", "bins": b})
        want_nominal = not want_nominal
    targets = [p["column"] for p in plan.picks]
    order = [n for n in base.names if n not in targets] + targets
    out = TabularDataset(base.names, kinds, values, base.missing, vocab, targets).select(order, targets)
    return out, plan


def write_derived(ds, plan, out_dir, stem="derived"):
    """CSV of features then targets plus a JSON sidecar describing the targets."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, stem + ".csv")
    write_csv(ds, csv_path)
    sidecar = {
        "targets": ds.targets,
        "class_vocabularies": {t: ds.vocabularies[t] for t in ds.targets},
        "plan": plan.to_dict(),
    }
    with open(os.path.join(out_dir, stem + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path


def imbalance_ratio(labels):
    """Majority over minority class count among the classes present."""
    labels = np.asarray(labels)
    labels = labels[labels >= 0] if labels.dtype.kind in "iu" else labels
    _, counts = np.unique(labels, return_counts=True)
    if len(counts) < 2:
        raise ValueError("imbalance ratio needs at least two classes")
    return counts.max() / counts.min()


def passes_imbalance_filter(target_labels, threshold=IR_THRESHOLD):
    """Keep a dataset unless some target's ratio is strictly above ``threshold``."""
    target_labels = np.asarray(target_labels)
    if target_labels.ndim == 1:
        target_labels = target_labels[:, None]
    return max(imbalance_ratio(target_labels[:, t]) for t in range(target_labels.shape[1])) <= threshold


def subsample(ds, n, seed):
    """``n`` rows uniformly without replacement, kept in original order."""
    if ds.n_rows < n:
        raise ValueError(f"cannot subsample {n} rows from {ds.n_rows}")
    rows = np.sort(np.random.default_rng(seed).choice(ds.n_rows, size=n, replace=False))
    return ds.take(rows)


def subsample_grid(ds, sizes=SUBSAMPLE_SIZES, seeds=SUBSAMPLE_SEEDS):
    """``{(size, seed): dataset}`` over every size the table can supply."""
    return {(n, s): subsample(ds, n, s) for n in sizes for s in seeds if n <= ds.n_rows}
