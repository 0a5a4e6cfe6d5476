"""Multitask PFN transformer: row-wise attention over context and query rows.

Context rows are embedded from their features plus their label vector; query
rows from their features only.  Context rows attend to the context, each query
row attends to the context and itself.  A shared two-layer decoder maps every
query state to ``t_max * c_max`` logits which are sliced per task.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import core
from .core import Tensor

CHECKPOINT_FORMAT = 1

_forward_calls = 0


def forward_call_count():
    """Number of :func:`forward` invocations since import."""
    return _forward_calls


@dataclass(frozen=True)
class ModelConfig:
    d_emb: int = 64
    n_layers: int = 3
    n_heads: int = 4
    t_max: int = 5
    c_max: int = 10
    k_max: int = 100

    def __post_init__(self):
        if self.d_emb % self.n_heads:
            raise ValueError(f"d_emb={self.d_emb} not divisible by n_heads={self.n_heads}")
        for name in ("d_emb", "n_layers", "n_heads", "t_max", "c_max", "k_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def d_ff(self):
        return 2 * self.d_emb

    @property
    def d_hid(self):
        return 2 * self.d_emb

    @property
    def n_out(self):
        return self.t_max * self.c_max

    @classmethod
    def small_deep(cls):
        return cls(d_emb=256, n_layers=15)


def parameter_shapes(config):
    """Ordered ``name -> shape`` for every learnable array."""
    d, f = config.d_emb, config.d_ff
    shapes = {
        "x_enc.w": (config.k_max, d), "x_enc.b": (d,),
        "y_enc.w": (config.t_max, d), "y_enc.b": (d,),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "wq": (d, d), p + "bq": (d,),
            p + "wk": (d, d), p + "bk": (d,),
            p + "wv": (d, d), p + "bv": (d,),
            p + "wo": (d, d), p + "bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "w1": (d, f), p + "b1": (f,),
            p + "w2": (f, d), p + "b2": (d,),
        })
    shapes.update({
        "ln_f.g": (d,), "ln_f.b": (d,),
        "dec.w1": (d, config.d_hid), "dec.b1": (config.d_hid,),
        "dec.w2": (config.d_hid, config.n_out), "dec.b2": (config.n_out,),
    })
    return shapes


def parameter_count(config):
    return sum(math.prod(s) for s in parameter_shapes(config).values())


class ModelParameters:
    """Learnable weights of one model plus its configuration."""

    def __init__(self, config, arrays):
        self.config = config
        shapes = parameter_shapes(config)
        if list(arrays) != list(shapes):
            missing = set(shapes) ^ set(arrays)
            raise ValueError(f"parameter names do not match config: {sorted(missing)[:5]}")
        self.tensors = {}
        for name, shape in shapes.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != shape:
                raise ValueError(f"{name}: shape {a.shape} != {shape}")
            self.tensors[name] = Tensor(a, requires_grad=True, name=name)

    @classmethod
    def initialize(cls, config, rng):
        arrays = {}
        for name, shape in parameter_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "g":
                arrays[name] = np.ones(shape)
            elif len(shape) == 1:
                arrays[name] = np.zeros(shape)
            else:
                arrays[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
        # keep the initial residual stream close to identity
        for i in range(config.n_layers):
            arrays[f"layers.{i}.wo"] /= math.sqrt(2 * config.n_layers)
            arrays[f"layers.{i}.w2"] /= math.sqrt(2 * config.n_layers)
        return cls(config, arrays)

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def values(self):
        return list(self.tensors.values())

    def arrays(self):
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self):
        return ModelParameters(self.config, {k: v.copy() for k, v in self.arrays().items()})

    def save(self, path, extra=None, meta=None):
        save_checkpoint(path, self, extra=extra, meta=meta)

    @classmethod
    def load(cls, path):
        return load_checkpoint(path)[0]


def scale_pad(values, width):
    """Multiply rows of length ``n`` by ``width / n`` then zero-pad to ``width`` columns."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        return scale_pad(values[None, :], width)[0]
    n = values.shape[1]
    if n == 0:
        raise ValueError("need at least one column")
    if n > width:
        raise ValueError(f"{n} columns exceed the maximum of {width}")
    out = np.zeros((values.shape[0], width))
    out[:, :n] = values * (width / n)
    return out


def normalize_labels(labels_ctx):
    """Class indices as floats, z-scored per task over the context rows."""
    y = np.asarray(labels_ctx, dtype=np.float64)
    sd = y.std(axis=0)
    return (y - y.mean(axis=0)) / np.where(sd > 1e-8, sd, 1.0)


@dataclass
class ForwardBatch:
    """Model-ready inputs for one dataset.

    ``x`` is (n_rows, k_max), already scaled and padded; ``y`` is
    (split, t_max) for the context rows only.
    """

    x: np.ndarray
    y: np.ndarray
    split: int
    n_tasks: int
    class_counts: list

    @property
    def n_query(self):
        return self.x.shape[0] - self.split


def make_batch(features, labels_ctx, class_counts, config):
    """Scale/pad preprocessed features and context labels for :func:`forward`."""
    features = np.asarray(features, dtype=np.float64)
    labels_ctx = np.asarray(labels_ctx)
    if labels_ctx.ndim == 1:
        labels_ctx = labels_ctx[:, None]
    split, T = labels_ctx.shape
    if not 1 <= T <= config.t_max:
        raise ValueError(f"T={T} outside [1, {config.t_max}]")
    if features.shape[1] == 0:
        raise ValueError("no features")
    if not 0 < split < features.shape[0]:
        raise ValueError("need at least one context row and one query row")
    return ForwardBatch(
        x=scale_pad(features, config.k_max),
        y=scale_pad(normalize_labels(labels_ctx), config.t_max),
        split=split, n_tasks=T, class_counts=list(class_counts),
    )


def attention_mask(n_rows, split):
    """True where row i may attend to row j: any context row, and itself."""
    allowed = np.zeros((n_rows, n_rows), dtype=bool)
    allowed[:, :split] = True
    np.fill_diagonal(allowed, True)
    return allowed


def _linear(x, params, w, b):
    return core.add(core.matmul(x, params[w]), params[b])


def encode_x(params, x_scaled):
    return _linear(Tensor(x_scaled), params, "x_enc.w", "x_enc.b")


def encode_y(params, y_scaled, n_rows):
    """Label embedding for the context rows, zero rows for the queries."""
    split = y_scaled.shape[0]
    full = np.zeros((n_rows, y_scaled.shape[1]))
    full[:split] = y_scaled
    is_ctx = np.zeros((n_rows, 1))
    is_ctx[:split] = 1.0
    return core.mul(_linear(Tensor(full), params, "y_enc.w", "y_enc.b"), Tensor(is_ctx))


def _attention(h, params, prefix, mask, n_heads):
    n, d = h.shape
    dh = d // n_heads

    def heads(t, axes):
        return core.transpose(core.reshape(t, (n, n_heads, dh)), axes)

    q = heads(_linear(h, params, prefix + "wq", prefix + "bq"), (1, 0, 2))
    k = heads(_linear(h, params, prefix + "wk", prefix + "bk"), (1, 2, 0))
    v = heads(_linear(h, params, prefix + "wv", prefix + "bv"), (1, 0, 2))
    scores = core.scale(core.matmul(q, k), 1.0 / math.sqrt(dh))
    o = core.matmul(core.softmax(scores, axis=-1, mask=mask), v)
    o = core.reshape(core.transpose(o, (1, 0, 2)), (n, d))
    return _linear(o, params, prefix + "wo", prefix + "bo")


def forward(params, batch):
    """Logits of shape (n_query, n_out) for the query rows of ``batch``."""
    global _forward_calls
    _forward_calls += 1
    cfg = params.config
    n = batch.x.shape[0]
    mask = attention_mask(n, batch.split)
    h = core.add(encode_x(params, batch.x), encode_y(params, batch.y, n))
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        a = core.layer_norm(h, params[p + "ln1.g"], params[p + "ln1.b"])
        h = core.add(h, _attention(a, params, p, mask, cfg.n_heads))
        a = core.layer_norm(h, params[p + "ln2.g"], params[p + "ln2.b"])
        f = core.gelu(_linear(a, params, p + "w1", p + "b1"))
        h = core.add(h, _linear(f, params, p + "w2", p + "b2"))
    h = core.layer_norm(h, params["ln_f.g"], params["ln_f.b"])
    h_query = core.rows(h, batch.split)
    z = core.gelu(_linear(h_query, params, "dec.w1", "dec.b1"))
    return _linear(z, params, "dec.w2", "dec.b2")


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def slice_and_normalize(logits, n_tasks, class_counts, c_max, inference=True):
    """Per-task probabilities from joint logits (rows x n_out, or a single vector).

    Task ``t`` owns columns ``[t*c_max, (t+1)*c_max)``.  With ``inference`` the
    slice is cut to ``class_counts[t]`` columns before the softmax; otherwise the
    softmax covers the full slice.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    if len(class_counts) != n_tasks:
        raise ValueError("one class count per task required")
    out = []
    for t in range(n_tasks):
        c = class_counts[t] if inference else c_max
        if not 1 <= c <= c_max:
            raise ValueError(f"class count {c} outside [1, {c_max}]")
        out.append(_softmax(logits[:, t * c_max: t * c_max + c]))
    return [p[0] for p in out] if single else out


def save_checkpoint(path, params, extra=None, meta=None):
    """JSON manifest line followed by little-endian float64 arrays.

    ``extra`` holds additional named arrays (optimizer moments); ``meta`` is
    any JSON-serializable dict.
    """
    blobs = [("param", k, v) for k, v in params.arrays().items()]
    blobs += [("extra", k, np.asarray(v, dtype=np.float64)) for k, v in (extra or {}).items()]
    entries, offset = [], 0
    for group, name, arr in blobs:
        entries.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "model_config": asdict(params.config),
        "arrays": entries,
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for _, _, arr in blobs:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(params, extra_arrays, meta)``."""
    with open(path, "rb") as fh:
        manifest = json.loads(fh.readline())
        payload = fh.read()
    if manifest.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    config = ModelConfig(**manifest["model_config"])
    params, extra = {}, {}
    for e in manifest["arrays"]:
        n = math.prod(e["shape"])
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=e["offset"]).reshape(e["shape"])
        (params if e["group"] == "param" else extra)[e["name"]] = arr.astype(np.float64)
    return ModelParameters(config, params), extra, manifest["meta"]
