"""Flat ``key = value`` configuration files.

Scalars are written plainly (``peak_lr = 0.001``).  Prior samplers use a call
syntax::

    n_layers = tnlu(low=5, high=8, min=2, int)
    activation = choice(elu, tanh)
    noise_std = fixed(0.01)
    n_outputs = int_uniform(1, 5)

Blank lines and ``#`` comments are ignored.  Missing keys keep their defaults;
unknown keys are an error.
"""

import dataclasses
import re

from .model import ModelConfig
from .prior import HyperSampler, PriorConfig
from .training import TrainConfig

SCHEMAS = {"prior": PriorConfig, "model": ModelConfig, "train": TrainConfig}

_CALL = re.compile(r"^(\w+)\s*\((.*)\)$")


class ConfigError(ValueError):
    pass


def _scalar(text):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def parse_sampler(text):
    m = _CALL.match(text.strip())
    if not m:
        raise ConfigError(f"expected a sampler like fixed(0.5), got {text!r}")
    kind, body = m.group(1), m.group(2)
    args = [a.strip() for a in body.split(",") if a.strip()]
    if kind == "fixed":
        if len(args) != 1:
            raise ConfigError("fixed() takes one value")
        return HyperSampler("fixed", value=_scalar(args[0]))
    if kind == "choice":
        return HyperSampler("choice", choices=tuple(_scalar(a) for a in args))
    kw = {}
    positional = []
    for a in args:
        if a == "int":
            kw["integer"] = True
        elif "=" in a:
            k, v = a.split("=", 1)
            kw[k.strip()] = _scalar(v)
        else:
            positional.append(_scalar(a))
    for name, v in zip(("low", "high"), positional):
        kw[name] = v
    if kind == "int_uniform":
        kw["integer"] = True
    try:
        return HyperSampler(kind, **kw)
    except TypeError as exc:
        raise ConfigError(f"bad sampler arguments in {text!r}: {exc}") from None


def format_sampler(s):
    if s.kind == "fixed":
        return f"fixed({s.value})"
    if s.kind == "choice":
        return "choice(" + ", ".join(str(c) for c in s.choices) + ")"
    skip = {"kind", "integer", "choices", "value"}
    parts = []
    for f in dataclasses.fields(s):
        v = getattr(s, f.name)
        if f.name in skip or v is None or (f.name == "scale" and v == 1.0):
            continue
        parts.append(f"{f.name}={v}")
    if s.integer and s.kind != "int_uniform":
        parts.append("int")
    return f"{s.kind}(" + ", ".join(parts) + ")"


def parse_config(text, kind):
    """Build the ``kind`` config ("prior", "model" or "train") from file text."""
    cls = SCHEMAS[kind]
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown {kind} key {key!r}")
        typ = types[key]
        if typ is HyperSampler:
            values[key] = parse_sampler(val)
            continue
        v = _scalar(val)
        if typ is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if typ in (int, float, bool, str) and type(v) is not typ:
            raise ConfigError(f"line {lineno}: {key} expects {typ.__name__}, got {val!r}")
        values[key] = v
    try:
        return cls(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, kind):
    if path is None:
        return SCHEMAS[kind]()
    with open(path) as fh:
        return parse_config(fh.read(), kind)


def dump_config(cfg):
    """Inverse of :func:`parse_config`: one ``key = value`` line per field."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {format_sampler(v) if isinstance(v, HyperSampler) else v}")
    return "\n".join(lines) + "\n"
