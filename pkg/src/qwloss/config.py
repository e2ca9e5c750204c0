"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored; unknown keys are errors.  Lists
(split ratios) are comma separated.  ``serialize`` writes every key, so
parse(serialize(c)) == c.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .experiment import LOSS_KINDS
from .io import FORMATS
from .models import MODEL_KINDS, ModelSpec
from .qw import BREGMAN_KINDS, QWConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    format: str = "edge-list"
    directed: bool = False
    model: str = "gcn"
    hidden: int = 64
    dropout: float = 0.5
    alpha: float = 0.1
    K: int = 10
    loss: str = "qw-alg2"
    lam: float = 10.0
    J: int = 1
    lr: float = 0.01
    lr_flow: float = 0.01
    lr_edge: float | None = None
    weight_decay: float = 5e-4
    weight_decay_flow: float = 0.0
    lr_decay: float = 1.0
    epochs: int = 500
    patience: int = 200
    tol: float = 1e-4
    rel_tol: float = 1e-6
    flow_init: str = "zeros"
    bregman: str | None = None
    edge_weights: bool = False
    seed: int = 0
    runs: int = 1
    split: tuple = (0.6, 0.2, 0.2)
    split_file: bool = False
    output: str = "runs.jsonl"
    model_dir: str | None = None
    figures: str | None = None

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}")
        if self.loss != "traditional" and not self.lam > 0:
            raise ConfigError("lam must be positive for a QW loss")
        if self.bregman is not None and self.bregman not in BREGMAN_KINDS:
            raise ConfigError(f"bregman must be one of {BREGMAN_KINDS}")
        if self.J < 1 or self.runs < 1 or self.epochs < 1:
            raise ConfigError("J, runs and epochs must be at least 1")
        self.split = tuple(float(r) for r in self.split)
        if len(self.split) != 3 or min(self.split) < 0 or sum(self.split) > 1 + 1e-12:
            raise ConfigError(f"split needs three nonnegative ratios summing to at most 1, got {self.split}")

    def seeds(self) -> list:
        """Run seeds derived from the single ``seed`` key."""
        return [self.seed + i for i in range(self.runs)]

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.model, self.hidden, self.dropout, self.alpha, self.K)

    def qw_config(self) -> QWConfig:
        return QWConfig(
            lam=self.lam, inner_steps=self.J, epochs=self.epochs, lr=self.lr, weight_decay=self.weight_decay,
            lr_flow=self.lr_flow, weight_decay_flow=self.weight_decay_flow, lr_edge=self.lr_edge,
            lr_decay=self.lr_decay, flow_init=self.flow_init, tol=self.tol, rel_tol=self.rel_tol,
            patience=self.patience, edge_weights=self.edge_weights, bregman=self.bregman,
        )


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_NULL = ("", "none", "null")


def _parse_value(key, text):
    kind = _TYPES[key]
    t = text.strip()
    optional = "None" in kind
    if optional and t.lower() in _NULL:
        return None
    try:
        if kind.startswith("bool"):
            low = t.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(t)
        if kind.startswith("int"):
            return int(t)
        if kind.startswith("float"):
            return float(t)
        if kind == "tuple":
            return tuple(float(v) for v in t.split(","))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    return t


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        values[key] = _parse_value(key, value)
    return RunConfig(**values)


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"))
    # relative paths in the file are relative to the file
    base = path.parent
    for key in ("dataset", "output", "model_dir", "figures"):
        v = getattr(cfg, key)
        if v and not Path(v).is_absolute():
            setattr(cfg, key, str(base / v))
    return cfg


def config_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out
