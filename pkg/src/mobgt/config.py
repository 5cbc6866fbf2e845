"""Run configuration: defaults, key=value config files, and CLI overrides.

Config files hold one `key = value` pair per line with '#' comments; keys
use the field names below.  CLI flags override file values which override
defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    # model widths
    hidden_dim: int = 128
    poi_dim: int = 64
    cat_dim: int = 32
    time_dim: int = 32
    user_dim: int = 32
    edge_dim: int = 32
    layers: int = 3
    heads: int = 4
    gcn_layers: int = 2
    ffn_mult: int = 4
    ffn_activation: str = "gelu"
    # discretization / clamps
    max_hops: int = 16
    max_degree: int = 32
    max_position: int = 64
    freq_buckets: int = 16
    edge_count_buckets: int = 9
    spatial_threshold_km: float = 2.5
    log_scale_edge_weights: bool = True
    # loss
    alpha: float = 0.2
    beta: float = 1.0
    tail_k: float = 1.2
    lam: float = 10.0
    # training
    lr0: float = 0.0002
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 1
    weight_decay: float = 0.01
    seed: int = 0
    val_fraction: float = 0.1
    early_stop_on: str = "val"  # val | train
    freeze_global: bool = False
    threads: int = 1
    # data
    min_session_len: int = 3
    split_ratio: float = 0.8
    # evaluation
    eval_mode: str = "prefix"  # prefix | last
    topk: int = 10
    # ablations
    disable_spatial_graph: bool = False
    disable_temporal_graph: bool = False
    disable_global: bool = False
    disable_st_bias: bool = False
    disable_context: bool = False
    disable_tail_loss: bool = False

    def validate(self) -> None:
        problems = []
        if self.hidden_dim < 1 or self.hidden_dim % self.heads:
            problems.append(f"hidden_dim {self.hidden_dim} must be positive and divisible by heads {self.heads}")
        if self.edge_dim % 2:
            problems.append(f"edge_dim {self.edge_dim} must be even")
        for name in ("poi_dim", "cat_dim", "time_dim", "user_dim", "layers", "heads",
                     "gcn_layers", "ffn_mult", "max_hops", "max_degree", "max_position",
                     "freq_buckets", "edge_count_buckets", "max_epochs", "patience",
                     "batch_size", "threads", "min_session_len", "topk"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.ffn_activation not in ("gelu", "silu"):
            problems.append(f"ffn_activation must be gelu or silu, got {self.ffn_activation!r}")
        if self.spatial_threshold_km <= 0:
            problems.append("spatial_threshold_km must be positive")
        if min(self.alpha, self.beta, self.lam) < 0 or self.tail_k < 1.0:
            problems.append("loss weights must be non-negative with tail_k >= 1")
        if self.lr0 < 0 or self.weight_decay < 0:
            problems.append("lr0 and weight_decay must be non-negative")
        if not 0.0 < self.split_ratio < 1.0:
            problems.append(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if not 0.0 <= self.val_fraction < 1.0:
            problems.append(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.early_stop_on not in ("val", "train"):
            problems.append(f"early_stop_on must be val or train, got {self.early_stop_on!r}")
        if self.eval_mode not in ("prefix", "last"):
            problems.append(f"eval_mode must be prefix or last, got {self.eval_mode!r}")
        if problems:
            raise ConfigError("; ".join(problems))

    def digest(self) -> str:
        """Short stable hash of the full configuration."""
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if kind == "int":
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if kind == "float":
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return raw


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config-file values, then overrides; problems reported together."""
    values: dict = {}
    problems: list[str] = []
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                problems.append(f"{path}:{lineno}: expected key = value")
                continue
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in _FIELD_TYPES:
                problems.append(f"{path}:{lineno}: unknown key {key!r}")
                continue
            try:
                values[key] = _coerce(key, raw)
            except ConfigError as exc:
                problems.append(f"{path}:{lineno}: {exc}")
    if problems:
        raise ConfigError("; ".join(problems))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg
