"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

METHODS = ("fedsheafhn", "fedavg", "local_only", "onehot_hn")
SHEAF_MODES = ("on", "off", "plain_gcn")
ATTACKS = ("none", "same_value", "gaussian")


@dataclass
class RunConfig:
    # federation
    rounds: int = 50
    clients: int = 10
    local_epochs: int = 5
    client_lr: float = 0.03
    server_lr: float = 1e-4
    seed: int = 0
    # models
    hidden_dim: int = 16
    embed_dim: int = 16
    stalk_dim: int = 2
    sheaf_steps: int = 2
    sigma: str = "elu"
    share_sheaf_weights: bool = False
    laplacian_eps: float = 1e-8
    hn_hidden: int = 128
    generated: str = "weights"
    literal_delta_sign: bool = False
    # method and ablations
    method: str = "fedsheafhn"
    sheaf: str = "on"
    attention: bool = True
    dynamic_embedding: bool = True
    embedding_refresh_period: int = 1
    # data
    scenario: str = "non_overlapping"
    samples_per_part: int = 5
    sample_fraction: float = 0.5
    nodes_per_block: int = 40
    num_blocks: int = 5
    p_in: float = 0.15
    p_out: float = 0.01
    feature_dim: int = 8
    feature_noise: float = 1.0
    label_skew: float = 0.8
    dataset_path: str = ""
    partition_path: str = ""
    # attacks and onboarding
    attack_kind: str = "none"
    attack_tau: float = 0.0
    attack_ratio: float = 0.0
    new_ratio: float = 0.0
    # output
    out: str = "runs/default"

    def validate(self):
        positive = ("rounds", "clients", "local_epochs", "hidden_dim", "embed_dim", "stalk_dim", "sheaf_steps",
                    "hn_hidden", "embedding_refresh_period", "samples_per_part")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.sheaf not in SHEAF_MODES:
            raise ConfigError(f"sheaf must be one of {SHEAF_MODES}")
        if self.attack_kind not in ATTACKS:
            raise ConfigError(f"attack_kind must be one of {ATTACKS}")
        if self.generated not in ("weights", "all"):
            raise ConfigError("generated must be 'weights' or 'all'")
        if self.scenario not in ("non_overlapping", "overlapping"):
            raise ConfigError("scenario must be 'non_overlapping' or 'overlapping'")
        if self.embed_dim != self.hidden_dim:
            raise ConfigError("embed_dim must equal hidden_dim (embeddings are mean hidden activations)")
        if self.embed_dim % self.stalk_dim:
            raise ConfigError("embed_dim must be divisible by stalk_dim")
        if self.scenario == "overlapping" and self.clients % self.samples_per_part:
            raise ConfigError("clients must be a multiple of samples_per_part in the overlapping scenario")
        for name in ("attack_ratio", "new_ratio"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.attack_tau < 0 or self.client_lr < 0 or self.server_lr < 0:
            raise ConfigError("learning rates and attack_tau must be non-negative")
        return self

    @property
    def num_parts(self):
        return self.clients // self.samples_per_part if self.scenario == "overlapping" else self.clients

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_value(key, raw):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_text(text, base=None):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = parse_value(key.strip(), raw)
    return (base or RunConfig()).replace(**values)


def load(path=None, overrides=(), **kwargs):
    """Defaults <- config file <- ``key=value`` overrides <- keyword arguments."""
    cfg = RunConfig()
    if path:
        try:
            cfg = parse_text(Path(path).read_text(), cfg)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        cfg = cfg.replace(**{key.strip(): parse_value(key.strip(), raw)})
    return cfg.replace(**kwargs).validate()
