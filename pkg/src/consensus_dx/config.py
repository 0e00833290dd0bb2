"""Declarative run configuration shared by every CLI stage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path


@dataclass
class SyntheticSettings:
    seed: int = 0
    confuser_mode: str = "binary"
    default_accuracy: float = 0.6
    per_turn_accuracy: dict[str, float] = field(default_factory=dict)


@dataclass
class ProviderSettings:
    kind: str = "synthetic"  # http | replay | synthetic
    base_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-3.5-turbo"
    rate_limit_per_minute: float = 60.0
    max_attempts: int = 5
    base_delay: float = 0.5
    timeout: float = 60.0
    workers: int = 4
    replay_dir: str | None = None
    synthetic: SyntheticSettings = field(default_factory=SyntheticSettings)


@dataclass
class SplitSettings:
    train_fraction: float = 0.6
    seed: int = 0
    granularity: str = "pair"


@dataclass
class EvaluationSettings:
    threshold: float = 0.60  # fuzzy-match and vote-clustering similarity
    partition_threshold: float = 0.60
    k: int = 5
    top_n: int = 10
    expansion_map: str | None = None
    strict_removal: bool = False
    exact_vote: bool = False


@dataclass
class RunConfig:
    corpus: str | None = None
    output_dir: str = "consensus_dx_out"
    cache_dir: str | None = None
    grid: str | None = None
    allow_partial: bool = False
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    split: SplitSettings = field(default_factory=SplitSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    def validate(self) -> None:
        if self.provider.kind not in ("http", "replay", "synthetic"):
            raise ValueError(f"unknown provider kind {self.provider.kind!r}")
        if self.split.granularity not in ("pair", "note"):
            raise ValueError(f"unknown split granularity {self.split.granularity!r}")
        if not 0 < self.split.train_fraction <= 1:
            raise ValueError("split.train_fraction must lie in (0, 1]")
        ev = self.evaluation
        if not 0 <= ev.threshold <= 1 or not 0 <= ev.partition_threshold <= 1:
            raise ValueError("thresholds must lie in [0, 1]")
        if ev.k < 1 or ev.top_n < 1:
            raise ValueError("k and top_n must be positive")
        if self.provider.synthetic.confuser_mode not in ("binary", "distinct"):
            raise ValueError("synthetic.confuser_mode must be 'binary' or 'distinct'")
        if self.provider.workers < 1 or self.provider.max_attempts < 1:
            raise ValueError("workers and max_attempts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"{where or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config key {where + key!r}")
        default = known[key].default_factory() if callable(known[key].default_factory) else None
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{where}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


_PATH_KEYS = ("corpus", "output_dir", "cache_dir", "grid")


def load_run_config(path: str | Path | None) -> RunConfig:
    """Parse a RunConfig JSON file; relative paths resolve against its directory."""
    if path is None:
        return RunConfig()
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(data, dict) and any(k in data for k in ("api_key", "CONSENSUS_DX_API_KEY")):
        raise ValueError("API keys are read from the environment only, never from config files")
    config = _build(RunConfig, data, "")
    base = path.parent
    for key in _PATH_KEYS:
        value = getattr(config, key)
        if value is not None and not Path(value).is_absolute():
            setattr(config, key, str(base / value))
    for section, key in (("provider", "replay_dir"), ("evaluation", "expansion_map")):
        obj = getattr(config, section)
        value = getattr(obj, key)
        if value is not None and not Path(value).is_absolute():
            setattr(obj, key, str(base / value))
    return config
