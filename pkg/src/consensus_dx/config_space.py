"""The decoding-parameter grid that defines each "turn" of the ensemble."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

TEMPERATURES = (0.1, 0.5, 0.95)
SUMMARY_LENGTHS = (2000, 4000)
TOP_PS = (0.1, 0.5, 0.9)


class Strategy(str, Enum):
    DETERMINISTIC = "Deterministic"
    BALANCED = "Balanced"
    EXPLORATORY = "Exploratory"


@dataclass(frozen=True)
class TurnConfig:
    turn_id: int
    temperature: float
    top_p: float
    summary_length: int

    @property
    def triple(self) -> tuple[float, int, float]:
        """(temperature, summary_length, top_p), the column order of the results table."""
        return (self.temperature, self.summary_length, self.top_p)

    @property
    def strategy(self) -> Strategy:
        return strategy_of(self)


def full_grid(
    temperatures: Sequence[float] = TEMPERATURES,
    summary_lengths: Sequence[int] = SUMMARY_LENGTHS,
    top_ps: Sequence[float] = TOP_PS,
) -> list[TurnConfig]:
    """Every grid point, temperature outermost and top-p innermost; ids are 1-based positions."""
    product = itertools.product(temperatures, summary_lengths, top_ps)
    return [
        TurnConfig(turn_id=i, temperature=t, top_p=p, summary_length=length)
        for i, (t, length, p) in enumerate(product, start=1)
    ]


def strategy_of(config: TurnConfig) -> Strategy:
    # The grid's three temperatures map exactly; the cut points only matter
    # for override grids with other values.
    t = config.temperature
    if t < 0.3:
        return Strategy.DETERMINISTIC
    if t < 0.75:
        return Strategy.BALANCED
    return Strategy.EXPLORATORY


def turn_by_id(grid: Sequence[TurnConfig], turn_id: int) -> TurnConfig:
    for config in grid:
        if config.turn_id == turn_id:
            return config
    raise KeyError(f"unknown turn id {turn_id}")


def turn_id_of(grid: Sequence[TurnConfig], triple: tuple[float, int, float]) -> int:
    for config in grid:
        if config.triple == triple:
            return config.turn_id
    raise KeyError(f"no turn with (temperature, summary_length, top_p) = {triple}")


def grid_hash(grid: Sequence[TurnConfig]) -> str:
    payload = [[c.turn_id, c.temperature, c.top_p, c.summary_length] for c in grid]
    return hashlib.sha256(json.dumps(payload).encode()).hexdigest()


@dataclass(frozen=True)
class GridSpec:
    configs: tuple[TurnConfig, ...]
    # "characters" follows the methods text; "tokens" is kept for sensitivity runs.
    summary_unit: str = "characters"

    @property
    def summary_lengths(self) -> list[int]:
        return sorted({c.summary_length for c in self.configs})


def load_grid(path: str | Path | None = None) -> GridSpec:
    """Read a grid override file, or return the default grid when ``path`` is None.

    The override is a JSON object with optional keys ``temperature``,
    ``top_p``, ``summary_length`` (lists) and ``summary_unit``.
    """
    if path is None:
        return GridSpec(tuple(full_grid()))
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    temperatures = [float(v) for v in data.get("temperature", TEMPERATURES)]
    lengths = [int(v) for v in data.get("summary_length", SUMMARY_LENGTHS)]
    top_ps = [float(v) for v in data.get("top_p", TOP_PS)]
    unit = data.get("summary_unit", "characters")
    if unit not in ("characters", "tokens"):
        raise ValueError(f"summary_unit must be 'characters' or 'tokens', got {unit!r}")
    for name, values in (("temperature", temperatures), ("summary_length", lengths), ("top_p", top_ps)):
        if not values or len(set(values)) != len(values):
            raise ValueError(f"grid axis {name} must be non-empty without duplicates")
    if not all(0 <= t <= 1 for t in temperatures):
        raise ValueError("temperature values must lie in [0, 1]")
    if not all(0 < p <= 1 for p in top_ps):
        raise ValueError("top_p values must lie in (0, 1]")
    if not all(n > 0 for n in lengths):
        raise ValueError("summary lengths must be positive")
    return GridSpec(tuple(full_grid(temperatures, lengths, top_ps)), unit)
