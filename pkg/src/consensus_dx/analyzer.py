"""Post-hoc analysis of a combination sweep.

Splits scored combinations into high/low accuracy sides, profiles how often
each turn appears on either side, measures overlap among the top
combinations, picks an ensemble and evaluates it on held-out items.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import PairKey
from .evaluator import CombinationScore, Scorer, sort_scores

logger = logging.getLogger(__name__)

DEFAULT_PARTITION_THRESHOLD = 0.60
DEFAULT_TOP_N = 10


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    threshold: float
    high: tuple[CombinationScore, ...]
    low: tuple[CombinationScore, ...]


@dataclass(frozen=True)
class TurnFrequency:
    side: str
    counts: dict[int, int]
    n_combinations: int = 0


@dataclass(frozen=True)
class IntersectionMatrix:
    combos: tuple[CombinationScore, ...]
    cells: tuple[tuple[int, ...], ...]


def partition(scores: Iterable[CombinationScore], threshold: float = DEFAULT_PARTITION_THRESHOLD) -> Partition:
    """Accuracy >= threshold goes high, everything else low."""
    scores = list(scores)
    if not scores:
        raise AnalysisError("cannot partition an empty score list")
    high = tuple(s for s in scores if s.accuracy >= threshold)
    low = tuple(s for s in scores if s.accuracy < threshold)
    return Partition(threshold, high, low)


def count_turns(combos: Iterable[CombinationScore], side: str = "all") -> TurnFrequency:
    counts: Counter[int] = Counter()
    n = 0
    for combo in combos:
        counts.update(combo.turns)
        n += 1
    return TurnFrequency(side, dict(sorted(counts.items())), n)


def turn_frequency(part: Partition, side: str) -> TurnFrequency:
    if side not in ("high", "low"):
        raise ValueError(f"side must be 'high' or 'low', got {side!r}")
    combos = part.high if side == "high" else part.low
    if not combos:
        logger.warning("%s side of the partition at %.2f is empty", side, part.threshold)
    return count_turns(combos, side)


def intersection_matrix(scores: Sequence[CombinationScore], top_n: int = DEFAULT_TOP_N) -> IntersectionMatrix:
    """Pairwise shared-turn counts among the first ``top_n`` scores (sweep order)."""
    if top_n < 1:
        raise AnalysisError("top_n must be at least 1")
    if top_n > len(scores):
        raise AnalysisError(f"top_n={top_n} exceeds the {len(scores)} available scores")
    combos = tuple(scores[:top_n])
    sets = [set(c.turns) for c in combos]
    cells = tuple(tuple(len(a & b) for b in sets) for a in sets)
    return IntersectionMatrix(combos, cells)


def _top_k(counts: dict[int, int], k: int) -> tuple[int, ...]:
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return tuple(sorted(t for t, _ in ranked[:k]))


def agreed_turns(top_scores: Sequence[CombinationScore], k: int = 5) -> list[int]:
    """The k turns that appear most often across the given top combinations."""
    if not top_scores:
        raise AnalysisError("agreed_turns needs at least one combination")
    return list(_top_k(count_turns(top_scores).counts, k))


def select_ensemble(frequency: TurnFrequency, k: int = 5) -> tuple[int, ...]:
    nonzero = {t: c for t, c in frequency.counts.items() if c > 0}
    if len(nonzero) < k:
        raise AnalysisError(f"only {len(nonzero)} turns have nonzero frequency; need {k}")
    return _top_k(nonzero, k)


@dataclass(frozen=True)
class TestEvaluation:
    ensemble: tuple[int, ...]
    ensemble_score: CombinationScore
    best_single: CombinationScore
    singles: tuple[CombinationScore, ...]


def evaluate_on_test(scorer: Scorer, ensemble: Sequence[int], test_keys: Sequence[PairKey]) -> TestEvaluation:
    """Ensemble vote accuracy and every single-turn accuracy on the same keys."""
    ensemble_score = scorer.combo_accuracy(ensemble, test_keys, "test")
    singles = tuple(scorer.single_accuracy(t, test_keys, "test") for t in sorted(scorer.matrix.turns))
    best_single = sort_scores(singles)[0]
    return TestEvaluation(tuple(sorted(ensemble)), ensemble_score, best_single, singles)


def _score_dict(score: CombinationScore) -> dict:
    return {
        "turns": list(score.turns),
        "correct": score.correct_count,
        "total": score.total,
        "accuracy": round(score.accuracy, 6),
    }


@dataclass
class AnalysisReport:
    train_best_single: CombinationScore
    train_singles: list[CombinationScore]
    train_best_combo: CombinationScore
    train_worst_combo: CombinationScore
    n_combinations: int
    k: int
    partition: Partition
    frequencies: dict[str, TurnFrequency]
    intersection: IntersectionMatrix
    agreed: list[int]
    ensemble: tuple[int, ...]
    ensemble_source: str
    test: TestEvaluation
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "train": {
                "best_single": _score_dict(self.train_best_single),
                "singles": [_score_dict(s) for s in self.train_singles],
                "best_combo": _score_dict(self.train_best_combo),
                "worst_combo": _score_dict(self.train_worst_combo),
                "n_combinations": self.n_combinations,
                "k": self.k,
            },
            "partition": {
                "threshold": self.partition.threshold,
                "high": len(self.partition.high),
                "low": len(self.partition.low),
            },
            "turn_frequency": {
                side: {str(t): c for t, c in f.counts.items()} for side, f in self.frequencies.items()
            },
            "intersection": {
                "combos": [list(c.turns) for c in self.intersection.combos],
                "cells": [list(row) for row in self.intersection.cells],
            },
            "agreed_turns": self.agreed,
            "selected_ensemble": list(self.ensemble),
            "ensemble_source": self.ensemble_source,
            "test": {
                "ensemble": _score_dict(self.test.ensemble_score),
                "best_single": _score_dict(self.test.best_single),
                "singles": [_score_dict(s) for s in self.test.singles],
                "ensemble_test_accuracy": round(self.test.ensemble_score.accuracy, 6),
                "best_single_test_accuracy": round(self.test.best_single.accuracy, 6),
            },
            "flags": dict(sorted(self.flags.items())),
        }


def analyze(
    scores: Sequence[CombinationScore],
    scorer: Scorer,
    train_keys: Sequence[PairKey],
    test_keys: Sequence[PairKey],
    threshold: float = DEFAULT_PARTITION_THRESHOLD,
    top_n: int = DEFAULT_TOP_N,
    ensemble: Sequence[int] | None = None,
) -> AnalysisReport:
    """Full post-hoc analysis over a sweep (``scores``) computed on ``train_keys``."""
    scores = sort_scores(scores)
    if not scores:
        raise AnalysisError("no combination scores to analyze")
    k = scores[0].k
    flags: dict = {}

    singles = [scorer.single_accuracy(t, train_keys, "train") for t in sorted(scorer.matrix.turns)]
    part = partition(scores, threshold)
    freqs = {"high": turn_frequency(part, "high"), "low": turn_frequency(part, "low")}
    inter = intersection_matrix(scores, min(top_n, len(scores)))
    agreed = agreed_turns(list(inter.combos), k)

    if ensemble is not None:
        chosen = tuple(sorted(ensemble))
        source = "explicit"
    elif part.high and len([c for c in freqs["high"].counts.values() if c > 0]) >= k:
        chosen = select_ensemble(freqs["high"], k)
        source = "high_side_frequency"
    else:
        logger.warning("high side cannot supply %d turns; selecting by overall frequency", k)
        chosen = select_ensemble(count_turns(scores), k)
        source = "overall_frequency_fallback"
        flags["selection_fallback"] = True

    test = evaluate_on_test(scorer, chosen, test_keys)
    return AnalysisReport(
        train_best_single=sort_scores(singles)[0],
        train_singles=singles,
        train_best_combo=scores[0],
        train_worst_combo=scores[-1],
        n_combinations=len(scores),
        k=k,
        partition=part,
        frequencies=freqs,
        intersection=inter,
        agreed=agreed,
        ensemble=chosen,
        ensemble_source=source,
        test=test,
        flags=flags,
    )


def write_frequency_csv(frequencies: dict[str, TurnFrequency], turns: Sequence[int], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["side", "turn_id", "count"])
        for side in ("high", "low"):
            counts = frequencies[side].counts
            for t in sorted(turns):
                writer.writerow([side, t, counts.get(t, 0)])


def write_intersection_csv(matrix: IntersectionMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "value"])
        for i, row in enumerate(matrix.cells):
            for j, value in enumerate(row):
                writer.writerow([i, j, value])


def write_report(report: AnalysisReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
