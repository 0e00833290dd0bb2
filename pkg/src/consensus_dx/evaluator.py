"""Normalization, fuzzy matching, plurality voting and accuracy scoring."""

from __future__ import annotations

import csv
import functools
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import PairKey
from .predictor import PredictionMatrix

DEFAULT_THRESHOLD = 0.60

DEFAULT_EXPANSIONS = {
    "chf": "congestive heart failure",
    "gerd": "gastroesophageal reflux disease",
    "htn": "hypertension",
    "afib": "atrial fibrillation",
    "copd": "chronic obstructive pulmonary disease",
    "cad": "coronary artery disease",
    "dvt": "deep vein thrombosis",
    "uti": "urinary tract infection",
}

_NON_ALNUM = re.compile(r"[^a-z0-9]+")
_SPACES = re.compile(r" +")


def _clean(text: str, strict_removal: bool = False) -> str:
    if strict_removal:
        # whitespace stays a separator; every other non-alphanumeric is deleted
        text = re.sub(r"[^a-z0-9\s]+", "", text)
    text = _NON_ALNUM.sub(" ", text)
    return _SPACES.sub(" ", text).strip()


class ExpansionMap:
    """Whole-word shorthand expansions applied after lowercasing.

    Word boundaries are defined by ``[a-z0-9]`` so that an expansion fires
    identically before and after punctuation is stripped.
    """

    def __init__(self, entries: Mapping[str, str] | None = None):
        entries = DEFAULT_EXPANSIONS if entries is None else entries
        self.entries: dict[str, str] = {}
        for key, value in entries.items():
            k = _clean(key.lower())
            if not k:
                raise ValueError(f"empty expansion key {key!r}")
            if k in self.entries:
                raise ValueError(f"duplicate expansion key {k!r}")
            self.entries[k] = _clean(value.lower())
        if self.entries:
            alternatives = "|".join(re.escape(k) for k in sorted(self.entries, key=len, reverse=True))
            self._pattern = re.compile(rf"(?<![a-z0-9])(?:{alternatives})(?![a-z0-9])")
        else:
            self._pattern = None
        for k, v in self.entries.items():
            if self._pattern is not None and self._pattern.search(v):
                raise ValueError(f"expansion of {k!r} contains another shorthand key")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExpansionMap":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError("expansion map file must hold a JSON object")
        return cls(data)

    def apply(self, text: str) -> str:
        if self._pattern is None:
            return text
        return self._pattern.sub(lambda m: self.entries[m.group(0)], text)


_DEFAULT_MAP = ExpansionMap()


def normalize(text: str, expansions: ExpansionMap | None = None, strict_removal: bool = False) -> str:
    """Lowercase, expand shorthand, turn non-alphanumerics into spaces, collapse whitespace.

    ``strict_removal`` deletes non-alphanumerics instead of spacing them out
    ("type-2" becomes "type2"). Expansion runs once more on the cleaned text
    so multi-word or punctuation-split shorthand is caught and the result is
    idempotent.
    """
    expansions = _DEFAULT_MAP if expansions is None else expansions
    text = _clean(expansions.apply(text.lower()), strict_removal)
    return _clean(expansions.apply(text))


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


@functools.lru_cache(maxsize=1 << 16)
def similarity(a: str, b: str) -> float:
    """Normalized Levenshtein similarity, 1 - distance / max(len).

    Memoized: ensemble answers repeat heavily across turns and items.
    """
    if a == b:
        return 1.0
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    # one rounding step, so exact ratios such as 3/5 compare equal to 0.6
    return (longest - levenshtein(a, b)) / longest


def is_match(prediction: str, truths: Sequence[str], threshold: float = DEFAULT_THRESHOLD) -> bool:
    if not truths:
        raise ValueError("truths must be non-empty")
    return any(similarity(prediction, t) >= threshold for t in truths)


@dataclass(frozen=True)
class VoteOutcome:
    item: PairKey | None
    winner: str
    cluster_sizes: dict[str, int]
    tie_broken: bool
    correct: bool
    clusters: tuple[tuple[int, ...], ...] = ()
    abstained: bool = False

    @property
    def winning_turns(self) -> tuple[int, ...]:
        if not self.clusters:
            return ()
        best = max(len(c) for c in self.clusters)
        return next(c for c in self.clusters if len(c) == best)


def _components(turns: Sequence[int], linked) -> list[list[int]]:
    """Connected components of the link graph, each sorted, ordered by smallest member."""
    parent = {t: t for t in turns}

    def find(t):
        while parent[t] != t:
            parent[t] = parent[parent[t]]
            t = parent[t]
        return t

    for a, b in itertools.combinations(turns, 2):
        if linked(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for t in sorted(turns):
        groups.setdefault(find(t), []).append(t)
    return sorted(groups.values(), key=lambda g: g[0])


def majority_vote(
    votes: Mapping[int, str | None],
    threshold: float = DEFAULT_THRESHOLD,
    truths: Sequence[str] | None = None,
    item: PairKey | None = None,
    exact: bool = False,
) -> VoteOutcome:
    """Plurality vote over fuzzy-equivalence clusters of normalized predictions.

    ``votes`` maps turn id to a normalized prediction, or None for an error
    cell; error cells never join a cluster. Clusters are single-linkage
    (connected components of the ``similarity >= threshold`` graph); the
    representative of a cluster is its lowest-turn member. The largest
    cluster wins, ties going to the cluster with the lowest founding turn.
    With zero usable votes the outcome abstains and counts as incorrect.
    """
    ok = {t: v for t, v in votes.items() if v is not None}
    if not ok:
        return VoteOutcome(item, "", {}, False, False, (), abstained=True)

    if exact:
        linked = lambda a, b: ok[a] == ok[b]  # noqa: E731
    else:
        linked = lambda a, b: similarity(ok[a], ok[b]) >= threshold  # noqa: E731
    groups = _components(sorted(ok), linked)
    best = max(len(g) for g in groups)
    leaders = [g for g in groups if len(g) == best]
    winner_group = leaders[0]
    winner = ok[winner_group[0]]
    correct = truths is not None and is_match(winner, truths, threshold)
    return VoteOutcome(
        item=item,
        winner=winner,
        cluster_sizes={ok[g[0]]: len(g) for g in groups},
        tie_broken=len(leaders) > 1,
        correct=correct,
        clusters=tuple(tuple(g) for g in groups),
    )


@dataclass(frozen=True, order=True)
class CombinationScore:
    turns: tuple[int, ...]
    split_side: str
    correct_count: int
    total: int

    def __post_init__(self):
        if list(self.turns) != sorted(set(self.turns)):
            raise ValueError(f"turns must be strictly increasing: {self.turns}")
        if self.total < 1 or not 0 <= self.correct_count <= self.total:
            raise ValueError("need 0 <= correct_count <= total and total >= 1")

    @property
    def accuracy(self) -> float:
        return self.correct_count / self.total

    @property
    def k(self) -> int:
        return len(self.turns)


@dataclass
class Scorer:
    """Pre-normalized view of a prediction matrix for repeated scoring.

    Per item, the pairwise fuzzy links between turns and each turn's match
    against the ground truth are computed once, so scoring thousands of turn
    subsets only needs cheap graph work.
    """

    matrix: PredictionMatrix
    truths: Mapping[PairKey, Sequence[str]]
    threshold: float = DEFAULT_THRESHOLD
    expansions: ExpansionMap | None = None
    strict_removal: bool = False
    exact_vote: bool = False
    _norm: dict = field(default_factory=dict, init=False, repr=False)
    _truths: dict = field(default_factory=dict, init=False, repr=False)
    _links: dict = field(default_factory=dict, init=False, repr=False)
    _hits: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]")

    def _norm_text(self, text: str) -> str:
        return normalize(text, self.expansions, self.strict_removal)

    def normalized(self, turn_id: int, key: PairKey) -> str | None:
        cell = (turn_id, key)
        if cell not in self._norm:
            try:
                pred = self.matrix.get(turn_id, key)
            except KeyError:
                raise KeyError(f"matrix has no cell for turn {turn_id}, item {key}") from None
            self._norm[cell] = self._norm_text(pred.text) if pred.ok else None
        return self._norm[cell]

    def normalized_truths(self, key: PairKey) -> tuple[str, ...]:
        if key not in self._truths:
            self._truths[key] = tuple(self._norm_text(t) for t in self.truths[key])
        return self._truths[key]

    def hit(self, turn_id: int, key: PairKey) -> bool:
        cell = (turn_id, key)
        if cell not in self._hits:
            pred = self.normalized(turn_id, key)
            self._hits[cell] = pred is not None and is_match(pred, self.normalized_truths(key), self.threshold)
        return self._hits[cell]

    def _item(self, key: PairKey) -> tuple[int, list[int], list[bool]]:
        """(usable-vote mask, adjacency masks, per-turn hits) over turn positions."""
        if key not in self._links:
            turns = self._turns
            preds = [self.normalized(t, key) for t in turns]
            ok_mask = sum(1 << i for i, p in enumerate(preds) if p is not None)
            adj = [0] * len(turns)
            for i, j in itertools.combinations(range(len(turns)), 2):
                if preds[i] is None or preds[j] is None:
                    continue
                if self.exact_vote:
                    linked = preds[i] == preds[j]
                else:
                    linked = similarity(preds[i], preds[j]) >= self.threshold
                if linked:
                    adj[i] |= 1 << j
                    adj[j] |= 1 << i
            hits = [self.hit(t, key) for t in turns]
            self._links[key] = (ok_mask, adj, hits)
        return self._links[key]

    def vote(self, turns: Iterable[int], key: PairKey) -> VoteOutcome:
        turns = sorted(set(turns))
        return majority_vote(
            {t: self.normalized(t, key) for t in turns},
            self.threshold,
            self.normalized_truths(key),
            item=key,
            exact=self.exact_vote,
        )

    def _vote_correct(self, mask: int, key: PairKey) -> bool:
        # Same decision as majority_vote(): components in order of their lowest
        # turn, strict ">" so ties stay with the earlier founder.
        ok_mask, adj, hits = self._item(key)
        remaining = mask & ok_mask
        best_size, best_rep = 0, -1
        while remaining:
            low = remaining & -remaining
            comp = frontier = low
            while frontier:
                grown = 0
                f = frontier
                while f:
                    bit = f & -f
                    grown |= adj[bit.bit_length() - 1]
                    f ^= bit
                frontier = grown & remaining & ~comp
                comp |= frontier
            size = bin(comp).count("1")
            if size > best_size:
                best_size, best_rep = size, low.bit_length() - 1
            remaining &= ~comp
        return best_rep >= 0 and hits[best_rep]

    @property
    def _turns(self) -> list[int]:
        return sorted(self.matrix.turns)

    def _mask(self, turns: Sequence[int]) -> int:
        position = {t: i for i, t in enumerate(self._turns)}
        mask = 0
        for t in turns:
            if t not in position:
                raise KeyError(f"turn {t} not in matrix")
            mask |= 1 << position[t]
        return mask

    def single_accuracy(self, turn_id: int, keys: Sequence[PairKey], side: str = "train") -> CombinationScore:
        if not keys:
            raise ValueError("empty key set")
        correct = sum(self.hit(turn_id, k) for k in keys)
        return CombinationScore((turn_id,), side, correct, len(keys))

    def combo_accuracy(self, turns: Iterable[int], keys: Sequence[PairKey], side: str = "train") -> CombinationScore:
        turns = tuple(turns)
        if len(set(turns)) != len(turns):
            raise ValueError(f"duplicate turns in {turns}")
        turns = tuple(sorted(turns))
        if not keys:
            raise ValueError("empty key set")
        mask = self._mask(turns)
        correct = sum(self._vote_correct(mask, k) for k in keys)
        return CombinationScore(turns, side, correct, len(keys))

    def sweep(self, k: int, keys: Sequence[PairKey], side: str = "train") -> list[CombinationScore]:
        turns = sorted(self.matrix.turns)
        if not 1 <= k <= len(turns):
            raise ValueError(f"k={k} must lie in [1, {len(turns)}]")
        scores = [self.combo_accuracy(c, keys, side) for c in enumerate_combinations(turns, k)]
        return sort_scores(scores)


def sort_scores(scores: Iterable[CombinationScore]) -> list[CombinationScore]:
    """Accuracy descending, then turn tuple ascending."""
    return sorted(scores, key=lambda s: (-s.accuracy, s.turns))


def n_combinations(n: int, k: int) -> int:
    return math.comb(n, k)


def enumerate_combinations(turns: Iterable[int], k: int) -> list[tuple[int, ...]]:
    """Every k-subset of ``turns`` as a sorted tuple, in lexicographic order."""
    turns = sorted(set(turns))
    if not 1 <= k <= len(turns):
        raise ValueError(f"k={k} must lie in [1, {len(turns)}]")
    return list(itertools.combinations(turns, k))


def single_accuracy(matrix, turn_id, split_keys, truths, threshold=DEFAULT_THRESHOLD, side="train", **opts) -> CombinationScore:
    return Scorer(matrix, truths, threshold, **opts).single_accuracy(turn_id, list(split_keys), side)


def combo_accuracy(matrix, turns, split_keys, truths, threshold=DEFAULT_THRESHOLD, side="train", **opts) -> CombinationScore:
    return Scorer(matrix, truths, threshold, **opts).combo_accuracy(turns, list(split_keys), side)


def sweep_combinations(matrix, k, split_keys, truths, threshold=DEFAULT_THRESHOLD, side="train", **opts) -> list[CombinationScore]:
    return Scorer(matrix, truths, threshold, **opts).sweep(k, list(split_keys), side)


SCORE_FIELDS = ["turns", "split", "correct", "total", "accuracy"]


def write_scores_csv(scores: Iterable[CombinationScore], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_FIELDS)
        for s in scores:
            writer.writerow([";".join(map(str, s.turns)), s.split_side, s.correct_count, s.total, f"{s.accuracy:.6f}"])


def read_scores_csv(path: str | Path) -> list[CombinationScore]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            CombinationScore(
                tuple(int(t) for t in row["turns"].split(";")),
                row["split"],
                int(row["correct"]),
                int(row["total"]),
            )
            for row in csv.DictReader(fh)
        ]
