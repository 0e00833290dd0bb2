"""Annotated medication-diagnosis corpus: loading, validation and splitting.

The corpus file is line-delimited JSON, one clinical note per line::

    {"note_id": "n01", "text": "...", "medications": ["Enalapril Maleate"],
     "ground_truth": [{"medication": "Enalapril Maleate",
                       "diagnoses": ["hypertension"]}]}
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable

PairKey = tuple[str, str]  # (note_id, medication)


class CorpusError(ValueError):
    """Raised when a corpus or split file cannot be parsed or fails validation."""


@dataclass(frozen=True)
class ClinicalNote:
    note_id: str
    text: str
    medications: tuple[str, ...]


@dataclass(frozen=True)
class GroundTruthPair:
    note_id: str
    medication: str
    accepted_diagnoses: tuple[str, ...]

    @property
    def key(self) -> PairKey:
        return (self.note_id, self.medication)


@dataclass(frozen=True)
class Corpus:
    notes: tuple[ClinicalNote, ...]
    pairs: tuple[GroundTruthPair, ...]

    def note(self, note_id: str) -> ClinicalNote:
        for note in self.notes:
            if note.note_id == note_id:
                return note
        raise KeyError(note_id)

    def keys(self) -> list[PairKey]:
        return sorted(p.key for p in self.pairs)

    def truths(self) -> dict[PairKey, tuple[str, ...]]:
        return {p.key: p.accepted_diagnoses for p in self.pairs}

    def digest(self) -> str:
        """SHA-256 over the canonical serialization; used in run manifests."""
        blob = "\n".join(_dump_line(n, self) for n in self.notes)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Granularity(str, Enum):
    PAIR = "pair"
    NOTE = "note"


@dataclass(frozen=True)
class DatasetSplit:
    train_keys: frozenset[PairKey]
    test_keys: frozenset[PairKey]
    seed: int
    train_fraction: float
    granularity: Granularity

    def keys(self, side: str) -> list[PairKey]:
        if side == "train":
            return sorted(self.train_keys)
        if side == "test":
            return sorted(self.test_keys)
        raise ValueError(f"unknown split side {side!r}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "granularity": self.granularity.value,
            "train": [list(k) for k in sorted(self.train_keys)],
            "test": [list(k) for k in sorted(self.test_keys)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSplit":
        try:
            split = cls(
                train_keys=frozenset(_as_key(k) for k in data["train"]),
                test_keys=frozenset(_as_key(k) for k in data["test"]),
                seed=int(data["seed"]),
                train_fraction=float(data["train_fraction"]),
                granularity=Granularity(data["granularity"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"malformed split: {exc}") from exc
        if split.train_keys & split.test_keys:
            raise CorpusError("malformed split: train and test keys overlap")
        return split


def _as_key(item) -> PairKey:
    note_id, medication = item
    return (str(note_id), str(medication))


def _parse_note(record: dict) -> tuple[ClinicalNote, list[GroundTruthPair]]:
    note_id = record["note_id"]
    text = record["text"]
    medications = record["medications"]
    if not isinstance(note_id, str) or not isinstance(text, str):
        raise TypeError("note_id and text must be strings")
    if not isinstance(medications, list) or not all(isinstance(m, str) for m in medications):
        raise TypeError("medications must be a list of strings")
    note = ClinicalNote(note_id, text, tuple(medications))
    pairs = []
    for gt in record.get("ground_truth", []):
        diagnoses = gt["diagnoses"]
        if not isinstance(diagnoses, list) or not all(isinstance(d, str) for d in diagnoses):
            raise TypeError("diagnoses must be a list of strings")
        pairs.append(GroundTruthPair(note_id, gt["medication"], tuple(diagnoses)))
    return note, pairs


def validate_corpus(corpus: Corpus) -> None:
    """Check every corpus invariant, raising CorpusError on the first violation."""
    if not corpus.notes:
        raise CorpusError("empty corpus")
    meds_by_note: dict[str, set[str]] = {}
    for note in corpus.notes:
        if note.note_id in meds_by_note:
            raise CorpusError(f"duplicate note_id {note.note_id!r}")
        if not note.note_id:
            raise CorpusError("empty note_id")
        if not note.text:
            raise CorpusError(f"note {note.note_id!r} has empty text")
        if not note.medications:
            raise CorpusError(f"note {note.note_id!r} has no medications")
        if len(set(note.medications)) != len(note.medications):
            raise CorpusError(f"note {note.note_id!r} lists a medication twice")
        meds_by_note[note.note_id] = set(note.medications)

    seen: set[PairKey] = set()
    for pair in corpus.pairs:
        if pair.key in seen:
            raise CorpusError(f"duplicate ground-truth pair {pair.key!r}")
        seen.add(pair.key)
        if pair.medication not in meds_by_note.get(pair.note_id, ()):
            raise CorpusError(
                f"ground-truth pair {pair.key!r} references a medication "
                "absent from its note"
            )
        if not pair.accepted_diagnoses or not all(pair.accepted_diagnoses):
            raise CorpusError(f"ground-truth pair {pair.key!r} has no diagnoses")


def load_corpus(path: str | Path) -> Corpus:
    notes: list[ClinicalNote] = []
    pairs: list[GroundTruthPair] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                note, note_pairs = _parse_note(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record ({exc})") from exc
            notes.append(note)
            pairs.extend(note_pairs)
    corpus = Corpus(tuple(notes), tuple(pairs))
    validate_corpus(corpus)
    return corpus


def _dump_line(note: ClinicalNote, corpus: Corpus) -> str:
    record = {
        "note_id": note.note_id,
        "text": note.text,
        "medications": list(note.medications),
        "ground_truth": [
            {"medication": p.medication, "diagnoses": list(p.accepted_diagnoses)}
            for p in corpus.pairs
            if p.note_id == note.note_id
        ],
    }
    return json.dumps(record, ensure_ascii=False)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for note in corpus.notes:
            fh.write(_dump_line(note, corpus) + "\n")


def _shuffled(units: Iterable, seed: int) -> list:
    # Fisher-Yates via random.Random.shuffle over lexicographically sorted units.
    ordered = sorted(units)
    random.Random(seed).shuffle(ordered)
    return ordered


def split_corpus(
    corpus: Corpus,
    train_fraction: float = 0.6,
    seed: int = 0,
    granularity: Granularity | str = Granularity.PAIR,
) -> DatasetSplit:
    """Seeded train/test split at pair or note granularity.

    The train side receives ``floor(train_fraction * n_units)`` units taken
    from the front of the shuffled order.
    """
    if not 0 < train_fraction <= 1:
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    granularity = Granularity(granularity)
    # Decimal reading of the fraction, so 0.29 * 100 floors to 29, not 28.
    ratio = Fraction(str(train_fraction))
    keys = [p.key for p in corpus.pairs]

    if granularity is Granularity.PAIR:
        units = _shuffled(keys, seed)
        n_train = math.floor(ratio * len(units))
        train = frozenset(units[:n_train])
    else:
        units = _shuffled({k[0] for k in keys}, seed)
        n_train = math.floor(ratio * len(units))
        train_notes = set(units[:n_train])
        train = frozenset(k for k in keys if k[0] in train_notes)

    test = frozenset(keys) - train
    return DatasetSplit(train, test, seed, train_fraction, granularity)


def save_split(split: DatasetSplit, path: str | Path) -> None:
    Path(path).write_text(json.dumps(split.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_split(path: str | Path) -> DatasetSplit:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: malformed split file ({exc})") from exc
    return DatasetSplit.from_dict(data)
