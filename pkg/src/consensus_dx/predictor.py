"""Zero-shot diagnosis prediction over every (turn, note, medication) cell."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .config_space import TurnConfig
from .corpus import Corpus, PairKey
from .gateway import CompletionRequest, Gateway, GatewayError
from .summarizer import Summary

logger = logging.getLogger(__name__)

PREDICTION_PROMPT = (
    "Given a patient's clinical note: '{clinical_note}', and the medication: {medication}, "
    "what diagnosis is the most likely indication for this medication in this specific patient? "
    "In other words, what diagnosis is the medication treating in this context? "
    "Return the name of the diagnosis only."
)
PREDICTION_MAX_TOKENS = 64

CellKey = tuple[int, str, str]  # (turn_id, note_id, medication)


def prediction_prompt(clinical_note: str, medication: str) -> str:
    return PREDICTION_PROMPT.format(clinical_note=clinical_note, medication=medication)


def clean_output(text: str) -> str:
    """Strip surrounding whitespace and one trailing period."""
    text = text.strip()
    if text.endswith("."):
        text = text[:-1].rstrip()
    return text


@dataclass(frozen=True)
class RawPrediction:
    turn_id: int
    note_id: str
    medication: str
    text: str
    status: str = "ok"  # "ok" or "error: <message>"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def key(self) -> CellKey:
        return (self.turn_id, self.note_id, self.medication)

    def to_dict(self) -> dict:
        return {
            "turn_id": self.turn_id,
            "note_id": self.note_id,
            "medication": self.medication,
            "text": self.text,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RawPrediction":
        return cls(int(d["turn_id"]), d["note_id"], d["medication"], d["text"], d["status"])


def predict_one(
    summary: Summary,
    medication: str,
    config: TurnConfig,
    gateway: Gateway,
    model_name: str = "gpt-3.5-turbo",
) -> RawPrediction:
    if not medication:
        raise ValueError("medication must be non-empty")
    if summary.target_length != config.summary_length:
        raise ValueError(
            f"summary length {summary.target_length} does not match turn "
            f"{config.turn_id} ({config.summary_length})"
        )
    request = CompletionRequest(
        model_name=model_name,
        prompt=prediction_prompt(summary.text, medication),
        temperature=config.temperature,
        top_p=config.top_p,
        max_output_tokens=PREDICTION_MAX_TOKENS,
        metadata={
            "task": "predict",
            "turn_id": config.turn_id,
            "note_id": summary.note_id,
            "medication": medication,
        },
    )
    try:
        text = clean_output(gateway.complete(request).text)
    except GatewayError as exc:
        return RawPrediction(config.turn_id, summary.note_id, medication, "", f"error: {exc}")
    if not text:
        return RawPrediction(config.turn_id, summary.note_id, medication, "", "error: empty response")
    return RawPrediction(config.turn_id, summary.note_id, medication, text)


@dataclass
class PredictionMatrix:
    entries: dict[CellKey, RawPrediction]
    turns: list[int]
    provenance: dict = field(default_factory=dict)

    def get(self, turn_id: int, key: PairKey) -> RawPrediction:
        return self.entries[(turn_id, key[0], key[1])]

    def missing(self, keys: Sequence[PairKey]) -> list[CellKey]:
        return [(t, *k) for t in self.turns for k in keys if (t, *k) not in self.entries]

    def completion_report(self) -> dict[int, dict[str, int]]:
        report = {t: {"ok": 0, "error": 0} for t in self.turns}
        for (turn, _, _), pred in self.entries.items():
            if turn in report:
                report[turn]["ok" if pred.ok else "error"] += 1
        return report

    @property
    def error_count(self) -> int:
        return sum(not p.ok for p in self.entries.values())


def turn_file(directory: str | Path, turn_id: int) -> Path:
    return Path(directory) / f"turn_{turn_id}.jsonl"


def _read_turn_file(path: Path) -> dict[CellKey, RawPrediction]:
    cells: dict[CellKey, RawPrediction] = {}
    if not path.exists():
        return cells
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                pred = RawPrediction.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError):
                # a torn final line from an interrupted run
                logger.warning("skipping unreadable line in %s", path)
                continue
            cells[pred.key] = pred  # later lines supersede earlier ones
    return cells


def _compact(path: Path, cells: Mapping[CellKey, RawPrediction]) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".jsonl")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        for key in sorted(cells):
            fh.write(json.dumps(cells[key].to_dict(), ensure_ascii=False) + "\n")
    os.replace(tmp, path)


def load_matrix(
    directory: str | Path,
    turns: Sequence[int],
    provenance: dict | None = None,
) -> PredictionMatrix:
    entries: dict[CellKey, RawPrediction] = {}
    for turn in sorted(turns):
        entries.update(_read_turn_file(turn_file(directory, turn)))
    return PredictionMatrix(dict(sorted(entries.items())), sorted(turns), provenance or {})


def run_matrix(
    corpus: Corpus,
    summaries: Mapping[tuple[str, int], Summary],
    configs: Sequence[TurnConfig],
    gateway: Gateway,
    directory: str | Path,
    model_name: str = "gpt-3.5-turbo",
    workers: int = 4,
) -> PredictionMatrix:
    """Fill every missing or errored cell, persisting to one JSONL file per turn.

    Cells already stored with status ok are not re-issued. On completion each
    turn file is rewritten in sorted order, so a resumed run leaves the same
    bytes on disk as an uninterrupted one.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    needed = {c.summary_length for c in configs}
    for note in corpus.notes:
        for length in needed:
            if (note.note_id, length) not in summaries:
                raise ValueError(f"no summary for note {note.note_id} at length {length}")

    keys = corpus.keys()
    existing: dict[int, dict[CellKey, RawPrediction]] = {
        c.turn_id: _read_turn_file(turn_file(directory, c.turn_id)) for c in configs
    }
    jobs = [
        (config, key)
        for config in sorted(configs, key=lambda c: c.turn_id)
        for key in keys
        if not (
            (cell := existing[config.turn_id].get((config.turn_id, *key))) is not None and cell.ok
        )
    ]
    locks = {c.turn_id: threading.Lock() for c in configs}
    handles = {}
    logger.info("%d of %d cells to run", len(jobs), len(configs) * len(keys))

    def run(job):
        config, (note_id, medication) = job
        summary = summaries[(note_id, config.summary_length)]
        pred = predict_one(summary, medication, config, gateway, model_name)
        with locks[config.turn_id]:
            fh = handles.get(config.turn_id)
            if fh is None:
                fh = handles[config.turn_id] = open(turn_file(directory, config.turn_id), "a", encoding="utf-8")
            # flushed per line so an interrupted run keeps every finished cell
            fh.write(json.dumps(pred.to_dict(), ensure_ascii=False) + "\n")
            fh.flush()
        return pred

    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            for pred in pool.map(run, jobs):
                existing[pred.turn_id][pred.key] = pred
    finally:
        for fh in handles.values():
            fh.close()

    key_set = set(keys)
    entries: dict[CellKey, RawPrediction] = {}
    for config in configs:
        cells = {k: v for k, v in existing[config.turn_id].items() if (k[1], k[2]) in key_set}
        _compact(turn_file(directory, config.turn_id), cells)
        entries.update(cells)
    return PredictionMatrix(
        dict(sorted(entries.items())),
        sorted(c.turn_id for c in configs),
        {"provider": gateway.kind.value, "model_name": model_name},
    )


def write_manifest(path: str | Path, **fields) -> None:
    payload = {"prediction_prompt": PREDICTION_PROMPT, **fields}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
