"""Short and long note summaries that set the context-length axis of the grid.

One summary is produced per (note, target length) and shared by every turn
with that length. Summaries are decoded deterministically (temperature 0.1,
top-p 0.1) so the two variants are stable across the grid.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ._text import text_length, truncate_at_sentence
from .corpus import ClinicalNote, Corpus
from .gateway import CompletionRequest, Gateway, GatewayError

logger = logging.getLogger(__name__)

SUMMARY_PROMPT_PREFIX = "Summarize the clinical note, and make its length < {length}"
SUMMARY_TEMPERATURE = 0.1
SUMMARY_TOP_P = 0.1
SUMMARY_MAX_TOKENS = 1024


def summary_prompt(text: str, target_length: int) -> str:
    # Instruction and note are concatenated with no separator.
    return SUMMARY_PROMPT_PREFIX.format(length=target_length) + text


def length_bound(target_length: int) -> int:
    """ceil(1.2 * target_length) in exact integer arithmetic."""
    return -(-6 * target_length // 5)


@dataclass(frozen=True)
class Summary:
    note_id: str
    target_length: int
    text: str
    passthrough: bool

    def to_dict(self) -> dict:
        return {
            "note_id": self.note_id,
            "target_length": self.target_length,
            "text": self.text,
            "passthrough": self.passthrough,
        }


def summary_request(model_name: str, text: str, note_id: str, target_length: int) -> CompletionRequest:
    return CompletionRequest(
        model_name=model_name,
        prompt=summary_prompt(text, target_length),
        temperature=SUMMARY_TEMPERATURE,
        top_p=SUMMARY_TOP_P,
        max_output_tokens=SUMMARY_MAX_TOKENS,
        metadata={"task": "summarize", "note_id": note_id, "target_length": target_length},
    )


def summarize(
    note: ClinicalNote,
    target_length: int,
    gateway: Gateway,
    model_name: str = "gpt-3.5-turbo",
    unit: str = "characters",
) -> Summary:
    if target_length <= 0:
        raise ValueError("target_length must be positive")
    if text_length(note.text, unit) <= target_length:
        return Summary(note.note_id, target_length, note.text, passthrough=True)

    bound = length_bound(target_length)
    text = gateway.complete(summary_request(model_name, note.text, note.note_id, target_length)).text.strip()
    if text_length(text, unit) > bound:
        # Re-prompt once on the over-long output itself.
        logger.info("summary of %s at %d over bound (%d); re-prompting", note.note_id, target_length, text_length(text, unit))
        text = gateway.complete(summary_request(model_name, text, note.note_id, target_length)).text.strip()
    if text_length(text, unit) > bound:
        logger.warning(
            "summary of %s at %d still over bound after re-prompt; truncating at a sentence boundary",
            note.note_id,
            target_length,
        )
        text = truncate_at_sentence(text, bound, unit)
    if not text:
        raise GatewayError(f"empty summary for note {note.note_id}")
    return Summary(note.note_id, target_length, text, passthrough=False)


@dataclass
class SummarizationResult:
    summaries: dict[tuple[str, int], Summary]
    failures: dict[tuple[str, int], str] = field(default_factory=dict)
    upstream_calls: int = 0

    @property
    def complete(self) -> bool:
        return not self.failures

    def counts_by_length(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for _, length in self.summaries:
            counts[length] = counts.get(length, 0) + 1
        return dict(sorted(counts.items()))


def summarize_corpus(
    corpus: Corpus,
    lengths: Iterable[int],
    gateway: Gateway,
    model_name: str = "gpt-3.5-turbo",
    unit: str = "characters",
    workers: int = 4,
) -> SummarizationResult:
    """Summaries for every note at every length; failures are collected, not raised."""
    lengths = sorted(set(lengths))
    if not lengths:
        raise ValueError("at least one summary length is required")
    jobs = [(note, length) for note in corpus.notes for length in lengths]
    calls_before = gateway.upstream_calls

    def run(job):
        note, length = job
        try:
            return job, summarize(note, length, gateway, model_name, unit), None
        except (GatewayError, ValueError) as exc:
            return job, None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(run, jobs))

    result = SummarizationResult(summaries={})
    for (note, length), summary, error in sorted(outcomes, key=lambda o: (o[0][0].note_id, o[0][1])):
        key = (note.note_id, length)
        if error is None:
            result.summaries[key] = summary
        else:
            logger.error("summarization failed for %s: %s", key, error)
            result.failures[key] = error
    result.upstream_calls = gateway.upstream_calls - calls_before
    return result


def save_summaries(summaries: dict[tuple[str, int], Summary], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(summaries):
            fh.write(json.dumps(summaries[key].to_dict(), ensure_ascii=False) + "\n")


def load_summaries(path: str | Path) -> dict[tuple[str, int], Summary]:
    summaries = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                s = Summary(d["note_id"], int(d["target_length"]), d["text"], bool(d["passthrough"]))
                summaries[(s.note_id, s.target_length)] = s
    return summaries
