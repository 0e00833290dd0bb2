from __future__ import annotations

import re

_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def text_length(text: str, unit: str = "characters") -> int:
    if unit == "characters":
        return len(text)
    if unit == "tokens":
        # whitespace tokens; a tokenizer-free stand-in for model tokens
        return len(text.split())
    raise ValueError(f"unknown length unit {unit!r}")


def truncate_at_sentence(text: str, limit: int, unit: str = "characters") -> str:
    """Longest prefix ending on a sentence boundary whose length is within ``limit``.

    Falls back to a hard cut when no sentence boundary fits.
    """
    if text_length(text, unit) <= limit:
        return text
    best = None
    for m in _SENTENCE_END.finditer(text):
        prefix = text[: m.end()]
        if text_length(prefix, unit) > limit:
            break
        best = prefix
    if best is not None and best.strip():
        return best.rstrip()
    if unit == "characters":
        return text[:limit].rstrip()
    return " ".join(text.split()[:limit])
