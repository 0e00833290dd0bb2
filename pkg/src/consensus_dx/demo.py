"""Synthetic corpus and run config for offline end-to-end runs.

    python -m consensus_dx.demo DIR

writes ``DIR/corpus.jsonl`` (20 notes, 240 pairs, ~6400-character notes)
and ``DIR/run_config.json`` using the synthetic voter provider.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

from .corpus import ClinicalNote, Corpus, GroundTruthPair, save_corpus

# Deliberately far apart under normalized Levenshtein similarity.
DIAGNOSES = [
    ("Lisinopril", "hypertension"),
    ("Metformin", "type 2 diabetes mellitus"),
    ("Atorvastatin", "hyperlipidemia"),
    ("Furosemide", "congestive heart failure"),
    ("Omeprazole", "gastroesophageal reflux disease"),
    ("Levothyroxine", "hypothyroidism"),
    ("Albuterol", "asthma"),
    ("Warfarin", "atrial fibrillation"),
    ("Ondansetron", "nausea"),
    ("Sertraline", "major depressive disorder"),
    ("Gabapentin", "neuropathic pain"),
    ("Tamsulosin", "benign prostatic hyperplasia"),
    ("Allopurinol", "gout"),
    ("Donepezil", "alzheimer dementia"),
    ("Ferrous Sulfate", "iron deficiency anemia"),
    ("Ceftriaxone", "pneumonia"),
    ("Levetiracetam", "seizure disorder"),
    ("Alendronate", "osteoporosis"),
]

_FILLER = [
    "Patient was seen on the medicine service and remained hemodynamically stable.",
    "Vital signs were reviewed each morning and nursing reported no acute events.",
    "Laboratory studies were followed and electrolytes were repleted as needed.",
    "Physical therapy evaluated the patient and recommended continued ambulation.",
    "The patient tolerated a regular diet and had adequate oral intake.",
    "Discharge planning was discussed with the patient and family at bedside.",
    "Imaging was reviewed with radiology and no new findings were reported.",
    "Pain was controlled with the current regimen and sleep improved overnight.",
]


def make_corpus(n_notes: int = 20, meds_per_note: int = 12, note_chars: int = 6400, seed: int = 0) -> Corpus:
    rng = random.Random(seed)
    notes, pairs = [], []
    for i in range(1, n_notes + 1):
        note_id = f"note{i:02d}"
        chosen = rng.sample(DIAGNOSES, meds_per_note)
        sentences = [f"Patient has a history of {dx} and takes {med} for it." for med, dx in chosen]
        body = " ".join(sentences)
        while len(body) < note_chars:
            body += " " + rng.choice(_FILLER)
        notes.append(ClinicalNote(note_id, body, tuple(med for med, _ in chosen)))
        pairs.extend(GroundTruthPair(note_id, med, (dx,)) for med, dx in chosen)
    return Corpus(tuple(notes), tuple(pairs))


def demo_config(corpus_path: str = "corpus.jsonl", output_dir: str = "out") -> dict:
    # Turns 1-5 are strong voters, the rest weak.
    accuracy = {str(t): (0.9 if t <= 5 else 0.3) for t in range(1, 19)}
    return {
        "corpus": corpus_path,
        "output_dir": output_dir,
        "provider": {
            "kind": "synthetic",
            "synthetic": {"seed": 7, "confuser_mode": "binary", "per_turn_accuracy": accuracy},
        },
        "split": {"train_fraction": 0.6, "seed": 7, "granularity": "pair"},
    }


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    target = Path(argv[0] if argv else "demo")
    target.mkdir(parents=True, exist_ok=True)
    save_corpus(make_corpus(), target / "corpus.jsonl")
    (target / "run_config.json").write_text(json.dumps(demo_config(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {target / 'corpus.jsonl'} and {target / 'run_config.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
