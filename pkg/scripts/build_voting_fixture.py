"""Regenerate the bundled replay fixture for the two worked voting examples.

One invented discharge note (about 3000 characters, so the 2000-character
turns see a summary while the 4000-character turns see the note verbatim),
two confirmed medication-diagnosis pairs, and recorded model responses for
turns 2, 7, 10, 13 and 14 whose per-turn correctness is

    Enalapril Maleate / hypertension:   0 1 1 1 0
    Ondansetron / gastric distension:   1 0 1 1 0

Usage: python scripts/build_voting_fixture.py [OUTPUT_DIR]
"""

import shutil
import sys
from pathlib import Path

from consensus_dx.config_space import full_grid, turn_by_id
from consensus_dx.corpus import ClinicalNote, Corpus, GroundTruthPair, save_corpus
from consensus_dx.gateway import CompletionRequest, ResponseCache
from consensus_dx.predictor import PREDICTION_MAX_TOKENS, prediction_prompt
from consensus_dx.summarizer import summary_request

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "consensus_dx" / "fixtures" / "voting_cases"
MODEL = "gpt-3.5-turbo"
NOTE_ID = "voting-cases-note"

NOTE = (
    "DISCHARGE SUMMARY. Chief complaint: abdominal distension and vomiting. "
    "History of present illness: 68 year old woman with long-standing hypertension managed on enalapril maleate, "
    "type 2 diabetes controlled with diet, and prior cholecystectomy, who presented with two days of progressive "
    "upper abdominal fullness, early satiety and several episodes of non-bloody emesis. She denied fever, chest pain "
    "or melena. In the emergency department blood pressure was 168/94 and heart rate 96. Examination showed a tense, "
    "tympanitic epigastrium with hypoactive bowel sounds. Abdominal radiograph demonstrated a markedly dilated stomach "
    "with an air-fluid level and no free air. CT of the abdomen confirmed acute gastric distension without a discrete "
    "transition point, small bowel of normal caliber, and no mass lesion. Hospital course: a nasogastric tube was "
    "placed with return of 1.8 liters of bilious fluid and prompt symptomatic relief. She was kept nil by mouth and "
    "given intravenous fluids with potassium repletion for a serum potassium of 3.1. Ondansetron was given "
    "intravenously every eight hours for nausea associated with the gastric distension and was continued orally as "
    "diet advanced. Gastroenterology was consulted and felt the picture was consistent with gastroparesis-related "
    "acute gastric distension, possibly precipitated by hypokalemia and recent opioid use for a dental procedure. "
    "Opioids were stopped. The nasogastric tube was removed on hospital day three after output fell below 200 mL per "
    "shift, and clear liquids were tolerated, followed by a low-fat, low-residue diet. Blood pressure remained "
    "elevated in the 150s to 160s systolic while enalapril was held during the period of poor oral intake; enalapril "
    "maleate was resumed on day three with readings improving to the 130s. Blood glucose was monitored four times "
    "daily and remained between 110 and 180 without insulin. Renal function was stable with a creatinine of 0.9. "
    "Physical therapy found her safe for discharge home without services. Discharge diagnoses: acute gastric "
    "distension, suspected diabetic gastroparesis, hypokalemia, hypertension, type 2 diabetes mellitus. Discharge "
    "medications: enalapril maleate 10 mg by mouth daily; ondansetron 4 mg by mouth every eight hours as needed for "
    "nausea; potassium chloride 20 mEq by mouth daily for five days; metoclopramide was discussed but deferred "
    "pending outpatient gastric emptying study. Instructions: small frequent meals, avoid carbonated drinks, check "
    "blood pressure at home daily and bring the log to clinic. Follow up with primary care in one week and with "
    "gastroenterology in four weeks for gastric emptying scintigraphy. Return precautions were reviewed, including "
    "recurrent vomiting, inability to tolerate liquids, abdominal pain or fever."
)

SUMMARY_2000 = (
    "68 year old woman with hypertension on enalapril maleate and diet-controlled type 2 diabetes admitted with two "
    "days of abdominal fullness, early satiety and vomiting. Blood pressure 168/94 on arrival. Imaging showed a "
    "markedly dilated stomach consistent with acute gastric distension, no obstruction or mass. Managed with "
    "nasogastric decompression (1.8 L returned), bowel rest, IV fluids and potassium repletion for hypokalemia. "
    "Ondansetron given every eight hours for nausea from the gastric distension and continued orally. GI felt this "
    "was gastroparesis-related distension, possibly worsened by low potassium and recent opioids, which were "
    "stopped. NG tube removed day three and diet advanced. Enalapril held during poor intake, then resumed with "
    "blood pressure improving to the 130s. Glucose 110-180 without insulin. Discharged home on enalapril maleate, "
    "ondansetron as needed and short-course potassium, with primary care follow-up in one week and a gastric "
    "emptying study with gastroenterology in four weeks."
)

PAIRS = {
    "Enalapril Maleate": ("hypertension", {
        2: "Congestive heart failure",
        7: "Hypertension",
        10: "Hypertension.",
        13: "HTN",
        14: "Diabetic nephropathy",
    }),
    "Ondansetron": ("gastric distension", {
        2: "Gastric distension",
        7: "Nausea and vomiting",
        10: "Gastric distention",
        13: "Gastric distension.",
        14: "Chemotherapy-induced nausea",
    }),
}
TURNS = (2, 7, 10, 13, 14)


def build(out: Path) -> None:
    if out.exists():
        shutil.rmtree(out)
    replay = ResponseCache(out / "replay")
    note = ClinicalNote(NOTE_ID, NOTE, tuple(PAIRS))
    pairs = tuple(GroundTruthPair(NOTE_ID, med, (dx,)) for med, (dx, _) in PAIRS.items())
    out.mkdir(parents=True)
    save_corpus(Corpus((note,), pairs), out / "corpus.jsonl")

    replay.put(summary_request(MODEL, NOTE, NOTE_ID, 2000), SUMMARY_2000)
    summaries = {2000: SUMMARY_2000, 4000: NOTE}  # 4000 > note length: verbatim
    grid = full_grid()
    for med, (_, answers) in PAIRS.items():
        for turn in TURNS:
            config = turn_by_id(grid, turn)
            request = CompletionRequest(
                MODEL,
                prediction_prompt(summaries[config.summary_length], med),
                config.temperature,
                config.top_p,
                PREDICTION_MAX_TOKENS,
            )
            replay.put(request, answers[turn])


if __name__ == "__main__":
    build(Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_OUT)
