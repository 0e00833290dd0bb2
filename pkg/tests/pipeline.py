"""Drive the command line over the demo corpus."""

import json
from pathlib import Path

from consensus_dx.cli import main
from consensus_dx.corpus import save_corpus
from consensus_dx.demo import demo_config, make_corpus

STAGES = ("summarize", "predict", "sweep", "analyze")


def prepare(workdir: Path) -> Path:
    workdir.mkdir(parents=True, exist_ok=True)
    save_corpus(make_corpus(), workdir / "corpus.jsonl")
    config = workdir / "run_config.json"
    config.write_text(json.dumps(demo_config(), indent=2))
    return config


def run_all(workdir: Path) -> Path:
    config = prepare(workdir)
    for stage in STAGES:
        assert main([stage, "--config", str(config)]) == 0, stage
    return workdir / "out"
