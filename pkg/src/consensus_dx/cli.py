"""``consensus-dx`` command line: summarize -> predict -> sweep -> analyze.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analyzer
from .config import RunConfig, load_run_config
from .config_space import GridSpec, grid_hash, load_grid
from .corpus import Corpus, CorpusError, load_corpus, save_split, split_corpus
from .evaluator import ExpansionMap, Scorer, read_scores_csv, write_scores_csv
from .gateway import (
    API_KEY_ENV,
    ConfuserMode,
    Gateway,
    HttpProvider,
    RateLimiter,
    ReplayProvider,
    ResponseCache,
    RetryPolicy,
    SyntheticProvider,
    SyntheticVoterModel,
)
from .predictor import PredictionMatrix, load_matrix, run_matrix, write_manifest
from .summarizer import load_summaries, save_summaries, summarize_corpus

logger = logging.getLogger("consensus_dx")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class RunFailure(Exception):
    pass


# -- paths -------------------------------------------------------------------


def _out(config: RunConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def summaries_path(config: RunConfig) -> Path:
    return Path(config.output_dir) / "summaries.jsonl"


def predictions_dir(config: RunConfig) -> Path:
    return Path(config.output_dir) / "predictions"


# -- construction ----------------------------------------------------------------


def _corpus(config: RunConfig) -> Corpus:
    if not config.corpus:
        raise UsageError("no corpus path given (--corpus or 'corpus' in --config)")
    if not Path(config.corpus).exists():
        raise UsageError(f"corpus file not found: {config.corpus}")
    try:
        return load_corpus(config.corpus)
    except CorpusError as exc:
        raise UsageError(str(exc)) from exc


def _grid(config: RunConfig) -> GridSpec:
    if config.grid and not Path(config.grid).exists():
        raise UsageError(f"grid override not found: {config.grid}")
    try:
        return load_grid(config.grid)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad grid override: {exc}") from exc


def build_gateway(config: RunConfig, corpus: Corpus, grid: GridSpec) -> Gateway:
    p = config.provider
    if p.kind == "synthetic":
        s = p.synthetic
        accuracy = {c.turn_id: float(s.per_turn_accuracy.get(str(c.turn_id), s.default_accuracy)) for c in grid.configs}
        model = SyntheticVoterModel(accuracy, ConfuserMode(s.confuser_mode), s.seed)
        truths = {pair.key: pair.accepted_diagnoses[0] for pair in corpus.pairs}
        provider = SyntheticProvider(model, truths, {n.note_id: n.text for n in corpus.notes})
        # pure and instant; caching would only add disk writes
        return Gateway(provider, cache=None, retry=RetryPolicy(max_attempts=1))
    if p.kind == "replay":
        replay_dir = p.replay_dir or config.cache_dir
        if not replay_dir:
            raise UsageError("replay provider needs provider.replay_dir or cache_dir")
        provider = ReplayProvider(replay_dir)
    else:
        if not os.environ.get(API_KEY_ENV):
            raise RunFailure(f"authentication error: set {API_KEY_ENV} in the environment")
        provider = HttpProvider(p.base_url, timeout=p.timeout)
    cache = ResponseCache(config.cache_dir) if config.cache_dir else None
    retry = RetryPolicy(max_attempts=p.max_attempts, base_delay=p.base_delay)
    limiter = RateLimiter(p.rate_limit_per_minute) if p.kind == "http" else None
    return Gateway(provider, cache=cache, retry=retry, limiter=limiter)


def _parse_turns(text: str | None, grid: GridSpec) -> list[int] | None:
    if text is None:
        return None
    try:
        turns = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"turns must be comma-separated integers, got {text!r}") from None
    known = {c.turn_id for c in grid.configs}
    unknown = sorted(set(turns) - known)
    if unknown:
        raise UsageError(f"unknown turn id(s) {unknown}; grid has turns 1..{len(known)}")
    if len(set(turns)) != len(turns) or not turns:
        raise UsageError("turn list must be non-empty without duplicates")
    return turns


def _scorer(config: RunConfig, matrix: PredictionMatrix, corpus: Corpus) -> Scorer:
    ev = config.evaluation
    expansions = None
    if ev.expansion_map:
        try:
            expansions = ExpansionMap.from_file(ev.expansion_map)
        except (OSError, ValueError) as exc:
            raise UsageError(f"bad expansion map: {exc}") from exc
    return Scorer(matrix, corpus.truths(), ev.threshold, expansions, ev.strict_removal, ev.exact_vote)


def _complete_matrix(config: RunConfig, corpus: Corpus, turns: list[int]) -> PredictionMatrix:
    matrix = load_matrix(predictions_dir(config), turns)
    missing = matrix.missing(corpus.keys())
    if missing:
        raise RunFailure(
            f"prediction matrix incomplete: {len(missing)} cells missing (first {missing[0]}); run predict"
        )
    return matrix


def _split(config: RunConfig, corpus: Corpus):
    s = config.split
    split = split_corpus(corpus, s.train_fraction, s.seed, s.granularity)
    save_split(split, Path(config.output_dir) / "split.json")
    return split


def _matrix_turns(config: RunConfig, grid: GridSpec, requested: list[int] | None) -> list[int]:
    if requested is not None:
        return sorted(requested)
    available = [c.turn_id for c in grid.configs if (predictions_dir(config) / f"turn_{c.turn_id}.jsonl").exists()]
    return available or [c.turn_id for c in grid.configs]


# -- commands ----------------------------------------------------------------


def cmd_summarize(config: RunConfig, args) -> int:
    corpus, grid = _corpus(config), _grid(config)
    gateway = build_gateway(config, corpus, grid)
    result = summarize_corpus(
        corpus, grid.summary_lengths, gateway, config.provider.model_name, grid.summary_unit, config.provider.workers
    )
    _out(config)
    save_summaries(result.summaries, summaries_path(config))
    counts = ", ".join(f"{length}: {n}" for length, n in result.counts_by_length().items())
    print(f"summaries written: {len(result.summaries)} ({counts}); {result.upstream_calls} upstream calls")
    if not result.complete:
        print(f"{len(result.failures)} summaries failed", file=sys.stderr)
        if not config.allow_partial:
            return EXIT_FAILURE
    return EXIT_OK


def cmd_predict(config: RunConfig, args) -> int:
    corpus, grid = _corpus(config), _grid(config)
    turns = _parse_turns(args.turns, grid)
    configs = [c for c in grid.configs if turns is None or c.turn_id in turns]
    if not summaries_path(config).exists():
        raise RunFailure("no summaries found; run summarize first")
    summaries = load_summaries(summaries_path(config))
    gateway = build_gateway(config, corpus, grid)
    try:
        matrix = run_matrix(
            corpus, summaries, configs, gateway, predictions_dir(config),
            config.provider.model_name, config.provider.workers,
        )
    except ValueError as exc:
        raise RunFailure(str(exc)) from exc
    write_manifest(
        predictions_dir(config) / "run_manifest.json",
        provider=config.provider.kind,
        model_name=config.provider.model_name,
        grid_hash=grid_hash(grid.configs),
        corpus_hash=corpus.digest(),
    )
    for turn, counts in matrix.completion_report().items():
        print(f"turn {turn:>2}: ok={counts['ok']} error={counts['error']}")
    print(f"prediction files: {len(configs)}; upstream calls: {gateway.upstream_calls}")
    if matrix.error_count and not config.allow_partial:
        print(f"{matrix.error_count} cells ended in error", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(config: RunConfig, args) -> int:
    corpus, grid = _corpus(config), _grid(config)
    turns = _matrix_turns(config, grid, _parse_turns(args.turns, grid))
    k = args.k if args.k is not None else config.evaluation.k
    if not 1 <= k <= len(turns):
        raise UsageError(f"k={k} must lie in [1, {len(turns)}]")
    matrix = _complete_matrix(config, corpus, turns)
    split = _split(config, corpus)
    train = split.keys("train")
    if not train:
        raise UsageError("train split is empty")
    scorer = _scorer(config, matrix, corpus)
    scores = scorer.sweep(k, train, "train")
    write_scores_csv(scores, _out(config) / "scores.csv")
    singles = sorted((scorer.single_accuracy(t, train) for t in turns), key=lambda s: (-s.accuracy, s.turns))
    best, worst = scores[0], scores[-1]
    print(f"combinations scored: {len(scores)} (k={k}, {len(train)} train items)")
    print(f"best single: turn {singles[0].turns[0]} accuracy {singles[0].accuracy:.4f}")
    print(f"best combo:  {best.turns} accuracy {best.accuracy:.4f}")
    print(f"worst combo: {worst.turns} accuracy {worst.accuracy:.4f}")
    return EXIT_OK


def cmd_vote(config: RunConfig, args) -> int:
    corpus, grid = _corpus(config), _grid(config)
    turns = _parse_turns(args.turns, grid)
    if turns is None:
        raise UsageError("vote needs --turns")
    matrix = _complete_matrix(config, corpus, sorted(turns))
    if args.side == "all":
        keys = corpus.keys()
    else:
        keys = _split(config, corpus).keys(args.side)
    if not keys:
        raise UsageError(f"{args.side} split is empty")
    scorer = _scorer(config, matrix, corpus)
    out_path = _out(config) / "votes.jsonl"
    correct = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for key in keys:
            outcome = scorer.vote(turns, key)
            correct += outcome.correct
            record = {
                "note_id": key[0],
                "medication": key[1],
                "winner": outcome.winner,
                "cluster_sizes": outcome.cluster_sizes,
                "tie_broken": outcome.tie_broken,
                "correct": outcome.correct,
                "per_turn_correct": {str(t): scorer.hit(t, key) for t in sorted(turns)},
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    print(f"vote over {tuple(sorted(turns))} on {args.side}: {correct}/{len(keys)} correct ({correct / len(keys):.4f})")
    return EXIT_OK


def cmd_analyze(config: RunConfig, args) -> int:
    corpus, grid = _corpus(config), _grid(config)
    scores_file = Path(config.output_dir) / "scores.csv"
    if not scores_file.exists():
        raise RunFailure("scores.csv not found; run sweep first")
    scores = read_scores_csv(scores_file)
    if not scores:
        raise RunFailure("scores.csv holds no combinations")
    ensemble = _parse_turns(args.ensemble, grid)
    turns = _matrix_turns(config, grid, None)
    matrix = _complete_matrix(config, corpus, turns)
    if ensemble is not None and not set(ensemble) <= set(turns):
        raise UsageError(f"ensemble turns {sorted(set(ensemble) - set(turns))} have no predictions")
    split = _split(config, corpus)
    test = split.keys("test")
    if not test:
        raise UsageError("test split is empty; lower split.train_fraction")
    ev = config.evaluation
    report = analyzer.analyze(
        scores, _scorer(config, matrix, corpus), split.keys("train"), test,
        ev.partition_threshold, ev.top_n, ensemble,
    )
    out = _out(config)
    analyzer.write_frequency_csv(report.frequencies, turns, out / "frequency.csv")
    analyzer.write_intersection_csv(report.intersection, out / "intersection.csv")
    analyzer.write_report(report, out / "report.json")
    print(f"partition at {ev.partition_threshold}: {len(report.partition.high)} high / {len(report.partition.low)} low")
    print(f"agreed turns: {report.agreed}")
    print(f"ensemble {report.ensemble} ({report.ensemble_source})")
    print(
        f"test: ensemble {report.test.ensemble_score.accuracy:.4f} vs best single "
        f"turn {report.test.best_single.turns[0]} {report.test.best_single.accuracy:.4f}"
    )
    return EXIT_OK


def cmd_report(config: RunConfig, args) -> int:
    path = Path(config.output_dir) / "report.json"
    if not path.exists():
        raise RunFailure("report.json not found; run analyze first")
    r = json.loads(path.read_text(encoding="utf-8"))
    pct = lambda x: f"{100 * x:.1f}%"  # noqa: E731
    t = r["train"]
    print("Training data")
    print(f"  Best single run (turn {t['best_single']['turns'][0]}): {pct(t['best_single']['accuracy'])}")
    print(f"  Majority voting, highest {tuple(t['best_combo']['turns'])}: {pct(t['best_combo']['accuracy'])}")
    print(f"  Majority voting, lowest {tuple(t['worst_combo']['turns'])}: {pct(t['worst_combo']['accuracy'])}")
    print(f"  Combinations: {t['n_combinations']} (k={t['k']})")
    p = r["partition"]
    print(f"  Partition at {p['threshold']}: {p['high']} high / {p['low']} low")
    print(f"  Agreed turns (top combinations): {r['agreed_turns']}")
    print("Testing data")
    ts = r["test"]
    print(f"  Best single run (turn {ts['best_single']['turns'][0]}): {pct(ts['best_single_test_accuracy'])}")
    print(f"  Majority voting {tuple(r['selected_ensemble'])} [{r['ensemble_source']}]: {pct(ts['ensemble_test_accuracy'])}")
    if r.get("flags"):
        print(f"Flags: {r['flags']}")
    return EXIT_OK


COMMANDS = {
    "summarize": cmd_summarize,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "vote": cmd_vote,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--corpus")
    common.add_argument("--output-dir")
    common.add_argument("--cache-dir")
    common.add_argument("--grid", help="grid override JSON")
    common.add_argument("--provider", choices=["http", "replay", "synthetic"])
    common.add_argument("--base-url")
    common.add_argument("--model")
    common.add_argument("--replay-dir")
    common.add_argument("--workers", type=int)
    common.add_argument("--threshold", type=float, help="fuzzy-match similarity threshold")
    common.add_argument("--partition-threshold", type=float)
    common.add_argument("--top-n", type=int)
    common.add_argument("--train-fraction", type=float)
    common.add_argument("--seed", type=int, help="split seed")
    common.add_argument("--granularity", choices=["pair", "note"])
    common.add_argument("--expansion-map")
    common.add_argument("--strict-removal", action="store_true", default=None)
    common.add_argument("--exact-vote", action="store_true", default=None)
    common.add_argument("--allow-partial", action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="consensus-dx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("summarize", parents=[common], help="summarize notes at every grid length")
    p = sub.add_parser("predict", parents=[common], help="run the diagnosis prompt for each turn")
    p.add_argument("--turns", help="comma-separated turn ids (default: whole grid)")
    p = sub.add_parser("sweep", parents=[common], help="score every k-subset of turns on the train split")
    p.add_argument("--k", type=int)
    p.add_argument("--turns", help="restrict the sweep to these turns")
    p = sub.add_parser("vote", parents=[common], help="majority vote of one explicit turn tuple")
    p.add_argument("--turns", required=True)
    p.add_argument("--side", choices=["train", "test", "all"], default="all")
    p = sub.add_parser("analyze", parents=[common], help="partition, frequencies, intersections, test evaluation")
    p.add_argument("--ensemble", help="evaluate this turn tuple instead of the selected one")
    sub.add_parser("report", parents=[common], help="print the analysis report")
    return parser


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    direct = {
        "corpus": "corpus", "output_dir": "output_dir", "cache_dir": "cache_dir",
        "grid": "grid", "allow_partial": "allow_partial",
    }
    for arg, attr in direct.items():
        if getattr(args, arg) is not None:
            setattr(config, attr, getattr(args, arg))
    provider = {"provider": "kind", "base_url": "base_url", "model": "model_name", "replay_dir": "replay_dir", "workers": "workers"}
    for arg, attr in provider.items():
        if getattr(args, arg) is not None:
            setattr(config.provider, attr, getattr(args, arg))
    split = {"train_fraction": "train_fraction", "seed": "seed", "granularity": "granularity"}
    for arg, attr in split.items():
        if getattr(args, arg) is not None:
            setattr(config.split, attr, getattr(args, arg))
    evaluation = {
        "threshold": "threshold", "partition_threshold": "partition_threshold", "top_n": "top_n",
        "expansion_map": "expansion_map", "strict_removal": "strict_removal", "exact_vote": "exact_vote",
    }
    for arg, attr in evaluation.items():
        if getattr(args, arg) is not None:
            setattr(config.evaluation, attr, getattr(args, arg))
    return config


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config and not Path(args.config).exists():
            raise UsageError(f"config file not found: {args.config}")
        try:
            config = _apply_overrides(load_run_config(args.config), args)
            config.validate()
        except (ValueError, TypeError) as exc:
            raise UsageError(f"invalid configuration: {exc}") from exc
        return COMMANDS[args.command](config, args)
    except UsageError as exc:
        print(f"consensus-dx {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunFailure as exc:
        print(f"consensus-dx {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # noqa: BLE001
        logger.debug("unhandled", exc_info=True)
        print(f"consensus-dx {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
