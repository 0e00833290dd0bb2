import pytest

from consensus_dx.config_space import full_grid, turn_by_id
from consensus_dx.demo import make_corpus
from consensus_dx.gateway import Gateway, GatewayError, ProviderKind, SyntheticProvider, SyntheticVoterModel
from consensus_dx.predictor import (
    PREDICTION_PROMPT,
    clean_output,
    load_matrix,
    predict_one,
    prediction_prompt,
    run_matrix,
    turn_file,
)
from consensus_dx.summarizer import Summary, summarize_corpus


class EchoProvider:
    kind = ProviderKind.HTTP

    def __init__(self, reply="Hypertension."):
        self.reply = reply
        self.requests = []

    def complete(self, request):
        self.requests.append(request)
        if isinstance(self.reply, Exception):
            raise self.reply
        return self.reply


def synthetic(corpus, p=0.7):
    model = SyntheticVoterModel.uniform(range(1, 19), p, seed=3)
    truths = {pair.key: pair.accepted_diagnoses[0] for pair in corpus.pairs}
    notes = {n.note_id: n.text for n in corpus.notes}
    return Gateway(SyntheticProvider(model, truths, notes))


def test_prompt_fidelity():
    expected = (
        "Given a patient's clinical note: 'NOTE TEXT', and the medication: Enalapril Maleate, "
        "what diagnosis is the most likely indication for this medication in this specific patient? "
        "In other words, what diagnosis is the medication treating in this context? "
        "Return the name of the diagnosis only."
    )
    assert prediction_prompt("NOTE TEXT", "Enalapril Maleate") == expected
    assert "{clinical_note}" in PREDICTION_PROMPT and "{medication}" in PREDICTION_PROMPT


@pytest.mark.parametrize("raw, clean", [("  Hypertension. \n", "Hypertension"), ("HTN", "HTN"), ("a..", "a."), ("", "")])
def test_clean_output(raw, clean):
    assert clean_output(raw) == clean


def test_predict_one_uses_turn_parameters():
    provider = EchoProvider()
    config = turn_by_id(full_grid(), 14)
    pred = predict_one(Summary("n", 2000, "text", False), "Enalapril", config, Gateway(provider))
    assert pred.ok and pred.text == "Hypertension"
    req = provider.requests[0]
    assert (req.temperature, req.top_p, req.max_output_tokens) == (0.95, 0.5, 64)


def test_predict_one_rejects_empty_medication_and_wrong_summary():
    config = turn_by_id(full_grid(), 1)
    with pytest.raises(ValueError):
        predict_one(Summary("n", 2000, "t", False), "", config, Gateway(EchoProvider()))
    with pytest.raises(ValueError):
        predict_one(Summary("n", 4000, "t", False), "m", config, Gateway(EchoProvider()))


@pytest.mark.parametrize("reply, status", [(GatewayError("boom"), "error: boom"), ("  .", "error: empty response")])
def test_failures_become_error_cells(reply, status):
    pred = predict_one(Summary("n", 2000, "t", False), "m", turn_by_id(full_grid(), 1), Gateway(EchoProvider(reply)))
    assert not pred.ok and pred.status == status


def test_full_matrix_and_resume(tmp_path):
    corpus = make_corpus()
    gateway = synthetic(corpus)
    summaries = summarize_corpus(corpus, [2000, 4000], gateway).summaries
    configs = full_grid()

    full = run_matrix(corpus, summaries, configs, gateway, tmp_path / "a")
    assert len(full.entries) == 18 * 240 == 4320
    assert full.error_count == 0
    assert all(v == {"ok": 240, "error": 0} for v in full.completion_report().values())

    # simulate an interrupted run: keep half of turn 4 plus a torn line
    partial = tmp_path / "b"
    run_matrix(corpus, summaries, configs[:3], gateway, partial)
    lines = turn_file(tmp_path / "a", 4).read_text().splitlines(keepends=True)
    turn_file(partial, 4).write_text("".join(lines[:120]) + '{"turn_id": 4, "no')
    before = gateway.upstream_calls
    resumed = run_matrix(corpus, summaries, configs, gateway, partial)
    assert gateway.upstream_calls - before == 14 * 240 + 120
    assert resumed.entries == full.entries
    for turn in range(1, 19):
        assert turn_file(partial, turn).read_bytes() == turn_file(tmp_path / "a", turn).read_bytes()
    assert load_matrix(partial, range(1, 19)).entries == full.entries


def test_errored_cells_are_retried_on_resume(tmp_path):
    corpus = make_corpus(n_notes=1)
    summaries = summarize_corpus(corpus, [2000, 4000], synthetic(corpus)).summaries
    configs = full_grid()[:1]
    broken = run_matrix(corpus, summaries, configs, Gateway(EchoProvider(GatewayError("down"))), tmp_path)
    assert broken.error_count == 12
    assert len(broken.missing(corpus.keys())) == 0
    fixed = run_matrix(corpus, summaries, configs, Gateway(EchoProvider("Gout")), tmp_path)
    assert fixed.error_count == 0


def test_missing_summary_is_rejected(tmp_path):
    corpus = make_corpus(n_notes=1)
    with pytest.raises(ValueError, match="no summary"):
        run_matrix(corpus, {}, full_grid(), Gateway(EchoProvider()), tmp_path)
