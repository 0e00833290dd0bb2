import math

import pytest

from consensus_dx.evaluator import (
    CombinationScore,
    ExpansionMap,
    Scorer,
    combo_accuracy,
    is_match,
    levenshtein,
    majority_vote,
    normalize,
    read_scores_csv,
    similarity,
    single_accuracy,
    sort_scores,
    sweep_combinations,
    write_scores_csv,
)
from matrices import matrix_from
from oracles import oracle_similarity, wagner_fischer


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("chf", "congestive heart failure"),
        ("GERD", "gastroesophageal reflux disease"),
        ("Type-2/Diabetes  ", "type 2 diabetes"),
        ("CHF.", "congestive heart failure"),
        ("chf-exacerbation", "congestive heart failure exacerbation"),
        ("achf", "achf"),
        ("  HTN ", "hypertension"),
        ("", ""),
    ],
)
def test_normalize_examples(raw, expected):
    assert normalize(raw) == expected


def test_strict_removal_fuses_tokens():
    assert normalize("Type-2/Diabetes", strict_removal=True) == "type2diabetes"
    assert normalize("Type 2 diabetes", strict_removal=True) == "type 2 diabetes"


def test_custom_expansion_map(tmp_path):
    path = tmp_path / "map.json"
    path.write_text('{"DM2": "type 2 diabetes mellitus"}')
    emap = ExpansionMap.from_file(path)
    assert normalize("dm2", emap) == "type 2 diabetes mellitus"
    assert normalize("chf", emap) == "chf"
    assert normalize("chf", ExpansionMap({})) == "chf"


@pytest.mark.parametrize("entries", [{"htn": "x", "HTN": "y"}, {"": "x"}, {"a": "a b"}])
def test_bad_expansion_maps(entries):
    with pytest.raises(ValueError):
        ExpansionMap(entries)


@pytest.mark.parametrize(
    "a, b, distance",
    [("hypertension", "hypertensive", 2), ("", "abc", 3), ("kitten", "sitting", 3), ("same", "same", 0)],
)
def test_levenshtein(a, b, distance):
    assert levenshtein(a, b) == distance == wagner_fischer(a, b)


@pytest.mark.parametrize(
    "a, b, value",
    [
        ("hypertension", "hypertension", 1.0),
        ("hypertension", "hypertensive", 0.8333333333333334),
        ("hypertension", "anemia", 0.16666666666666666),
        ("gastric distension", "gastric distention", 0.9444444444444444),
        ("", "", 1.0),
    ],
)
def test_similarity_oracle_values(a, b, value):
    assert similarity(a, b) == value == oracle_similarity(a, b)


def test_similarity_exact_at_threshold():
    # 3 edits over 5 characters: (5 - 2) / 5 must land on exactly 0.6
    assert similarity("abcde", "abxyz") == 0.4
    assert similarity("abcde", "abcyz") == 0.6
    assert is_match("abcyz", ["abcde"], 0.60)


@pytest.mark.parametrize(
    "prediction, truths, threshold, expected",
    [
        ("congestive heart failure", ["congestive heart failure"], 0.60, True),
        ("hypertension", ["gastric distension"], 0.60, False),
        ("anything", ["nothing alike"], 0.0, True),
        ("hypertension", ["anemia", "hypertensive"], 0.60, True),
    ],
)
def test_is_match(prediction, truths, threshold, expected):
    assert is_match(prediction, truths, threshold) is expected


def test_is_match_needs_truths():
    with pytest.raises(ValueError):
        is_match("x", [])


ENALAPRIL = {2: "congestive heart failure", 7: "hypertension", 10: "hypertension", 13: "hypertension", 14: "diabetic nephropathy"}
ONDANSETRON = {2: "gastric distension", 7: "nausea and vomiting", 10: "gastric distention", 13: "gastric distension", 14: "chemotherapy induced nausea"}


def test_vote_enalapril_row():
    outcome = majority_vote(ENALAPRIL, truths=["hypertension"])
    assert outcome.winner == "hypertension" and outcome.correct
    assert outcome.winning_turns == (7, 10, 13)
    assert not outcome.tie_broken


def test_vote_ondansetron_row():
    outcome = majority_vote(ONDANSETRON, truths=["gastric distension"])
    assert outcome.correct
    assert outcome.winning_turns == (2, 10, 13)
    assert outcome.winner == "gastric distension"


def test_unanimous_vote():
    outcome = majority_vote({t: "gout" for t in (1, 2, 3, 4, 5)})
    assert outcome.winner == "gout" and not outcome.tie_broken
    assert outcome.cluster_sizes == {"gout": 5}


def test_tie_goes_to_lowest_founder():
    outcome = majority_vote({4: "asthma", 9: "asthma", 2: "gout", 6: "gout", 1: "osteoporosis"})
    assert outcome.tie_broken
    assert outcome.winner == "gout"


def test_error_cells_do_not_vote():
    outcome = majority_vote({1: None, 2: None, 3: "gout"}, truths=["gout"])
    assert outcome.correct and outcome.winning_turns == (3,)
    abstain = majority_vote({1: None, 2: None}, truths=["gout"])
    assert abstain.abstained and not abstain.correct


def test_single_linkage_chains():
    # a~b and b~c but a !~ c: one cluster of three under single linkage
    votes = {1: "aaaaa", 2: "aaabb", 3: "abbbb", 4: "zzzzz", 5: "zzzzz"}
    assert similarity("aaaaa", "abbbb") < 0.6
    outcome = majority_vote(votes)
    assert outcome.winning_turns == (1, 2, 3)


def test_exact_vote_mode():
    outcome = majority_vote(ONDANSETRON, exact=True, truths=["gastric distension"])
    assert outcome.winning_turns == (2, 13)


def voting_matrix():
    return matrix_from({("n", "Enalapril Maleate"): ENALAPRIL, ("n", "Ondansetron"): ONDANSETRON})


VOTING_TRUTHS = {("n", "Enalapril Maleate"): ["hypertension"], ("n", "Ondansetron"): ["gastric distension"]}


def test_recorded_voting_accuracies():
    keys = sorted(VOTING_TRUTHS)
    scorer = Scorer(voting_matrix(), VOTING_TRUTHS)
    assert scorer.combo_accuracy((2, 7, 10, 13, 14), keys).correct_count == 2
    assert scorer.single_accuracy(14, keys).correct_count == 0
    assert [scorer.hit(t, keys[0]) for t in (2, 7, 10, 13, 14)] == [False, True, True, True, False]
    assert [scorer.hit(t, keys[1]) for t in (2, 7, 10, 13, 14)] == [True, False, True, True, False]


def test_scorer_vote_agrees_with_bitmask_path():
    keys = sorted(VOTING_TRUTHS)
    scorer = Scorer(voting_matrix(), VOTING_TRUTHS)
    for k in range(1, 6):
        for score in scorer.sweep(k, keys):
            assert score.correct_count == sum(scorer.vote(score.turns, key).correct for key in keys)


def test_perfect_and_hopeless_turns():
    votes = {("n", str(i)): {1: "gout", 2: "asthma"} for i in range(10)}
    truths = {k: ["gout"] for k in votes}
    keys = sorted(votes)
    assert single_accuracy(matrix_from(votes), 1, keys, truths).accuracy == 1.0
    assert single_accuracy(matrix_from(votes), 2, keys, truths).accuracy == 0.0


def test_singleton_combo_equals_single():
    m = voting_matrix()
    keys = sorted(VOTING_TRUTHS)
    for t in (2, 7, 10, 13, 14):
        assert combo_accuracy(m, (t,), keys, VOTING_TRUTHS).correct_count == single_accuracy(m, t, keys, VOTING_TRUTHS).correct_count


def test_sweep_counts():
    votes = {("n", "m"): {t: "gout" for t in range(1, 7)}}
    truths = {("n", "m"): ["gout"]}
    assert len(sweep_combinations(matrix_from(votes), 2, [("n", "m")], truths)) == 15 == math.comb(6, 2)
    votes18 = {("n", "m"): {t: "gout" for t in range(1, 19)}}
    assert len(sweep_combinations(matrix_from(votes18), 18, [("n", "m")], truths)) == 1
    with pytest.raises(ValueError):
        sweep_combinations(matrix_from(votes), 7, [("n", "m")], truths)


def test_missing_cell_is_an_error():
    m = matrix_from({("n", "a"): {1: "x"}, ("n", "b"): {2: "y"}})
    with pytest.raises(KeyError):
        Scorer(m, {("n", "a"): ["x"], ("n", "b"): ["y"]}).single_accuracy(1, [("n", "b")])


def test_combination_score_validation():
    with pytest.raises(ValueError):
        CombinationScore((3, 1), "train", 1, 2)
    with pytest.raises(ValueError):
        CombinationScore((1,), "train", 3, 2)


def test_sort_order_and_csv_round_trip(tmp_path):
    scores = [
        CombinationScore((1, 3), "train", 1, 2),
        CombinationScore((1, 2), "train", 1, 2),
        CombinationScore((2, 3), "train", 2, 2),
    ]
    ordered = sort_scores(scores)
    assert [s.turns for s in ordered] == [(2, 3), (1, 2), (1, 3)]
    write_scores_csv(ordered, tmp_path / "s.csv")
    assert read_scores_csv(tmp_path / "s.csv") == ordered
    assert (tmp_path / "s.csv").read_text().splitlines()[1] == "2;3,train,2,2,1.000000"
