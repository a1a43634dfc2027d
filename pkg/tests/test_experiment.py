import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import t_two_sided_quad
from releval.errors import InputError
from releval.experiment import (AgreementMatrix, Experiment, agreement_matrix, agreement_rows,
                                agreement_table, combined_score, experiments_to_rows,
                                load_experiments, reenact, reversal_check, score_experiment,
                                write_outcomes_csv)
from releval.metrics import EQUAL, MINUS, PLUS, ndcg_at_k
from releval.rng import SplitMix64
from releval.synth import planted_experiments

verdict_sym = st.sampled_from([PLUS, EQUAL, MINUS])


def random_experiment(n_queries=50, seed=0, ideal_variation=True):
    rng = SplitMix64.stream(seed, "test-exp")
    exp, labels = Experiment("e"), {}
    for q in range(n_queries):
        qid = f"q{q}"
        items = [f"{qid}_{j}" for j in range(10)]
        labs = [rng.below(3) for _ in items]
        labels.update({(qid, i): lab for i, lab in zip(items, labs)})
        order = list(items)
        rng.shuffle(order)
        exp.control[qid] = order
        exp.variation[qid] = (sorted(order, key=lambda i: -labels[(qid, i)])
                              if ideal_variation else list(order))
    return exp, labels


def test_identical_arms_give_equal_everywhere():
    exp, labels = random_experiment(ideal_variation=False)
    out = score_experiment(exp, labels)
    assert out.verdicts == {1: EQUAL, 5: EQUAL, 10: EQUAL}
    assert all(r.mean_diff == 0 and r.p_value == 1.0 for r in out.results.values())


def test_ideal_variation_is_a_significant_win():
    exp, labels = random_experiment(50, seed=1)
    diffs = [ndcg_at_k([labels[(q, i)] for i in exp.variation[q]], 10)
             - ndcg_at_k([labels[(q, i)] for i in exp.control[q]], 10) for q in exp.control]
    assert min(diffs) >= 0 and max(diffs) > 0
    out = score_experiment(exp, labels)
    res = out.results[10]
    assert out.verdicts[10] == PLUS
    assert abs(res.p_value - t_two_sided_quad(res.t_statistic, 49)) <= 1e-6
    assert res.mean_diff == pytest.approx(np.mean(diffs), abs=1e-15)


def test_single_improvable_query_is_not_enough():
    # one positive diff among many zeros always gives t = 1
    exp, labels = random_experiment(50, seed=2, ideal_variation=False)
    q0 = "q0"
    exp.variation[q0] = sorted(exp.control[q0], key=lambda i: -labels[(q0, i)])
    if exp.variation[q0] == exp.control[q0]:
        exp.control[q0] = list(reversed(exp.control[q0]))
    res = score_experiment(exp, labels).results[10]
    assert res.t_statistic == pytest.approx(1.0, rel=1e-12)


def test_missing_labels_and_mismatched_arms():
    exp, labels = random_experiment(4)
    partial = dict(labels)
    del partial[("q1", "q1_3")]
    with pytest.raises(InputError, match=r"q1_3"):
        score_experiment(exp, partial)
    unlabeled = {k: v for k, v in labels.items() if k[0] != "q2"}
    out = score_experiment(exp, unlabeled)
    assert out.excluded_queries == ["q2"] and out.n_queries == 3
    exp.variation["extra"] = ["x"]
    with pytest.raises(InputError, match="different queries"):
        score_experiment(exp, labels)


def test_load_experiments_round_trip_and_errors(tmp_path):
    planted = planted_experiments(3, n_queries=4, ranking_len=4)
    path = tmp_path / "exps.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in experiments_to_rows(planted.experiments)))
    assert load_experiments(path) == planted.experiments
    bad = tmp_path / "bad.jsonl"
    row = {"experiment_id": "e", "query_id": "q", "arm": "control", "ranking": ["a"]}
    for broken in ({**row, "arm": "treatment"}, {**row, "ranking": []},
                   {**row, "ranking": [str(i) for i in range(11)]}, {"experiment_id": "e"}):
        bad.write_text(json.dumps(broken) + "\n")
        with pytest.raises(InputError):
            load_experiments(bad)
    bad.write_text((json.dumps(row) + "\n") * 2)
    with pytest.raises(InputError, match="duplicate"):
        load_experiments(bad)


def test_agreement_matrix_definition():
    m = agreement_matrix({"a": PLUS, "b": EQUAL}, {"a": EQUAL, "b": EQUAL}, 1)
    assert m.cell(PLUS, EQUAL) == 1 and m.cell(EQUAL, EQUAL) == 1 and m.total == 2
    with pytest.raises(InputError):
        agreement_matrix({"a": PLUS}, {"b": PLUS}, 1)
    with pytest.raises(InputError):
        agreement_matrix({"a": "?"}, {"a": PLUS}, 1)


def test_combined_and_reversal():
    bert1 = AgreementMatrix.from_counts([[61, 66, 0], [13, 444, 20], [0, 16, 98]], 1, rows="model")
    assert f"{combined_score(bert1):.3f}" == "0.840" and reversal_check(bert1)
    assert bert1.cell(human=EQUAL, model=PLUS) == 66
    flipped = AgreementMatrix(np.array([[5, 0, 1], [0, 5, 0], [0, 0, 5]]), 1)
    assert not reversal_check(flipped)
    assert reversal_check(AgreementMatrix(np.zeros((3, 3)), 1))
    with pytest.raises(InputError):
        combined_score(AgreementMatrix(np.zeros((3, 3)), 1))
    with pytest.raises(InputError):
        AgreementMatrix.from_counts(np.eye(3), 1, rows="diagonal")


def test_perfect_agreement_over_718():
    human = {f"e{i}": [PLUS] * 74 + [EQUAL] * 526 + [MINUS] * 118 for i in range(1)}["e0"]
    hv = {f"e{i}": v for i, v in enumerate(human)}
    m = agreement_matrix(hv, dict(hv), 1)
    assert np.trace(m.counts) == 718 and np.diag(m.counts).tolist() == [74, 526, 118]
    assert combined_score(m) == 1.0


@given(st.dictionaries(st.text(min_size=1, max_size=4), st.tuples(verdict_sym, verdict_sym), min_size=1))
def test_combined_score_is_agreement_rate(pairs):
    h = {k: v[0] for k, v in pairs.items()}
    m_ = {k: v[1] for k, v in pairs.items()}
    m = agreement_matrix(h, m_, 1)
    assert m.total == len(pairs)
    assert combined_score(m) == sum(a == b for a, b in pairs.values()) / len(pairs)


@pytest.mark.parametrize("n_corrupted", [0, 6, 20])
def test_planted_reenactment_recovers_matrices(n_corrupted):
    planted = planted_experiments(20, n_queries=6, n_corrupted=n_corrupted, seed=n_corrupted)
    r = reenact(planted.experiments, planted.human_labels, {"m": planted.model_labels})
    expected = agreement_matrix(planted.human_verdicts, planted.model_verdicts, 0).counts
    for k in (1, 5, 10):
        assert {o.experiment_id: o.verdicts[k] for o in r.human} == planted.human_verdicts
        np.testing.assert_array_equal(r.matrices["m"][k].counts, expected)
    assert combined_score(r.matrices["m"][10]) == (20 - n_corrupted) / 20


def test_reports(tmp_path):
    planted = planted_experiments(8, n_queries=4, n_corrupted=6)
    r = reenact(planted.experiments, planted.human_labels, {"m": planted.model_labels})
    write_outcomes_csv(tmp_path / "o.csv", r.models["m"], judge_id="m")
    rows = list(csv.reader(open(tmp_path / "o.csv")))
    assert rows[0][0] == "judge_id" and len(rows) == 1 + 8 * 3
    table_rows = agreement_rows(r.matrices)
    assert len(table_rows) == 9 and table_rows[0][:3] == ["m", 1, PLUS]
    text = agreement_table(r.matrices)
    assert "REVERSALS" in text and "0.250" in text
