"""Offline re-enactment of control-vs-variation ranking experiments."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .io import format_table, iter_jsonl, write_csv
from .metrics import MINUS, PLUS, VERDICTS, TestResult, ndcg_at_k, paired_t_test, verdict

log = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10)
MAX_RANK = 10
ARMS = ("control", "variation")


@dataclass
class Experiment:
    experiment_id: str
    control: dict[str, list[str]] = field(default_factory=dict)
    variation: dict[str, list[str]] = field(default_factory=dict)

    def arm(self, name: str) -> dict[str, list[str]]:
        return self.control if name == "control" else self.variation

    def pairs(self) -> set[tuple[str, str]]:
        return {(q, i) for arm in (self.control, self.variation)
                for q, items in arm.items() for i in items}


def load_experiments(path: str | Path) -> list[Experiment]:
    """Read ``experiments.jsonl``; experiments keep first-appearance order."""
    exps: dict[str, Experiment] = {}
    for lineno, line in iter_jsonl(path):
        try:
            row = json.loads(line)
            exp_id, qid, arm = str(row["experiment_id"]), str(row["query_id"]), row["arm"]
            ranking = row["ranking"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputError(f"{path}:{lineno}: malformed experiment record ({exc})") from exc
        if arm not in ARMS:
            raise InputError(f"{path}:{lineno}: arm must be 'control' or 'variation', got {arm!r}")
        if not isinstance(ranking, list) or not ranking or len(ranking) > MAX_RANK:
            raise InputError(f"{path}:{lineno}: ranking must list 1..{MAX_RANK} item ids")
        exp = exps.setdefault(exp_id, Experiment(exp_id))
        target = exp.arm(arm)
        if qid in target:
            raise InputError(f"{path}:{lineno}: duplicate {arm} ranking for query {qid!r} "
                             f"in experiment {exp_id!r}")
        target[qid] = [str(i) for i in ranking]
    return list(exps.values())


def experiments_to_rows(experiments: Iterable[Experiment]) -> list[dict]:
    rows = []
    for exp in experiments:
        for arm in ARMS:
            for qid, items in exp.arm(arm).items():
                rows.append({"experiment_id": exp.experiment_id, "query_id": qid,
                             "arm": arm, "ranking": list(items)})
    return rows


@dataclass
class ExperimentOutcome:
    experiment_id: str
    n_queries: int
    results: dict[int, TestResult]
    verdicts: dict[int, str]
    excluded_queries: list[str] = field(default_factory=list)


def score_experiment(exp: Experiment, labels: Mapping[tuple[str, str], int],
                     ks: Sequence[int] = DEFAULT_KS, alpha: float = 0.05) -> ExperimentOutcome:
    """Per-query nDCG(variation) - nDCG(control) at each k, then a paired t-test.

    A query whose items are unlabeled in both arms is dropped with a warning;
    any other missing label is an error.
    """
    if set(exp.control) != set(exp.variation):
        only_c = sorted(set(exp.control) - set(exp.variation))
        only_v = sorted(set(exp.variation) - set(exp.control))
        raise InputError(f"experiment {exp.experiment_id!r}: arms cover different queries "
                         f"(control only: {only_c}, variation only: {only_v})")
    diffs: dict[int, list[float]] = {k: [] for k in ks}
    excluded = []
    for qid in exp.control:
        c_items, v_items = exp.control[qid], exp.variation[qid]
        c_lab = [labels.get((qid, i)) for i in c_items]
        v_lab = [labels.get((qid, i)) for i in v_items]
        if all(x is None for x in c_lab + v_lab):
            excluded.append(qid)
            continue
        for items, labs in ((c_items, c_lab), (v_items, v_lab)):
            for item, lab in zip(items, labs):
                if lab is None:
                    raise InputError(f"experiment {exp.experiment_id!r}: no label for "
                                     f"(query_id={qid!r}, item_id={item!r})")
        for k in ks:
            diffs[k].append(ndcg_at_k(v_lab, k) - ndcg_at_k(c_lab, k))
    if excluded:
        log.warning("experiment %s: excluded %d fully unlabeled query(ies)",
                    exp.experiment_id, len(excluded))
    results = {k: paired_t_test(diffs[k]) for k in ks}
    return ExperimentOutcome(exp.experiment_id, len(exp.control) - len(excluded), results,
                             {k: verdict(r, alpha) for k, r in results.items()}, excluded)


@dataclass(frozen=True)
class AgreementMatrix:
    """Rows are the human verdict, columns the model verdict, both in (+, =, -) order."""

    counts: np.ndarray
    k: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (3, 3) or (counts < 0).any():
            raise InputError("agreement matrix must be a 3x3 array of non-negative counts")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_counts(cls, counts, k: int, rows: str = "human") -> "AgreementMatrix":
        """``rows='model'`` accepts the transposed layout (model verdicts down the side)."""
        counts = np.asarray(counts, dtype=np.int64)
        if rows == "model":
            counts = counts.T
        elif rows != "human":
            raise InputError("rows must be 'human' or 'model'")
        return cls(counts, k)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def cell(self, human: str, model: str) -> int:
        return int(self.counts[VERDICTS.index(human), VERDICTS.index(model)])


def agreement_matrix(human: Mapping[str, str], model: Mapping[str, str], k: int) -> AgreementMatrix:
    missing_m = sorted(set(human) - set(model))
    missing_h = sorted(set(model) - set(human))
    if missing_m or missing_h:
        raise InputError(f"verdicts missing: model lacks {missing_m}, human lacks {missing_h}")
    counts = np.zeros((3, 3), dtype=np.int64)
    for exp_id, h in human.items():
        m = model[exp_id]
        if h not in VERDICTS or m not in VERDICTS:
            raise InputError(f"experiment {exp_id!r}: bad verdict symbol(s) {h!r}, {m!r}")
        counts[VERDICTS.index(h), VERDICTS.index(m)] += 1
    return AgreementMatrix(counts, k)


def combined_score(m: AgreementMatrix) -> float:
    """Fraction of experiments where model and human verdicts agree."""
    if m.total == 0:
        raise InputError("combined score of an empty agreement matrix")
    return int(np.trace(m.counts)) / m.total


def reversal_check(m: AgreementMatrix) -> bool:
    """True when no significant human verdict was flipped to the opposite sign."""
    return m.cell(PLUS, MINUS) == 0 and m.cell(MINUS, PLUS) == 0


# -- whole re-enactment ---------------------------------------------------

@dataclass
class Reenactment:
    ks: tuple[int, ...]
    human: list[ExperimentOutcome]
    models: dict[str, list[ExperimentOutcome]]
    matrices: dict[str, dict[int, AgreementMatrix]]


def verdicts_at(outcomes: Iterable[ExperimentOutcome], k: int) -> dict[str, str]:
    return {o.experiment_id: o.verdicts[k] for o in outcomes}


def reenact(experiments: Sequence[Experiment], human_labels: Mapping[tuple[str, str], int],
            model_labels: Mapping[str, Mapping[tuple[str, str], int]],
            ks: Sequence[int] = DEFAULT_KS, alpha: float = 0.05) -> Reenactment:
    ks = tuple(ks)
    human = [score_experiment(e, human_labels, ks, alpha) for e in experiments]
    models, matrices = {}, {}
    for judge_id, labels in model_labels.items():
        outs = [score_experiment(e, labels, ks, alpha) for e in experiments]
        models[judge_id] = outs
        matrices[judge_id] = {k: agreement_matrix(verdicts_at(human, k), verdicts_at(outs, k), k)
                              for k in ks}
    return Reenactment(ks, human, models, matrices)


def _num(x: float) -> str:
    return format(x, ".12g")


def write_outcomes_csv(path: str | Path, outcomes: Iterable[ExperimentOutcome],
                       judge_id: str | None = None) -> None:
    header = ["experiment_id", "k", "n_queries", "mean_diff", "t", "p", "verdict"]
    rows = []
    for o in outcomes:
        for k, r in o.results.items():
            rows.append([o.experiment_id, k, o.n_queries, _num(r.mean_diff),
                         _num(r.t_statistic), _num(r.p_value), o.verdicts[k]])
    if judge_id is not None:
        header = ["judge_id"] + header
        rows = [[judge_id] + r for r in rows]
    write_csv(path, header, rows)


AGREEMENT_HEADER = ["judge_id", "k", "human", "model_plus", "model_equal", "model_minus",
                    "total", "combined_score", "no_reversal"]


def agreement_rows(matrices: Mapping[str, Mapping[int, AgreementMatrix]]) -> list[list]:
    rows = []
    for judge_id, by_k in matrices.items():
        for k, m in by_k.items():
            score = f"{combined_score(m):.3f}"
            ok = str(reversal_check(m)).lower()
            for i, h in enumerate(VERDICTS):
                rows.append([judge_id, k, h, *(int(c) for c in m.counts[i]), m.total, score, ok])
    return rows


def agreement_table(matrices: Mapping[str, Mapping[int, AgreementMatrix]]) -> str:
    """Human-readable agreement report, one block per judge with all cutoffs side by side."""
    blocks = []
    for judge_id, by_k in matrices.items():
        header = ["model \\ human"]
        for k in by_k:
            header += [f"@{k} +", f"@{k} =", f"@{k} -", f"@{k} comb"]
        rows = []
        for j, mv in enumerate(VERDICTS):
            row = [f"{judge_id} {mv}"]
            for k, m in by_k.items():
                # printed with model verdicts as rows, matching the usual published layout
                row += [int(m.counts[i, j]) for i in range(3)]
                row.append(f"{combined_score(m):.3f}" if j == 0 else "")
            rows.append(row)
        flags = ", ".join(f"@{k}: {'no reversals' if reversal_check(m) else 'REVERSALS'}"
                          for k, m in by_k.items())
        blocks.append(format_table(header, rows) + flags + "\n")
    return "\n".join(blocks)
