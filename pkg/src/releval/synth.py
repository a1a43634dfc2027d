"""Synthetic fixtures: QIP corpora, annotation rounds, and planted ranking experiments.

All generators are driven by :class:`~releval.rng.SplitMix64` so the same seed
yields the same files everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .dataset import AnnotationRound, ItemRecord, Qip, QueryRecord
from .experiment import Experiment
from .metrics import EQUAL, MINUS, PLUS
from .rng import SplitMix64

BRANDS = ["graco", "nike", "pioneer", "lego", "dyson", "ikea", "sony", "hasbro"]
TYPES = ["crib mattress", "running shoes", "car speakers", "building set", "vacuum",
         "bookshelf", "headphones", "board game"]
COLORS = ["white", "black", "red", "blue", "grey"]
GENDERS = ["unisex", "women", "men"]


def _pick(rng: SplitMix64, seq):
    return seq[rng.below(len(seq))]


def make_corpus(n_queries: int = 20, items_per_query: int = 6, seed: int = 0) -> list[Qip]:
    """Small labelled catalogue: label follows brand/type match with the query."""
    rng = SplitMix64.stream(seed, "corpus")
    qips = []
    for q in range(n_queries):
        brand, ptype = _pick(rng, BRANDS), _pick(rng, TYPES)
        words = f"{brand} {ptype}" if rng.random() < 0.5 else ptype
        if rng.random() < 0.3:
            words = f"{_pick(rng, COLORS)} {words}"
        specificity = "narrow" if len(words.split()) >= 4 else "broad"
        query = QueryRecord(f"q{q:03d}", words, specificity=specificity,
                            grammar="brand" if brand in words else "product_type")
        for i in range(items_per_query):
            ib = brand if rng.random() < 0.5 else _pick(rng, BRANDS)
            it = ptype if rng.random() < 0.6 else _pick(rng, TYPES)
            label = 2 if (it == ptype and (ib == brand or brand not in words)) else (
                1 if it == ptype or ib == brand else 0)
            color = _pick(rng, COLORS)
            desc = (f"A {color} {it} from {ib}." if rng.random() < 0.8 else None)
            item = ItemRecord(f"i{q:03d}_{i}", f"{ib.title()} {it.title()}", product_type=it,
                              brand=ib, color=color,
                              gender=_pick(rng, GENDERS) if rng.random() < 0.5 else None,
                              description=desc)
            qips.append(Qip(query, item, label))
    return qips


def make_annotations(qips: list[Qip], disagreement: float = 0.2, seed: int = 0) -> list[AnnotationRound]:
    """Two rounds per QIP; when they disagree a third round is added (the gold label)."""
    rng = SplitMix64.stream(seed, "annotations")
    out = []
    for q in qips:
        qid, iid, gold = q.query.query_id, q.item.item_id, q.label
        r1 = gold
        r2 = gold if rng.random() >= disagreement else (gold + 1 + rng.below(2)) % 3
        out.append(AnnotationRound(qid, iid, 1, r1, "human"))
        out.append(AnnotationRound(qid, iid, 2, r2, "vendor"))
        if r1 != r2:
            out.append(AnnotationRound(qid, iid, 3, gold, "human"))
    return out


# -- planted experiments --------------------------------------------------

@dataclass
class PlantedExperiments:
    experiments: list[Experiment]
    human_labels: dict
    model_labels: dict
    human_verdicts: dict[str, str]
    model_verdicts: dict[str, str]
    query_text: dict[str, str] = field(default_factory=dict)


def _query_labels(rng: SplitMix64, m: int) -> list[int]:
    """Best-first labels with at least one 2 and one 0, not all equal."""
    labels = [rng.below(3) for _ in range(m)]
    labels[0], labels[-1] = 2, 0
    return sorted(labels, reverse=True)


# (human verdict, model verdict) for corrupted experiments, cycled through
FLIPS = [(PLUS, EQUAL), (EQUAL, PLUS), (MINUS, EQUAL), (EQUAL, MINUS), (PLUS, MINUS), (MINUS, PLUS)]


def planted_experiments(n_experiments: int = 50, n_queries: int = 12, ranking_len: int = 10,
                        n_corrupted: int = 0, seed: int = 0) -> PlantedExperiments:
    """Experiments whose human verdict is forced by construction, plus model labels
    that equal the human ones except on ``n_corrupted`` experiments, where a
    label corruption forces a chosen different verdict at every cutoff.

    Forcing works by ordering: '+' puts the ideal order in the variation and the
    reversed order in control (and '-' the opposite); '=' alternates the two per
    query pair so the differences cancel exactly.  Corruptions either zero
    labels (collapsing differences to 0) or mirror labels (reversing which arm
    looks ideal), so every forced '+' or '-' has same-signed differences on all queries.
    """
    if n_queries % 2 or n_queries < 4:
        raise ValueError("n_queries must be even (so '=' experiments cancel) and at least 4")
    rng = SplitMix64.stream(seed, "planted")
    base_cycle = [PLUS, EQUAL, MINUS, EQUAL]
    exps, human, model = [], {}, {}
    hv, mv, qtext = {}, {}, {}
    for e in range(n_experiments):
        exp_id = f"exp{e:03d}"
        if e < n_corrupted:
            h, m = FLIPS[e % len(FLIPS)]
        else:
            h = base_cycle[e % len(base_cycle)]
            m = h
        exp = Experiment(exp_id)
        for j in range(n_queries):
            qid = f"{exp_id}_q{j:02d}"
            qtext[qid] = f"synthetic query {e} {j}"
            items = [f"{qid}_i{r}" for r in range(ranking_len)]
            labs = _query_labels(rng, ranking_len)
            for it, lab in zip(items, labs):
                human[(qid, it)] = lab
            ideal, worst = list(items), list(reversed(items))
            variation_wins = {PLUS: True, MINUS: False, EQUAL: j % 2 == 0}[h]
            exp.variation[qid] = ideal if variation_wins else worst
            exp.control[qid] = worst if variation_wins else ideal
            corrupted = {it: lab for it, lab in zip(items, labs)}
            if h != m:
                if m == EQUAL:
                    corrupted = dict.fromkeys(items, 0)
                elif h == EQUAL:
                    # mirror the queries that push against the model verdict
                    if variation_wins != (m == PLUS):
                        corrupted = {it: lab for it, lab in zip(items, reversed(labs))}
                else:
                    corrupted = {it: lab for it, lab in zip(items, reversed(labs))}
            for it, lab in corrupted.items():
                model[(qid, it)] = lab
        exps.append(exp)
        hv[exp_id], mv[exp_id] = h, m
    return PlantedExperiments(exps, human, model, hv, mv, qtext)


# -- lab data -------------------------------------------------------------

LAB_VOCAB = (
    ["zebra", "quartz", "jigsaw", "fjord", "vortex", "kayak", "sphinx", "wizard"],
    ["mellow", "lagoon", "pebble", "meadow", "willow", "hollow", "pillow", "yellow"],
    ["brisk", "crest", "drift", "flint", "grist", "prism", "trust", "twist"],
)


def separable_texts(n: int = 500, seed: int = 0) -> tuple[list[str], list[int]]:
    """Rendered-style texts whose class is carried by disjoint vocabularies."""
    rng = SplitMix64.stream(seed, "separable")
    texts, labels = [], []
    for i in range(n):
        c = i % 3
        words = [_pick(rng, LAB_VOCAB[c]) for _ in range(4)]
        texts.append(f"query: {words[0]} {words[1]}\ntitle: {words[2].title()} {words[3]}")
        labels.append(c)
    return texts, labels
