"""QIP ingestion, multi-round label resolution and corpus statistics."""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import InputError, ProtocolViolation, UnresolvedLabel
from .io import iter_jsonl, write_jsonl
from .rng import SplitMix64

log = logging.getLogger(__name__)


class Relevance(IntEnum):
    IRRELEVANT = 0
    RELATED = 1
    RELEVANT = 2


LABELS = (0, 1, 2)
OPTIONAL_ITEM_FIELDS = ("product_type", "brand", "color", "gender", "description")
SPECIFICITIES = ("broad", "narrow")


def check_label(value) -> int:
    # bool is an int subclass; reject it explicitly
    if isinstance(value, bool) or not isinstance(value, int) or value not in LABELS:
        raise InputError(f"relevance label must be one of 0, 1, 2; got {value!r}")
    return int(value)


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    title: str
    product_type: str | None = None
    brand: str | None = None
    color: str | None = None
    gender: str | None = None
    description: str | None = None

    def __post_init__(self):
        if not self.item_id:
            raise InputError("item_id must be non-empty")
        if not self.title:
            raise InputError("title must be non-empty")


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str
    specificity: str | None = None
    grammar: str | None = None

    def __post_init__(self):
        if not self.query_id or not self.text:
            raise InputError("query_id and query text must be non-empty")
        if self.specificity is not None and self.specificity not in SPECIFICITIES:
            raise InputError(f"specificity must be 'broad' or 'narrow'; got {self.specificity!r}")


@dataclass(frozen=True)
class Qip:
    query: QueryRecord
    item: ItemRecord
    label: int | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.query.query_id, self.item.item_id)

    def to_json(self) -> dict:
        row = {"query_id": self.query.query_id, "query": self.query.text,
               "item_id": self.item.item_id, "title": self.item.title}
        for name in OPTIONAL_ITEM_FIELDS:
            value = getattr(self.item, name)
            if value is not None:
                row[name] = value
        if self.label is not None:
            row["label"] = self.label
        if self.query.specificity is not None:
            row["specificity"] = self.query.specificity
        if self.query.grammar is not None:
            row["grammar"] = self.query.grammar
        return row

    @classmethod
    def from_json(cls, row: Mapping) -> "Qip":
        for key in ("query_id", "query", "item_id", "title"):
            if key not in row:
                raise InputError(f"missing required field {key!r}")
            if not isinstance(row[key], str):
                raise InputError(f"field {key!r} must be a string")
        optional = {}
        for name in OPTIONAL_ITEM_FIELDS + ("specificity", "grammar"):
            value = row.get(name)
            if value is not None and not isinstance(value, str):
                raise InputError(f"field {name!r} must be a string")
            optional[name] = value
        label = row.get("label")
        if label is not None:
            label = check_label(label)
        query = QueryRecord(row["query_id"], row["query"],
                            specificity=optional["specificity"], grammar=optional["grammar"])
        item = ItemRecord(row["item_id"], row["title"],
                          **{name: optional[name] for name in OPTIONAL_ITEM_FIELDS})
        return cls(query, item, label)


@dataclass
class LineError:
    line: int
    message: str


@dataclass
class IngestResult:
    records: list = field(default_factory=list)
    errors: list[LineError] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return len(self.errors)


def ingest_qips(path: str | Path) -> IngestResult:
    """Read ``qips.jsonl``.  Malformed lines are skipped and reported, never fatal."""
    result = IngestResult()
    for lineno, line in iter_jsonl(path):
        try:
            row = json.loads(line)
            if not isinstance(row, dict):
                raise InputError("expected a JSON object")
            result.records.append(Qip.from_json(row))
        except (json.JSONDecodeError, InputError) as exc:
            msg = exc.msg if isinstance(exc, json.JSONDecodeError) else str(exc)
            result.errors.append(LineError(lineno, msg))
    if result.errors:
        log.warning("%s: skipped %d malformed line(s)", path, len(result.errors))
    return result


def write_qips(path: str | Path, qips: Iterable[Qip]) -> int:
    return write_jsonl(path, (q.to_json() for q in qips))


@dataclass(frozen=True)
class AnnotationRound:
    query_id: str
    item_id: str
    round: int
    label: int
    source: str = "human"

    def __post_init__(self):
        if self.round not in (1, 2, 3):
            raise InputError(f"round must be 1, 2 or 3; got {self.round!r}")
        check_label(self.label)

    @classmethod
    def from_json(cls, row: Mapping) -> "AnnotationRound":
        for key in ("query_id", "item_id", "round", "label"):
            if key not in row:
                raise InputError(f"missing required field {key!r}")
        rnd = row["round"]
        if isinstance(rnd, bool) or not isinstance(rnd, int):
            raise InputError(f"round must be an integer; got {rnd!r}")
        return cls(str(row["query_id"]), str(row["item_id"]), rnd,
                   check_label(row["label"]), str(row.get("source", "human")))


def ingest_annotations(path: str | Path) -> IngestResult:
    result = IngestResult()
    for lineno, line in iter_jsonl(path):
        try:
            row = json.loads(line)
            if not isinstance(row, dict):
                raise InputError("expected a JSON object")
            result.records.append(AnnotationRound.from_json(row))
        except (json.JSONDecodeError, InputError) as exc:
            msg = exc.msg if isinstance(exc, json.JSONDecodeError) else str(exc)
            result.errors.append(LineError(lineno, msg))
    return result


@dataclass(frozen=True)
class ResolvedQip:
    query_id: str
    item_id: str
    final_label: int
    rounds_used: int
    adjudicated: bool = False

    def to_json(self) -> dict:
        return {"query_id": self.query_id, "item_id": self.item_id,
                "final_label": self.final_label, "rounds_used": self.rounds_used,
                "adjudicated": self.adjudicated}


def resolve_majority(rounds: Sequence[AnnotationRound]) -> ResolvedQip:
    """Final label of one QIP from its annotation rounds.

    Rounds 1 and 2 agreeing settles the label.  Otherwise round 3 must exist
    and the label held by two of the three rounds wins; when all three differ
    the third round acts as adjudicator and the result is flagged.
    """
    if not rounds:
        raise ProtocolViolation("no annotation rounds")
    keys = {(r.query_id, r.item_id) for r in rounds}
    if len(keys) != 1:
        raise InputError(f"rounds span several QIPs: {sorted(keys)}")
    qid, iid = next(iter(keys))
    by_round: dict[int, int] = {}
    for r in rounds:
        if r.round in by_round:
            raise ProtocolViolation(f"duplicate round {r.round} for ({qid}, {iid})")
        by_round[r.round] = r.label
    for needed in (1, 2):
        if needed not in by_round:
            raise ProtocolViolation(f"missing round {needed} for ({qid}, {iid})")
    first, second = by_round[1], by_round[2]
    third = by_round.get(3)
    if first == second:
        if third is not None:
            raise ProtocolViolation(
                f"round 3 present although rounds 1 and 2 agree for ({qid}, {iid})")
        return ResolvedQip(qid, iid, first, 2, False)
    if third is None:
        raise UnresolvedLabel(f"unresolved: rounds 1 and 2 disagree and round 3 is missing "
                              f"for ({qid}, {iid})")
    if third in (first, second):
        return ResolvedQip(qid, iid, third, 3, False)
    return ResolvedQip(qid, iid, third, 3, True)


def group_rounds(annotations: Iterable[AnnotationRound]) -> dict[tuple[str, str], list[AnnotationRound]]:
    """Group by QIP in first-seen order; duplicate ``(query, item, round)`` is a hard error."""
    groups: dict[tuple[str, str], list[AnnotationRound]] = {}
    seen = set()
    for a in annotations:
        triple = (a.query_id, a.item_id, a.round)
        if triple in seen:
            raise ProtocolViolation(f"duplicate annotation for {triple}")
        seen.add(triple)
        groups.setdefault((a.query_id, a.item_id), []).append(a)
    return groups


def resolve_all(annotations: Iterable[AnnotationRound]) -> list[ResolvedQip]:
    return [resolve_majority(rs) for rs in group_rounds(annotations).values()]


def write_resolved(path: str | Path, resolved: Iterable[ResolvedQip]) -> int:
    return write_jsonl(path, (r.to_json() for r in resolved))


@dataclass(frozen=True)
class LabelShare:
    count: int
    percent: float  # truncated to 2 decimals


def label_distribution_from_counts(counts: Mapping[int, int]) -> dict[int, LabelShare]:
    """Per-label count and percentage; percentages are truncated (not rounded) to 0.01."""
    counts = {check_label(k): int(v) for k, v in counts.items()}
    if any(v < 0 for v in counts.values()):
        raise InputError("label counts must be non-negative")
    total = sum(counts.values())
    if total == 0:
        raise InputError("label distribution of an empty collection")
    out = {}
    for label in sorted(LABELS, reverse=True):
        c = counts.get(label, 0)
        # integer arithmetic keeps the truncation exact
        out[label] = LabelShare(c, (c * 10000 // total) / 100)
    return out


def label_distribution(labels: Iterable[int]) -> dict[int, LabelShare]:
    return label_distribution_from_counts(Counter(check_label(v) for v in labels))


@dataclass(frozen=True)
class DatasetStats:
    n_queries: int
    n_items: int
    queries_per_item: float
    items_per_query: float


def dataset_stats(pairs: Iterable) -> DatasetStats:
    """Accepts ``Qip``/``ResolvedQip`` objects or ``(query_id, item_id)`` tuples.

    Means are pair count over unique entity count; an empty input reports 0.
    """
    n = 0
    queries, items = set(), set()
    for p in pairs:
        qid, iid = (p.query_id, p.item_id) if hasattr(p, "item_id") else (
            p.key if hasattr(p, "key") else p)
        queries.add(qid)
        items.add(iid)
        n += 1
    return DatasetStats(len(queries), len(items),
                        n / len(items) if items else 0.0,
                        n / len(queries) if queries else 0.0)


def limit_queries_per_item(qips: Sequence[Qip], max_queries: int, seed: int,
                           only_with_description: bool = True) -> list[Qip]:
    """Thin the dataset so each item pairs with at most ``max_queries`` queries.

    Used to build the sparse-description training variant.  Kept QIPs retain
    their input order; which ones survive is decided by a seeded shuffle per item.
    """
    if max_queries < 1:
        raise InputError("max_queries must be >= 1")
    by_item: dict[str, list[int]] = defaultdict(list)
    for idx, q in enumerate(qips):
        by_item[q.item.item_id].append(idx)
    keep = set()
    for item_id, idxs in by_item.items():
        if only_with_description and qips[idxs[0]].item.description is None:
            keep.update(idxs)
            continue
        order = list(idxs)
        SplitMix64.stream(seed, "limit_queries_per_item", item_id).shuffle(order)
        keep.update(order[:max_queries])
    return [q for i, q in enumerate(qips) if i in keep]


def round_labels(annotations: Iterable[AnnotationRound], round_no: int = 1) -> dict[tuple[str, str], int]:
    """Labels from a single annotation round, keyed by QIP."""
    return {(a.query_id, a.item_id): a.label for a in annotations if a.round == round_no}
