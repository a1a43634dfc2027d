"""Cross-judge misprediction analysis: error overlap and label x specificity segments."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping

from .errors import InputError

DEFAULT_NARROW_MIN_TOKENS = 4


@dataclass(frozen=True)
class MispredictionProfile:
    query_id: str
    item_id: str
    gold: int
    predictions: Mapping[str, int]
    wrong_set: frozenset

    @property
    def all_wrong(self) -> bool:
        return len(self.wrong_set) == len(self.predictions)


def misprediction_join(verdicts: Mapping[str, Mapping[tuple[str, str], int]],
                       gold: Mapping[tuple[str, str], int]) -> list[MispredictionProfile]:
    """One profile per QIP that at least one judge got wrong, in the iteration order of ``gold``."""
    if not verdicts:
        raise InputError("no judges given")
    want = set(gold)
    for judge_id, preds in verdicts.items():
        have = set(preds)
        if have != want:
            missing = sorted(want - have)[:10]
            extra = sorted(have - want)[:10]
            raise InputError(f"judge {judge_id!r} coverage mismatch: missing {missing}, "
                             f"unexpected {extra}")
    out = []
    for key, g in gold.items():
        preds = {j: int(v[key]) for j, v in verdicts.items()}
        wrong = frozenset(j for j, p in preds.items() if p != g)
        if wrong:
            out.append(MispredictionProfile(key[0], key[1], int(g), preds, wrong))
    return out


@dataclass(frozen=True)
class OverlapStats:
    all_wrong_fraction: float
    same_label_fraction: float
    n_profiles: int
    n_all_wrong: int
    n_same_label: int
    # set when a fraction had an empty denominator and is reported as 0
    undefined: bool = False


def overlap_stats(profiles: list[MispredictionProfile], judge_count: int) -> OverlapStats:
    """Share of mispredicted QIPs that every judge got wrong, and among those
    the share where all judges gave the same wrong label."""
    if judge_count < 1:
        raise InputError("judge_count must be >= 1")
    if not profiles:
        return OverlapStats(0.0, 0.0, 0, 0, 0, undefined=True)
    all_wrong = [p for p in profiles if len(p.wrong_set) == judge_count]
    same = [p for p in all_wrong if len(set(p.predictions.values())) == 1]
    if not all_wrong:
        return OverlapStats(0.0, 0.0, len(profiles), 0, 0, undefined=True)
    return OverlapStats(len(all_wrong) / len(profiles), len(same) / len(all_wrong),
                        len(profiles), len(all_wrong), len(same))


def specificity_heuristic(query: str, tag: str | None = None,
                          min_tokens: int = DEFAULT_NARROW_MIN_TOKENS) -> str:
    """Dataset tag if present; otherwise whitespace token count >= ``min_tokens`` means narrow.

    Approximate by design: only a fallback for untagged queries.
    """
    if tag is not None:
        if tag not in ("broad", "narrow"):
            raise InputError(f"specificity tag must be 'broad' or 'narrow', got {tag!r}")
        return tag
    return "narrow" if len(query.split()) >= min_tokens else "broad"


@dataclass(frozen=True)
class Segment:
    key: tuple
    count: int
    percent: float


def segment_breakdown(profiles: list[MispredictionProfile], segment_of: Mapping[str, str],
                      judge_count: int | None = None, common_only: bool = True) -> list[Segment]:
    """Percentages of common mispredictions per (gold label, segment).

    ``segment_of`` maps query_id to its segment (specificity or a grammar tag).
    Rows cover every label x segment value in ``segment_of``, ordered by label then segment.
    """
    pool = profiles
    if common_only:
        pool = [p for p in profiles
                if len(p.wrong_set) == (judge_count if judge_count is not None else len(p.predictions))]
    counts = Counter()
    for p in pool:
        try:
            seg = segment_of[p.query_id]
        except KeyError:
            raise InputError(f"no segment for query {p.query_id!r}") from None
        counts[(p.gold, seg)] += 1
    total = sum(counts.values())
    segments = sorted(set(segment_of.values()))
    rows = []
    for label in (0, 1, 2):
        for seg in segments:
            c = counts.get((label, seg), 0)
            rows.append(Segment((label, seg), c, 100.0 * c / total if total else 0.0))
    return rows
