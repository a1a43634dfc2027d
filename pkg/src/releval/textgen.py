"""Model-input rendering and seeded training-time augmentations."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Sequence

from .dataset import ItemRecord, Qip, QueryRecord
from .errors import InputError
from .rng import SplitMix64

# (record attribute, rendered key) in canonical order; description always last
ITEM_LINES = (
    ("title", "title"),
    ("product_type", "product type"),
    ("brand", "brand"),
    ("color", "color"),
    ("gender", "gender"),
    ("description", "description"),
)
DROPPABLE = ("product_type", "description", "brand")


@dataclass(frozen=True)
class InputVariant:
    """Item-data level: 1 = attributes only, 2 and 3 = attributes + description.

    2 and 3 render identically; they differ in how many queries each described
    item is paired with (see ``dataset.limit_queries_per_item``).
    """

    id: int = 2

    def __post_init__(self):
        if self.id not in (1, 2, 3):
            raise InputError(f"input variant must be 1, 2 or 3; got {self.id!r}")

    @property
    def include_description(self) -> bool:
        return self.id != 1


@dataclass(frozen=True)
class AugmentationConfig:
    feature_dropout_rates: dict = field(default_factory=dict)
    random_negative_rate: float = 0.0
    query_noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name, rate in self.feature_dropout_rates.items():
            if name not in DROPPABLE:
                raise InputError(f"feature dropout not defined for {name!r}")
            _check_rate(rate, f"dropout rate for {name}")
        _check_rate(self.random_negative_rate, "random_negative_rate")
        _check_rate(self.query_noise_rate, "query_noise_rate")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be an unsigned 64-bit integer")

    def to_json(self) -> dict:
        return {"feature_dropout_rates": dict(self.feature_dropout_rates),
                "random_negative_rate": self.random_negative_rate,
                "query_noise_rate": self.query_noise_rate, "seed": self.seed}


def _check_rate(rate: float, what: str) -> None:
    if not 0.0 <= rate <= 1.0:
        raise InputError(f"{what} must lie in [0, 1]; got {rate!r}")


def render_item(item: ItemRecord, variant: InputVariant = InputVariant()) -> str:
    lines = []
    for attr, key in ITEM_LINES:
        if attr == "description" and not variant.include_description:
            continue
        value = getattr(item, attr)
        if value is not None:
            lines.append(f"{key}: {value}")
    return "\n".join(lines)


def render_input(query: QueryRecord | str, item: ItemRecord,
                 variant: InputVariant = InputVariant()) -> str:
    text = query.text if isinstance(query, QueryRecord) else query
    return f"query: {text}\n{render_item(item, variant)}"


def apply_feature_dropout(item: ItemRecord, config: AugmentationConfig, qip_index: int) -> ItemRecord:
    rng = SplitMix64.stream(config.seed, "feature_dropout", qip_index)
    dropped = {}
    for name in DROPPABLE:
        # draw for every field regardless of its rate so streams stay aligned
        u = rng.random()
        if u < config.feature_dropout_rates.get(name, 0.0):
            dropped[name] = None
    return replace(item, **dropped) if dropped else item


def perturb_query(query: str, rate: float, seed: int, index: int) -> str:
    """Character-level typo noise.

    Each source position is hit with probability ``rate``; a hit applies an
    adjacent transposition, a deletion, or a duplication (uniform choice).
    A transposition consumes the following character.  A deletion that would
    leave the query empty is skipped.
    """
    _check_rate(rate, "query noise rate")
    if rate == 0.0 or not query:
        return query
    rng = SplitMix64.stream(seed, "query_noise", index)
    out: list[str] = []
    n = len(query)
    i = 0
    while i < n:
        ch = query[i]
        if rng.random() < rate:
            op = rng.below(3)
            if op == 0 and i + 1 < n:
                out.append(query[i + 1])
                out.append(ch)
                i += 2
                continue
            if op == 1:
                if out or i + 1 < n:
                    i += 1
                    continue
            elif op == 2:
                out.append(ch)
        out.append(ch)
        i += 1
    return "".join(out)


@dataclass
class NegativeSample:
    qips: list[Qip]
    requested: int
    skipped: int


def sample_random_negatives(qips: Sequence[Qip], items: Sequence[ItemRecord],
                            rate: float, seed: int) -> NegativeSample:
    """Draw ``floor(rate * len(qips))`` synthetic irrelevant pairs.

    The query comes from a uniformly chosen QIP; the item is uniform over the
    pool minus every item already paired with that query (observed or drawn
    earlier).  Draws with nothing left to pick are skipped and counted.
    """
    _check_rate(rate, "random negative rate")
    if not items:
        raise InputError("item pool is empty")
    # decimal keeps floor(0.29 * 100) == 29
    requested = int(Decimal(repr(float(rate))) * len(qips))
    paired: dict[str, set[str]] = {}
    for q in qips:
        paired.setdefault(q.query.query_id, set()).add(q.item.item_id)
    pool = sorted({it.item_id: it for it in items}.values(), key=lambda it: it.item_id)
    out, skipped = [], 0
    for j in range(requested):
        rng = SplitMix64.stream(seed, "random_negatives", j)
        query = qips[rng.below(len(qips))].query
        taken = paired[query.query_id]
        candidates = [it for it in pool if it.item_id not in taken]
        if not candidates:
            skipped += 1
            continue
        item = candidates[rng.below(len(candidates))]
        taken.add(item.item_id)
        out.append(Qip(query, item, 0))
    return NegativeSample(out, requested, skipped)


def augment(qips: Sequence[Qip], config: AugmentationConfig, items: Sequence[ItemRecord] | None = None) -> list[Qip]:
    """Apply dropout and query noise per QIP, then append random negatives."""
    out = []
    for idx, q in enumerate(qips):
        item = apply_feature_dropout(q.item, config, idx)
        query = q.query
        if config.query_noise_rate > 0:
            noisy = perturb_query(query.text, config.query_noise_rate, config.seed, idx)
            query = replace(query, text=noisy)
        out.append(Qip(query, item, q.label))
    if config.random_negative_rate > 0:
        pool = items if items is not None else [q.item for q in qips]
        out.extend(sample_random_negatives(qips, pool, config.random_negative_rate, config.seed).qips)
    return out
