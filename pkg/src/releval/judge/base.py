"""Judge interface, verdict types, label parsing and the retrying single-call path."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

from ..errors import InputError, InvariantViolation, JudgeError, TransportError, Unparseable
from ..rng import SplitMix64


@dataclass(frozen=True)
class JudgeInput:
    query_id: str
    item_id: str
    query: str
    item_text: str

    @property
    def rendered(self) -> str:
        return f"query: {self.query}\n{self.item_text}"


@dataclass(frozen=True)
class JudgeScores:
    p0: float
    p1: float
    p2: float

    def __post_init__(self):
        vals = (self.p0, self.p1, self.p2)
        if any(not (0.0 <= v <= 1.0) or math.isnan(v) for v in vals):
            raise InputError(f"scores must lie in [0, 1]: {vals}")
        if abs(sum(vals) - 1.0) > 1e-6:
            raise InputError(f"scores must sum to 1 (within 1e-6): {vals}")

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "JudgeScores":
        if len(values) != 3:
            raise InputError(f"expected 3 scores, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_list(self) -> list[float]:
        return [self.p0, self.p1, self.p2]

    def argmax(self) -> int:
        """Index of the largest score; ties go to the higher label."""
        vals = self.as_list()
        best = max(vals)
        return max(i for i, v in enumerate(vals) if v == best)


@dataclass(frozen=True)
class JudgeVerdict:
    query_id: str
    item_id: str
    label: int
    judge_id: str
    scores: JudgeScores | None = None
    raw: str | None = None
    latency_ms: float = 0.0
    attempts: int = field(default=1, compare=False)

    def __post_init__(self):
        if self.label not in (0, 1, 2):
            raise InvariantViolation(f"verdict label {self.label!r} outside {{0, 1, 2}}")
        if self.scores is not None and self.scores.argmax() != self.label:
            raise InvariantViolation(
                f"verdict label {self.label} disagrees with argmax of scores {self.scores.as_list()}")

    def to_json(self) -> dict:
        return {"query_id": self.query_id, "item_id": self.item_id, "judge_id": self.judge_id,
                "label": self.label,
                "scores": self.scores.as_list() if self.scores is not None else None,
                "raw": self.raw, "latency_ms": self.latency_ms}

    @classmethod
    def from_json(cls, row: Mapping) -> "JudgeVerdict":
        scores = row.get("scores")
        return cls(str(row["query_id"]), str(row["item_id"]), int(row["label"]),
                   str(row["judge_id"]),
                   JudgeScores.from_list(scores) if scores is not None else None,
                   row.get("raw"), float(row.get("latency_ms", 0.0)))


_LABEL_WORDS = {"0": 0, "1": 1, "2": 2, "irrelevant": 0, "related": 1, "relevant": 2}
_EDGE_PUNCT = ".,;:!?()[]{}\"'`*"


def parse_label(raw: str) -> int:
    """Map a free-text model answer to a label.

    Only the first line is read.  Tokens are whitespace-delimited words with
    surrounding punctuation stripped; the first token that is exactly one of
    0/1/2/irrelevant/related/relevant (case-insensitive) wins.
    """
    first = raw.strip().split("\n", 1)[0] if raw else ""
    for token in first.split():
        token = token.strip(_EDGE_PUNCT).lower()
        if token in _LABEL_WORDS:
            return _LABEL_WORDS[token]
    raise Unparseable(raw)


class RetryableError(JudgeError):
    """Transport failure, 429 or 5xx: worth another attempt."""


class Judge:
    """Base class.  Subclasses implement one attempt in :meth:`judge`."""

    judge_id: str = "judge"
    template_version: str = "none"
    # False means the batch executor must serialise calls
    concurrent_safe: bool = True

    def judge(self, inp: JudgeInput) -> JudgeVerdict:
        raise NotImplementedError


class OracleJudge(Judge):
    """Echoes fixture labels; for tests and for human-label re-enactment."""

    template_version = "oracle"

    def __init__(self, labels: Mapping[tuple[str, str], int], judge_id: str = "oracle",
                 delay: Callable[[JudgeInput], float] | None = None):
        self.labels = dict(labels)
        self.judge_id = judge_id
        self.delay = delay

    def judge(self, inp: JudgeInput) -> JudgeVerdict:
        if self.delay is not None:
            time.sleep(self.delay(inp))
        try:
            label = self.labels[(inp.query_id, inp.item_id)]
        except KeyError:
            raise JudgeError(f"no fixture label for ({inp.query_id}, {inp.item_id})") from None
        return JudgeVerdict(inp.query_id, inp.item_id, int(label), self.judge_id)


class NoisyOracleJudge(OracleJudge):
    """Oracle whose label is swapped for a different one with probability ``noise_rate``.

    The swap decision for a pair depends only on (seed, query_id, item_id).
    """

    def __init__(self, labels: Mapping[tuple[str, str], int], noise_rate: float, seed: int,
                 judge_id: str = "noisy_oracle"):
        super().__init__(labels, judge_id)
        if not 0.0 <= noise_rate <= 1.0:
            raise InputError("noise_rate must lie in [0, 1]")
        self.noise_rate = noise_rate
        self.seed = seed
        self.template_version = f"noisy-oracle-{noise_rate!r}-{seed}"

    def judge(self, inp: JudgeInput) -> JudgeVerdict:
        v = super().judge(inp)
        rng = SplitMix64.stream(self.seed, "noisy_oracle", inp.query_id, inp.item_id)
        if rng.random() < self.noise_rate:
            v = replace(v, label=(v.label + 1 + rng.below(2)) % 3)
        return v


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay_ms: float = 500.0
    backoff_factor: float = 2.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise InputError("max_attempts must be >= 1")
        if self.base_delay_ms < 0:
            raise InputError("base_delay_ms must be >= 0")
        if self.backoff_factor <= 1:
            raise InputError("backoff_factor must be > 1")

    def delay_ms(self, attempt: int) -> float:
        """Wait after failed attempt number ``attempt`` (1-based)."""
        return self.base_delay_ms * self.backoff_factor ** (attempt - 1)

    def delays_ms(self) -> list[float]:
        return [self.delay_ms(a) for a in range(1, self.max_attempts)]


NO_RETRY = RetryPolicy(max_attempts=1, base_delay_ms=0.0)


def judge_one(judge: Judge, inp: JudgeInput, retry: RetryPolicy = NO_RETRY,
              sleep: Callable[[float], None] = time.sleep) -> JudgeVerdict:
    """One verdict, retrying only retryable failures with exponential backoff.

    ``sleep`` takes seconds; injecting it makes the backoff schedule observable.
    """
    if not inp.item_text or not inp.rendered.strip():
        raise InputError("rendered input must be non-empty")
    attempt = 1
    while True:
        try:
            v = judge.judge(inp)
        except RetryableError as exc:
            if attempt >= retry.max_attempts:
                raise TransportError(f"{exc} (gave up after {attempt} attempt(s))",
                                     raw=exc.raw, attempts=attempt) from exc
            sleep(retry.delay_ms(attempt) / 1000.0)
            attempt += 1
            continue
        except JudgeError as exc:
            exc.attempts = attempt
            raise
        return replace(v, attempts=attempt) if v.attempts != attempt else v
