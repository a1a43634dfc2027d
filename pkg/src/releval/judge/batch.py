"""Bounded-parallel batch judging with per-item outcomes."""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from ..errors import InputError, JudgeError
from ..io import write_jsonl
from .base import Judge, JudgeInput, JudgeVerdict, NO_RETRY, RetryPolicy, judge_one


@dataclass
class BatchItem:
    index: int
    input: JudgeInput
    verdict: JudgeVerdict | None = None
    # JudgeError for judge failures; input or invariant errors are kept as raised
    error: Exception | None = None
    attempts: int = 0

    @property
    def ok(self) -> bool:
        return self.verdict is not None


@dataclass
class BatchProgress:
    total: int = 0
    done: int = 0
    succeeded: int = 0
    failed: int = 0
    in_flight: int = 0
    max_in_flight: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def started(self) -> None:
        with self._lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)

    def finished(self, ok: bool) -> None:
        with self._lock:
            self.in_flight -= 1
            self.done += 1
            if ok:
                self.succeeded += 1
            else:
                self.failed += 1


def judge_batch(judge: Judge, inputs: Sequence[JudgeInput], concurrency_limit: int = 4,
                retry: RetryPolicy = NO_RETRY, *, sleep: Callable[[float], None] = time.sleep,
                progress: BatchProgress | None = None,
                on_item: Callable[[BatchItem], None] | None = None) -> list[BatchItem]:
    """Judge every input; results come back in input order.

    At most ``concurrency_limit`` calls are in flight (one if the judge is not
    ``concurrent_safe``).  A failing item records its error and the batch goes on.
    """
    if concurrency_limit < 1:
        raise InputError("concurrency_limit must be >= 1")
    progress = progress if progress is not None else BatchProgress()
    progress.total = len(inputs)
    results = [BatchItem(i, inp) for i, inp in enumerate(inputs)]
    if not inputs:
        return results

    def run(item: BatchItem) -> None:
        progress.started()
        try:
            item.verdict = judge_one(judge, item.input, retry, sleep)
            item.attempts = item.verdict.attempts
        except JudgeError as exc:
            item.error = exc
            item.attempts = exc.attempts
        except Exception as exc:  # input or invariant errors stay per-item too
            item.error = exc
        finally:
            progress.finished(item.verdict is not None)
        if on_item is not None:
            on_item(item)

    workers = concurrency_limit if judge.concurrent_safe else 1
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="judge") as pool:
        list(pool.map(run, results))
    return results


def write_verdicts(path: str | Path, items: Iterable[BatchItem]) -> int:
    """Write successful verdicts in batch order."""
    return write_jsonl(path, (it.verdict.to_json() for it in items if it.verdict is not None))
