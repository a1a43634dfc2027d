"""Verdict cache and the judges built on it (replay, read-through)."""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import replace
from pathlib import Path

from ..errors import CacheMiss, InputError
from ..io import dumps, iter_jsonl
from .base import Judge, JudgeInput, JudgeVerdict


def cache_key(judge_id: str, template_version: str, rendered: str) -> str:
    """128-bit BLAKE2b over (judge id, template version, rendered input)."""
    payload = json.dumps([judge_id, template_version, rendered], ensure_ascii=False)
    return hashlib.blake2b(payload.encode("utf-8"), digest_size=16).hexdigest()


class VerdictCache:
    """Append-only JSONL store of ``{"key", "verdict"}`` records.

    Lookups are lock-free dict reads; writes take a lock and append one line.
    With ``path=None`` the cache lives in memory only.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for lineno, line in iter_jsonl(self.path):
                try:
                    rec = json.loads(line)
                    self._entries[rec["key"]] = rec["verdict"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise InputError(f"{self.path}:{lineno}: corrupt cache record") from exc

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> JudgeVerdict | None:
        row = self._entries.get(key)
        return JudgeVerdict.from_json(row) if row is not None else None

    def put(self, key: str, verdict: JudgeVerdict) -> None:
        row = verdict.to_json()
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = row
            if self.path is not None:
                with self.path.open("a", encoding="utf-8", newline="\n") as fh:
                    fh.write(dumps({"key": key, "verdict": row}) + "\n")


class ReplayJudge(Judge):
    """Serves verdicts recorded earlier for ``judge_id``; never calls out."""

    def __init__(self, cache: VerdictCache, judge_id: str, template_version: str):
        self.cache = cache
        self.judge_id = judge_id
        self.template_version = template_version

    def judge(self, inp: JudgeInput) -> JudgeVerdict:
        key = cache_key(self.judge_id, self.template_version, inp.rendered)
        v = self.cache.get(key)
        if v is None:
            raise CacheMiss(key)
        return replace(v, query_id=inp.query_id, item_id=inp.item_id)


class CachingJudge(Judge):
    """Read-through cache in front of another judge.  Counts hits and fresh calls.

    Calls are single-flight per key: concurrent inputs with the same rendered
    text wait for one inner call, so ``fresh`` equals the number of distinct
    uncached keys regardless of scheduling.
    """

    def __init__(self, inner: Judge, cache: VerdictCache):
        self.inner = inner
        self.cache = cache
        self.judge_id = inner.judge_id
        self.template_version = inner.template_version
        self.concurrent_safe = inner.concurrent_safe
        self.hits = 0
        self.fresh = 0
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    def judge(self, inp: JudgeInput) -> JudgeVerdict:
        key = cache_key(self.judge_id, self.template_version, inp.rendered)
        with self._lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            v = self.cache.get(key)
            if v is None:
                v = self.inner.judge(inp)
                self.cache.put(key, v)
                with self._lock:
                    self.fresh += 1
                return v
        with self._lock:
            self.hits += 1
        return replace(v, query_id=inp.query_id, item_id=inp.item_id)
