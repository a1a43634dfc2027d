"""Run configuration: one JSON document, CLI flags layered on top."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import InputError
from .judge import RetryPolicy
from .textgen import AugmentationConfig, InputVariant

JUDGE_KINDS = ("oracle", "noisy_oracle", "replay", "remote", "chat")


@dataclass
class Paths:
    qips: str | None = None
    annotations: str | None = None
    resolved: str | None = None
    experiments: str | None = None
    output_dir: str = "out"
    cache: str | None = None
    # judge_id -> verdicts.jsonl, for evaluate / reenact / analyze
    verdicts: dict[str, str] = field(default_factory=dict)


@dataclass
class JudgeConfig:
    kind: str = "oracle"
    judge_id: str | None = None
    endpoint: str | None = None
    model: str = "default"
    template_version: str | None = None
    timeout_s: float = 30.0
    # noisy_oracle only: share of labels replaced
    noise_rate: float = 0.0
    retry: dict = field(default_factory=lambda: {"max_attempts": 3, "base_delay_ms": 500.0,
                                                 "backoff_factor": 2.0})

    def retry_policy(self) -> RetryPolicy:
        return RetryPolicy(**self.retry)

    @property
    def effective_id(self) -> str:
        return self.judge_id or self.kind


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    variant: int = 2
    max_queries_per_item: int = 1
    augmentation: dict = field(default_factory=dict)
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    ks: list[int] = field(default_factory=lambda: [1, 5, 10])
    alpha: float = 0.05
    concurrency_limit: int = 4
    seed: int = 0
    initial_round: int = 1
    specificity_min_tokens: int = 4
    lab: dict = field(default_factory=dict)

    def validate(self) -> None:
        InputVariant(self.variant)
        self.augmentation_config()
        if self.judge.kind not in JUDGE_KINDS:
            raise InputError(f"judge.kind must be one of {JUDGE_KINDS}, got {self.judge.kind!r}")
        self.judge.retry_policy()
        if not self.ks or any(k < 1 for k in self.ks):
            raise InputError("ks must be a non-empty list of positive cutoffs")
        if not 0 < self.alpha < 1:
            raise InputError("alpha must lie in (0, 1)")
        if self.concurrency_limit < 1:
            raise InputError("concurrency_limit must be >= 1")
        if self.initial_round not in (1, 2):
            raise InputError("initial_round must be 1 or 2")

    def augmentation_config(self) -> AugmentationConfig:
        aug = dict(self.augmentation)
        aug.setdefault("seed", self.seed)
        return AugmentationConfig(**aug)

    @property
    def out(self) -> Path:
        return Path(self.paths.output_dir)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        raw = dict(raw)
        _reject_unknown(cls, raw, "config")
        paths = raw.pop("paths", {}) or {}
        judge = raw.pop("judge", {}) or {}
        _reject_unknown(Paths, paths, "paths")
        _reject_unknown(JudgeConfig, judge, "judge")
        cfg = cls(paths=Paths(**paths), judge=JudgeConfig(**judge), **raw)
        return cfg

    def absolutize(self, base: Path) -> None:
        """Resolve relative paths against ``base`` (the config file's directory)."""
        p = self.paths
        for name in ("qips", "annotations", "resolved", "experiments", "output_dir", "cache"):
            value = getattr(p, name)
            if value is not None:
                setattr(p, name, str((base / value).resolve()))
        p.verdicts = {k: str((base / v).resolve()) for k, v in p.verdicts.items()}


def _reject_unknown(klass, raw: dict, where: str) -> None:
    known = {f.name for f in fields(klass)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InputError(f"unknown {where} key(s): {unknown}")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.absolutize(Path.cwd())
        return cfg
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise InputError("config must be a JSON object")
    cfg = RunConfig.from_dict(raw)
    cfg.absolutize(path.parent)
    return cfg
