from .base import (NO_RETRY, Judge, JudgeInput, JudgeScores, JudgeVerdict, NoisyOracleJudge, OracleJudge,
                   RetryableError, RetryPolicy, judge_one, parse_label)
from .batch import BatchItem, BatchProgress, judge_batch, write_verdicts
from .cache import CachingJudge, ReplayJudge, VerdictCache, cache_key
from .remote import (ENDPOINT_ENV, PROMPT_TEMPLATE, PROMPT_TEMPLATE_VERSION, TOKEN_ENV, ChatJudge,
                     RemoteJudge, render_prompt)

__all__ = [
    "NO_RETRY", "Judge", "JudgeInput", "JudgeScores", "JudgeVerdict", "NoisyOracleJudge", "OracleJudge",
    "RetryableError", "RetryPolicy", "judge_one", "parse_label",
    "BatchItem", "BatchProgress", "judge_batch", "write_verdicts",
    "CachingJudge", "ReplayJudge", "VerdictCache", "cache_key",
    "ENDPOINT_ENV", "PROMPT_TEMPLATE", "PROMPT_TEMPLATE_VERSION", "TOKEN_ENV", "ChatJudge",
    "RemoteJudge", "render_prompt",
]
