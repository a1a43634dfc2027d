"""HTTP judges: the native ``/judge`` protocol and a chat-completions adapter.

Each ``judge`` call is a single attempt.  429, 5xx and transport errors raise
:class:`RetryableError`; :func:`judge_one` owns the retry loop.
"""

from __future__ import annotations

import json
import os
import threading
import time

import httpx

from ..errors import InputError, JudgeError
from .base import Judge, JudgeInput, JudgeScores, JudgeVerdict, RetryableError, parse_label

ENDPOINT_ENV = "REL_EVAL_ENDPOINT"
TOKEN_ENV = "REL_EVAL_TOKEN"

PROMPT_TEMPLATE_VERSION = "relevance-prompt-v1"
PROMPT_TEMPLATE = """\
You grade search results for an online store.
Read the shopper's query and the product below, then answer with a single digit:
2 if the product is what the query asks for,
1 if the product is close to what was asked for but not it (for example an accessory, a different size, or a similar product),
0 if the product does not serve the query.
Answer with the digit only.

{rendered}
"""


def render_prompt(inp: JudgeInput) -> str:
    return PROMPT_TEMPLATE.format(rendered=inp.rendered)


def resolve_endpoint(endpoint: str | None, token: str | None) -> tuple[str, str | None]:
    endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
    token = token or os.environ.get(TOKEN_ENV)
    if not endpoint:
        raise InputError(f"no judge endpoint configured (set {ENDPOINT_ENV} or the config)")
    return endpoint.rstrip("/"), token


class _HttpJudge(Judge):
    path = "/"

    def __init__(self, endpoint: str | None = None, token: str | None = None, *,
                 judge_id: str = "remote", timeout_s: float = 30.0,
                 transport: httpx.BaseTransport | None = None, clock=time.perf_counter):
        self.endpoint, token = resolve_endpoint(endpoint, token)
        self.judge_id = judge_id
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        # httpx.Client is safe to share across threads
        self.client = httpx.Client(headers=headers, timeout=timeout_s, transport=transport)
        self.clock = clock
        self.requests = 0
        self._count_lock = threading.Lock()

    def close(self) -> None:
        self.client.close()

    def _post(self, body: dict) -> tuple[dict, float]:
        with self._count_lock:
            self.requests += 1
        start = self.clock()
        try:
            resp = self.client.post(self.endpoint + self.path, json=body)
        except httpx.TransportError as exc:
            raise RetryableError(f"transport error: {exc.__class__.__name__}: {exc}") from exc
        latency_ms = (self.clock() - start) * 1000.0
        if resp.status_code == 429 or resp.status_code >= 500:
            raise RetryableError(f"HTTP {resp.status_code}", raw=resp.text)
        if resp.status_code != 200:
            raise JudgeError(f"HTTP {resp.status_code}", raw=resp.text)
        try:
            payload = resp.json()
        except ValueError:
            raise JudgeError("response is not JSON", raw=resp.text) from None
        if not isinstance(payload, dict):
            raise JudgeError("response is not a JSON object", raw=resp.text)
        return payload, latency_ms


class RemoteJudge(_HttpJudge):
    """``POST {endpoint}/judge`` -> ``{"label": 0|1|2, "scores": [p0, p1, p2]?}``."""

    path = "/judge"

    def __init__(self, endpoint: str | None = None, token: str | None = None, *,
                 template_version: str = PROMPT_TEMPLATE_VERSION, **kwargs):
        super().__init__(endpoint, token, **kwargs)
        self.template_version = template_version

    def judge(self, inp: JudgeInput) -> JudgeVerdict:
        body = {"query": inp.query, "item_text": inp.item_text,
                "template_version": self.template_version}
        payload, latency_ms = self._post(body)
        raw = _payload_text(payload)
        scores = None
        if payload.get("scores") is not None:
            try:
                scores = JudgeScores.from_list(payload["scores"])
            except (InputError, TypeError, ValueError) as exc:
                raise JudgeError(f"bad scores: {exc}", raw=raw) from None
        label = payload.get("label")
        if label is None and scores is not None:
            label = scores.argmax()
        if isinstance(label, bool) or not isinstance(label, int) or label not in (0, 1, 2):
            raise JudgeError("unparseable", raw=raw)
        if scores is not None and scores.argmax() != label:
            raise JudgeError(f"label {label} contradicts scores {scores.as_list()}", raw=raw)
        return JudgeVerdict(inp.query_id, inp.item_id, label, self.judge_id,
                            scores, None, round(latency_ms, 3))


class ChatJudge(_HttpJudge):
    """OpenAI-style ``/chat/completions`` with the fixed grading prompt."""

    path = "/chat/completions"

    def __init__(self, endpoint: str | None = None, token: str | None = None, *,
                 model: str = "default", max_tokens: int = 4, **kwargs):
        super().__init__(endpoint, token, **kwargs)
        self.model = model
        self.max_tokens = max_tokens
        self.template_version = PROMPT_TEMPLATE_VERSION

    def judge(self, inp: JudgeInput) -> JudgeVerdict:
        body = {"model": self.model, "temperature": 0, "max_tokens": self.max_tokens,
                "messages": [{"role": "user", "content": render_prompt(inp)}]}
        payload, latency_ms = self._post(body)
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise JudgeError("malformed chat completion", raw=_payload_text(payload)) from None
        label = parse_label(content or "")
        return JudgeVerdict(inp.query_id, inp.item_id, label, self.judge_id,
                            None, content, round(latency_ms, 3))


def _payload_text(payload: dict) -> str:
    return json.dumps(payload, ensure_ascii=False, sort_keys=True)
