import json
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from releval.errors import CacheMiss, InputError, InvariantViolation, JudgeError, TransportError, Unparseable
from releval.judge import (NO_RETRY, CachingJudge, ChatJudge, Judge, JudgeInput, JudgeScores,
                           JudgeVerdict, NoisyOracleJudge, OracleJudge, RemoteJudge, ReplayJudge,
                           RetryableError, RetryPolicy, VerdictCache, cache_key, judge_batch,
                           judge_one, parse_label, render_prompt, write_verdicts)
from releval.judge.batch import BatchProgress


def inp(n=0, query="red shoes", text="title: Red Shoe"):
    return JudgeInput(f"q{n}", f"i{n}", query, text)


# -- types and parsing ----------------------------------------------------

@pytest.mark.parametrize("raw,label", [
    ("2", 2), ("1\n", 1), ("  0", 0), ("Relevant", 2), ("related.", 1), ("IRRELEVANT!", 0),
    ("Label: 2", 2), ("**1**", 1), ("The answer is 0.", 0), ("(2)", 2),
    ("2\n0", 2), ("relevant\nirrelevant", 2), ("\n2", 2),
])
def test_parse_label_accepts(raw, label):
    assert parse_label(raw) == label


@pytest.mark.parametrize("raw", ["", "   ", "3", "twelve", "relevance", "22", "no\n2", "maybe"])
def test_parse_label_rejects(raw):
    with pytest.raises(Unparseable, match="unparseable") as info:
        parse_label(raw)
    assert info.value.raw == raw


def test_scores_validation_and_argmax():
    assert JudgeScores(0.1, 0.2, 0.7).argmax() == 2
    assert JudgeScores(0.4, 0.4, 0.2).argmax() == 1
    assert JudgeScores(0.5, 0.0, 0.5).argmax() == 2
    with pytest.raises(InputError):
        JudgeScores(0.5, 0.5, 0.5)
    with pytest.raises(InputError):
        JudgeScores(-0.1, 0.6, 0.5)
    with pytest.raises(InputError):
        JudgeScores.from_list([1.0, 0.0])


def test_verdict_invariants_and_round_trip():
    with pytest.raises(InvariantViolation):
        JudgeVerdict("q", "i", 3, "j")
    with pytest.raises(InvariantViolation):
        JudgeVerdict("q", "i", 0, "j", JudgeScores(0.1, 0.1, 0.8))
    v = JudgeVerdict("q", "i", 2, "j", JudgeScores(0.1, 0.1, 0.8), "2", 12.5, attempts=3)
    assert JudgeVerdict.from_json(json.loads(json.dumps(v.to_json()))) == v


# -- local judges ---------------------------------------------------------

def test_oracle_echoes_fixture_labels():
    labels = {(f"q{n}", f"i{n}"): n % 3 for n in range(9)}
    judge = OracleJudge(labels)
    assert [judge.judge(inp(n)).label for n in range(9)] == [n % 3 for n in range(9)]
    with pytest.raises(JudgeError):
        judge.judge(inp(99))


def test_noisy_oracle_rate_and_determinism():
    labels = {(f"q{n}", f"i{n}"): n % 3 for n in range(4000)}
    a = NoisyOracleJudge(labels, 0.25, seed=3)
    b = NoisyOracleJudge(labels, 0.25, seed=3)
    va = [a.judge(inp(n)).label for n in range(4000)]
    assert va == [b.judge(inp(n)).label for n in range(4000)]
    flipped = sum(v != n % 3 for n, v in enumerate(va)) / 4000
    assert abs(flipped - 0.25) < 0.03
    assert NoisyOracleJudge(labels, 0.0, 1).judge(inp(5)).label == 2


# -- retry ----------------------------------------------------------------

class Flaky(Judge):
    judge_id = "flaky"

    def __init__(self, failures, exc=RetryableError):
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def judge(self, i):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc("boom")
        return JudgeVerdict(i.query_id, i.item_id, 1, self.judge_id)


def test_retry_schedule():
    assert RetryPolicy().delays_ms() == [500.0, 1000.0]
    assert RetryPolicy(5, 100, 3).delays_ms() == [100, 300, 900, 2700]
    with pytest.raises(InputError):
        RetryPolicy(backoff_factor=1.0)
    with pytest.raises(InputError):
        RetryPolicy(max_attempts=0)


def test_two_transient_failures_then_success():
    sleeps = []
    judge = Flaky(2)
    v = judge_one(judge, inp(), RetryPolicy(3, 500, 2), sleep=sleeps.append)
    assert v.label == 1 and v.attempts == 3 and judge.calls == 3
    assert sleeps == [0.5, 1.0]


def test_retries_exhausted_carry_attempt_count():
    sleeps = []
    with pytest.raises(TransportError) as info:
        judge_one(Flaky(10), inp(), RetryPolicy(3, 10, 2), sleep=sleeps.append)
    assert info.value.attempts == 3 and sleeps == [0.01, 0.02]


def test_non_retryable_errors_fail_fast():
    judge = Flaky(1, exc=JudgeError)
    with pytest.raises(JudgeError) as info:
        judge_one(judge, inp(), RetryPolicy(), sleep=lambda s: None)
    assert judge.calls == 1 and info.value.attempts == 1


def test_empty_rendered_input_rejected():
    with pytest.raises(InputError):
        judge_one(OracleJudge({}), inp(text=""))


# -- HTTP judges ----------------------------------------------------------

def mock_judge(handler, **kwargs):
    return RemoteJudge("http://judge.test", "secret", transport=httpx.MockTransport(handler), **kwargs)


def test_remote_request_shape_and_parsing():
    seen = []

    def handler(request):
        seen.append(request)
        return httpx.Response(200, json={"label": 2, "scores": [0.1, 0.2, 0.7]})

    v = mock_judge(handler).judge(inp())
    req = seen[0]
    assert req.url.path == "/judge" and req.headers["authorization"] == "Bearer secret"
    assert json.loads(req.content) == {"query": "red shoes", "item_text": "title: Red Shoe",
                                       "template_version": "relevance-prompt-v1"}
    assert v.label == 2 and v.scores.as_list() == [0.1, 0.2, 0.7] and v.judge_id == "remote"


@pytest.mark.parametrize("payload,message", [
    ({"label": "2"}, "unparseable"), ({"label": 4}, "unparseable"), ({}, "unparseable"),
    ({"label": True}, "unparseable"), ({"label": 0, "scores": [0.1, 0.1, 0.8]}, "contradicts"),
    ({"label": 1, "scores": [0.5, 0.6]}, "bad scores"),
])
def test_remote_rejects_bad_payloads(payload, message):
    judge = mock_judge(lambda r: httpx.Response(200, json=payload))
    with pytest.raises(JudgeError, match=message):
        judge.judge(inp())


def test_remote_label_from_scores_alone():
    judge = mock_judge(lambda r: httpx.Response(200, json={"scores": [0.6, 0.3, 0.1]}))
    assert judge.judge(inp()).label == 0


@pytest.mark.parametrize("status,retryable", [(429, True), (500, True), (503, True),
                                              (400, False), (401, False), (404, False)])
def test_remote_status_classification(status, retryable):
    judge = mock_judge(lambda r: httpx.Response(status, text="nope"))
    with pytest.raises(JudgeError) as info:
        judge.judge(inp())
    assert isinstance(info.value, RetryableError) is retryable
    assert info.value.raw == "nope"


def test_remote_retries_through_judge_one():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) <= 2:
            return httpx.Response(503)
        return httpx.Response(200, json={"label": 1})

    sleeps = []
    v = judge_one(mock_judge(handler), inp(), RetryPolicy(), sleep=sleeps.append)
    assert v.attempts == 3 and len(calls) == 3 and sleeps == [0.5, 1.0]


def test_remote_transport_error_is_retryable():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    with pytest.raises(TransportError) as info:
        judge_one(mock_judge(handler), inp(), RetryPolicy(2, 0.0, 2), sleep=lambda s: None)
    assert info.value.attempts == 2


def test_missing_endpoint(monkeypatch):
    monkeypatch.delenv("REL_EVAL_ENDPOINT", raising=False)
    with pytest.raises(InputError):
        RemoteJudge()
    monkeypatch.setenv("REL_EVAL_ENDPOINT", "http://env.test/")
    assert RemoteJudge().endpoint == "http://env.test"


def test_chat_judge_parses_content():
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content))
        return httpx.Response(200, json={"choices": [{"message": {"content": "Related."}}]})

    judge = ChatJudge("http://chat.test", transport=httpx.MockTransport(handler), model="m")
    v = judge.judge(inp())
    assert v.label == 1 and v.raw == "Related."
    assert bodies[0]["model"] == "m" and bodies[0]["temperature"] == 0
    assert bodies[0]["messages"][0]["content"] == render_prompt(inp())
    assert render_prompt(inp()).endswith("query: red shoes\ntitle: Red Shoe\n")


def test_chat_judge_unparseable_keeps_raw():
    judge = ChatJudge("http://chat.test", transport=httpx.MockTransport(
        lambda r: httpx.Response(200, json={"choices": [{"message": {"content": "not sure"}}]})))
    with pytest.raises(Unparseable) as info:
        judge.judge(inp())
    assert info.value.raw == "not sure"


class _Handler(BaseHTTPRequestHandler):
    fail_first = 0
    count = 0
    lock = threading.Lock()

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        with self.lock:
            type(self).count += 1
            n = type(self).count
        if n <= self.fail_first:
            self.send_response(503)
            self.end_headers()
            return
        label = {"alpha": 2, "beta": 1}.get(body["query"], 0)
        data = json.dumps({"label": label}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def judge_server():
    handler = type("H", (_Handler,), {"count": 0, "fail_first": 2})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}", handler
    server.shutdown()
    server.server_close()


def test_remote_against_real_http_server(judge_server):
    url, handler = judge_server
    judge = RemoteJudge(url, timeout_s=5)
    inputs = [inp(0, "alpha"), inp(1, "beta"), inp(2, "gamma")]
    items = judge_batch(judge, inputs, 1, RetryPolicy(3, 1, 2))
    assert [it.verdict.label for it in items] == [2, 1, 0]
    assert items[0].attempts == 3 and handler.count == 5
    judge.close()


# -- batch ----------------------------------------------------------------

class Sleepy(Judge):
    judge_id = "sleepy"

    def __init__(self, seed=0, safe=True):
        self.rng = random.Random(seed)
        self.lock = threading.Lock()
        self.in_flight = 0
        self.peak = 0
        self.concurrent_safe = safe

    def judge(self, i):
        with self.lock:
            self.in_flight += 1
            self.peak = max(self.peak, self.in_flight)
            delay = self.rng.uniform(0, 0.004)
        time.sleep(delay)
        with self.lock:
            self.in_flight -= 1
        return JudgeVerdict(i.query_id, i.item_id, int(i.query_id[1:]) % 3, self.judge_id)


@pytest.mark.parametrize("limit", [1, 3, 8])
def test_batch_order_and_bounded_parallelism(limit):
    judge = Sleepy(limit)
    inputs = [inp(n) for n in range(60)]
    progress = BatchProgress()
    items = judge_batch(judge, inputs, limit, progress=progress)
    assert [it.input for it in items] == inputs
    assert [it.verdict.label for it in items] == [n % 3 for n in range(60)]
    assert judge.peak <= limit and progress.max_in_flight <= limit
    assert progress.done == progress.succeeded == 60 and progress.in_flight == 0


def test_single_flight_judges_are_serialised():
    judge = Sleepy(1, safe=False)
    judge_batch(judge, [inp(n) for n in range(20)], 8)
    assert judge.peak == 1


def test_batch_records_failures_per_item():
    labels = {(f"q{n}", f"i{n}"): 1 for n in range(5) if n != 2}
    items = judge_batch(OracleJudge(labels), [inp(n) for n in range(5)], 2)
    assert [it.ok for it in items] == [True, True, False, True, True]
    assert isinstance(items[2].error, JudgeError)
    with pytest.raises(InputError):
        judge_batch(OracleJudge(labels), [], 0)


# -- cache ----------------------------------------------------------------

def test_cache_key_depends_on_all_parts():
    base = cache_key("j", "v1", "query: a")
    assert len(base) == 32
    assert base == cache_key("j", "v1", "query: a")
    assert len({base, cache_key("k", "v1", "query: a"), cache_key("j", "v2", "query: a"),
                cache_key("j", "v1", "query: b")}) == 4


def test_caching_then_replay_is_byte_identical(tmp_path):
    path = tmp_path / "cache.jsonl"
    chat = ChatJudge("http://chat.test", judge_id="chat", transport=httpx.MockTransport(
        lambda r: httpx.Response(200, json={"choices": [{"message": {"content": "2"}}]})))
    inputs = [inp(n, query=f"query {n}") for n in range(10)]
    caching = CachingJudge(chat, VerdictCache(path))
    first = judge_batch(caching, inputs, 4)
    assert caching.fresh == 10 and chat.requests == 10
    write_verdicts(tmp_path / "a.jsonl", first)

    replay = ReplayJudge(VerdictCache(path), "chat", chat.template_version)
    write_verdicts(tmp_path / "b.jsonl", judge_batch(replay, inputs, 4))
    warm = CachingJudge(chat, VerdictCache(path))
    write_verdicts(tmp_path / "c.jsonl", judge_batch(warm, inputs, 4))
    assert warm.hits == 10 and warm.fresh == 0 and chat.requests == 10
    a = (tmp_path / "a.jsonl").read_bytes()
    assert a == (tmp_path / "b.jsonl").read_bytes() == (tmp_path / "c.jsonl").read_bytes()


def test_replay_miss():
    with pytest.raises(CacheMiss, match="miss"):
        ReplayJudge(VerdictCache(), "j", "v").judge(inp())


def test_caching_judge_is_single_flight_per_key():
    class Counting(Sleepy):
        calls = 0

        def judge(self, i):
            with self.lock:
                self.calls += 1
            return super().judge(i)

    inner = Counting()
    caching = CachingJudge(inner, VerdictCache())
    # 40 inputs, 4 distinct rendered texts, different ids
    inputs = [JudgeInput(f"q{n}", f"i{n}", f"text {n % 4}", "title: x") for n in range(40)]
    items = judge_batch(caching, inputs, 8)
    assert inner.calls == caching.fresh == 4 and caching.hits == 36
    assert [it.verdict.query_id for it in items] == [f"q{n}" for n in range(40)]


def test_corrupt_cache_is_an_input_error(tmp_path):
    path = tmp_path / "cache.jsonl"
    path.write_text('{"key": "k"}\n')
    with pytest.raises(InputError):
        VerdictCache(path)


@given(st.lists(st.tuples(st.text(min_size=1, max_size=8), st.integers(0, 2)), max_size=15))
def test_cache_persistence_round_trip(tmp_path_factory, entries):
    path = tmp_path_factory.mktemp("c") / "cache.jsonl"
    cache = VerdictCache(path)
    expected = {}
    for text, label in entries:
        key = cache_key("j", "v", text)
        cache.put(key, JudgeVerdict("q", "i", label, "j"))
        expected.setdefault(key, label)
    reloaded = VerdictCache(path)
    assert len(reloaded) == len(expected)
    assert all(reloaded.get(k).label == v for k, v in expected.items())


def test_no_retry_constant():
    assert NO_RETRY.max_attempts == 1
