import json
import threading

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poseforge.chat_backend import (
    ChatBackend,
    CompletionRequest,
    DiskCache,
    HttpTransport,
    MockTransport,
    RateLimiter,
    Reply,
    mock_reply_text,
)
from poseforge.errors import AuthError, ExhaustedRetries, ProviderError, RateLimited, TransientError
from poseforge.prompt_builder import Message, MessageSequence


def _req(i=0, kind="complex_reasoning", text=None):
    msgs = (Message("system", "sys"), Message("user", text or f"context {i}"))
    return CompletionRequest(MessageSequence(kind, i, msgs), "teacher-model", 0.7, 256)


class Scripted:
    """Fails the first ``failures[rid]`` calls for a request, then succeeds."""

    def __init__(self, failures=None, error=TransientError, poison=()):
        self.failures = dict(failures or {})
        self.error = error
        self.poison = set(poison)
        self.calls = 0
        self.lock = threading.Lock()

    def send(self, req):
        with self.lock:
            self.calls += 1
            rid = req.request_id
            if rid in self.poison:
                raise TransientError("poisoned")
            if self.failures.get(rid, 0) > 0:
                self.failures[rid] -= 1
                raise self.error("scripted failure")
        return Reply(f"ok {req.image_id}")


def _backend(transport, tmp_path=None, **kw):
    kw.setdefault("sleep", lambda s: None)
    return ChatBackend(transport, cache_dir=tmp_path / "cache" if tmp_path else None, **kw)


def test_request_id_stable():
    assert _req(1).request_id == _req(1).request_id
    assert _req(1).request_id != _req(2).request_id


@given(st.lists(st.text(min_size=1, max_size=40), min_size=2, max_size=30, unique=True))
def test_request_ids_distinct_for_distinct_prompts(texts):
    ids = {_req(0, text=t).request_id for t in texts}
    assert len(ids) == len(texts)


def test_request_id_depends_on_model():
    a = _req(1)
    b = CompletionRequest(a.messages, "other-model", 0.7, 256)
    assert a.request_id != b.request_id


def test_second_call_hits_cache(tmp_path):
    t = MockTransport()
    b = _backend(t, tmp_path)
    first = b.complete(_req(3))
    second = b.complete(_req(3))
    assert not first.from_cache and second.from_cache
    assert first.text == second.text
    assert t.calls == 1
    rid = _req(3).request_id
    assert (tmp_path / "cache" / rid[:2] / f"{rid}.json").is_file()


def test_mock_is_function_of_request_id():
    assert mock_reply_text(_req(5)) == mock_reply_text(_req(5))
    assert MockTransport().send(_req(5)).text == MockTransport().send(_req(5)).text


def test_two_transient_failures_then_success():
    rid = _req(1).request_id
    b = _backend(Scripted({rid: 2}), max_attempts=3)
    res = b.complete(_req(1))
    assert res.attempt_count == 3
    assert res.finish_reason == "stop"


def test_rate_limited_is_retried():
    rid = _req(1).request_id
    b = _backend(Scripted({rid: 1}, error=RateLimited), max_attempts=2)
    assert b.complete(_req(1)).attempt_count == 2


def test_exhausted_retries():
    rid = _req(1).request_id
    t = Scripted({rid: 10})
    with pytest.raises(ExhaustedRetries):
        _backend(t, max_attempts=3).complete(_req(1))
    assert t.calls == 3


def test_auth_error_not_retried():
    rid = _req(1).request_id
    t = Scripted({rid: 1}, error=AuthError)
    with pytest.raises(AuthError):
        _backend(t, max_attempts=5).complete(_req(1))
    assert t.calls == 1


def test_backoff_schedule_grows():
    sleeps = []
    rid = _req(1).request_id
    b = ChatBackend(Scripted({rid: 3}), max_attempts=4, base_delay=1.0, backoff_factor=2.0, jitter=0.25, sleep=sleeps.append)
    b.complete(_req(1))
    assert len(sleeps) == 3
    for k, s in enumerate(sleeps):
        assert 2 ** k <= s <= 2 ** k * 1.25


def test_batch_bounded_concurrency(tmp_path):
    t = MockTransport(delay=0.02)
    b = _backend(t, tmp_path)
    reqs = [_req(i) for i in range(10)]
    report = b.complete_batch(reqs, max_in_flight=3)
    assert set(report.results) == {r.request_id for r in reqs}
    assert t.peak_in_flight <= 3
    assert report.ok


def test_batch_empty():
    report = _backend(MockTransport()).complete_batch([], max_in_flight=2)
    assert len(report) == 0 and report.results == {}


def test_batch_poisoned_request():
    reqs = [_req(i) for i in range(10)]
    poisoned = reqs[4].request_id
    report = _backend(Scripted(poison={poisoned}), max_attempts=3).complete_batch(reqs, max_in_flight=4)
    assert len(report.results) == 9
    assert list(report.failures) == [poisoned]
    assert isinstance(report.failures[poisoned], ExhaustedRetries)


def test_warm_cache_rerun_zero_calls(tmp_path):
    t = MockTransport()
    b = _backend(t, tmp_path)
    reqs = [_req(i) for i in range(6)]
    cold = b.complete_batch(reqs, 2)
    calls = t.calls
    warm = _backend(t, tmp_path).complete_batch(reqs, 2)
    assert t.calls == calls
    assert all(r.from_cache for r in warm.results.values())
    assert {k: v.text for k, v in cold.results.items()} == {k: v.text for k, v in warm.results.items()}


def test_batch_invalid_in_flight():
    with pytest.raises(ValueError):
        _backend(MockTransport()).complete_batch([_req()], max_in_flight=0)


def test_cache_atomic_layout(tmp_path):
    c = DiskCache(tmp_path)
    c.put("abcdef", {"x": 1})
    assert json.loads((tmp_path / "ab" / "abcdef.json").read_text()) == {"x": 1}
    assert [p.name for p in (tmp_path / "ab").iterdir()] == ["abcdef.json"]
    assert c.get("zz00") is None


def test_rate_limiter_window():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    rl = RateLimiter(2, clock=lambda: now[0], sleep=sleep)
    rl.acquire()
    rl.acquire()
    assert not slept
    rl.acquire()
    assert slept and now[0] >= 60.0


def test_empty_completion_is_provider_error():
    class Empty:
        def send(self, req):
            return Reply("   ")

    with pytest.raises(ProviderError):
        _backend(Empty()).complete(_req())


# live transport, exercised against an in-process HTTP mock

def _http(handler):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return HttpTransport(endpoint="https://example.test/v1/chat/completions", api_key="k", client=client)


def test_http_body_and_parse():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers["authorization"]
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi"}, "finish_reason": "stop"}]})

    reply = _http(handler).send(_req(2))
    assert reply == Reply("hi", "stop")
    assert seen["auth"] == "Bearer k"
    assert set(seen["body"]) == {"model", "messages", "temperature", "max_tokens"}
    assert seen["body"]["messages"][0] == {"role": "system", "content": "sys"}


@pytest.mark.parametrize("status,error", [(401, AuthError), (403, AuthError), (429, RateLimited), (500, TransientError), (400, ProviderError)])
def test_http_status_mapping(status, error):
    with pytest.raises(error):
        _http(lambda r: httpx.Response(status, text="nope")).send(_req())


def test_http_retry_through_backend():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"choices": [{"message": {"content": "fine"}, "finish_reason": "stop"}]})

    res = _backend(_http(handler), max_attempts=5).complete(_req())
    assert res.text == "fine" and res.attempt_count == 3


def test_http_requires_credential(monkeypatch):
    monkeypatch.delenv("POSEFORGE_API_KEY", raising=False)
    with pytest.raises(AuthError):
        HttpTransport(endpoint="https://example.test")
