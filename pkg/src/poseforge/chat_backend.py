"""Chat-completion execution: retries, bounded concurrency, rate limiting, disk cache.

A :class:`ChatBackend` wraps a *transport* (anything with a
``send(request) -> Reply`` method). Two transports ship here:
:class:`HttpTransport` for a live OpenAI-compatible endpoint and
:class:`MockTransport`, a deterministic offline stand-in whose replies are a
pure function of the request id.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    AuthError,
    BackendError,
    ExhaustedRetries,
    ProviderError,
    RateLimited,
    TransientError,
)
from .prompt_builder import MessageSequence

log = logging.getLogger(__name__)

API_KEY_ENV = "POSEFORGE_API_KEY"
ENDPOINT_ENV = "POSEFORGE_ENDPOINT"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"

FINISH_REASONS = ("stop", "length", "error")


@dataclass(frozen=True)
class CompletionRequest:
    messages: MessageSequence
    model_name: str
    temperature: float = 0.7
    max_output_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def kind(self) -> str:
        return self.messages.kind

    @property
    def image_id(self) -> int:
        return self.messages.image_id

    @property
    def request_id(self) -> str:
        payload = json.dumps(
            [self.kind, self.image_id, self.messages.to_list(), self.model_name],
            ensure_ascii=False,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Reply:
    text: str
    finish_reason: str = "stop"


@dataclass(frozen=True)
class CompletionResult:
    request_id: str
    text: str
    finish_reason: str
    attempt_count: int
    from_cache: bool = False


@dataclass
class BatchReport:
    """Outcome of :meth:`ChatBackend.complete_batch`, keyed by request id."""

    results: dict[str, CompletionResult] = field(default_factory=dict)
    failures: dict[str, BackendError] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def __len__(self):
        return len(self.results) + len(self.failures)


class DiskCache:
    """One JSON file per request id under ``root/<id[:2]>/<id>.json``."""

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, request_id: str) -> Path:
        return self.root / request_id[:2] / f"{request_id}.json"

    def get(self, request_id: str) -> dict | None:
        path = self.path_for(request_id)
        try:
            with path.open("r", encoding="utf-8") as f:
                return json.load(f)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError:
            log.warning("ignoring corrupt cache entry %s", path)
            return None

    def put(self, request_id: str, payload: dict) -> None:
        path = self.path_for(request_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{request_id}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(payload, f, ensure_ascii=False, indent=1)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
            raise


class RateLimiter:
    """Sliding one-minute window shared by all worker threads."""

    def __init__(self, per_minute: int, clock=time.monotonic, sleep=time.sleep):
        if per_minute < 1:
            raise ValueError("per_minute must be >= 1")
        self.per_minute = per_minute
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self._sleep(max(wait, 0.01))


class ChatBackend:
    def __init__(
        self,
        transport,
        cache_dir=None,
        max_attempts: int = 5,
        base_delay: float = 1.0,
        backoff_factor: float = 2.0,
        jitter: float = 0.25,
        requests_per_minute: int | None = None,
        sleep=time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.transport = transport
        self.cache = DiskCache(cache_dir) if cache_dir is not None else None
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.backoff_factor = backoff_factor
        self.jitter = jitter
        self.limiter = RateLimiter(requests_per_minute, sleep=sleep) if requests_per_minute else None
        self._sleep = sleep
        self._rng = random.Random()
        self._lock = threading.Lock()
        self.network_calls = 0

    def backoff_delay(self, attempt: int) -> float:
        """Delay before retry number ``attempt`` (1-based), jittered upward."""
        delay = self.base_delay * self.backoff_factor ** (attempt - 1)
        with self._lock:
            return delay * (1.0 + self._rng.uniform(0.0, self.jitter))

    def _send(self, req: CompletionRequest) -> Reply:
        if self.limiter is not None:
            self.limiter.acquire()
        with self._lock:
            self.network_calls += 1
        return self.transport.send(req)

    def complete(self, req: CompletionRequest) -> CompletionResult:
        rid = req.request_id
        if self.cache is not None:
            hit = self.cache.get(rid)
            if hit is not None:
                resp = hit["response"]
                return CompletionResult(rid, resp["text"], resp["finish_reason"], resp.get("attempt_count", 1), True)

        last_error: BackendError | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                reply = self._send(req)
            except TransientError as e:
                last_error = e
                if attempt == self.max_attempts:
                    break
                delay = self.backoff_delay(attempt)
                retry_after = getattr(e, "retry_after", None)
                if retry_after:
                    delay = max(delay, retry_after)
                log.warning("%s: attempt %d failed (%s), retrying in %.2fs", rid[:12], attempt, e, delay)
                self._sleep(delay)
                continue
            if reply.finish_reason not in ("stop", "length"):
                raise ProviderError(f"{rid}: unexpected finish_reason {reply.finish_reason!r}")
            if reply.finish_reason == "stop" and not reply.text.strip():
                raise ProviderError(f"{rid}: empty completion")
            result = CompletionResult(rid, reply.text, reply.finish_reason, attempt, False)
            if self.cache is not None:
                self.cache.put(
                    rid,
                    {
                        "request": {
                            "model": req.model_name,
                            "kind": req.kind,
                            "image_id": req.image_id,
                            "temperature": req.temperature,
                            "max_tokens": req.max_output_tokens,
                            "messages": req.messages.to_list(),
                        },
                        "response": {"text": reply.text, "finish_reason": reply.finish_reason, "attempt_count": attempt},
                    },
                )
            return result
        raise ExhaustedRetries(rid, self.max_attempts, last_error)

    def complete_batch(self, reqs, max_in_flight: int = 4) -> BatchReport:
        """Run ``reqs`` with at most ``max_in_flight`` outstanding; never aborts on one failure."""
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        unique: dict[str, CompletionRequest] = {}
        for r in reqs:
            unique.setdefault(r.request_id, r)
        report = BatchReport()
        if not unique:
            return report

        def run(item):
            rid, req = item
            try:
                return rid, self.complete(req), None
            except BackendError as e:
                return rid, None, e

        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            outcomes = list(pool.map(run, unique.items()))
        for rid, result, err in outcomes:
            if err is None:
                report.results[rid] = result
            else:
                log.error("request %s failed: %s", rid[:12], err)
                report.failures[rid] = err
        return report


class HttpTransport:
    """OpenAI-compatible ``/chat/completions`` over HTTPS."""

    def __init__(self, endpoint: str | None = None, api_key: str | None = None, timeout: float = 120.0, client=None):
        import httpx

        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise AuthError(f"no credential: set {API_KEY_ENV}")
        self._httpx = httpx
        self._client = client or httpx.Client(timeout=timeout)

    def body(self, req: CompletionRequest) -> dict:
        return {
            "model": req.model_name,
            "messages": req.messages.to_list(),
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }

    def send(self, req: CompletionRequest) -> Reply:
        httpx = self._httpx
        try:
            resp = self._client.post(
                self.endpoint,
                json=self.body(req),
                headers={"Authorization": f"Bearer {self.api_key}"},
            )
        except (httpx.TimeoutException, httpx.TransportError) as e:
            raise TransientError(f"network error: {e}") from e

        status = resp.status_code
        if status in (401, 403):
            raise AuthError(f"HTTP {status}: {resp.text[:200]}")
        if status == 429:
            err = RateLimited(f"HTTP 429: {resp.text[:200]}")
            try:
                err.retry_after = float(resp.headers.get("retry-after", ""))
            except ValueError:
                err.retry_after = None
            raise err
        if status >= 500 or status == 408:
            raise TransientError(f"HTTP {status}")
        if status >= 400:
            raise ProviderError(f"HTTP {status}: {resp.text[:200]}")
        try:
            choice = resp.json()["choices"][0]
            text = choice["message"]["content"] or ""
            reason = choice.get("finish_reason") or "stop"
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProviderError(f"malformed response body: {e}") from e
        return Reply(text, reason if reason in ("stop", "length") else "error")


# Offline mock. Replies depend only on the request id (and, for judge
# prompts, on the answers being compared), so whole pipeline runs are
# reproducible byte for byte.

_SUBJECTS = ("the person", "the man", "the woman", "the player", "the child", "the athlete")
_CONVO_QUESTIONS = (
    ("What is {s} doing in the image?", "{S} is standing upright and appears to be focused on the activity in front of them."),
    ("How are {s}'s arms positioned?", "Both elbows are bent and the hands are held in front of the body, ready to act."),
    ("Is {s} sitting or standing?", "{S} is standing, with the weight spread across both legs."),
    ("Where is {s} looking?", "The head is turned slightly to one side, toward the main action in the scene."),
    ("Are {s}'s knees bent?", "Yes, the knees are slightly flexed, which suggests a ready, balanced stance."),
    ("What does {s}'s posture suggest?", "The forward lean of the torso suggests {s} is about to move or is already in motion."),
)
_DETAIL_SENTENCES = (
    "{S} stands near the center of the scene with the shoulders level and the torso upright.",
    "One arm is raised while the other hangs relaxed at the side, giving the pose a casual feel.",
    "The knees are slightly bent and the feet are planted firmly, keeping {s} balanced.",
    "{S} leans forward a little, which shows attention to the activity at hand.",
    "The head is tilted downward toward the hands, as if concentrating on a task.",
    "Other people in the background stand at a distance and watch quietly.",
)
_REASONING = (
    ("Why might {s} be leaning forward with bent knees?", "Leaning forward with bent knees lowers the center of gravity, which gives {s} better balance and lets them react quickly to sudden changes."),
    ("What could {s} do to avoid strain in this pose?", "Keeping the back straight and the shoulders relaxed would spread the load across the legs and core instead of the lower back."),
    ("What is {s} most likely about to do next?", "Given the raised arm and the shifted weight, {s} is probably preparing to throw or swing, transferring momentum from the legs through the torso."),
)

_JUDGE_BLOCK = re.compile(r"\[Assistant (\d)\]\n(.*?)\n\[End of Assistant \1\]", re.S)


def _pick(digest: bytes, i: int, seq):
    return seq[digest[i % len(digest)] % len(seq)]


def _words(text: str) -> set[str]:
    return set(re.findall(r"[a-z']+", text.lower()))


def mock_judge_text(prompt: str, digest: bytes) -> str:
    blocks = dict(_JUDGE_BLOCK.findall(prompt))
    a1, a2 = blocks.get("1"), blocks.get("2")
    if a1 is None or a2 is None:
        s1, s2 = 6 + digest[0] % 5, 1 + digest[1] % 10
    else:
        w1, w2 = _words(a1), _words(a2)
        overlap = len(w1 & w2) / max(len(w1 | w2), 1)
        s1 = 8
        s2 = max(1, min(10, round(2 + 8 * overlap)))
        if a1.strip() == a2.strip():
            s2 = s1
    return f"{s1} {s2}\nAssistant 1 covers the poses and actions in the context; Assistant 2 overlaps with it to a measured degree."


def mock_reply_text(req: CompletionRequest) -> str:
    digest = hashlib.sha256(req.request_id.encode()).digest()
    s = _pick(digest, 0, _SUBJECTS)
    fmt = {"s": s, "S": s[0].upper() + s[1:]}
    kind = req.kind
    if kind == "conversation":
        n = 2 + digest[1] % 3
        start = digest[2] % len(_CONVO_QUESTIONS)
        pairs = [_CONVO_QUESTIONS[(start + i) % len(_CONVO_QUESTIONS)] for i in range(n)]
        return "\n\n".join(f"Question: {q.format(**fmt)}\nAnswer: {a.format(**fmt)}" for q, a in pairs)
    if kind == "detailed_description":
        n = 3 + digest[3] % 3
        start = digest[4] % len(_DETAIL_SENTENCES)
        return " ".join(_DETAIL_SENTENCES[(start + i) % len(_DETAIL_SENTENCES)].format(**fmt) for i in range(n))
    if kind == "complex_reasoning":
        q, a = _pick(digest, 5, _REASONING)
        return f"Question: {q.format(**fmt)}\nAnswer: {a.format(**fmt)}"
    if kind == "judge":
        return mock_judge_text(req.messages.messages[-1].content, digest)
    return f"Mock reply {req.request_id[:16]}."


class MockTransport:
    """Deterministic canned replies; counts calls and peak concurrency."""

    def __init__(self, delay: float = 0.0):
        self.delay = delay
        self.calls = 0
        self.in_flight = 0
        self.peak_in_flight = 0
        self._lock = threading.Lock()

    def send(self, req: CompletionRequest) -> Reply:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            return Reply(mock_reply_text(req), "stop")
        finally:
            with self._lock:
                self.in_flight -= 1


def make_backend(kind: str, cache_dir=None, endpoint=None, **kwargs) -> ChatBackend:
    """``kind`` is "mock" or "live"."""
    if kind == "mock":
        return ChatBackend(MockTransport(), cache_dir=cache_dir, **kwargs)
    if kind == "live":
        return ChatBackend(HttpTransport(endpoint=endpoint), cache_dir=cache_dir, **kwargs)
    raise ValueError(f"unknown backend {kind!r}")
