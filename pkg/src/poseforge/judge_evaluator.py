"""Judge-model scoring of candidate answers and relative-score aggregation.

A judge compares a reference answer (written by the teacher from the
ground-truth context) with a candidate answer and gives each a 1-10 score.
Per kind, the relative score is ``100 * mean(candidate) / mean(reference)``;
the overall score is the plain mean of the three per-kind scores.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from statistics import fmean

from .benchmark_builder import BenchmarkItem
from .chat_backend import ChatBackend, CompletionRequest
from .errors import (
    BackendError,
    EmptyVerdicts,
    MissingKind,
    NonpositiveBase,
    UnparseableVerdict,
    ZeroReference,
)
from .prompt_builder import KINDS, Message, MessageSequence, PromptAssets, default_assets

log = logging.getLogger(__name__)

RATIO_OF_MEANS = "ratio_of_means"
MEAN_OF_RATIOS = "mean_of_ratios"

KIND_TITLES = {
    "conversation": "Conversation",
    "detailed_description": "Detailed description",
    "complex_reasoning": "Complex reasoning",
}

_SCORE_LINE = re.compile(r"^\s*(\d{1,2})\s*[,\s]\s*(\d{1,2})\s*$")


def round1(x: float) -> float:
    """Round half up to one decimal (69.35 -> 69.4, not banker's rounding)."""
    return float(Decimal(repr(x)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class JudgeVerdict:
    item_id: str
    score_candidate: float
    score_reference: float
    explanation: str = ""

    def __post_init__(self):
        for s in (self.score_candidate, self.score_reference):
            if not 1 <= s <= 10:
                raise ValueError(f"{self.item_id}: score {s} outside 1..10")


@dataclass
class EvaluationReport:
    per_kind_relative: dict[str, float]
    overall: float | None
    n_items: dict[str, int]
    verdicts: list[JudgeVerdict]
    method: str = RATIO_OF_MEANS
    candidate: str = ""
    judge_template_hash: str = ""
    failures: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdicts"] = [asdict(v) for v in self.verdicts]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        d = dict(d)
        d["verdicts"] = [JudgeVerdict(**v) for v in d["verdicts"]]
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)


def parse_verdict(text: str) -> tuple[int, int, str]:
    """(first score, second score, explanation) from a judge reply."""
    first, _, rest = text.strip().partition("\n")
    m = _SCORE_LINE.match(first)
    if not m:
        raise UnparseableVerdict(f"first line is not two scores: {first[:80]!r}")
    a, b = int(m.group(1)), int(m.group(2))
    if not (1 <= a <= 10 and 1 <= b <= 10):
        raise UnparseableVerdict(f"scores out of range: {a} {b}")
    return a, b, rest.strip()


def judge_template_hash(assets: PromptAssets) -> str:
    blob = (assets.judge_system + "\0" + assets.judge_user).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def judge_prompt(item: BenchmarkItem, first: str, second: str, assets: PromptAssets | None = None) -> MessageSequence:
    assets = assets or default_assets()
    user = assets.judge_user.format(
        context=item.context_text, question=item.question, answer_1=first, answer_2=second
    )
    return MessageSequence("judge", item.image_id, (Message("system", assets.judge_system), Message("user", user)))


def _with_reminder(prompt: MessageSequence, bad_reply: str, assets: PromptAssets) -> MessageSequence:
    msgs = prompt.messages
    if bad_reply.strip():
        msgs += (Message("assistant", bad_reply),)
    msgs += (Message("user", assets.judge_reminder),)
    return MessageSequence(prompt.kind, prompt.image_id, msgs)


class _Judge:
    def __init__(self, backend, model_name, temperature, max_output_tokens, assets):
        self.backend = backend
        self.model_name = model_name
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.assets = assets

    def request(self, prompt: MessageSequence) -> CompletionRequest:
        return CompletionRequest(prompt, self.model_name, self.temperature, self.max_output_tokens)

    def scores(self, prompt: MessageSequence, reply: str | None) -> tuple[int, int, str]:
        """Parse ``reply``; on failure ask once more with a format reminder."""
        if reply is None:
            reply = self.backend.complete(self.request(prompt)).text
        try:
            return parse_verdict(reply)
        except UnparseableVerdict:
            log.info("unparseable verdict, retrying with a format reminder")
        retry = self.backend.complete(self.request(_with_reminder(prompt, reply, self.assets))).text
        return parse_verdict(retry)


def judge_item(
    item: BenchmarkItem,
    candidate_answer: str,
    backend: ChatBackend,
    model_name: str = "gpt-4o",
    temperature: float = 0.0,
    max_output_tokens: int = 1024,
    assets: PromptAssets | None = None,
    swap: bool = False,
) -> JudgeVerdict:
    if not candidate_answer.strip():
        raise ValueError(f"{item.item_id}: empty candidate answer")
    assets = assets or default_assets()
    judge = _Judge(backend, model_name, temperature, max_output_tokens, assets)
    ref, cand, why = judge.scores(judge_prompt(item, item.reference_answer, candidate_answer, assets), None)
    if not swap:
        return JudgeVerdict(item.item_id, cand, ref, why)
    cand2, ref2, why2 = judge.scores(judge_prompt(item, candidate_answer, item.reference_answer, assets), None)
    return JudgeVerdict(item.item_id, (cand + cand2) / 2, (ref + ref2) / 2, why + "\n---\n" + why2)


def relative_score(verdicts, method: str = RATIO_OF_MEANS) -> float:
    verdicts = list(verdicts)
    if not verdicts:
        raise EmptyVerdicts("no verdicts to score")
    if method == RATIO_OF_MEANS:
        ref = fmean(v.score_reference for v in verdicts)
        if ref <= 0:
            raise ZeroReference("mean reference score is zero")
        return round1(100.0 * fmean(v.score_candidate for v in verdicts) / ref)
    if method == MEAN_OF_RATIOS:
        if any(v.score_reference <= 0 for v in verdicts):
            raise ZeroReference("a reference score is zero")
        return round1(100.0 * fmean(v.score_candidate / v.score_reference for v in verdicts))
    raise ValueError(f"unknown method {method!r}")


def aggregate(per_kind: dict[str, float]) -> float:
    missing = [k for k in KINDS if k not in per_kind]
    if missing:
        raise MissingKind(f"missing kinds: {', '.join(missing)}")
    return round1(fmean(per_kind[k] for k in KINDS))


def improvement(new: float, base: float) -> float:
    """Relative change of ``new`` over ``base`` in percent."""
    if base <= 0:
        raise NonpositiveBase(f"base must be positive, got {base}")
    return round1(100.0 * (new - base) / base)


def evaluate(
    items: list[BenchmarkItem],
    answers: dict[str, str],
    backend: ChatBackend,
    model_name: str = "gpt-4o",
    temperature: float = 0.0,
    max_output_tokens: int = 1024,
    assets: PromptAssets | None = None,
    method: str = RATIO_OF_MEANS,
    swap: bool = False,
    max_in_flight: int = 4,
    candidate: str = "",
) -> EvaluationReport:
    """Judge every item that has a candidate answer and summarize per kind."""
    assets = assets or default_assets()
    judge = _Judge(backend, model_name, temperature, max_output_tokens, assets)
    failures: dict[str, str] = {}

    jobs = []  # (item, prompt, swapped)
    for item in items:
        answer = answers.get(item.item_id, "")
        if not answer.strip():
            failures[item.item_id] = "no candidate answer"
            continue
        jobs.append((item, judge_prompt(item, item.reference_answer, answer, assets), False))
        if swap:
            jobs.append((item, judge_prompt(item, answer, item.reference_answer, assets), True))
    reqs = [judge.request(p) for _, p, _ in jobs]
    batch = backend.complete_batch(reqs, max_in_flight=max_in_flight)

    partial: dict[str, list[tuple[int, int, str]]] = {}
    for (item, prompt, swapped), req in zip(jobs, reqs):
        if item.item_id in failures:
            continue
        rid = req.request_id
        if rid in batch.failures:
            failures[item.item_id] = str(batch.failures[rid])
            continue
        try:
            a, b, why = judge.scores(prompt, batch.results[rid].text)
        except (UnparseableVerdict, BackendError) as e:
            failures[item.item_id] = f"{type(e).__name__}: {e}"
            continue
        # (candidate, reference, explanation)
        partial.setdefault(item.item_id, []).append((a, b, why) if swapped else (b, a, why))

    verdicts = []
    for item in items:
        got = partial.get(item.item_id)
        if not got or item.item_id in failures:
            continue
        cand = fmean(g[0] for g in got) if swap else got[0][0]
        ref = fmean(g[1] for g in got) if swap else got[0][1]
        verdicts.append(JudgeVerdict(item.item_id, cand, ref, "\n---\n".join(g[2] for g in got)))

    kind_of = {i.item_id: i.kind for i in items}
    per_kind, n_items = {}, {}
    for k in KINDS:
        vs = [v for v in verdicts if kind_of[v.item_id] == k]
        n_items[k] = len(vs)
        if vs:
            per_kind[k] = relative_score(vs, method)
    overall = aggregate(per_kind) if len(per_kind) == len(KINDS) else None
    return EvaluationReport(
        per_kind_relative=per_kind,
        overall=overall,
        n_items=n_items,
        verdicts=verdicts,
        method=method,
        candidate=candidate,
        judge_template_hash=judge_template_hash(assets),
        failures=failures,
    )


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.1f}"


def table_rows(rows: list[tuple[str, dict[str, float], float | None]]) -> list[list[str]]:
    """Header plus one row per (name, per-kind scores, overall)."""
    out = [[""] + [KIND_TITLES[k] for k in KINDS] + ["All"]]
    for name, per_kind, overall in rows:
        out.append([name] + [_fmt(per_kind.get(k)) for k in KINDS] + [_fmt(overall)])
    return out


def format_table(rows: list[tuple[str, dict[str, float], float | None]]) -> str:
    """Plain-text score table with one row per candidate."""
    cells = table_rows(rows)
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    lines = []
    for n, r in enumerate(cells):
        first = r[0].ljust(widths[0])
        rest = [c.center(w) if n == 0 else c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append(" | ".join([first, *rest]))
        if n == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_tsv(rows) -> str:
    return "\n".join("\t".join(r) for r in table_rows(rows)) + "\n"
