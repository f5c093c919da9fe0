"""Benchmark construction: seeded image sampling plus one generated question per kind."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass
from pathlib import Path

from .chat_backend import ChatBackend, CompletionRequest
from .coco_ingest import DEFAULT_PRECISION, ImageContext
from .errors import EmptyOutput, IncompleteBenchmark, NotEnoughImages, SchemaViolation, UnparseableOutput
from .generation import build_prompt
from .prompt_builder import CONVERSATION, DETAILED_DESCRIPTION, KINDS, PromptAssets
from .sample_factory import parse_conversation, parse_reasoning
from .symbolic_context import render_context

log = logging.getLogger(__name__)

BENCHMARK_IMAGES = 90


@dataclass(frozen=True)
class BenchmarkItem:
    item_id: str
    image_ref: str
    kind: str
    question: str
    context_text: str
    reference_answer: str

    def __post_init__(self):
        if not self.reference_answer.strip():
            raise ValueError(f"{self.item_id}: empty reference answer")

    @property
    def image_id(self) -> int:
        return int(self.item_id.split("-")[0])


def make_item_id(image_id: int, kind: str) -> str:
    return f"{image_id}-{kind}"


def sample_images(contexts: list[ImageContext], n: int, seed: int) -> list[ImageContext]:
    """Uniform sample of ``n`` contexts without replacement, returned by ascending image_id."""
    if n > len(contexts):
        raise NotEnoughImages(f"asked for {n} images, only {len(contexts)} contexts available")
    if n < 0:
        raise ValueError("n must be non-negative")
    pool = sorted(contexts, key=lambda c: c.image_id)
    picked = random.Random(seed).sample(pool, n)
    return sorted(picked, key=lambda c: c.image_id)


def _question_answer(kind: str, prompt, text: str) -> tuple[str, str]:
    if kind == CONVERSATION:
        return parse_conversation(text)[0]
    if kind == DETAILED_DESCRIPTION:
        answer = text.strip()
        if not answer:
            raise EmptyOutput("empty detailed description")
        return prompt.final_user_text, answer
    return parse_reasoning(text)


def build_benchmark(
    sampled: list[ImageContext],
    backend: ChatBackend,
    model_name: str,
    temperature: float = 0.7,
    max_output_tokens: int = 1024,
    global_seed: int = 0,
    assets: PromptAssets | None = None,
    precision: int = DEFAULT_PRECISION,
    max_in_flight: int = 4,
) -> list[BenchmarkItem]:
    """Three items per image (one per kind), or :class:`IncompleteBenchmark`."""
    jobs = []
    for ctx in sampled:
        for kind in KINDS:
            prompt = build_prompt(ctx, kind, global_seed, assets, precision)
            jobs.append((ctx, kind, prompt, CompletionRequest(prompt, model_name, temperature, max_output_tokens)))
    report = backend.complete_batch([j[3] for j in jobs], max_in_flight=max_in_flight)

    items: list[BenchmarkItem] = []
    failures: dict[str, str] = {}
    for ctx, kind, prompt, req in jobs:
        item_id = make_item_id(ctx.image_id, kind)
        rid = req.request_id
        if rid in report.failures:
            failures[item_id] = str(report.failures[rid])
            continue
        try:
            question, answer = _question_answer(kind, prompt, report.results[rid].text)
        except (UnparseableOutput, EmptyOutput) as e:
            failures[item_id] = f"{type(e).__name__}: {e}"
            continue
        items.append(
            BenchmarkItem(
                item_id=item_id,
                image_ref=ctx.image_meta.file_name,
                kind=kind,
                question=question,
                context_text=render_context(ctx, precision).text,
                reference_answer=answer,
            )
        )
    if failures:
        raise IncompleteBenchmark(failures)
    assert len(items) == len(KINDS) * len(sampled)
    return items


def write_benchmark(items: list[BenchmarkItem], path) -> None:
    Path(path).write_text(
        json.dumps([asdict(i) for i in items], ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def read_benchmark(path) -> list[BenchmarkItem]:
    with Path(path).open("r", encoding="utf-8") as f:
        data = json.load(f)
    items = []
    for i, obj in enumerate(data):
        try:
            item = BenchmarkItem(**obj)
        except (TypeError, ValueError) as e:
            raise SchemaViolation(path, i + 1, str(e)) from None
        if item.kind not in KINDS:
            raise SchemaViolation(path, i + 1, f"unknown kind {item.kind!r}")
        items.append(item)
    return items


def read_answers(path) -> dict[str, str]:
    """Candidate answers: JSON lines of {item_id, answer}."""
    out = {}
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                item_id, answer = obj["item_id"], obj["answer"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise SchemaViolation(path, lineno, f"bad answer record ({e})") from None
            if not isinstance(answer, str):
                raise SchemaViolation(path, lineno, "answer must be a string")
            out[item_id] = answer
    return out


def write_answers(answers: dict[str, str], path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for item_id, answer in answers.items():
            f.write(json.dumps({"item_id": item_id, "answer": answer}, ensure_ascii=False) + "\n")
