"""Context -> prompt -> teacher reply -> validated sample, for a batch of images."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .chat_backend import ChatBackend, CompletionRequest
from .coco_ingest import DEFAULT_PRECISION, ImageContext
from .errors import EmptyOutput, UnparseableOutput
from .prompt_builder import (
    COMPLEX_REASONING,
    CONVERSATION,
    DETAILED_DESCRIPTION,
    MessageSequence,
    PromptAssets,
    build_conversation_prompt,
    build_detail_prompt,
    build_reasoning_prompt,
    default_assets,
    derive_seed,
)
from .sample_factory import (
    InstructionSample,
    make_conversation_sample,
    make_detail_sample,
    make_reasoning_sample,
    parse_conversation,
    parse_reasoning,
    validate_sample,
)
from .symbolic_context import render_context, render_context_parts

log = logging.getLogger(__name__)

# CLI spelling -> kind
KIND_ALIASES = {
    "conversation": CONVERSATION,
    "detail": DETAILED_DESCRIPTION,
    "detailed_description": DETAILED_DESCRIPTION,
    "reasoning": COMPLEX_REASONING,
    "complex_reasoning": COMPLEX_REASONING,
}


@dataclass
class GenerationOutcome:
    samples: list[InstructionSample] = field(default_factory=list)
    # image_id -> reason
    failures: dict[int, str] = field(default_factory=dict)
    failed_request_ids: list[str] = field(default_factory=list)


def build_prompt(
    ctx: ImageContext,
    kind: str,
    global_seed: int = 0,
    assets: PromptAssets | None = None,
    precision: int = DEFAULT_PRECISION,
    multi_message: bool = False,
) -> MessageSequence:
    kind = KIND_ALIASES[kind]
    assets = assets or default_assets()
    text = render_context(ctx, precision)
    parts = render_context_parts(ctx, precision) if multi_message else None
    if kind == CONVERSATION:
        return build_conversation_prompt(text, assets=assets, context_parts=parts)
    if kind == DETAILED_DESCRIPTION:
        return build_detail_prompt(text, derive_seed(global_seed, ctx.image_id), assets=assets, context_parts=parts)
    return build_reasoning_prompt(text, assets=assets, context_parts=parts)


def reply_to_sample(ctx: ImageContext, prompt: MessageSequence, text: str) -> InstructionSample:
    meta = ctx.image_meta
    if prompt.kind == CONVERSATION:
        return make_conversation_sample(parse_conversation(text), meta)
    if prompt.kind == DETAILED_DESCRIPTION:
        return make_detail_sample(prompt.final_user_text, text, meta)
    return make_reasoning_sample(parse_reasoning(text), meta)


def generate_samples(
    contexts: list[ImageContext],
    kind: str,
    backend: ChatBackend,
    model_name: str,
    temperature: float = 0.7,
    max_output_tokens: int = 1024,
    global_seed: int = 0,
    assets: PromptAssets | None = None,
    precision: int = DEFAULT_PRECISION,
    max_in_flight: int = 4,
    multi_message: bool = False,
) -> GenerationOutcome:
    """One sample per context; invalid or failed images are reported, never emitted."""
    prompts = [build_prompt(c, kind, global_seed, assets, precision, multi_message) for c in contexts]
    reqs = [CompletionRequest(p, model_name, temperature, max_output_tokens) for p in prompts]
    report = backend.complete_batch(reqs, max_in_flight=max_in_flight)

    out = GenerationOutcome()
    for ctx, prompt, req in zip(contexts, prompts, reqs):
        rid = req.request_id
        if rid in report.failures:
            out.failures[ctx.image_id] = str(report.failures[rid])
            out.failed_request_ids.append(rid)
            continue
        try:
            sample = reply_to_sample(ctx, prompt, report.results[rid].text)
        except (UnparseableOutput, EmptyOutput) as e:
            log.warning("image %d: dropped %s sample (%s)", ctx.image_id, prompt.kind, e)
            out.failures[ctx.image_id] = f"{type(e).__name__}: {e}"
            out.failed_request_ids.append(rid)
            continue
        verdict = validate_sample(sample)
        if not verdict:
            log.warning("image %d: invalid sample dropped: %s", ctx.image_id, "; ".join(verdict.violations))
            out.failures[ctx.image_id] = "; ".join(verdict.violations)
            out.failed_request_ids.append(rid)
            continue
        out.samples.append(sample)
    return out
