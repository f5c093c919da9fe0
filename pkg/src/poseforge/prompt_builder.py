"""Message sequences for the three instruction-data families.

Each builder returns a :class:`MessageSequence` ready to be sent to a
chat-completion endpoint. Prompt texts live in an assets directory so they
can be edited without touching code; :func:`load_assets` reads them and
fingerprints each file for the dataset manifest.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import MissingAssets
from .symbolic_context import ContextText

CONVERSATION = "conversation"
DETAILED_DESCRIPTION = "detailed_description"
COMPLEX_REASONING = "complex_reasoning"
KINDS = (CONVERSATION, DETAILED_DESCRIPTION, COMPLEX_REASONING)

NUM_DETAIL_INSTRUCTIONS = 16

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class MessageSequence:
    kind: str
    image_id: int
    messages: tuple[Message, ...]
    rng_seed: int | None = None

    def to_list(self) -> list[dict]:
        return [m.to_dict() for m in self.messages]

    def dumps(self) -> str:
        """Serialized prompt: JSON array of {role, content}."""
        return json.dumps(self.to_list(), ensure_ascii=False, indent=2)

    @property
    def final_user_text(self) -> str:
        return self.messages[-1].content


@dataclass(frozen=True)
class FewShotSample:
    context: str
    response: str

    def __post_init__(self):
        if not self.context or not self.response:
            raise ValueError("few-shot samples need a non-empty context and response")


@dataclass(frozen=True)
class PromptAssets:
    system: dict[str, str]
    conversation_closing: str
    detail_instructions: tuple[str, ...]
    fewshots: tuple[FewShotSample, ...]
    judge_system: str
    judge_user: str
    judge_reminder: str
    hashes: dict[str, str] = field(default_factory=dict)


ASSET_FILES = {
    "system_conversation": "system_conversation.txt",
    "system_detailed_description": "system_detailed_description.txt",
    "system_complex_reasoning": "system_complex_reasoning.txt",
    "conversation_closing": "conversation_closing.txt",
    "detail_instructions": "detail_instructions.txt",
    "fewshot_samples": "fewshot_samples.json",
    "judge_system": "judge_system.txt",
    "judge_user": "judge_user.txt",
    "judge_reminder": "judge_reminder.txt",
}


def _read_asset(root, name: str) -> str:
    if root is None:
        ref = resources.files("poseforge") / "assets" / name
    else:
        ref = Path(root) / name
    try:
        return ref.read_text(encoding="utf-8")
    except (FileNotFoundError, IsADirectoryError):
        raise MissingAssets(f"prompt asset {name!r} not found in {root or 'bundled assets'}") from None


def load_assets(root=None) -> PromptAssets:
    """Load prompt assets from ``root`` (bundled defaults when None)."""
    raw = {key: _read_asset(root, name) for key, name in ASSET_FILES.items()}
    hashes = {ASSET_FILES[k]: hashlib.sha256(v.encode("utf-8")).hexdigest() for k, v in raw.items()}

    instructions = tuple(line.strip() for line in raw["detail_instructions"].splitlines() if line.strip())
    if len(instructions) != NUM_DETAIL_INSTRUCTIONS:
        raise MissingAssets(f"detail instruction pool must hold {NUM_DETAIL_INSTRUCTIONS} entries, got {len(instructions)}")
    try:
        fewshots = tuple(FewShotSample(s["context"], s["response"]) for s in json.loads(raw["fewshot_samples"]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise MissingAssets(f"bad few-shot sample file: {e}") from None

    return PromptAssets(
        system={k: raw[f"system_{k}"].strip() for k in KINDS},
        conversation_closing=raw["conversation_closing"].strip(),
        detail_instructions=instructions,
        fewshots=fewshots,
        judge_system=raw["judge_system"].strip(),
        judge_user=raw["judge_user"].strip(),
        judge_reminder=raw["judge_reminder"].strip(),
        hashes=hashes,
    )


_default_assets: PromptAssets | None = None


def default_assets() -> PromptAssets:
    global _default_assets
    if _default_assets is None:
        _default_assets = load_assets()
    return _default_assets


def derive_seed(global_seed: int, image_id: int) -> int:
    """Per-image seed, so any single image can be regenerated in isolation."""
    digest = hashlib.sha256(f"{global_seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _context_messages(ctx_text: ContextText, parts: list[str] | None) -> list[Message]:
    if parts:
        return [Message("user", p) for p in parts]
    return [Message("user", ctx_text.text)]


def build_conversation_prompt(
    ctx_text: ContextText,
    fewshots=None,
    assets: PromptAssets | None = None,
    context_parts: list[str] | None = None,
) -> MessageSequence:
    assets = assets or default_assets()
    fewshots = assets.fewshots if fewshots is None else fewshots
    if not fewshots:
        raise MissingAssets("conversation prompts need at least one few-shot sample")
    msgs = [Message("system", assets.system[CONVERSATION])]
    for shot in fewshots:
        msgs.append(Message("user", shot.context))
        msgs.append(Message("assistant", shot.response))
    msgs += _context_messages(ctx_text, context_parts)
    msgs.append(Message("user", assets.conversation_closing))
    return MessageSequence(CONVERSATION, ctx_text.image_id, tuple(msgs))


def choose_instruction(rng_seed: int, assets: PromptAssets | None = None) -> int:
    """Index into the detail-instruction pool picked by ``rng_seed``."""
    assets = assets or default_assets()
    return random.Random(rng_seed).randrange(len(assets.detail_instructions))


def build_detail_prompt(
    ctx_text: ContextText,
    rng_seed: int,
    assets: PromptAssets | None = None,
    context_parts: list[str] | None = None,
) -> MessageSequence:
    assets = assets or default_assets()
    if len(assets.detail_instructions) != NUM_DETAIL_INSTRUCTIONS:
        raise MissingAssets("detail instruction pool is incomplete")
    instruction = assets.detail_instructions[choose_instruction(rng_seed, assets)]
    msgs = [Message("system", assets.system[DETAILED_DESCRIPTION])]
    msgs += _context_messages(ctx_text, context_parts)
    msgs.append(Message("user", instruction))
    return MessageSequence(DETAILED_DESCRIPTION, ctx_text.image_id, tuple(msgs), rng_seed=rng_seed)


def build_reasoning_prompt(
    ctx_text: ContextText,
    assets: PromptAssets | None = None,
    context_parts: list[str] | None = None,
) -> MessageSequence:
    assets = assets or default_assets()
    msgs = [Message("system", assets.system[COMPLEX_REASONING])]
    msgs += _context_messages(ctx_text, context_parts)
    return MessageSequence(COMPLEX_REASONING, ctx_text.image_id, tuple(msgs))
