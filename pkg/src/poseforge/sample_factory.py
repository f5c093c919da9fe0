"""Turn teacher-model output into conversation-format training samples."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .coco_ingest import RawImageMeta
from .errors import DanglingQuestion, EmptyOutput, SchemaViolation, UnparseableOutput
from .prompt_builder import COMPLEX_REASONING, CONVERSATION, DETAILED_DESCRIPTION, KINDS

log = logging.getLogger(__name__)

IMAGE_TOKEN = "<image>"
SPEAKERS = ("human", "gpt")

# "Question:", "Q:", "Question 2:", "**Q1.**", "### Answer:" ...
_LABEL = re.compile(
    r"^[\s#>*_-]*(question|answer|q|a)(?:\s*\d+)?\s*[:.)]+[\s*_]*(.*)$",
    re.IGNORECASE,
)
# "(0.34, 0.57," style tuples; normalized coordinates leaking into answers
_COORD_TUPLE = re.compile(r"\(\s*[01]?\.\d+\s*,\s*[01]?\.\d+\s*,")


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str


@dataclass(frozen=True)
class InstructionSample:
    sample_id: str
    image_ref: str
    kind: str
    turns: tuple[Turn, ...]

    def to_dict(self) -> dict:
        return {
            "id": self.sample_id,
            "image": self.image_ref,
            "conversations": [{"from": t.speaker, "value": t.text} for t in self.turns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstructionSample":
        sid = d["id"]
        _, kind, _ = split_sample_id(sid)
        turns = tuple(Turn(c["from"], c["value"]) for c in d["conversations"])
        return cls(sid, d["image"], kind, turns)


@dataclass
class Verdict:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def make_sample_id(image_id: int, kind: str, ordinal: int = 0) -> str:
    return f"{image_id}-{kind}-{ordinal}"


def split_sample_id(sample_id: str) -> tuple[int, str, int]:
    """Inverse of :func:`make_sample_id`; raises ValueError on foreign ids."""
    parts = sample_id.split("-")
    if len(parts) != 3 or parts[1] not in KINDS:
        raise ValueError(f"malformed sample id {sample_id!r}")
    return int(parts[0]), parts[1], int(parts[2])


def _labeled_blocks(raw: str) -> list[tuple[str, str]]:
    """(label, text) blocks with continuation lines folded into the text."""
    blocks: list[list] = []
    for line in raw.splitlines():
        m = _LABEL.match(line)
        if m:
            label = "q" if m.group(1).lower().startswith("q") else "a"
            blocks.append([label, [m.group(2).rstrip(" *_")]])
        elif blocks:
            blocks[-1][1].append(line)
    out = []
    for label, lines in blocks:
        text = "\n".join(lines).strip()
        out.append((label, text))
    return out


def parse_conversation(raw: str) -> list[tuple[str, str]]:
    """Extract (question, answer) pairs, in order."""
    pairs = []
    pending = None
    for label, text in _labeled_blocks(raw):
        if label == "q":
            if pending is not None:
                raise DanglingQuestion(f"question without answer: {pending!r}")
            pending = text
        else:
            if pending is None:
                log.warning("answer without a question ignored: %.60r", text)
                continue
            if not pending or not text:
                raise UnparseableOutput("empty question or answer")
            pairs.append((pending, text))
            pending = None
    if pending is not None:
        raise DanglingQuestion(f"question without answer: {pending!r}")
    if not pairs:
        raise UnparseableOutput("no labeled question/answer pairs found")
    return pairs


def serialize_pairs(pairs) -> str:
    return "\n\n".join(f"Question: {q}\nAnswer: {a}" for q, a in pairs)


def parse_reasoning(raw: str) -> tuple[str, str]:
    """The first complete Q/A pair; later pairs are logged and dropped."""
    try:
        pairs = parse_conversation(raw)
    except DanglingQuestion:
        pairs = []
        blocks = _labeled_blocks(raw)
        if len(blocks) >= 2 and blocks[0][0] == "q" and blocks[1][0] == "a":
            pairs = [(blocks[0][1], blocks[1][1])]
        if not pairs or not all(pairs[0]):
            raise UnparseableOutput("reasoning output lacks a complete question/answer pair") from None
    if len(pairs) > 1:
        log.info("reasoning output had %d pairs, keeping the first", len(pairs))
    return pairs[0]


def _human_first(text: str) -> str:
    return f"{IMAGE_TOKEN}\n{text}"


def make_conversation_sample(pairs, image: RawImageMeta, ordinal: int = 0) -> InstructionSample:
    turns = []
    for i, (q, a) in enumerate(pairs):
        turns.append(Turn("human", _human_first(q) if i == 0 else q))
        turns.append(Turn("gpt", a))
    return InstructionSample(make_sample_id(image.image_id, CONVERSATION, ordinal), image.file_name, CONVERSATION, tuple(turns))


def make_detail_sample(instruction: str, raw: str, image: RawImageMeta, ordinal: int = 0) -> InstructionSample:
    text = raw.strip()
    if not text:
        raise EmptyOutput(f"image {image.image_id}: empty detailed description")
    return InstructionSample(
        make_sample_id(image.image_id, DETAILED_DESCRIPTION, ordinal),
        image.file_name,
        DETAILED_DESCRIPTION,
        (Turn("human", _human_first(instruction)), Turn("gpt", text)),
    )


def make_reasoning_sample(pair, image: RawImageMeta, ordinal: int = 0) -> InstructionSample:
    q, a = pair
    return InstructionSample(
        make_sample_id(image.image_id, COMPLEX_REASONING, ordinal),
        image.file_name,
        COMPLEX_REASONING,
        (Turn("human", _human_first(q)), Turn("gpt", a)),
    )


def validate_sample(s: InstructionSample) -> Verdict:
    v = Verdict()
    if s.kind not in KINDS:
        v.violations.append(f"unknown kind {s.kind!r}")
    try:
        split_sample_id(s.sample_id)
    except ValueError as e:
        v.violations.append(str(e))
    n = len(s.turns)
    if n < 2 or n % 2:
        v.violations.append(f"structure: expected an even number of turns >= 2, got {n}")
    for i, t in enumerate(s.turns):
        want = SPEAKERS[i % 2]
        if t.speaker != want:
            v.violations.append(f"structure: turn {i} is {t.speaker!r}, expected {want!r}")
        if not t.text.strip():
            v.violations.append(f"structure: turn {i} is empty")
    if s.turns and not s.turns[0].text.startswith(IMAGE_TOKEN + "\n"):
        v.violations.append("structure: first human turn must open with the image token and a newline")
    if s.kind in (DETAILED_DESCRIPTION, COMPLEX_REASONING):
        for i, t in enumerate(s.turns):
            if t.speaker == "gpt" and _COORD_TUPLE.search(t.text):
                v.violations.append(f"leakage: turn {i} contains coordinate values")
    return v


# samples files: one JSON object per line

def write_samples(samples, path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def sample_from_json(obj, path, lineno) -> InstructionSample:
    if not isinstance(obj, dict):
        raise SchemaViolation(path, lineno, "sample must be an object")
    for key in ("id", "image", "conversations"):
        if key not in obj:
            raise SchemaViolation(path, lineno, f"missing key {key!r}")
    convs = obj["conversations"]
    if not isinstance(convs, list) or not all(
        isinstance(c, dict) and isinstance(c.get("from"), str) and isinstance(c.get("value"), str) for c in convs
    ):
        raise SchemaViolation(path, lineno, "conversations must be a list of {from, value}")
    try:
        sample = InstructionSample.from_dict(obj)
    except ValueError as e:
        raise SchemaViolation(path, lineno, str(e)) from None
    verdict = validate_sample(sample)
    if not verdict:
        raise SchemaViolation(path, lineno, "; ".join(verdict.violations))
    return sample


def read_samples(path) -> list[InstructionSample]:
    out = []
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaViolation(path, lineno, f"invalid JSON ({e})") from None
            out.append(sample_from_json(obj, path, lineno))
    return out
