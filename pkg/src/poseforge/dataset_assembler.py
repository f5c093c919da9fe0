"""Merge per-kind sample files into one dataset with a reproducibility manifest."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import SchemaViolation
from .prompt_builder import KINDS
from .sample_factory import InstructionSample, read_samples, sample_from_json, split_sample_id

log = logging.getLogger(__name__)

TARGET_COUNTS = {
    "conversation": 112_980,
    "detailed_description": 45_174,
    "complex_reasoning": 42_174,
}
TARGET_TOTAL = 200_328
EXTERNAL = "external"

TRAIN_CONFIG = {
    "batch_size": 8,
    "gradient_accumulation_steps": 2,
    "learning_rate": 2e-5,
    "lr_scheduler": "cosine",
    "warmup_ratio": 0.03,
    "optimizer": "adamw",
    "num_train_epochs": 1,
    "weight_decay": 0.0,
    "deepspeed_stage": 3,
}


@dataclass
class DatasetManifest:
    counts: dict[str, int]
    total: int
    global_seed: int
    precision: int
    asset_hashes: dict[str, str]
    model_name: str
    temperature: float
    dataset_sha256: str = ""
    inputs: list[str] = field(default_factory=list)
    created_at: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(**d)


def _sort_key(s: InstructionSample):
    image_id, kind, ordinal = split_sample_id(s.sample_id)
    return image_id, KINDS.index(kind), ordinal


def _read_external(path) -> list[dict]:
    with Path(path).open("r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaViolation(path, e.lineno, f"invalid JSON ({e.msg})") from None
    if not isinstance(data, list):
        raise SchemaViolation(path, 1, "external dataset must be a JSON array")
    for i, obj in enumerate(data):
        if not (isinstance(obj, dict) and {"id", "image", "conversations"} <= obj.keys()):
            raise SchemaViolation(path, i + 1, "external sample lacks id/image/conversations")
    return data


def manifest_path_for(dataset_path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".manifest.json")


def scan_counts(dataset_path) -> dict[str, int]:
    """Per-kind counts recomputed from the dataset file itself."""
    with Path(dataset_path).open("r", encoding="utf-8") as f:
        data = json.load(f)
    counts = {k: 0 for k in KINDS}
    for obj in data:
        try:
            kind = split_sample_id(obj["id"])[1]
        except (ValueError, KeyError, TypeError):
            kind = EXTERNAL
        counts[kind] = counts.get(kind, 0) + 1
    return counts


def assemble(
    streams,
    out_path,
    *,
    global_seed: int = 0,
    precision: int = 3,
    asset_hashes: dict[str, str] | None = None,
    model_name: str = "",
    temperature: float = 0.7,
    merge=(),
    created_at: str | None = None,
) -> tuple[Path, DatasetManifest]:
    """Deduplicate (first id wins), sort by (image_id, kind, ordinal) and write dataset + manifest."""
    seen: dict[str, InstructionSample] = {}
    dropped = 0
    for path in streams:
        for s in read_samples(path):
            if s.sample_id in seen:
                dropped += 1
                continue
            seen[s.sample_id] = s
    if dropped:
        log.info("dropped %d duplicate samples", dropped)
    records = [s.to_dict() for s in sorted(seen.values(), key=_sort_key)]
    for path in merge:
        for obj in _read_external(path):
            if obj["id"] in seen:
                continue
            seen[obj["id"]] = None
            records.append(obj)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(records, ensure_ascii=False, indent=2) + "\n"
    out_path.write_text(blob, encoding="utf-8")

    counts = scan_counts(out_path)
    manifest = DatasetManifest(
        counts=counts,
        total=sum(counts.values()),
        global_seed=global_seed,
        precision=precision,
        asset_hashes=dict(sorted((asset_hashes or {}).items())),
        model_name=model_name,
        temperature=temperature,
        dataset_sha256=hashlib.sha256(blob.encode("utf-8")).hexdigest(),
        inputs=[Path(p).name for p in [*streams, *merge]],
        created_at=created_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    manifest_path_for(out_path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    return out_path, manifest


def load_dataset(path) -> list[InstructionSample]:
    with Path(path).open("r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaViolation(path, e.lineno, f"invalid JSON ({e.msg})") from None
    if not isinstance(data, list):
        raise SchemaViolation(path, 1, "dataset must be a JSON array")
    return [sample_from_json(obj, path, i + 1) for i, obj in enumerate(data)]


def _is_ours(obj) -> bool:
    try:
        split_sample_id(obj["id"])
    except (ValueError, KeyError, TypeError, AttributeError):
        return False
    return True


def stats(dataset_path) -> dict:
    """Per-kind counts, mean turns, mean gpt-turn length and distinct images.

    Samples merged from external datasets (foreign ids) are counted under
    ``external_count`` and otherwise ignored.
    """
    with Path(dataset_path).open("r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaViolation(dataset_path, e.lineno, f"invalid JSON ({e.msg})") from None
    if not isinstance(data, list):
        raise SchemaViolation(dataset_path, 1, "dataset must be a JSON array")
    samples = [sample_from_json(obj, dataset_path, i + 1) for i, obj in enumerate(data) if _is_ours(obj)]
    external = len(data) - len(samples)
    counts = {k: 0 for k in KINDS}
    turns = {k: 0 for k in KINDS}
    gpt_chars = 0
    gpt_turns = 0
    images = set()
    for s in samples:
        counts[s.kind] += 1
        turns[s.kind] += len(s.turns)
        images.add(s.image_ref)
        for t in s.turns:
            if t.speaker == "gpt":
                gpt_chars += len(t.text)
                gpt_turns += 1
    total = sum(counts.values())
    target_share = {k: TARGET_COUNTS[k] / TARGET_TOTAL for k in KINDS}
    return {
        "total": total,
        "counts": counts,
        "mean_turns": {k: (turns[k] / counts[k] if counts[k] else 0.0) for k in KINDS},
        "mean_gpt_chars": gpt_chars / gpt_turns if gpt_turns else 0.0,
        "distinct_images": len(images),
        "external_count": external,
        "share": {k: (counts[k] / total if total else 0.0) for k in KINDS},
        "target_split": {
            "counts": dict(TARGET_COUNTS),
            "total": TARGET_TOTAL,
            "sum_matches_total": sum(TARGET_COUNTS.values()) == TARGET_TOTAL,
            "share": target_share,
        },
    }


def stats_rows(report: dict) -> list[list]:
    """Tab-separated table: kind, count, share, target share, mean turns."""
    rows = [["kind", "count", "share", "target_share", "mean_turns"]]
    for k in KINDS:
        rows.append(
            [
                k,
                report["counts"][k],
                f"{report['share'][k]:.3f}",
                f"{report['target_split']['share'][k]:.3f}",
                f"{report['mean_turns'][k]:.2f}",
            ]
        )
    rows.append(["total", report["total"], "1.000" if report["total"] else "0.000", "1.000", ""])
    return rows


def write_train_config(path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(TRAIN_CONFIG, indent=2) + "\n", encoding="utf-8")
    return path
