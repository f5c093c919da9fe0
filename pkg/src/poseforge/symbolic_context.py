"""Text rendering of an image context for the text-only teacher model.

Layout, one item per line::

    <caption 1>
    ...
    <caption n>

    person: (x1, y1, x2, y2)          # one line per person
    <category>: (x1, y1, x2, y2)      # non-person objects, if ingested
    person keypoints: (x, y, v), ...  # one line per person, 17 triples

Persons appear in ascending annotation_id order, keypoints in COCO order.
"""

from __future__ import annotations

from dataclasses import dataclass

from .coco_ingest import DEFAULT_PRECISION, ImageContext, PersonAnnotation
from .errors import IndexOutOfRange

BODY_PARTS = (
    "nose",
    "left eye",
    "right eye",
    "left ear",
    "right ear",
    "left shoulder",
    "right shoulder",
    "left elbow",
    "right elbow",
    "left wrist",
    "right wrist",
    "left hip",
    "right hip",
    "left knee",
    "right knee",
    "left ankle",
    "right ankle",
)


@dataclass(frozen=True)
class ContextText:
    image_id: int
    text: str


def body_part_name(index: int) -> str:
    """Name of keypoint ``index``, counted from 1."""
    if not 1 <= index <= len(BODY_PARTS):
        raise IndexOutOfRange(f"keypoint index must be in 1..17, got {index}")
    return BODY_PARTS[index - 1]


def format_coord(x: float, precision: int = DEFAULT_PRECISION) -> str:
    s = f"{x:.{precision}f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


def _box(b, precision: int) -> str:
    return "(" + ", ".join(format_coord(v, precision) for v in b) + ")"


def _keypoints(p: PersonAnnotation, precision: int) -> str:
    return ", ".join(
        f"({format_coord(x, precision)}, {format_coord(y, precision)}, {int(v)})" for x, y, v in p.keypoints_norm
    )


def _persons(ctx: ImageContext):
    return sorted(ctx.persons, key=lambda p: p.annotation_id)


def render_context_parts(ctx: ImageContext, precision: int = DEFAULT_PRECISION) -> list[str]:
    """Captions block followed by one block per person (box line + keypoints line)."""
    parts = ["\n".join(ctx.captions)]
    for p in _persons(ctx):
        parts.append(f"person: {_box(p.bbox_norm, precision)}\nperson keypoints: {_keypoints(p, precision)}")
    for o in ctx.objects:
        parts.append(f"{o.category}: {_box(o.bbox_norm, precision)}")
    return parts


def render_context(ctx: ImageContext, precision: int = DEFAULT_PRECISION) -> ContextText:
    persons = _persons(ctx)
    geometry = [f"person: {_box(p.bbox_norm, precision)}" for p in persons]
    geometry += [f"{o.category}: {_box(o.bbox_norm, precision)}" for o in ctx.objects]
    geometry += [f"person keypoints: {_keypoints(p, precision)}" for p in persons]
    text = "\n".join(ctx.captions) + "\n\n" + "\n".join(geometry)
    return ContextText(image_id=ctx.image_id, text=text)
