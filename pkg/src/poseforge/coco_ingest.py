"""Read COCO caption / person-keypoint annotations and join them per image.

Geometry is normalized to [0, 1] image coordinates: boxes become
(x1, y1, x2, y2) corners, keypoints become (x, y, v) triples with the COCO
visibility flag copied unchanged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import (
    BadKeypointArity,
    BadVisibility,
    DuplicateImageId,
    MalformedFile,
)

log = logging.getLogger(__name__)

NUM_KEYPOINTS = 17
DEFAULT_PRECISION = 3


@dataclass(frozen=True)
class RawImageMeta:
    image_id: int
    file_name: str
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image_id}: non-positive size {self.width}x{self.height}")


@dataclass(frozen=True)
class RawPersonAnnotation:
    annotation_id: int
    image_id: int
    bbox_xywh: tuple[float, float, float, float]
    keypoints_raw: tuple[float, ...]
    num_keypoints: int

    def triples(self) -> list[tuple[float, float, int]]:
        k = self.keypoints_raw
        return [(k[i], k[i + 1], int(k[i + 2])) for i in range(0, len(k), 3)]


@dataclass(frozen=True)
class PersonAnnotation:
    annotation_id: int
    bbox_norm: tuple[float, float, float, float]
    keypoints_norm: tuple[tuple[float, float, int], ...]


@dataclass(frozen=True)
class ObjectBox:
    """A non-person instance box, only present when instance annotations are ingested."""

    annotation_id: int
    category: str
    bbox_norm: tuple[float, float, float, float]


@dataclass(frozen=True)
class ImageContext:
    image_meta: RawImageMeta
    captions: tuple[str, ...]
    persons: tuple[PersonAnnotation, ...]
    objects: tuple[ObjectBox, ...] = field(default=())

    @property
    def image_id(self) -> int:
        return self.image_meta.image_id


def _load_json(path) -> dict:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise MalformedFile(path, f"invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise MalformedFile(path, "top level must be an object")
    return data


def _require_list(data: dict, key: str, path) -> list:
    if key not in data:
        raise MalformedFile(path, f"missing key {key!r}")
    value = data[key]
    if not isinstance(value, list):
        raise MalformedFile(path, f"key {key!r} must be an array")
    return value


def _field(obj: dict, key: str, path, where: str):
    try:
        return obj[key]
    except (KeyError, TypeError):
        raise MalformedFile(path, f"{where}: missing key {key!r}") from None


def _read_images(data: dict, path) -> dict[int, RawImageMeta]:
    images: dict[int, RawImageMeta] = {}
    for i, img in enumerate(_require_list(data, "images", path)):
        where = f"images[{i}]"
        image_id = _field(img, "id", path, where)
        if image_id in images:
            raise DuplicateImageId(path, f"{where}: duplicate image id {image_id}")
        try:
            images[image_id] = RawImageMeta(
                image_id=int(image_id),
                file_name=str(_field(img, "file_name", path, where)),
                width=int(_field(img, "width", path, where)),
                height=int(_field(img, "height", path, where)),
            )
        except ValueError as e:
            raise MalformedFile(path, f"{where}: {e}") from None
    return images


def parse_caption_file(path) -> dict[int, tuple[RawImageMeta, list[str]]]:
    """Map image_id to (image metadata, captions in file order)."""
    data = _load_json(path)
    images = _read_images(data, path)
    out: dict[int, tuple[RawImageMeta, list[str]]] = {k: (m, []) for k, m in images.items()}
    for i, ann in enumerate(_require_list(data, "annotations", path)):
        where = f"annotations[{i}]"
        image_id = _field(ann, "image_id", path, where)
        caption = _field(ann, "caption", path, where)
        if image_id not in out:
            raise MalformedFile(path, f"{where}: caption refers to unknown image_id {image_id}")
        if not isinstance(caption, str):
            raise MalformedFile(path, f"{where}: 'caption' must be a string")
        out[image_id][1].append(caption.strip())
    return out


def _person_category_ids(data: dict) -> set[int]:
    cats = data.get("categories") or []
    ids = {c["id"] for c in cats if isinstance(c, dict) and c.get("name") == "person"}
    return ids or {1}


def parse_keypoint_file(path) -> dict[int, list[RawPersonAnnotation]]:
    """Map image_id to the non-crowd person annotations of that image.

    Images listed in the file but without person annotations map to an
    empty list.
    """
    data = _load_json(path)
    images = _read_images(data, path) if "images" in data else {}
    person_ids = _person_category_ids(data)
    out: dict[int, list[RawPersonAnnotation]] = {k: [] for k in images}
    for i, ann in enumerate(_require_list(data, "annotations", path)):
        where = f"annotations[{i}]"
        if ann.get("category_id", 1) not in person_ids:
            continue
        if ann.get("iscrowd", 0):
            continue
        kps = _field(ann, "keypoints", path, where)
        if not isinstance(kps, list) or len(kps) != 3 * NUM_KEYPOINTS:
            n = len(kps) if isinstance(kps, list) else "non-array"
            raise BadKeypointArity(path, f"{where}: keypoints must have 51 entries, got {n}")
        vis = kps[2::3]
        for j, v in enumerate(vis):
            if v not in (0, 1, 2):
                raise BadVisibility(path, f"{where}: keypoint {j + 1} has visibility {v!r}")
        bbox = _field(ann, "bbox", path, where)
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise MalformedFile(path, f"{where}: bbox must have 4 entries")
        if bbox[2] < 0 or bbox[3] < 0:
            raise MalformedFile(path, f"{where}: negative bbox size")
        labeled = sum(1 for v in vis if v > 0)
        raw = RawPersonAnnotation(
            annotation_id=int(_field(ann, "id", path, where)),
            image_id=int(_field(ann, "image_id", path, where)),
            bbox_xywh=tuple(float(b) for b in bbox),
            keypoints_raw=tuple(kps),
            num_keypoints=int(ann.get("num_keypoints", labeled)),
        )
        out.setdefault(raw.image_id, []).append(raw)
    return out


def parse_instance_file(path) -> dict[int, list[tuple[int, str, tuple[float, float, float, float]]]]:
    """Map image_id to (annotation_id, category name, xywh box) for every non-crowd instance."""
    data = _load_json(path)
    names = {c["id"]: c["name"] for c in data.get("categories") or []}
    out: dict[int, list] = {}
    for i, ann in enumerate(_require_list(data, "annotations", path)):
        where = f"annotations[{i}]"
        if ann.get("iscrowd", 0):
            continue
        cat = _field(ann, "category_id", path, where)
        bbox = _field(ann, "bbox", path, where)
        out.setdefault(int(_field(ann, "image_id", path, where)), []).append(
            (int(_field(ann, "id", path, where)), names.get(cat, str(cat)), tuple(float(b) for b in bbox))
        )
    return out


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def _norm(value: float, size: int, precision: int) -> float:
    return round(_clamp01(value / size), precision) + 0.0  # +0.0 turns -0.0 into 0.0


def normalize_box(bbox_xywh, meta: RawImageMeta, precision: int = DEFAULT_PRECISION):
    x, y, w, h = bbox_xywh
    W, H = meta.width, meta.height
    return (
        _norm(x, W, precision),
        _norm(y, H, precision),
        _norm(x + w, W, precision),
        _norm(y + h, H, precision),
    )


def normalize_person(
    raw: RawPersonAnnotation, meta: RawImageMeta, precision: int = DEFAULT_PRECISION
) -> PersonAnnotation:
    kps = []
    for x, y, v in raw.triples():
        if v == 0:
            kps.append((0.0, 0.0, 0))
        else:
            kps.append((_norm(x, meta.width, precision), _norm(y, meta.height, precision), v))
    return PersonAnnotation(
        annotation_id=raw.annotation_id,
        bbox_norm=normalize_box(raw.bbox_xywh, meta, precision),
        keypoints_norm=tuple(kps),
    )


def build_contexts(
    captions: dict[int, tuple[RawImageMeta, list[str]]],
    keypoints: dict[int, list[RawPersonAnnotation]],
    min_labeled_keypoints: int = 1,
    precision: int = DEFAULT_PRECISION,
    instances: dict[int, list] | None = None,
) -> list[ImageContext]:
    """Join captions and persons into human-centric contexts, ascending by image_id.

    Only persons with at least ``min_labeled_keypoints`` labeled keypoints
    are kept; an image needs one such person and one caption to be emitted.
    """
    contexts = []
    for image_id in sorted(captions):
        meta, caps = captions[image_id]
        if not caps:
            continue
        persons = [p for p in keypoints.get(image_id, []) if p.num_keypoints >= min_labeled_keypoints]
        if not persons:
            continue
        persons.sort(key=lambda p: p.annotation_id)
        objects = ()
        if instances:
            objects = tuple(
                ObjectBox(aid, name, normalize_box(box, meta, precision))
                for aid, name, box in sorted(instances.get(image_id, []))
                if name != "person"
            )
        contexts.append(
            ImageContext(
                image_meta=meta,
                captions=tuple(caps),
                persons=tuple(normalize_person(p, meta, precision) for p in persons),
                objects=objects,
            )
        )
    log.info("built %d human-centric contexts from %d images", len(contexts), len(captions))
    return contexts


# contexts file (JSON lines)

def context_to_dict(ctx: ImageContext) -> dict:
    m = ctx.image_meta
    d = {
        "image_id": m.image_id,
        "file_name": m.file_name,
        "width": m.width,
        "height": m.height,
        "captions": list(ctx.captions),
        "persons": [
            {
                "annotation_id": p.annotation_id,
                "bbox_norm": list(p.bbox_norm),
                "keypoints_norm": [list(k) for k in p.keypoints_norm],
            }
            for p in ctx.persons
        ],
    }
    if ctx.objects:
        d["objects"] = [
            {"annotation_id": o.annotation_id, "category": o.category, "bbox_norm": list(o.bbox_norm)}
            for o in ctx.objects
        ]
    return d


def context_from_dict(d: dict) -> ImageContext:
    return ImageContext(
        image_meta=RawImageMeta(d["image_id"], d["file_name"], d["width"], d["height"]),
        captions=tuple(d["captions"]),
        persons=tuple(
            PersonAnnotation(
                annotation_id=p["annotation_id"],
                bbox_norm=tuple(p["bbox_norm"]),
                keypoints_norm=tuple((float(x), float(y), int(v)) for x, y, v in p["keypoints_norm"]),
            )
            for p in d["persons"]
        ),
        objects=tuple(
            ObjectBox(o["annotation_id"], o["category"], tuple(o["bbox_norm"])) for o in d.get("objects", [])
        ),
    )


def dumps_context(ctx: ImageContext) -> str:
    return json.dumps(context_to_dict(ctx), ensure_ascii=False)


def write_contexts(contexts: Iterable[ImageContext], path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for ctx in contexts:
            f.write(dumps_context(ctx) + "\n")


def read_contexts(path) -> list[ImageContext]:
    out = []
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(context_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise MalformedFile(path, f"line {lineno}: {e}") from None
    return out
