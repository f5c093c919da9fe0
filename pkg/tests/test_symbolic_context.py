import re

import pytest

from poseforge.coco_ingest import ImageContext, PersonAnnotation, RawImageMeta
from poseforge.errors import IndexOutOfRange
from poseforge.symbolic_context import BODY_PARTS, body_part_name, render_context, render_context_parts


def _person(aid, kp=(0.0, 0.0, 0)):
    return PersonAnnotation(aid, (0.1, 0.2, 0.3, 0.4), tuple([kp] * 17))


def test_golden_context(ctx1, golden_dir):
    assert render_context(ctx1).text == (golden_dir / "context_1.txt").read_text()


def test_zero_keypoints_rendered():
    ctx = ImageContext(RawImageMeta(1, "a", 10, 10), ("one caption",), (_person(1),))
    assert render_context(ctx).text.count("(0.0, 0.0, 0)") == 17


def test_two_persons_two_lines_each():
    ctx = ImageContext(RawImageMeta(1, "a", 10, 10), ("c",), (_person(2), _person(1)))
    lines = render_context(ctx).text.splitlines()
    assert sum(l.startswith("person: ") for l in lines) == 2
    assert sum(l.startswith("person keypoints: ") for l in lines) == 2


def test_persons_in_annotation_order():
    a = PersonAnnotation(9, (0.5, 0.5, 0.6, 0.6), tuple([(0.0, 0.0, 0)] * 17))
    b = PersonAnnotation(3, (0.1, 0.1, 0.2, 0.2), tuple([(0.0, 0.0, 0)] * 17))
    ctx = ImageContext(RawImageMeta(1, "a", 10, 10), ("c",), (a, b))
    text = render_context(ctx).text
    assert text.index("(0.1, 0.1, 0.2, 0.2)") < text.index("(0.5, 0.5, 0.6, 0.6)")


@pytest.mark.parametrize("i,name", [(1, "nose"), (10, "left wrist"), (17, "right ankle")])
def test_body_part_names(i, name):
    assert body_part_name(i) == name


@pytest.mark.parametrize("i", [0, 18, -1])
def test_body_part_out_of_range(i):
    with pytest.raises(IndexOutOfRange):
        body_part_name(i)


def test_body_part_list():
    assert len(BODY_PARTS) == 17
    assert BODY_PARTS[5:7] == ("left shoulder", "right shoulder")


def test_captions_verbatim_and_coordinates_in_unit_range(small_contexts):
    for ctx in small_contexts:
        text = render_context(ctx).text
        for c in ctx.captions:
            assert c in text
        geometry = text.split("\n\n", 1)[1]
        for tup in re.findall(r"\(([^)]*)\)", geometry):
            vals = [float(v) for v in tup.split(",")]
            coords = vals[:2] if len(vals) == 3 else vals
            assert all(0.0 <= v <= 1.0 for v in coords)


def test_render_is_pure(small_contexts):
    assert [render_context(c) for c in small_contexts] == [render_context(c) for c in small_contexts]


def test_multi_message_parts(small_contexts):
    ctx = small_contexts[1]
    parts = render_context_parts(ctx)
    assert len(parts) == 1 + len(ctx.persons)
    assert parts[0] == "\n".join(ctx.captions)
