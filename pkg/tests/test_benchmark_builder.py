import pytest

from cocofix import synthetic_contexts
from poseforge.benchmark_builder import (
    build_benchmark,
    read_answers,
    read_benchmark,
    sample_images,
    write_answers,
    write_benchmark,
)
from poseforge.chat_backend import ChatBackend, MockTransport, Reply
from poseforge.errors import IncompleteBenchmark, NotEnoughImages
from poseforge.prompt_builder import KINDS


@pytest.fixture(scope="module")
def contexts(tmp_path_factory):
    # 120 images, 1 in 6 without people -> 100 contexts
    return synthetic_contexts(tmp_path_factory.mktemp("coco"), 120)


def test_fixture_size(contexts):
    assert len(contexts) == 100


def test_sample_whole_population(contexts):
    picked = sample_images(contexts, len(contexts), seed=3)
    assert [c.image_id for c in picked] == sorted(c.image_id for c in contexts)


def test_sample_seeded(contexts):
    a = [c.image_id for c in sample_images(contexts, 90, seed=7)]
    b = [c.image_id for c in sample_images(list(reversed(contexts)), 90, seed=7)]
    assert a == b == sorted(a) and len(set(a)) == 90
    assert a != [c.image_id for c in sample_images(contexts, 90, seed=8)]


def test_sample_too_many(contexts):
    with pytest.raises(NotEnoughImages):
        sample_images(contexts, 101, seed=0)


def test_build_270_items(contexts, tmp_path):
    backend = ChatBackend(MockTransport(), cache_dir=tmp_path / "cache")
    items = build_benchmark(sample_images(contexts, 90, 0), backend, "gpt-4o")
    assert len(items) == 270
    assert len({i.item_id for i in items}) == 270
    for k in KINDS:
        assert sum(i.kind == k for i in items) == 90
    assert all(i.question and i.reference_answer and i.context_text for i in items)
    write_benchmark(items, tmp_path / "b.json")
    assert read_benchmark(tmp_path / "b.json") == items


class Prose:
    """Replies with prose that no question/answer parser accepts for one image."""

    def __init__(self, bad_image):
        self.bad_image = bad_image
        self.inner = MockTransport()

    def send(self, req):
        if req.image_id == self.bad_image and req.kind == "conversation":
            return Reply("Just some prose without any labels.")
        return self.inner.send(req)


def test_incomplete_benchmark_raises(contexts):
    picked = sample_images(contexts, 4, 0)
    backend = ChatBackend(Prose(picked[2].image_id))
    with pytest.raises(IncompleteBenchmark) as e:
        build_benchmark(picked, backend, "gpt-4o")
    assert list(e.value.failures) == [f"{picked[2].image_id}-conversation"]


def test_answers_roundtrip(tmp_path):
    answers = {"1-conversation": "yes", "1-detailed_description": "a\nb"}
    write_answers(answers, tmp_path / "a.jsonl")
    assert read_answers(tmp_path / "a.jsonl") == answers
