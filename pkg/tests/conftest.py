from pathlib import Path

import pytest

from poseforge.coco_ingest import build_contexts, parse_caption_file, parse_keypoint_file

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def golden_dir():
    return GOLDEN


@pytest.fixture
def small_contexts():
    caps = parse_caption_file(DATA / "captions_small.json")
    kps = parse_keypoint_file(DATA / "keypoints_small.json")
    return build_contexts(caps, kps)


@pytest.fixture
def ctx1(small_contexts):
    return small_contexts[0]


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Records one PASS/FAIL line for an acceptance criterion, then asserts."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
