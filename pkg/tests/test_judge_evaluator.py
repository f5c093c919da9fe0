import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from poseforge.benchmark_builder import BenchmarkItem
from poseforge.chat_backend import ChatBackend, MockTransport, Reply
from poseforge.errors import EmptyVerdicts, MissingKind, NonpositiveBase, UnparseableVerdict, ZeroReference
from poseforge.judge_evaluator import (
    MEAN_OF_RATIOS,
    EvaluationReport,
    JudgeVerdict,
    aggregate,
    evaluate,
    format_table,
    format_tsv,
    improvement,
    judge_item,
    parse_verdict,
    relative_score,
    round1,
)
from poseforge.prompt_builder import KINDS


def _item(image_id=1, kind="conversation", ref="The man is skiing downhill."):
    return BenchmarkItem(f"{image_id}-{kind}", "x.jpg", kind, "What is he doing?", "A man skis.", ref)


class Replies:
    """Pops scripted judge replies in order and records the prompts it saw."""

    def __init__(self, *texts):
        self.texts = list(texts)
        self.prompts = []

    def send(self, req):
        self.prompts.append(req.messages)
        return Reply(self.texts.pop(0))


def test_parse_plain():
    assert parse_verdict("8 8") == (8, 8, "")


def test_parse_with_explanation():
    assert parse_verdict("10 5\nAssistant 2 misses the pose.") == (10, 5, "Assistant 2 misses the pose.")


def test_parse_comma():
    assert parse_verdict(" 7, 9 \nok")[:2] == (7, 9)


@pytest.mark.parametrize("text", ["Scores: 8 and 7", "8", "11 3", "0 5", "", "I'd say 8 7\nbecause"])
def test_parse_rejects(text):
    with pytest.raises(UnparseableVerdict):
        parse_verdict(text)


def test_judge_retries_once_with_reminder():
    t = Replies("I think both are good.", "9 6\nfine")
    v = judge_item(_item(), "He skis.", ChatBackend(t))
    assert (v.score_reference, v.score_candidate) == (9, 6)
    assert len(t.prompts) == 2
    assert "two scores" in t.prompts[1].messages[-1].content.lower() or len(t.prompts[1].messages) > len(t.prompts[0].messages)


def test_judge_unparseable_after_retry():
    with pytest.raises(UnparseableVerdict):
        judge_item(_item(), "He skis.", ChatBackend(Replies("no idea", "still no idea")))


def test_reference_is_first_assistant():
    t = Replies("9 4\n")
    judge_item(_item(ref="REFERENCE TEXT"), "CANDIDATE TEXT", ChatBackend(t))
    user = t.prompts[0].messages[-1].content
    assert user.index("REFERENCE TEXT") < user.index("CANDIDATE TEXT")


def test_swap_averages_both_orders():
    t = Replies("8 6\n", "7 9\n")  # second call has candidate first
    v = judge_item(_item(), "He skis.", ChatBackend(t), swap=True)
    assert v.score_candidate == (6 + 7) / 2 and v.score_reference == (8 + 9) / 2


def _v(c, r, i=0):
    return JudgeVerdict(f"{i}-conversation", c, r)


def test_relative_score_identical_answers():
    assert relative_score([_v(8, 8), _v(6, 6)]) == 100.0


def test_relative_score_half():
    assert relative_score([_v(4, 8), _v(3, 6)]) == 50.0


def test_ratio_of_means_vs_mean_of_ratios():
    vs = [_v(2, 4), _v(8, 8)]
    assert relative_score(vs) == round1(100 * 5 / 6)
    assert relative_score(vs, MEAN_OF_RATIOS) == 75.0


def test_relative_score_errors():
    with pytest.raises(EmptyVerdicts):
        relative_score([])
    with pytest.raises(ValueError):
        relative_score([_v(1, 1)], "median")


@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=1, max_size=30))
def test_relative_score_scale_invariant(pairs):
    base = [_v(c, r, i) for i, (c, r) in enumerate(pairs)]
    doubled = [_v(2 * c, 2 * r, i) for i, (c, r) in enumerate(pairs)]
    assert relative_score(base) == relative_score(doubled)


@given(st.lists(st.tuples(st.integers(1, 10), st.integers(1, 10)), min_size=1, max_size=30), st.randoms())
def test_relative_score_permutation_invariant(pairs, rnd):
    vs = [_v(c, r, i) for i, (c, r) in enumerate(pairs)]
    shuffled = vs[:]
    rnd.shuffle(shuffled)
    assert relative_score(vs) == relative_score(shuffled)


def test_zero_reference_guard():
    # a verdict with reference 0 cannot be built, but ad-hoc objects can slip through
    class V:
        score_candidate, score_reference = 3, 0
    with pytest.raises(ZeroReference):
        relative_score([V()])


REFERENCE_ROWS = [
    # per-kind scores and the published overall, which is rounded from unrounded parts
    ((64.3, 78.9, 65.0), 69.4),
    ((58.9, 45.1, 50.4), 51.5),
    ((52.7, 69.1, 65.3), 62.4),
    ((62.4, 59.7, 75.1), 65.7),
    ((54.0, 47.2, 55.2), 52.1),
    ((60.1, 41.8, 42.6), 48.1),
    ((62.6, 38.8, 68.8), 56.7),
    ((73.8, 52.8, 68.8), 65.1),
    ((75.4, 56.2, 67.1), 66.3),
    ((70.2, 68.7, 66.1), 68.3),
    ((77.4, 58.6, 72.9), 69.6),
]


@pytest.mark.parametrize("parts,overall", REFERENCE_ROWS)
def test_aggregate_reference_rows(parts, overall):
    assert aggregate(dict(zip(KINDS, parts))) == pytest.approx(overall, abs=0.15)


def test_aggregate_missing_kind():
    with pytest.raises(MissingKind):
        aggregate({"conversation": 50.0, "detailed_description": 60.0})


def test_improvement():
    assert improvement(69.4, 52.1) == 33.2
    assert improvement(69.6, 68.3) == 1.9
    with pytest.raises(NonpositiveBase):
        improvement(1.0, 0.0)


def test_round_half_up():
    assert round1(69.35) == 69.4
    assert round1(0.25) == 0.3


def _bench(n_images=3):
    return [_item(i, k, ref=f"Reference {i} {k} answer about skiing.") for i in range(1, n_images + 1) for k in KINDS]


def test_evaluate_self_is_100():
    items = _bench()
    report = evaluate(items, {i.item_id: i.reference_answer for i in items}, ChatBackend(MockTransport()))
    assert report.per_kind_relative == {k: 100.0 for k in KINDS}
    assert report.overall == 100.0 and not report.failures


def test_evaluate_missing_answer_is_failure():
    items = _bench()
    answers = {i.item_id: "He is skiing." for i in items[1:]}
    report = evaluate(items, answers, ChatBackend(MockTransport()))
    assert list(report.failures) == [items[0].item_id]
    assert report.n_items["conversation"] == 2
    assert report.overall is not None


def test_evaluate_missing_kind_leaves_overall_empty():
    items = _bench()
    answers = {i.item_id: "x y" for i in items if i.kind != "complex_reasoning"}
    report = evaluate(items, answers, ChatBackend(MockTransport()))
    assert report.overall is None and "complex_reasoning" not in report.per_kind_relative


def test_evaluate_swap_and_method_recorded():
    items = _bench(2)
    answers = {i.item_id: "He is skiing." for i in items}
    t = MockTransport()
    report = evaluate(items, answers, ChatBackend(t), swap=True, method=MEAN_OF_RATIOS, candidate="m")
    assert t.calls == 2 * len(items)
    assert report.method == MEAN_OF_RATIOS and report.candidate == "m"


def test_report_roundtrip():
    items = _bench(1)
    report = evaluate(items, {i.item_id: "skiing" for i in items}, ChatBackend(MockTransport()))
    again = EvaluationReport.from_dict(json.loads(report.dumps()))
    assert again == report


def test_tables():
    rows = [("model a", {"conversation": 64.3, "detailed_description": 78.9, "complex_reasoning": 65.0}, 69.4),
            ("model b", {"conversation": 50.0}, None)]
    text = format_table(rows)
    assert "Conversation" in text and "69.4" in text and text.count("\n") == 4
    tsv = format_tsv(rows).splitlines()
    assert tsv[2].split("\t") == ["model b", "50.0", "-", "-", "-"]
