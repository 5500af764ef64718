"""
Test Script: Evaluation
=======================
Answer normalization, VQA accuracy, dataset loading and run outputs.

Usage:
    pytest services/tests/test_evaluation.py
"""

import json
import random
import string

import pytest

from contracts.errors import CoverageError, DatasetError, EvaluationError
from services.evaluation import (
    EvalRecord,
    aggregate,
    load_dataset,
    load_predictions,
    majority_answer,
    normalize_answer,
    question_sort_key,
    score_prediction,
    score_predictions,
    vqa_accuracy,
    write_run_outputs,
)


def write_json(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


# ============================================
# Accuracy
# ============================================


@pytest.mark.parametrize(
    "matches, total, expected",
    [
        (0, 10, 0.0),
        (1, 10, 1 / 3),
        (2, 10, 2 / 3),
        (3, 10, 1.0),
        (7, 10, 1.0),
        (10, 10, 1.0),
        (1, 1, 1 / 3),
        (2, 5, 2 / 3),
    ],
)
def test_accuracy_table(matches, total, expected):
    gold = ["red"] * matches + ["blue"] * (total - matches)
    assert vqa_accuracy("red", gold) == pytest.approx(expected)


def test_accuracy_takes_only_attainable_values():
    attainable = {0.0, 1 / 3, 2 / 3, 1.0}
    for matches in range(11):
        gold = ["yes"] * matches + ["no"] * (10 - matches)
        assert vqa_accuracy("yes", gold) in attainable


def test_strict_leave_one_out():
    gold = ["red"] * 3 + ["blue"] * 7
    # three subsets lose a match (2/3), seven keep all three (1)
    assert vqa_accuracy("red", gold, strict=True) == pytest.approx(0.9)
    assert vqa_accuracy("red", ["red"] * 10, strict=True) == pytest.approx(1.0)
    assert vqa_accuracy("green", gold, strict=True) == 0.0


def test_accuracy_needs_gold():
    with pytest.raises(EvaluationError):
        vqa_accuracy("red", [])


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("The Red Panda.", "red panda"),
        ("Two dogs!", "2 dogs"),
        ("  a   Banana ", "banana"),
        ("don't", "dont"),
        ("Yes", "yes"),
        ("", ""),
    ],
)
def test_normalize_answer(raw, expected):
    assert normalize_answer(raw) == expected


def test_normalize_answer_is_idempotent():
    rng = random.Random(20231016)
    pieces = ["The", "a", "AN", "two", "Three", "dog", "red-panda", "don't", "1", " ", "  "]
    pieces += list(".?!,'\":()")
    for _ in range(500):
        raw = "".join(rng.choice(pieces + [rng.choice(string.ascii_letters)]) for _ in range(rng.randint(0, 12)))
        once = normalize_answer(raw)
        assert normalize_answer(once) == once


def test_prediction_is_normalized_before_matching():
    record = score_prediction("1", "The Surfboard.", ("surfboard", "surfboard", "surf board", "surfboard"))
    assert record.predicted_norm == "surfboard"
    assert record.accuracy == 1.0


def test_unannotated_prediction_has_no_accuracy():
    assert score_prediction("1", "red", None).accuracy is None


def test_majority_answer():
    assert majority_answer(["Red", "red.", "blue"]) == "red"
    # ties go to the first answer seen
    assert majority_answer(["blue", "red", "red", "blue"]) == "blue"
    assert majority_answer(["the", "A"]) == "the"
    with pytest.raises(EvaluationError):
        majority_answer(["  "])


# ============================================
# Aggregation
# ============================================


def record(qid, accuracy, **kwargs):
    return EvalRecord(question_id=qid, predicted="x", predicted_norm="x", accuracy=accuracy, **kwargs)


def test_aggregate_percent_one_decimal():
    records = [record(str(i), acc) for i, acc in enumerate([1.0, 0.0, 1.0, 1.0])]
    assert aggregate(records).accuracy == 75.0
    thirds = [record("1", 1.0), record("2", 2 / 3), record("3", 0.0)]
    assert aggregate(thirds).accuracy == 55.6


def test_aggregate_counts_and_fallback_rate():
    records = [
        record("1", 1.0, sub_questions={"origin": "parsed"}),
        record("2", None, sub_questions={"origin": "fallback"}),
        record("3", 0.0, error={"type": "TransportError"}),
    ]
    report = aggregate(records, ablation="no_caption")
    assert (report.count, report.scored_count, report.failed_count) == (3, 2, 1)
    assert report.accuracy == 50.0
    assert report.decomposition_fallback_rate == 0.5
    assert report.to_dict()["ablation"] == "no_caption"


def test_aggregate_with_nothing_scored():
    report = aggregate([record("1", None)])
    assert report.accuracy is None
    assert report.decomposition_fallback_rate is None


def test_question_sort_key():
    ids = ["10", "b", "2", "a", "1"]
    assert sorted(ids, key=question_sort_key) == ["1", "2", "10", "a", "b"]


# ============================================
# Datasets
# ============================================


def test_load_vqa_two_file_layout(tmp_path):
    questions = write_json(
        tmp_path / "q.json",
        {"questions": [{"question_id": 1, "image_id": 42, "question": "What is red?"}]},
    )
    annotations = write_json(
        tmp_path / "a.json",
        {"annotations": [{"question_id": 1, "answers": [{"answer": "apple"}, {"answer": "fire truck"}]}]},
    )
    [instance] = load_dataset(questions, annotations)
    assert instance.question_id == "1"
    assert instance.image_ref == "42"
    assert instance.annotations == ("apple", "fire truck")


def test_load_bare_lists_and_missing_annotations(tmp_path):
    questions = write_json(
        tmp_path / "q.json",
        [
            {"question_id": "a", "image_ref": "img_a", "question": "What is red?"},
            {"question_id": "b", "image_ref": "img_b", "question": "What is blue?"},
        ],
    )
    annotations = write_json(tmp_path / "a.json", [{"question_id": "a", "answers": [{"answer": "apple"}]}])
    instances = load_dataset(questions, annotations)
    assert [i.question_id for i in instances] == ["a", "b"]
    assert instances[1].annotations is None


def test_load_aok_direct_answers(tmp_path):
    questions = write_json(
        tmp_path / "aok.json",
        [{"question_id": "x1", "image_id": 7, "question": "Why?", "direct_answers": ["fun", "sport", "fun"]}],
    )
    [instance] = load_dataset(questions)
    assert instance.annotations == ("fun", "sport", "fun")


@pytest.mark.parametrize(
    "questions",
    [
        [{"question_id": 1, "image_id": 1, "question": "A?"}, {"question_id": 1, "image_id": 2, "question": "B?"}],
        [{"question_id": 1, "question": "no image?"}],
        [{"question_id": 1, "image_id": 1, "question": ""}],
        [{"question_id": 1, "image_id": 1, "question": "   "}],
        {"unexpected": []},
    ],
)
def test_invalid_question_files(tmp_path, questions):
    with pytest.raises(DatasetError):
        load_dataset(write_json(tmp_path / "q.json", questions))


def test_blank_question_names_its_position(tmp_path):
    questions = [
        {"question_id": 1, "image_id": 1, "question": "A?"},
        {"question_id": 2, "image_id": 2, "question": " \t "},
    ]
    with pytest.raises(DatasetError) as info:
        load_dataset(write_json(tmp_path / "q.json", questions))
    assert info.value.details["position"] == 1
    assert "q.json" in info.value.message


def test_duplicate_annotations(tmp_path):
    questions = write_json(tmp_path / "q.json", [{"question_id": 1, "image_id": 1, "question": "A?"}])
    annotations = write_json(
        tmp_path / "a.json",
        [{"question_id": 1, "answers": [{"answer": "x"}]}, {"question_id": 1, "answers": [{"answer": "y"}]}],
    )
    with pytest.raises(DatasetError):
        load_dataset(questions, annotations)


def test_unreadable_dataset(tmp_path):
    (tmp_path / "q.json").write_text("{not json", encoding="utf-8")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "q.json")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing.json")


# ============================================
# Predictions
# ============================================


def test_load_predictions_both_layouts(tmp_path):
    as_dict = write_json(tmp_path / "d.json", {"1": "red", "2": "blue"})
    as_list = write_json(tmp_path / "l.json", [{"question_id": 1, "answer": "red"}, {"question_id": 2, "answer": "blue"}])
    assert load_predictions(as_dict) == load_predictions(as_list) == {"1": "red", "2": "blue"}

    broken = write_json(tmp_path / "b.json", [{"question_id": 1}])
    with pytest.raises(DatasetError):
        load_predictions(broken)


def annotated_instances(tmp_path, count):
    questions = write_json(
        tmp_path / "q.json",
        [{"question_id": i, "image_id": i, "question": f"Question {i}?"} for i in range(count)],
    )
    annotations = write_json(
        tmp_path / "a.json",
        [{"question_id": i, "answers": [{"answer": "red"}] * 3} for i in range(count)],
    )
    return load_dataset(questions, annotations)


def test_missing_predictions_fail_coverage(tmp_path):
    instances = annotated_instances(tmp_path, 10)
    predictions = {str(i): "red" for i in range(5)}
    with pytest.raises(CoverageError) as info:
        score_predictions(predictions, instances)
    assert info.value.missing_ids == ["5", "6", "7", "8", "9"]


def test_missing_predictions_within_tolerance_score_zero(tmp_path):
    instances = annotated_instances(tmp_path, 10)
    predictions = {str(i): "red" for i in range(9)}
    records = score_predictions(predictions, instances, max_missing=0.1)
    assert aggregate(records).accuracy == 90.0


def test_write_run_outputs(tmp_path):
    records = [record("10", 1.0), record("2", 0.0)]
    report = aggregate(records)
    write_run_outputs(tmp_path / "run", report, records)

    run = tmp_path / "run"
    assert json.loads((run / "report.json").read_text(encoding="utf-8"))["accuracy"] == 50.0
    audit = [json.loads(line) for line in (run / "audit.jsonl").read_text(encoding="utf-8").splitlines()]
    assert [line["question_id"] for line in audit] == ["2", "10"]
    assert EvalRecord.from_dict(audit[1]) == records[0]
    predictions = (run / "predictions.json").read_text(encoding="utf-8")
    assert list(json.loads(predictions)) == ["2", "10"]
    assert predictions.endswith("}\n")
