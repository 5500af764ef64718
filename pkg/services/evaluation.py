"""
services/evaluation.py
======================
Dataset loading, answer normalization, VQA accuracy and run reports.

Accepted inputs:
    - VQA two-file layout: questions {"questions": [{question_id, image_id, question}]}
      plus annotations {"annotations": [{question_id, answers: [{answer}, ...]}]}
      (bare lists of records are accepted too)
    - AOK-VQA single file: [{question_id, image_id, question, direct_answers: [...]}]

Run outputs written by write_run_outputs():
    report.json       RunReport
    audit.jsonl       one EvalRecord per line, ordered by question id
    predictions.json  {question_id: answer}
"""

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from contracts.domain import QuestionInstance
from contracts.errors import CoverageError, DatasetError, EvaluationError, InvalidInputError

logger = logging.getLogger(__name__)

QUESTION_RECORD_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["question_id", "question"],
    "anyOf": [{"required": ["image_id"]}, {"required": ["image_ref"]}],
    "properties": {
        "question_id": {"type": ["string", "integer"]},
        "image_id": {"type": ["string", "integer"]},
        "image_ref": {"type": "string", "minLength": 1},
        "question": {"type": "string", "minLength": 1},
        "direct_answers": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    },
}

ANNOTATION_RECORD_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["question_id", "answers"],
    "properties": {
        "question_id": {"type": ["string", "integer"]},
        "answers": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "object", "required": ["answer"], "properties": {"answer": {"type": "string"}}},
        },
    },
}

PUNCTUATION = re.compile(r"[.,?!'\";:()]")
ARTICLES = frozenset({"a", "an", "the"})
NUMBER_WORDS = {
    "zero": "0",
    "one": "1",
    "two": "2",
    "three": "3",
    "four": "4",
    "five": "5",
    "six": "6",
    "seven": "7",
    "eight": "8",
    "nine": "9",
    "ten": "10",
}


# ============================================
# ANSWERS
# ============================================


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation, drop articles, number words to digits, single spaces."""
    tokens = PUNCTUATION.sub("", s.lower()).split()
    return " ".join(NUMBER_WORDS.get(token, token) for token in tokens if token not in ARTICLES)


def _matches_to_accuracy(matches: int) -> float:
    return min(matches / 3, 1.0)


def vqa_accuracy(predicted_norm: str, gold_norm: list[str] | tuple[str, ...], strict: bool = False) -> float:
    """
    min(matches / 3, 1) over normalized gold answers.

    strict averages that score over every leave-one-annotator-out subset.

    Raises:
        EvaluationError: gold_norm is empty
    """
    if not gold_norm:
        raise EvaluationError("cannot score against an empty gold list")
    matches = sum(1 for gold in gold_norm if gold == predicted_norm)
    if not strict or len(gold_norm) == 1:
        return _matches_to_accuracy(matches)
    scores = []
    for gold in gold_norm:
        scores.append(_matches_to_accuracy(matches - (1 if gold == predicted_norm else 0)))
    return math.fsum(scores) / len(scores)


def majority_answer(annotations: tuple[str, ...] | list[str]) -> str:
    """Most frequent normalized gold answer; ties go to the first seen."""
    normalized = [normalize_answer(answer) for answer in annotations]
    counts = Counter(answer for answer in normalized if answer)
    if not counts:
        fallback = next((answer.strip() for answer in annotations if answer.strip()), "")
        if not fallback:
            raise EvaluationError("no usable gold answer")
        return fallback
    return counts.most_common(1)[0][0]


def question_sort_key(question_id: str) -> tuple[int, int, str]:
    """Numeric ids in numeric order, before other ids in lexical order."""
    if question_id.isdigit():
        return (0, int(question_id), "")
    return (1, 0, question_id)


# ============================================
# DATASETS
# ============================================


def _records(data: Any, key: str, path: Path) -> list[Any]:
    if isinstance(data, dict) and key in data:
        data = data[key]
    if not isinstance(data, list):
        raise DatasetError(f"{path}: expected a list of records or an object with '{key}'")
    return data


def _read_json(path: str | Path) -> Any:
    file_path = Path(path)
    try:
        with open(file_path, encoding="utf-8") as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise DatasetError(f"Cannot read {file_path}: {e}") from e


def _validate(record: Any, schema: dict[str, Any], path: Path, position: int) -> None:
    try:
        jsonschema.validate(record, schema)
    except jsonschema.ValidationError as e:
        raise DatasetError(f"{path}: malformed record {position}: {e.message}", position=position) from e


def load_annotations(annotations_path: str | Path) -> dict[str, tuple[str, ...]]:
    path = Path(annotations_path)
    gold: dict[str, tuple[str, ...]] = {}
    for position, record in enumerate(_records(_read_json(path), "annotations", path)):
        _validate(record, ANNOTATION_RECORD_SCHEMA, path, position)
        question_id = str(record["question_id"])
        if question_id in gold:
            raise DatasetError(f"{path}: duplicate question_id {question_id}", question_id=question_id)
        gold[question_id] = tuple(answer["answer"] for answer in record["answers"])
    return gold


def load_dataset(questions_path: str | Path, annotations_path: str | Path | None = None) -> list[QuestionInstance]:
    """
    Load questions joined with their gold answers, in file order.

    Questions without annotations are loaded with annotations=None.

    Raises:
        DatasetError: unreadable file, malformed record, duplicate question_id
    """
    path = Path(questions_path)
    gold = load_annotations(annotations_path) if annotations_path is not None else {}

    instances: list[QuestionInstance] = []
    seen: set[str] = set()
    missing = 0
    for position, record in enumerate(_records(_read_json(path), "questions", path)):
        _validate(record, QUESTION_RECORD_SCHEMA, path, position)
        question_id = str(record["question_id"])
        if question_id in seen:
            raise DatasetError(f"{path}: duplicate question_id {question_id}", question_id=question_id)
        seen.add(question_id)

        answers: tuple[str, ...] | None = gold.get(question_id)
        if answers is None and "direct_answers" in record:
            answers = tuple(record["direct_answers"])
        if answers is None and annotations_path is not None:
            missing += 1

        try:
            instance = QuestionInstance(
                question_id=question_id,
                question_text=record["question"],
                image_ref=str(record.get("image_ref", record.get("image_id"))),
                annotations=answers,
            )
        except InvalidInputError as e:
            raise DatasetError(f"{path}: malformed record {position}: {e.message}", position=position) from e
        instances.append(instance)

    if missing:
        logger.warning(f"{missing} of {len(instances)} questions have no annotations (prediction only)")
    logger.info(f"Loaded {len(instances)} questions from {path}")
    return instances


# ============================================
# RECORDS AND REPORTS
# ============================================


@dataclass
class EvalRecord:
    """
    Outcome of one question.

    accuracy is None for unannotated questions; a failed question has
    accuracy 0 (when annotated) and an error dict.
    """

    question_id: str
    predicted: str
    predicted_norm: str
    gold_norm: tuple[str, ...] = field(default_factory=tuple)
    accuracy: float | None = None
    sub_questions: dict[str, Any] | None = None
    caption: str | None = None
    knowledge: list[str] = field(default_factory=list)
    example_count: int = 0
    logprob_sum: float | None = None
    error: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "predicted": self.predicted,
            "predicted_norm": self.predicted_norm,
            "gold_norm": list(self.gold_norm),
            "accuracy": self.accuracy,
            "sub_questions": self.sub_questions,
            "caption": self.caption,
            "knowledge": self.knowledge,
            "example_count": self.example_count,
            "logprob_sum": self.logprob_sum,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvalRecord":
        return cls(
            question_id=data["question_id"],
            predicted=data["predicted"],
            predicted_norm=data["predicted_norm"],
            gold_norm=tuple(data.get("gold_norm", [])),
            accuracy=data.get("accuracy"),
            sub_questions=data.get("sub_questions"),
            caption=data.get("caption"),
            knowledge=list(data.get("knowledge", [])),
            example_count=data.get("example_count", 0),
            logprob_sum=data.get("logprob_sum"),
            error=data.get("error"),
        )


def score_prediction(
    question_id: str, predicted: str, annotations: tuple[str, ...] | None, strict: bool = False
) -> EvalRecord:
    """An EvalRecord for a raw prediction against raw gold answers."""
    predicted_norm = normalize_answer(predicted)
    if not annotations:
        return EvalRecord(question_id=question_id, predicted=predicted, predicted_norm=predicted_norm)
    gold_norm = tuple(normalize_answer(answer) for answer in annotations)
    return EvalRecord(
        question_id=question_id,
        predicted=predicted,
        predicted_norm=predicted_norm,
        gold_norm=gold_norm,
        accuracy=vqa_accuracy(predicted_norm, gold_norm, strict=strict),
    )


@dataclass
class RunReport:
    """Aggregate of a run: accuracy in percent with one decimal."""

    accuracy: float | None
    count: int
    scored_count: int
    failed_count: int
    ablation: str = "none"
    decomposition_fallback_rate: float | None = None
    config: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "count": self.count,
            "scored_count": self.scored_count,
            "failed_count": self.failed_count,
            "ablation": self.ablation,
            "decomposition_fallback_rate": self.decomposition_fallback_rate,
            "config": self.config,
        }


def aggregate(records: list[EvalRecord], ablation: str = "none", config: dict[str, Any] | None = None) -> RunReport:
    """Mean accuracy x 100 over scored records, rounded to one decimal (None when nothing is scored)."""
    scored = [record.accuracy for record in records if record.accuracy is not None]
    accuracy = round(math.fsum(scored) / len(scored) * 100, 1) if scored else None

    decomposed = [record.sub_questions for record in records if record.sub_questions is not None]
    fallback_rate = None
    if decomposed:
        fallbacks = sum(1 for subs in decomposed if subs.get("origin") == "fallback")
        fallback_rate = round(fallbacks / len(decomposed), 4)

    return RunReport(
        accuracy=accuracy,
        count=len(records),
        scored_count=len(scored),
        failed_count=sum(1 for record in records if record.error is not None),
        ablation=ablation,
        decomposition_fallback_rate=fallback_rate,
        config=config or {},
    )


def write_run_outputs(run_dir: str | Path, report: RunReport, records: list[EvalRecord]) -> None:
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(records, key=lambda record: question_sort_key(record.question_id))

    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "audit.jsonl", "w", encoding="utf-8") as f:
        for record in ordered:
            f.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    predictions = {record.question_id: record.predicted for record in ordered}
    (out / "predictions.json").write_text(
        json.dumps(predictions, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


# ============================================
# SCORING EXISTING PREDICTIONS
# ============================================


def load_predictions(path: str | Path) -> dict[str, str]:
    """Read {qid: answer} or [{question_id, answer}] predictions."""
    file_path = Path(path)
    data = _read_json(file_path)
    if isinstance(data, dict):
        return {str(qid): str(answer) for qid, answer in data.items()}
    if isinstance(data, list):
        try:
            return {str(item["question_id"]): str(item["answer"]) for item in data}
        except (KeyError, TypeError) as e:
            raise DatasetError(f"{file_path}: prediction records need question_id and answer") from e
    raise DatasetError(f"{file_path}: unsupported predictions layout")


def score_predictions(
    predictions: dict[str, str], instances: list[QuestionInstance], max_missing: float = 0.05, strict: bool = False
) -> list[EvalRecord]:
    """
    Score predictions against annotated instances.

    Missing predictions score 0 while their share stays within max_missing.

    Raises:
        CoverageError: more than max_missing of the annotated ids lack a prediction
    """
    annotated = [instance for instance in instances if instance.annotations]
    missing = [instance.question_id for instance in annotated if instance.question_id not in predictions]
    if annotated and len(missing) / len(annotated) > max_missing:
        raise CoverageError(
            f"{len(missing)} of {len(annotated)} annotated questions have no prediction", missing_ids=missing
        )
    if missing:
        logger.warning(f"{len(missing)} questions have no prediction and score 0")
    return [
        score_prediction(instance.question_id, predictions.get(instance.question_id, ""), instance.annotations, strict)
        for instance in annotated
    ]
