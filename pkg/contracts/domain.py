"""
contracts/domain.py
===================
Domain types flowing between pipeline stages.

All types are frozen dataclasses validated on construction, so they can be
shared freely between concurrent pipeline workers. Sequences are stored as
tuples for the same reason.

Dependencies:
    - contracts/errors.py (InvalidInputError)
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import InvalidInputError

LOGPROB_SUM_TOLERANCE = 1e-9
SCORE_TOLERANCE = 1e-9


class Ablation(Enum):
    """Pipeline variants disabling one or more knowledge sources."""

    NONE = "none"
    NO_KNOWLEDGE = "no_knowledge"
    ORIGINAL_QUESTION = "original_question"
    NO_CAPTION = "no_caption"
    NO_KNOWLEDGE_NO_CAPTION = "no_knowledge_no_caption"

    @property
    def drops_caption(self) -> bool:
        return self in (Ablation.NO_CAPTION, Ablation.NO_KNOWLEDGE_NO_CAPTION)

    @property
    def drops_knowledge(self) -> bool:
        return self in (Ablation.NO_KNOWLEDGE, Ablation.NO_KNOWLEDGE_NO_CAPTION)


class SelectorStrategy(Enum):
    """How in-context examples are chosen."""

    SIMILARITY = "similarity"
    RANDOM = "random"


class SubQuestionOrigin(Enum):
    """Provenance of a sub-question pair."""

    PARSED = "parsed"
    FALLBACK = "fallback"


class KnowledgeSource(Enum):
    """Where a knowledge snippet came from."""

    ELICITED = "elicited"
    LOCAL_CAPTION = "local_caption"


@dataclass(frozen=True)
class QuestionInstance:
    """
    One test item.

    Attributes:
        question_id: Dataset identifier
        question_text: The question asked about the image
        image_ref: Opaque image identifier resolvable by backends
        annotations: Gold answers (evaluation only), None in prediction-only mode
    """

    question_id: str
    question_text: str
    image_ref: str
    annotations: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.question_text.strip():
            raise InvalidInputError("question_text must be non-empty", question_id=self.question_id)
        if not self.image_ref:
            raise InvalidInputError("image_ref must be non-empty", question_id=self.question_id)
        if self.annotations is not None and len(self.annotations) == 0:
            raise InvalidInputError("annotations, when present, must be non-empty", question_id=self.question_id)

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "question_text": self.question_text,
            "image_ref": self.image_ref,
            "annotations": list(self.annotations) if self.annotations is not None else None,
        }


@dataclass(frozen=True)
class SubQuestionPair:
    """Image-based and knowledge-based sub-questions of one question."""

    image_sub: str
    knowledge_sub: str
    origin: SubQuestionOrigin

    def __post_init__(self) -> None:
        if not self.image_sub.strip() or not self.knowledge_sub.strip():
            raise InvalidInputError("sub-questions must be non-empty")
        if self.origin is SubQuestionOrigin.FALLBACK and self.image_sub != self.knowledge_sub:
            raise InvalidInputError("fallback pairs must repeat the original question")

    @classmethod
    def fallback(cls, question_text: str) -> "SubQuestionPair":
        """Both sub-questions are the original question (coupled baseline)."""
        return cls(image_sub=question_text, knowledge_sub=question_text, origin=SubQuestionOrigin.FALLBACK)

    def to_dict(self) -> dict[str, Any]:
        return {"image_sub": self.image_sub, "knowledge_sub": self.knowledge_sub, "origin": self.origin.value}


@dataclass(frozen=True)
class KnowledgeItem:
    """One knowledge snippet, optionally scored by the re-ranker."""

    text: str
    source: KnowledgeSource
    score: float | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidInputError("knowledge text must be non-empty")
        if self.score is not None and not (-1.0 - SCORE_TOLERANCE <= self.score <= 1.0 + SCORE_TOLERANCE):
            raise InvalidInputError(f"knowledge score out of [-1, 1]: {self.score}")

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "source": self.source.value, "score": self.score}


@dataclass(frozen=True)
class Caption:
    """
    A caption conditioned on a sub-question.

    The omitted sentinel (ablations that drop the caption) is the only caption
    allowed to carry empty text; prompt assembly leaves its Context line out.
    """

    text: str
    prompt_used: str
    omitted: bool = False

    def __post_init__(self) -> None:
        if not self.omitted and not self.text.strip():
            raise InvalidInputError("caption text must be non-empty")

    @classmethod
    def omitted_sentinel(cls) -> "Caption":
        return cls(text="", prompt_used="", omitted=True)

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "prompt_used": self.prompt_used, "omitted": self.omitted}


@dataclass(frozen=True)
class IcExample:
    """A solved training item usable as an in-context example."""

    question_text: str
    caption_text: str
    answer_text: str
    question_embedding: tuple[float, ...]
    image_embedding: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.answer_text.strip():
            raise InvalidInputError("answer_text must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question_text,
            "caption": self.caption_text,
            "answer": self.answer_text,
            "question_embedding": list(self.question_embedding),
            "image_embedding": list(self.image_embedding),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "IcExample":
        return cls(
            question_text=data["question"],
            caption_text=data["caption"],
            answer_text=data["answer"],
            question_embedding=tuple(float(v) for v in data["question_embedding"]),
            image_embedding=tuple(float(v) for v in data["image_embedding"]),
        )


@dataclass(frozen=True)
class ScoredAnswer:
    """
    One answer candidate with its token log-probabilities.

    The empty answer is the only candidate whose logprob_sum is -inf; the
    ensemble picks it only when every candidate is empty.
    """

    text: str
    token_logprobs: tuple[float, ...] = field(default_factory=tuple)
    logprob_sum: float = 0.0

    def __post_init__(self) -> None:
        if any(lp > 0 for lp in self.token_logprobs):
            raise InvalidInputError("token log-probabilities must be <= 0")
        if self.is_empty:
            return
        if abs(self.logprob_sum - math.fsum(self.token_logprobs)) > LOGPROB_SUM_TOLERANCE:
            raise InvalidInputError("logprob_sum does not match token_logprobs")

    @property
    def is_empty(self) -> bool:
        return self.text == "" and self.logprob_sum == -math.inf

    @classmethod
    def from_logprobs(cls, text: str, token_logprobs: list[float] | tuple[float, ...]) -> "ScoredAnswer":
        if not text:
            return cls.empty()
        logprobs = tuple(float(lp) for lp in token_logprobs)
        return cls(text=text, token_logprobs=logprobs, logprob_sum=math.fsum(logprobs))

    @classmethod
    def empty(cls) -> "ScoredAnswer":
        return cls(text="", token_logprobs=(), logprob_sum=-math.inf)

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "token_logprobs": list(self.token_logprobs),
            # JSON has no -inf
            "logprob_sum": None if self.is_empty else self.logprob_sum,
        }
