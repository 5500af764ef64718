"""
services/decompose.py
=====================
Question decomposition: one LLM call splits a question into an image-based
sub-question (for the caption model) and a knowledge-based sub-question (for
knowledge elicitation).

The reply is parsed leniently: the first balanced JSON object carrying both
sub-questions wins, keys are matched case-insensitively. Anything else falls
back to the original question for both subs, which is exactly the coupled
single-question pipeline.

Dependencies:
    - services/backends.py (BackendHub.generate)
"""

import json
import logging
import string
from dataclasses import dataclass
from typing import Any

from contracts.domain import Ablation, QuestionInstance, SubQuestionOrigin, SubQuestionPair
from contracts.errors import InvalidInputError
from contracts.generation_contract import GenerationRequest

from .backends import BackendHub
from .config import PipelineConfig

logger = logging.getLogger(__name__)

DECOMPOSITION_TEMPLATE = """\
To answer the question ${question} from an image, you should decouple the question into two sub-questions.

One sub-question should guide a question-aware caption model to acquire information from the image.

Then based on the information from the image, the other sub-question should acquire information from an extra knowledge base.

You should return only two questions without explanation in a JSON format.

Image-based sub-question:

Knowledge-based sub-question:
"""


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt with exactly one ${question} placeholder."""

    template_text: str
    placeholder: str = "question"

    def __post_init__(self) -> None:
        names = [
            match.group("named") or match.group("braced")
            for match in string.Template.pattern.finditer(self.template_text)
            if match.group("named") or match.group("braced")
        ]
        if names != [self.placeholder]:
            raise InvalidInputError(f"template must contain exactly one ${{{self.placeholder}}} placeholder, found {names}")

    def render(self, value: str) -> str:
        return string.Template(self.template_text).substitute({self.placeholder: value})


DECOMPOSITION_PROMPT = PromptTemplate(DECOMPOSITION_TEMPLATE)


def build_decomposition_prompt(question: str) -> str:
    """Render the decomposition prompt for a question."""
    if not question.strip():
        raise InvalidInputError("question must be non-empty")
    return DECOMPOSITION_PROMPT.render(question)


def iter_json_objects(text: str) -> list[dict[str, Any]]:
    """Every balanced {...} span of text that parses as a JSON object, in order."""
    objects = []
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        end = -1
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    end = i
                    break
        if end == -1:
            # unbalanced brace: a later one may still open a real object
            start = text.find("{", start + 1)
            continue
        try:
            candidate = json.loads(text[start : end + 1])
        except ValueError:
            candidate = None
        if isinstance(candidate, dict):
            objects.append(candidate)
            start = text.find("{", end + 1)
        else:
            start = text.find("{", start + 1)
    return objects


def _pick(obj: dict[str, Any], word: str) -> str | None:
    for key, value in obj.items():
        lowered = key.lower()
        if word in lowered and "question" in lowered and isinstance(value, str) and value.strip():
            return value.strip()
    return None


def parse_subquestions(raw_llm_output: str, original_question: str) -> SubQuestionPair:
    """Parse the decomposition reply; never raises, falls back instead."""
    for obj in iter_json_objects(raw_llm_output):
        image_sub = _pick(obj, "image")
        knowledge_sub = _pick(obj, "knowledge")
        if image_sub and knowledge_sub:
            return SubQuestionPair(image_sub, knowledge_sub, SubQuestionOrigin.PARSED)
    return SubQuestionPair.fallback(original_question)


async def decompose(question: QuestionInstance, cfg: PipelineConfig, hub: BackendHub) -> SubQuestionPair:
    """
    Decompose a question into (image_sub, knowledge_sub).

    With the original_question ablation no backend call is made.
    Transport errors propagate; unparseable replies fall back.
    """
    if cfg.ablation is Ablation.ORIGINAL_QUESTION:
        return SubQuestionPair.fallback(question.question_text)

    request = GenerationRequest(
        prompt=build_decomposition_prompt(question.question_text),
        max_tokens=cfg.max_tokens_decompose,
        temperature=0.0,
        model=cfg.model_for("decompose"),
    )
    response = await hub.generate(request)
    pair = parse_subquestions(response.text, question.question_text)
    if pair.origin is SubQuestionOrigin.FALLBACK:
        logger.warning(f"[{question.question_id}] decomposition reply not parseable, using original question")
    return pair
