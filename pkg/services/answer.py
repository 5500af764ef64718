"""
services/answer.py
==================
Answer prompt assembly, greedy answering with token log-probabilities, and
the q-prompt ensemble.

The expanded example pool is dealt round-robin into q groups (group g gets
pool positions g, g+q, g+2q, ...), one prompt per group. The candidate with
the highest summed log-probability wins; ties go to the lower group index.

Prompt layout:

    <instruction>

    Context: <caption>
    Question: <example question>
    Answer: <example answer>

    Context: <caption>
    Knowledge: <item>; <item>; ...
    Question: <test question>
    Answer:

The Context line is left out for an omitted caption, the Knowledge line for
empty knowledge.
"""

import asyncio
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from contracts.domain import Caption, IcExample, KnowledgeItem, QuestionInstance, ScoredAnswer
from contracts.errors import EnsembleError, InvalidInputError, MissingLogprobsError
from contracts.generation_contract import GenerationRequest

from .backends import BackendHub
from .config import PipelineConfig

logger = logging.getLogger(__name__)

ANSWER_INSTRUCTION = (
    "Please answer the question according to the context and knowledge. Answer with one or a few words."
)
KNOWLEDGE_SEPARATOR = "; "
ANSWER_STOP = ("\n",)


@dataclass(frozen=True)
class PromptBundle:
    """One answering prompt and everything it was built from."""

    prompt_text: str
    question_text: str
    caption_used: Caption
    knowledge_used: tuple[KnowledgeItem, ...] = field(default_factory=tuple)
    example_group: tuple[IcExample, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt_text": self.prompt_text,
            "question": self.question_text,
            "caption": self.caption_used.to_dict(),
            "knowledge": [item.to_dict() for item in self.knowledge_used],
            "examples": [
                {"question": ex.question_text, "caption": ex.caption_text, "answer": ex.answer_text}
                for ex in self.example_group
            ],
        }


def render_block(question: str, caption: str | None, knowledge: list[str], answer: str | None) -> str:
    lines = []
    if caption:
        lines.append(f"Context: {caption}")
    if knowledge:
        lines.append(f"Knowledge: {KNOWLEDGE_SEPARATOR.join(knowledge)}")
    lines.append(f"Question: {question}")
    if answer is None:
        lines.append("Answer:")
        return "\n".join(lines)
    lines.append(f"Answer: {answer}")
    return "\n".join(lines) + "\n"


def build_answer_prompt(
    question: str, caption: Caption, knowledge: list[KnowledgeItem], examples: list[IcExample]
) -> PromptBundle:
    """Render the answering prompt; a pure function of its inputs."""
    blocks = [render_block(ex.question_text, ex.caption_text, [], ex.answer_text) for ex in examples]
    test_caption = None if caption.omitted else caption.text
    blocks.append(render_block(question, test_caption, [item.text for item in knowledge], None))
    prompt = ANSWER_INSTRUCTION + "\n\n" + "\n".join(blocks)
    return PromptBundle(
        prompt_text=prompt,
        question_text=question,
        caption_used=caption,
        knowledge_used=tuple(knowledge),
        example_group=tuple(examples),
    )


async def generate_answer(bundle: PromptBundle, cfg: PipelineConfig, hub: BackendHub) -> ScoredAnswer:
    """
    Greedy answer with log-probabilities; an empty generation is the -inf sentinel.

    Raises:
        MissingLogprobsError: backend cannot return log-probabilities
    """
    request = GenerationRequest(
        prompt=bundle.prompt_text,
        max_tokens=cfg.max_tokens_answer,
        temperature=0.0,
        want_logprobs=True,
        stop_sequences=ANSWER_STOP,
        model=cfg.model_for("answer"),
    )
    response = await hub.generate(request)
    return ScoredAnswer.from_logprobs(response.text.strip(), response.token_logprobs)


def candidate_score(candidate: ScoredAnswer, length_normalize: bool = False) -> float:
    if candidate.is_empty:
        return -math.inf
    if length_normalize and candidate.token_logprobs:
        return candidate.logprob_sum / len(candidate.token_logprobs)
    return candidate.logprob_sum


def ensemble(candidates: list[ScoredAnswer], length_normalize: bool = False) -> ScoredAnswer:
    """Highest (optionally per-token) log-probability wins; ties keep the earliest."""
    if not candidates:
        raise EnsembleError("cannot ensemble an empty candidate list")
    best = 0
    best_score = candidate_score(candidates[0], length_normalize)
    for i in range(1, len(candidates)):
        score = candidate_score(candidates[i], length_normalize)
        if score > best_score:
            best, best_score = i, score
    return candidates[best]


def partition_round_robin(pool: list[IcExample], q: int) -> list[list[IcExample]]:
    """q groups; group g holds pool[g], pool[g+q], ... (possibly empty)."""
    if q < 1:
        raise InvalidInputError(f"q must be >= 1, got {q}")
    return [pool[g::q] for g in range(q)]


def dump_bundle(bundle: PromptBundle, trace_dir: Path, question_id: str, group: int) -> None:
    trace_dir.mkdir(parents=True, exist_ok=True)
    path = trace_dir / f"{question_id}_g{group}.json"
    path.write_text(json.dumps(bundle.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


async def answer_question(
    question: QuestionInstance,
    caption: Caption,
    selected_knowledge: list[KnowledgeItem],
    example_pool: list[IcExample],
    cfg: PipelineConfig,
    hub: BackendHub,
    trace_dir: Path | None = None,
) -> ScoredAnswer:
    """
    Prompt q times (one example group each) and ensemble the answers.

    Failed calls are logged and left out; missing log-probabilities are fatal,
    as is every call failing.
    """
    groups = partition_round_robin(example_pool, cfg.q_ensemble)
    bundles = [build_answer_prompt(question.question_text, caption, selected_knowledge, group) for group in groups]
    if trace_dir is not None:
        for g, bundle in enumerate(bundles):
            dump_bundle(bundle, trace_dir, question.question_id, g)

    results = await asyncio.gather(*(generate_answer(b, cfg, hub) for b in bundles), return_exceptions=True)

    survivors: list[ScoredAnswer] = []
    failures: list[BaseException] = []
    for g, result in enumerate(results):
        if isinstance(result, MissingLogprobsError):
            raise result
        if isinstance(result, BaseException):
            if not isinstance(result, Exception):
                raise result
            logger.warning(f"[{question.question_id}] answer group {g} failed: {result}")
            failures.append(result)
        else:
            survivors.append(result)

    if not survivors:
        raise failures[0]
    return ensemble(survivors, cfg.length_normalize)
