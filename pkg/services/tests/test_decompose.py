"""
Test Script: Question Decomposition
===================================
Prompt goldens, lenient reply parsing and the decomposition stage.

Usage:
    pytest services/tests/test_decompose.py
"""

import asyncio

import pytest

from contracts.domain import QuestionInstance, SubQuestionOrigin
from contracts.errors import InvalidInputError
from contracts.generation_contract import GenerationResponse
from services.config import build_config
from services.decompose import (
    DECOMPOSITION_TEMPLATE,
    PromptTemplate,
    build_decomposition_prompt,
    decompose,
    iter_json_objects,
    parse_subquestions,
)

from .backend_stubs import ScriptedLLM
from .conftest import FIXTURES

GOLDEN_QUESTIONS = [
    "What's the color of the flower?",
    "What sport can you use this for?",
    "Which country is this food from?",
    "How many legs does this animal have?",
    "What is the man holding used for?",
]

FLOWER = "What's the color of the flower?"
FLOWER_REPLY = (
    '{"Image-based sub-question": "What\'s the color of the flower?", '
    '"Knowledge-based sub-question": "Which animal has a similar color?"}'
)

MALFORMED_REPLIES = [
    "",
    "I cannot answer that.",
    '{"Image-based sub-question": "What is shown?"}',
    '{"Knowledge-based sub-question": "Which animal?"}',
    '{"Image-based sub-question": "What is shown?", "Knowledge-based sub-question": "Which animal?"',
    "Image-based sub-question: What is shown?\nKnowledge-based sub-question: Which animal?",
    '["What is shown?", "Which animal?"]',
    '{"image": "What is shown?", "knowledge": "Which animal?"}',
    '{"Image-based sub-question": "", "Knowledge-based sub-question": "   "}',
    "{'Image-based sub-question': 'What is shown?', 'Knowledge-based sub-question': 'Which animal?'}",
]


@pytest.mark.parametrize("number, question", list(enumerate(GOLDEN_QUESTIONS, start=1)))
def test_prompt_matches_golden(number, question):
    golden = (FIXTURES / "decompose" / f"question_{number}.txt").read_text(encoding="utf-8")
    assert build_decomposition_prompt(question) == golden


def test_prompt_is_deterministic():
    assert build_decomposition_prompt(FLOWER) == build_decomposition_prompt(FLOWER)


def test_prompt_keeps_dollar_signs_in_questions():
    prompt = build_decomposition_prompt("Is $5 a fair price for ${item}?")
    assert "Is $5 a fair price for ${item}? from an image" in prompt


def test_prompt_rejects_empty_question():
    with pytest.raises(InvalidInputError):
        build_decomposition_prompt("   ")


def test_template_needs_exactly_one_placeholder():
    PromptTemplate(DECOMPOSITION_TEMPLATE)
    with pytest.raises(InvalidInputError):
        PromptTemplate("no placeholder here")
    with pytest.raises(InvalidInputError):
        PromptTemplate("${question} and ${question}")


def test_parse_running_example():
    pair = parse_subquestions(FLOWER_REPLY, FLOWER)
    assert pair.image_sub == "What's the color of the flower?"
    assert pair.knowledge_sub == "Which animal has a similar color?"
    assert pair.origin is SubQuestionOrigin.PARSED


def test_parse_json_wrapped_in_prose():
    reply = f"Sure! Here are the two sub-questions:\n```json\n{FLOWER_REPLY}\n```\nHope this helps {{:}}"
    pair = parse_subquestions(reply, FLOWER)
    assert pair.origin is SubQuestionOrigin.PARSED
    assert pair.knowledge_sub == "Which animal has a similar color?"


@pytest.mark.parametrize("preamble", ["Sure {here you go:\n", 'Output {"note: \n'])
def test_parse_skips_unbalanced_brace_before_the_object(preamble):
    pair = parse_subquestions(preamble + FLOWER_REPLY, FLOWER)
    assert pair.origin is SubQuestionOrigin.PARSED
    assert pair.image_sub == "What's the color of the flower?"
    assert pair.knowledge_sub == "Which animal has a similar color?"


def test_parse_key_variants():
    reply = '{"image_based_question": " What is shown? ", "KNOWLEDGE-BASED QUESTION": "Which animal?"}'
    pair = parse_subquestions(reply, FLOWER)
    assert (pair.image_sub, pair.knowledge_sub) == ("What is shown?", "Which animal?")


def test_parse_skips_objects_without_both_keys():
    reply = '{"note": "first try"} {"Image-based sub-question": "A?", "Knowledge-based sub-question": "B?"}'
    pair = parse_subquestions(reply, FLOWER)
    assert (pair.image_sub, pair.knowledge_sub) == ("A?", "B?")


def test_braces_inside_strings_do_not_confuse_the_scanner():
    reply = '{"Image-based sub-question": "What is {this}?", "Knowledge-based sub-question": "Why \\"}\\"?"}'
    objects = iter_json_objects(reply)
    assert objects == [{"Image-based sub-question": "What is {this}?", "Knowledge-based sub-question": 'Why "}"?'}]


@pytest.mark.parametrize("reply", MALFORMED_REPLIES)
def test_malformed_replies_fall_back(reply):
    pair = parse_subquestions(reply, FLOWER)
    assert pair.origin is SubQuestionOrigin.FALLBACK
    assert pair.image_sub == pair.knowledge_sub == FLOWER


def test_decompose_calls_the_llm_once(make_hub):
    llm = ScriptedLLM(lambda request: GenerationResponse(FLOWER_REPLY))
    hub = make_hub(llm=llm)
    cfg = build_config({"mock_fixtures": "unused.json", "llm_model": "llama-2-13b", "decompose_model": "gpt-3.5"})
    question = QuestionInstance("q1", FLOWER, "img_001")

    pair = asyncio.run(decompose(question, cfg, hub))

    assert pair.origin is SubQuestionOrigin.PARSED
    assert len(llm.requests) == 1
    request = llm.requests[0]
    assert request.prompt == build_decomposition_prompt(FLOWER)
    assert request.temperature == 0.0
    assert request.max_tokens == cfg.max_tokens_decompose
    assert request.model == "gpt-3.5"
    assert not request.want_logprobs


def test_decompose_falls_back_on_unparseable_reply(make_hub):
    hub = make_hub(llm=ScriptedLLM("no json here"))
    cfg = build_config({"mock_fixtures": "unused.json"})
    pair = asyncio.run(decompose(QuestionInstance("q1", FLOWER, "img_001"), cfg, hub))
    assert pair.origin is SubQuestionOrigin.FALLBACK


def test_original_question_ablation_makes_no_call(make_hub):
    llm = ScriptedLLM(lambda request: GenerationResponse(FLOWER_REPLY))
    hub = make_hub(llm=llm)
    cfg = build_config({"mock_fixtures": "unused.json", "ablation": "original_question"})

    pair = asyncio.run(decompose(QuestionInstance("q1", FLOWER, "img_001"), cfg, hub))

    assert pair.origin is SubQuestionOrigin.FALLBACK
    assert pair.image_sub == pair.knowledge_sub == FLOWER
    assert llm.requests == []
