"""
services/acquire.py
===================
Knowledge acquisition: the question-aware caption, the elicited knowledge
statements and the local-caption pool.

Usage:
    caption = await acquire_caption(subs, q.image_ref, cfg, hub)
    elicited = await elicit_knowledge(subs, caption, cfg, hub)
    pool = await gather_pool(q.image_ref, elicited, cfg, hub)

Dependencies:
    - services/backends.py (BackendHub)
"""

import logging
import re

from contracts.domain import Caption, KnowledgeItem, KnowledgeSource, SubQuestionPair
from contracts.errors import InvalidInputError
from contracts.generation_contract import GenerationRequest

from .backends import BackendHub
from .config import PipelineConfig

logger = logging.getLogger(__name__)

MIN_ITEM_CHARS = 3

# "1. text", "1) text", "- text"
LIST_ITEM = re.compile(r"^\s*(?:\d+[.)]\s*|-\s+)(?P<text>.*)$")


async def acquire_caption(subs: SubQuestionPair, image_ref: str, cfg: PipelineConfig, hub: BackendHub) -> Caption:
    """Caption conditioned on the image sub-question, or the omitted sentinel under caption ablations."""
    if cfg.ablation.drops_caption:
        return Caption.omitted_sentinel()
    return await hub.caption(image_ref, subs.image_sub)


def build_elicitation_prompt(knowledge_sub: str, caption: Caption, r: int) -> str:
    """Ask for r numbered statements; the image context line is left out for an omitted caption."""
    if r < 1:
        raise InvalidInputError(f"r_retrieved must be >= 1, got {r}")
    lines = [f"Provide {r} short factual statements that help answer: {knowledge_sub}"]
    if not caption.omitted:
        lines.append(f"Image context: {caption.text}")
    lines.append("Number each statement.")
    return "\n".join(lines)


def parse_numbered_list(text: str, limit: int) -> list[str]:
    """Marked list items of at least MIN_ITEM_CHARS characters, first `limit` of them."""
    items = []
    for line in text.splitlines():
        match = LIST_ITEM.match(line)
        if match is None:
            continue
        item = match.group("text").strip()
        if len(item) >= MIN_ITEM_CHARS:
            items.append(item)
        if len(items) == limit:
            break
    return items


async def elicit_knowledge(
    subs: SubQuestionPair, caption: Caption, cfg: PipelineConfig, hub: BackendHub
) -> list[KnowledgeItem]:
    """
    Elicit up to r knowledge statements for the knowledge sub-question.

    Knowledge ablations return [] without a backend call. An unparseable
    reply yields [] and a warning.
    """
    if cfg.ablation.drops_knowledge:
        return []

    request = GenerationRequest(
        prompt=build_elicitation_prompt(subs.knowledge_sub, caption, cfg.r_retrieved),
        max_tokens=cfg.max_tokens_knowledge * cfg.r_retrieved,
        temperature=0.0,
        model=cfg.model_for("elicit"),
    )
    response = await hub.generate(request)
    statements = parse_numbered_list(response.text, cfg.r_retrieved)
    if not statements:
        logger.warning(f"Elicitation reply for {subs.knowledge_sub!r} has no numbered statements")
    return [KnowledgeItem(text=text, source=KnowledgeSource.ELICITED) for text in statements]


def dedup_knowledge(items: list[KnowledgeItem]) -> list[KnowledgeItem]:
    """Drop items whose trimmed, lowercased text was already seen."""
    seen: set[str] = set()
    kept = []
    for item in items:
        key = item.text.strip().lower()
        if key in seen:
            continue
        seen.add(key)
        kept.append(item)
    return kept


async def gather_pool(
    image_ref: str, elicited: list[KnowledgeItem], cfg: PipelineConfig, hub: BackendHub
) -> list[KnowledgeItem]:
    """Elicited items followed by local captions, deduplicated, elicited first."""
    local: list[KnowledgeItem] = []
    if not cfg.ablation.drops_caption:
        local = await hub.local_captions(image_ref, cfg.local_caption_count)
    return dedup_knowledge([*elicited, *local])
