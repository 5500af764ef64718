"""
services/pipeline.py
====================
Per-question workflow and the bounded batch runner.

Each question runs through a pydantic_graph Graph:

    DecomposeNode -> CaptionNode -> KnowledgeNode -> ExamplesNode -> AnswerNode -> End

The batch runner drives up to cfg.workers questions at once. A failing
question becomes an EvalRecord with an error (accuracy 0 when annotated);
missing log-probabilities abort the run, since no answer can be ensembled.

Usage:
    hub = await build_hub(cfg)
    records = await run_batch(instances, cfg, hub, index, run_dir=Path("runs/a"))
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, field
from pathlib import Path

from pydantic_graph import BaseNode, End, Graph, GraphRunContext

from contracts.domain import Caption, IcExample, KnowledgeItem, QuestionInstance, ScoredAnswer, SubQuestionPair
from contracts.errors import DKAError, MissingLogprobsError

from .acquire import acquire_caption, elicit_knowledge, gather_pool
from .answer import answer_question
from .backends import BackendHub
from .config import PipelineConfig, dump_config
from .decompose import decompose
from .evaluation import EvalRecord, RunReport, aggregate, score_prediction, write_run_outputs
from .rank import ExampleIndex, expand_example_pool, rerank_top_n, text_embedder

logger = logging.getLogger(__name__)

# Left out of run reports
REDACTED = {"llm_api_key", "caption_api_key", "embed_api_key"}
EXECUTION_FIELDS = {"cache_dir", "workers", "max_inflight", "trace"}


# --- State Definition ---
@dataclass
class QuestionRunState:
    question: QuestionInstance
    subs: SubQuestionPair | None = None
    caption: Caption | None = None
    elicited: list[KnowledgeItem] = field(default_factory=list)
    pool_size: int = 0
    knowledge: list[KnowledgeItem] = field(default_factory=list)
    examples: list[IcExample] = field(default_factory=list)
    answer: ScoredAnswer | None = None


@dataclass
class PipelineDeps:
    cfg: PipelineConfig
    hub: BackendHub
    index: ExampleIndex
    trace_dir: Path | None = None


# --- Node Definitions ---


@dataclass
class DecomposeNode(BaseNode[QuestionRunState, PipelineDeps, None]):
    """Split the question into image and knowledge sub-questions."""

    async def run(self, ctx: GraphRunContext[QuestionRunState, PipelineDeps]) -> CaptionNode:
        ctx.state.subs = await decompose(ctx.state.question, ctx.deps.cfg, ctx.deps.hub)
        return CaptionNode()


@dataclass
class CaptionNode(BaseNode[QuestionRunState, PipelineDeps, None]):
    """Question-aware caption of the image."""

    async def run(self, ctx: GraphRunContext[QuestionRunState, PipelineDeps]) -> KnowledgeNode:
        assert ctx.state.subs is not None
        ctx.state.caption = await acquire_caption(
            ctx.state.subs, ctx.state.question.image_ref, ctx.deps.cfg, ctx.deps.hub
        )
        return KnowledgeNode()


@dataclass
class KnowledgeNode(BaseNode[QuestionRunState, PipelineDeps, None]):
    """Elicit, pool and re-rank knowledge; skipped entirely under knowledge ablations."""

    async def run(self, ctx: GraphRunContext[QuestionRunState, PipelineDeps]) -> ExamplesNode:
        cfg, hub = ctx.deps.cfg, ctx.deps.hub
        if cfg.ablation.drops_knowledge:
            return ExamplesNode()

        assert ctx.state.subs is not None and ctx.state.caption is not None
        image_ref = ctx.state.question.image_ref
        ctx.state.elicited = await elicit_knowledge(ctx.state.subs, ctx.state.caption, cfg, hub)
        pool = await gather_pool(image_ref, ctx.state.elicited, cfg, hub)
        ctx.state.pool_size = len(pool)
        image_vec = await hub.embed_image(image_ref)
        ctx.state.knowledge = await rerank_top_n(pool, image_vec.vector, cfg.n_selected_knowledge, text_embedder(hub))
        return ExamplesNode()


@dataclass
class ExamplesNode(BaseNode[QuestionRunState, PipelineDeps, None]):
    """Pick the m*q in-context examples."""

    async def run(self, ctx: GraphRunContext[QuestionRunState, PipelineDeps]) -> AnswerNode:
        cfg = ctx.deps.cfg
        ctx.state.examples = await expand_example_pool(
            ctx.state.question, ctx.deps.index, cfg.m_examples, cfg.q_ensemble, cfg, ctx.deps.hub
        )
        return AnswerNode()


@dataclass
class AnswerNode(BaseNode[QuestionRunState, PipelineDeps, None]):
    """Prompt q times and ensemble."""

    async def run(self, ctx: GraphRunContext[QuestionRunState, PipelineDeps]) -> End[None]:
        assert ctx.state.caption is not None
        ctx.state.answer = await answer_question(
            ctx.state.question,
            ctx.state.caption,
            ctx.state.knowledge,
            ctx.state.examples,
            ctx.deps.cfg,
            ctx.deps.hub,
            trace_dir=ctx.deps.trace_dir,
        )
        return End(None)


# --- Graph Definition ---
question_graph = Graph(
    nodes=[DecomposeNode, CaptionNode, KnowledgeNode, ExamplesNode, AnswerNode], state_type=QuestionRunState
)


async def run_question(question: QuestionInstance, deps: PipelineDeps) -> QuestionRunState:
    """Run one question through every stage and return the final state."""
    state = QuestionRunState(question=question)
    await question_graph.run(DecomposeNode(), state=state, deps=deps)
    return state


def record_from_state(state: QuestionRunState, cfg: PipelineConfig) -> EvalRecord:
    assert state.answer is not None
    record = score_prediction(
        state.question.question_id, state.answer.text, state.question.annotations, strict=cfg.strict_vqa_accuracy
    )
    record.sub_questions = state.subs.to_dict() if state.subs else None
    record.caption = state.caption.text if state.caption and not state.caption.omitted else None
    record.knowledge = [item.text for item in state.knowledge]
    record.example_count = len(state.examples)
    record.logprob_sum = None if state.answer.is_empty else state.answer.logprob_sum
    return record


def failed_record(question: QuestionInstance, error: Exception) -> EvalRecord:
    record = score_prediction(question.question_id, "", question.annotations)
    if record.accuracy is not None:
        record.accuracy = 0.0
    if isinstance(error, DKAError):
        record.error = error.to_dict()
    else:
        record.error = {"code": None, "type": type(error).__name__, "message": str(error)}
    return record


async def run_batch(
    instances: list[QuestionInstance],
    cfg: PipelineConfig,
    hub: BackendHub,
    index: ExampleIndex,
    run_dir: Path | None = None,
) -> list[EvalRecord]:
    """
    Run every question with at most cfg.workers in flight.

    Records come back in input order regardless of completion order.

    Raises:
        MissingLogprobsError: the answering backend returns no log-probabilities
    """
    trace_dir = run_dir / "traces" if (run_dir is not None and cfg.trace) else None
    deps = PipelineDeps(cfg=cfg, hub=hub, index=index, trace_dir=trace_dir)
    limiter = asyncio.Semaphore(cfg.workers)
    total = len(instances)
    done = 0

    async def run_one(question: QuestionInstance) -> EvalRecord:
        nonlocal done
        async with limiter:
            try:
                record = record_from_state(await run_question(question, deps), cfg)
            except MissingLogprobsError:
                raise
            except Exception as e:
                logger.error(f"[{question.question_id}] failed: {e}")
                record = failed_record(question, e)
        done += 1
        outcome = f"acc={record.accuracy:.3f}" if record.accuracy is not None else "unscored"
        if record.error:
            outcome += f" error={record.error['type']}"
        logger.info(f"[{done}/{total}] {question.question_id}: {record.predicted!r} {outcome}")
        return record

    return list(await asyncio.gather(*(run_one(question) for question in instances)))


async def execute_run(
    instances: list[QuestionInstance],
    cfg: PipelineConfig,
    hub: BackendHub,
    index: ExampleIndex,
    run_dir: Path,
) -> RunReport:
    """Run the batch, then write config.json, report.json, audit.jsonl and predictions.json."""
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run_dir / "config.json", redact=True)
    records = await run_batch(instances, cfg, hub, index, run_dir=run_dir)
    snapshot = cfg.model_dump(mode="json", exclude=REDACTED | EXECUTION_FIELDS)
    report = aggregate(records, ablation=cfg.ablation.value, config=snapshot)
    write_run_outputs(run_dir, report, records)
    stats = hub.stats()
    logger.info(
        f"Run finished: accuracy={report.accuracy} over {report.scored_count} scored questions, "
        f"{report.failed_count} failed; backend calls {stats['calls']}, cache hit rate {stats['cache_hit_rate']}"
    )
    return report

