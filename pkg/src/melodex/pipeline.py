"""Plan execution: the retrieve-then-rerank pipeline with retries.

The first call of a plan builds the candidate pool from the whole
catalog. Every later call also runs catalog-wide with its own topk,
but only reorders the pool: pool members found in the call's output
move to the front in the call's order, the rest keep their previous
relative order. Membership never changes after retrieval.

A failed call is retried up to max_retries times with replacement
calls (from the replanner when one is wired, otherwise the same call
again). When a slot exhausts its retries the whole plan is replaced
by a keyword-search fallback, and if even that yields nothing the
popularity head of the catalog is returned, so execution always
produces a non-empty ranked list.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from .bm25 import Bm25Index
from .catalog import Catalog
from .errors import MelodexError
from .semantic import SemanticIndex
from .sql import SqlError, execute_sql, parse_sql
from .tools import (
    DEFAULT_REGISTRY,
    RETRIEVAL_STAGE,
    ToolCall,
    ToolPlan,
    ToolRegistry,
    ToolValidationError,
)
from .vectors import (
    ProviderRegistry,
    VectorError,
    VectorStores,
    item_to_item,
    text_to_item,
    user_to_item,
)

DEFAULT_MAX_RETRIES = 3
FALLBACK_CORPUS = "attributes"


class InjectedFailureError(MelodexError):
    pass


class FailureInjector:
    """Makes chosen tools fail with a fixed probability, for harness use."""

    def __init__(self, probabilities: dict[str, float], seed: int = 0):
        for name, p in probabilities.items():
            if not 0.0 <= p <= 1.0:
                raise MelodexError(f"injection probability for {name!r} must be in [0,1]")
        self.probabilities = dict(probabilities)
        self._rng = random.Random(seed)

    def check(self, tool_name: str) -> None:
        p = self.probabilities.get(tool_name, 0.0)
        if p and self._rng.random() < p:
            raise InjectedFailureError(f"injected failure for {tool_name}")


@dataclass
class Attempt:
    tool_name: str
    stage: str
    args: dict[str, Any]
    outcome: str  # "ok" or an error kind
    first_attempt: bool
    retry_index: int
    pool_before: int
    pool_after: int
    wall_time: float


@dataclass
class ExecutionTrace:
    attempts: list[Attempt] = field(default_factory=list)
    fallback_used: bool = False
    safety_net_used: bool = False

    @property
    def retry_count(self) -> int:
        return sum(1 for attempt in self.attempts if not attempt.first_attempt)

    def summary(self) -> dict:
        return {
            "attempts": [
                {
                    "tool_name": attempt.tool_name,
                    "stage": attempt.stage,
                    "outcome": attempt.outcome,
                    "first_attempt": attempt.first_attempt,
                    "retry_index": attempt.retry_index,
                    "pool_before": attempt.pool_before,
                    "pool_after": attempt.pool_after,
                }
                for attempt in self.attempts
            ],
            "retry_count": self.retry_count,
            "fallback_used": self.fallback_used,
            "safety_net_used": self.safety_net_used,
        }


def _error_kind(exc: Exception) -> str:
    if isinstance(exc, InjectedFailureError):
        return "injected_failure"
    if isinstance(exc, ToolValidationError):
        return "validation_error"
    if isinstance(exc, SqlError):
        return "sql_error"
    if isinstance(exc, VectorError):
        return "vector_error"
    if isinstance(exc, MelodexError):
        return type(exc).__name__
    return "unexpected_error"


class EmptyResultError(MelodexError):
    pass


class ToolEnv:
    """All retrieval backends behind one call interface."""

    def __init__(
        self,
        catalog: Catalog,
        bm25_indexes: dict[str, Bm25Index],
        stores: VectorStores,
        providers: ProviderRegistry,
        semantic_index: SemanticIndex,
        registry: ToolRegistry = DEFAULT_REGISTRY,
        injector: FailureInjector | None = None,
    ):
        self.catalog = catalog
        self.bm25_indexes = bm25_indexes
        self.stores = stores
        self.providers = providers
        self.semantic_index = semantic_index
        self.registry = registry
        self.injector = injector

    def run_call(self, call: ToolCall) -> list[str]:
        """Execute one validated call against the full catalog."""
        if self.injector is not None:
            self.injector.check(call.tool_name)
        args = call.tool_args
        if call.tool_name == "sql":
            return execute_sql(self.catalog, parse_sql(args["sql_query"]), args["topk"])
        if call.tool_name == "bm25":
            index = self.bm25_indexes[args["corpus_type"]]
            return [doc_id for doc_id, _ in index.search(args["query"], args["topk"])]
        if call.tool_name == "text_to_item_similarity":
            return text_to_item(
                self.providers,
                self.stores,
                args["query"],
                args["modality_type"],
                args["vector_db_type"],
                args["topk"],
            )
        if call.tool_name == "item_to_item_similarity":
            return item_to_item(
                self.stores,
                args["track_id"],
                args["modality_type"],
                args["vector_db_type"],
                args["topk"],
            )
        if call.tool_name == "user_to_item_similarity":
            return user_to_item(self.stores, args["user_id"], args["topk"])
        if call.tool_name == "semantic_id_matching":
            return self.semantic_index.lookup(
                args["modality_type"], list(args["indices"]), args["topk"]
            )
        raise ToolValidationError(f"unknown tool {call.tool_name!r}")

    def popularity_head(self, final_k: int) -> list[str]:
        """Most popular tracks; the last-resort non-empty answer."""
        tracks = sorted(self.catalog, key=lambda t: (-t.popularity, t.track_id))
        return [track.track_id for track in tracks[:final_k]]


def stable_reorder(pool: Sequence[str], reranked: Iterable[str]) -> list[str]:
    """Reorder pool by the reranker's output without changing membership."""
    members = set(pool)
    promoted: list[str] = []
    placed: set[str] = set()
    for track_id in reranked:
        if track_id in members and track_id not in placed:
            promoted.append(track_id)
            placed.add(track_id)
    return promoted + [track_id for track_id in pool if track_id not in placed]


Replanner = Callable[[ToolCall, str, int], ToolCall]


def _attempt_call(
    env: ToolEnv,
    call: ToolCall,
    stage: str,
    first_attempt: bool,
    retry_index: int,
    pool_before: int,
    forbidden_tools: frozenset[str],
    trace: ExecutionTrace,
) -> tuple[list[str] | None, str | None]:
    """Run one attempt, record it, return (output, error text)."""
    started = time.perf_counter()
    try:
        if call.tool_name in forbidden_tools:
            raise ToolValidationError(
                f"tool {call.tool_name!r} is not allowed for this session"
            )
        env.registry.validate_call(call)
        output = env.run_call(call)
        if stage == RETRIEVAL_STAGE and not output:
            raise EmptyResultError(f"{call.tool_name} retrieved no candidates")
    except MelodexError as exc:
        trace.attempts.append(
            Attempt(
                tool_name=call.tool_name,
                stage=stage,
                args=dict(call.tool_args),
                outcome=_error_kind(exc),
                first_attempt=first_attempt,
                retry_index=retry_index,
                pool_before=pool_before,
                pool_after=pool_before,
                wall_time=time.perf_counter() - started,
            )
        )
        return None, str(exc)
    pool_after = len(output) if stage == RETRIEVAL_STAGE else pool_before
    trace.attempts.append(
        Attempt(
            tool_name=call.tool_name,
            stage=stage,
            args=dict(call.tool_args),
            outcome="ok",
            first_attempt=first_attempt,
            retry_index=retry_index,
            pool_before=pool_before,
            pool_after=pool_after,
            wall_time=time.perf_counter() - started,
        )
    )
    return output, None


def fallback_plan(raw_query: str, final_k: int) -> ToolPlan:
    """Keyword search over attributes; used when a slot exhausts retries."""
    return ToolPlan(
        (
            ToolCall(
                "bm25",
                {"query": raw_query, "corpus_type": FALLBACK_CORPUS, "topk": final_k},
            ),
        )
    )


def execute_plan(
    plan: ToolPlan,
    env: ToolEnv,
    final_k: int,
    raw_query: str = "",
    replanner: Replanner | None = None,
    max_retries: int = DEFAULT_MAX_RETRIES,
    forbidden_tools: frozenset[str] = frozenset(),
) -> tuple[list[str], ExecutionTrace]:
    """Run a plan to a non-empty ranked list of at most final_k tracks."""
    if final_k < 1:
        raise MelodexError("final_k must be >= 1")
    trace = ExecutionTrace()
    pool: list[str] = []
    for position, original_call in enumerate(plan.calls):
        stage = plan.stage(position)
        call = original_call
        output: list[str] | None = None
        for retry_index in range(max_retries + 1):
            output, error = _attempt_call(
                env,
                call,
                stage,
                first_attempt=retry_index == 0,
                retry_index=retry_index,
                pool_before=len(pool),
                forbidden_tools=forbidden_tools,
                trace=trace,
            )
            if output is not None:
                break
            if retry_index < max_retries and replanner is not None:
                call = replanner(call, error or "", retry_index + 1)
        if output is None:
            return _run_fallback(env, raw_query, final_k, trace)
        pool = output if position == 0 else stable_reorder(pool, output)
    return pool[:final_k], trace


def _run_fallback(
    env: ToolEnv, raw_query: str, final_k: int, trace: ExecutionTrace
) -> tuple[list[str], ExecutionTrace]:
    trace.fallback_used = True
    call = fallback_plan(raw_query, final_k).calls[0]
    output, _ = _attempt_call(
        env,
        call,
        RETRIEVAL_STAGE,
        first_attempt=False,
        retry_index=0,
        pool_before=0,
        forbidden_tools=frozenset(),
        trace=trace,
    )
    if not output:
        trace.safety_net_used = True
        output = env.popularity_head(final_k)
    return output[:final_k], trace


def tool_stats(
    traces: Iterable[ExecutionTrace],
    tool_names: Sequence[str] = DEFAULT_REGISTRY.tool_names,
) -> dict[str, dict[str, float]]:
    """First-attempt call counts and success rates per tool.

    Tools never called first-attempt report zero frequency and zero
    rate, so the output shape is stable across runs.
    """
    counts = {name: 0 for name in tool_names}
    successes = {name: 0 for name in tool_names}
    for trace in traces:
        for attempt in trace.attempts:
            if not attempt.first_attempt:
                continue
            if attempt.tool_name not in counts:
                counts[attempt.tool_name] = 0
                successes[attempt.tool_name] = 0
            counts[attempt.tool_name] += 1
            if attempt.outcome == "ok":
                successes[attempt.tool_name] += 1
    return {
        name: {
            "first_attempt_calls": counts[name],
            "first_attempt_successes": successes[name],
            "first_attempt_success_rate": (
                successes[name] / counts[name] if counts[name] else 0.0
            ),
        }
        for name in sorted(counts)
    }
