"""Tool registry: names, argument schemas, validation, and the schema
document injected into planner prompts.

The registry is the single source of truth for what a plan may call.
Schema validation is strict: unknown tools, unknown argument names,
wrong types, enum violations and non-positive topk are all rejected
before anything executes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

from .catalog import CORPUS_TYPES
from .errors import MelodexError
from .semantic import CODES_PER_LAYER, NUM_LAYERS, SID_MODALITIES
from .vectors import (
    ITEM_QUERY_MODALITIES,
    ITEM_VECTOR_DBS,
    TEXT_QUERY_MODALITIES,
    TEXT_VECTOR_DBS,
)

MAX_PLAN_CALLS = 4

RETRIEVAL_STAGE = "retrieval"
RERANKING_STAGE = "reranking"


class ToolValidationError(MelodexError):
    pass


class PlanError(MelodexError):
    pass


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # string | integer | enum | code_list
    description: str
    choices: tuple[str, ...] | None = None
    minimum: int | None = None

    def validate(self, value: Any) -> None:
        if self.kind == "string":
            if not isinstance(value, str):
                raise ToolValidationError(
                    f"argument {self.name!r} must be a string, got {type(value).__name__}"
                )
        elif self.kind == "integer":
            if not isinstance(value, int) or isinstance(value, bool):
                raise ToolValidationError(
                    f"argument {self.name!r} must be an integer, got {type(value).__name__}"
                )
            if self.minimum is not None and value < self.minimum:
                raise ToolValidationError(
                    f"argument {self.name!r} must be >= {self.minimum}, got {value}"
                )
        elif self.kind == "enum":
            if value not in (self.choices or ()):
                raise ToolValidationError(
                    f"argument {self.name!r} must be one of {list(self.choices or ())}, "
                    f"got {value!r}"
                )
        elif self.kind == "code_list":
            ok = (
                isinstance(value, (list, tuple))
                and len(value) == NUM_LAYERS
                and all(
                    isinstance(code, int)
                    and not isinstance(code, bool)
                    and 0 <= code < CODES_PER_LAYER
                    for code in value
                )
            )
            if not ok:
                raise ToolValidationError(
                    f"argument {self.name!r} must be a list of {NUM_LAYERS} integers "
                    f"in [0, {CODES_PER_LAYER})"
                )
        else:
            raise ToolValidationError(f"unknown parameter kind {self.kind!r}")

    def schema(self) -> dict:
        entry: dict[str, Any] = {
            "name": self.name,
            "type": self.kind,
            "description": self.description,
        }
        if self.choices is not None:
            entry["enum"] = list(self.choices)
        if self.minimum is not None:
            entry["minimum"] = self.minimum
        return entry


@dataclass(frozen=True)
class Tool:
    name: str
    description: str
    params: tuple[Param, ...]

    def schema(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": [param.schema() for param in self.params],
        }


_TOPK = Param("topk", "integer", "Maximum number of track ids to return.", minimum=1)


def _build_tools() -> tuple[Tool, ...]:
    return (
        Tool(
            "sql",
            "Filter the track catalog with a read-only SQL query over the "
            "columns track_id, title, artist, album, popularity, "
            "release_date, tempo and key. Supports SELECT * or SELECT "
            "track_id, WHERE with =, !=, <, <=, >, >=, LIKE, IN, AND, OR, "
            "NOT, plus ORDER BY and LIMIT. Use it for numeric, date or "
            "exact-metadata constraints.",
            (
                Param("sql_query", "string", "The SQL query text."),
                _TOPK,
            ),
        ),
        Tool(
            "bm25",
            "Keyword search with lexical BM25 scoring over one text corpus "
            "of the catalog. Use it to match names or words the user said "
            "literally, such as a title, artist or album.",
            (
                Param("query", "string", "Keyword query text."),
                Param(
                    "corpus_type",
                    "enum",
                    "Which text corpus to search.",
                    choices=tuple(CORPUS_TYPES),
                ),
                _TOPK,
            ),
        ),
        Tool(
            "text_to_item_similarity",
            "Embed a natural-language description and rank tracks by cosine "
            "similarity in the chosen vector table. Use it for vibe, mood "
            "or style descriptions rather than exact words.",
            (
                Param("query", "string", "Free-text description to embed."),
                Param(
                    "modality_type",
                    "enum",
                    "Encoder used for the query.",
                    choices=tuple(TEXT_QUERY_MODALITIES),
                ),
                Param(
                    "vector_db_type",
                    "enum",
                    "Vector table to search.",
                    choices=tuple(TEXT_VECTOR_DBS),
                ),
                _TOPK,
            ),
        ),
        Tool(
            "item_to_item_similarity",
            "Rank tracks by similarity to a seed track's stored vector. Use "
            "it when the user asks for more like a known track. track_id is "
            "a 22-character string.",
            (
                Param("track_id", "string", "Seed track id."),
                Param(
                    "modality_type",
                    "enum",
                    "Space of the seed vector.",
                    choices=tuple(ITEM_QUERY_MODALITIES),
                ),
                Param(
                    "vector_db_type",
                    "enum",
                    "Vector table to search; must match modality_type.",
                    choices=tuple(ITEM_VECTOR_DBS),
                ),
                _TOPK,
            ),
        ),
        Tool(
            "user_to_item_similarity",
            "Rank tracks by a trained user vector's preference score for "
            "personalized results. Requires a known user_id; if user_type "
            "is cold_start, do not select this tool.",
            (
                Param("user_id", "string", "Known user id."),
                _TOPK,
            ),
        ),
        Tool(
            "semantic_id_matching",
            "Look up tracks by discrete semantic id codes: exact 4-code "
            "matches first, then near matches differing in one position.",
            (
                Param(
                    "modality_type",
                    "enum",
                    "Which modality's semantic ids to match.",
                    choices=tuple(SID_MODALITIES),
                ),
                Param(
                    "indices",
                    "code_list",
                    f"Exactly {NUM_LAYERS} codebook indices, each in "
                    f"[0, {CODES_PER_LAYER}).",
                ),
                _TOPK,
            ),
        ),
    )


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    tool_args: dict[str, Any]

    def render(self) -> dict:
        return {"tool_name": self.tool_name, "tool_args": dict(self.tool_args)}


@dataclass(frozen=True)
class ToolPlan:
    calls: tuple[ToolCall, ...]

    def __post_init__(self):
        if not 1 <= len(self.calls) <= MAX_PLAN_CALLS:
            raise PlanError(
                f"a plan needs 1 to {MAX_PLAN_CALLS} calls, got {len(self.calls)}"
            )

    def stage(self, position: int) -> str:
        return RETRIEVAL_STAGE if position == 0 else RERANKING_STAGE

    def render(self) -> list[dict]:
        return [call.render() for call in self.calls]


class ToolRegistry:
    """Immutable set of tools with strict argument validation."""

    def __init__(self, tools: Sequence[Tool] = ()):
        self._tools: dict[str, Tool] = {}
        for tool in tools or _build_tools():
            self._tools[tool.name] = tool

    @property
    def tool_names(self) -> tuple[str, ...]:
        return tuple(self._tools)

    def get(self, name: str) -> Tool:
        tool = self._tools.get(name)
        if tool is None:
            raise ToolValidationError(f"unknown tool {name!r}")
        return tool

    def validate_call(self, call: ToolCall) -> None:
        tool = self.get(call.tool_name)
        expected = {param.name for param in tool.params}
        given = set(call.tool_args)
        missing = expected - given
        if missing:
            raise ToolValidationError(
                f"{call.tool_name}: missing argument(s) {sorted(missing)}"
            )
        unknown = given - expected
        if unknown:
            raise ToolValidationError(
                f"{call.tool_name}: unknown argument(s) {sorted(unknown)}"
            )
        for param in tool.params:
            param.validate(call.tool_args[param.name])

    def validate_plan(self, plan: ToolPlan) -> None:
        for call in plan.calls:
            self.validate_call(call)

    def schema_document(self) -> str:
        """Machine-readable schema text, injected verbatim into prompts."""
        return json.dumps(
            [self._tools[name].schema() for name in sorted(self._tools)],
            indent=2,
        )


DEFAULT_REGISTRY = ToolRegistry()

TOOL_NAMES = DEFAULT_REGISTRY.tool_names

# Shorthand names and argument spellings accepted from model output and
# normalized to the registry's canonical schema.
TOOL_NAME_ALIASES = {
    "text_to_item": "text_to_item_similarity",
    "item_to_item": "item_to_item_similarity",
    "user_to_item": "user_to_item_similarity",
    "semantic_id": "semantic_id_matching",
}

ARG_ALIASES: dict[str, dict[str, str]] = {
    "sql": {"query": "sql_query"},
    "bm25": {"corpus": "corpus_type"},
    "text_to_item_similarity": {"corpus_type": "vector_db_type"},
}


def normalize_call(tool_name: str, tool_args: dict[str, Any]) -> ToolCall:
    """Map alias spellings onto canonical tool and argument names."""
    name = TOOL_NAME_ALIASES.get(tool_name, tool_name)
    renames = ARG_ALIASES.get(name, {})
    args = {renames.get(key, key): value for key, value in tool_args.items()}
    return ToolCall(name, args)
