"""Turn planning: prompts, plan parsing, and the rule-based planner.

A plan can come from a chat-completion provider over HTTP or from a
deterministic rule table that maps query shapes to tools. Both paths
produce the same PlannerOutput and validate against the registry, so
the execution pipeline does not care which planner ran.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import requests

from .catalog import Track
from .errors import MelodexError
from .semantic import SID_MODALITIES, SemanticIndex
from .tools import (
    DEFAULT_REGISTRY,
    MAX_PLAN_CALLS,
    PlanError,
    ToolCall,
    ToolPlan,
    ToolRegistry,
    normalize_call,
)

KNOWN_USER = "known"
COLD_START = "cold_start"

MAX_RECENT_TRACKS = 5

COLD_START_DIRECTIVE = (
    "This user is cold_start: do not select the user_to_item_similarity tool."
)

SYSTEM_PROMPT = """\
You are a conversational music recommendation agent. Work in three \
stages for every user turn.

Stage 1 (planning): read the user profile, the conversation history \
and the current query, then select the exact retrieval tool and, when \
useful, a reranking tool, with a short rationale.
Stage 2 (retrieval): the first tool call runs against the full catalog \
and builds the candidate pool.
Stage 3 (reranking): every later tool call only reorders that pool and \
never adds candidates.

Tools must be used in sequence (retrieval -> reranking), and the \
chosen tools must have no functional overlap. Answer with a JSON array \
of {"tool_name": ..., "tool_args": {...}} objects, retrieval first."""


class ProfileError(MelodexError):
    pass


class PlanParseError(MelodexError):
    pass


class ResponseError(MelodexError):
    pass


@dataclass(frozen=True)
class TrackRendering:
    """A track as shown to the model and the user: metadata,
    attributes, and the per-modality semantic ids."""

    track_id: str
    title: str
    artist: str
    album: str
    popularity: int
    release_date: str
    tempo: float
    key: str
    attributes: tuple[str, ...]
    semantic_ids: dict[str, tuple[int, ...]]

    def to_json(self) -> dict:
        return {
            "track_id": self.track_id,
            "title": self.title,
            "artist": self.artist,
            "album": self.album,
            "popularity": self.popularity,
            "release_date": self.release_date,
            "tempo": self.tempo,
            "key": self.key,
            "attributes": list(self.attributes),
            "semantic_ids": {
                modality: list(indices)
                for modality, indices in self.semantic_ids.items()
            },
        }

    @classmethod
    def from_json(cls, payload: dict) -> "TrackRendering":
        return cls(
            track_id=payload["track_id"],
            title=payload["title"],
            artist=payload["artist"],
            album=payload["album"],
            popularity=payload["popularity"],
            release_date=payload["release_date"],
            tempo=payload["tempo"],
            key=payload["key"],
            attributes=tuple(payload["attributes"]),
            semantic_ids={
                modality: tuple(indices)
                for modality, indices in payload.get("semantic_ids", {}).items()
            },
        )

    def prompt_lines(self) -> list[str]:
        lines = [
            f"- track_id: {self.track_id} | title: {self.title} | "
            f"artist: {self.artist} | album: {self.album}",
            f"  attributes: {', '.join(self.attributes)}",
            f"  tempo: {self.tempo} | key: {self.key} | "
            f"release_date: {self.release_date} | popularity: {self.popularity}",
        ]
        for modality in SID_MODALITIES:
            indices = self.semantic_ids.get(modality)
            if indices is not None:
                lines.append(f"  '{modality}:semanticID': {json.dumps(list(indices))}")
        return lines


def render_track(track: Track, semantic_index: SemanticIndex | None) -> TrackRendering:
    semantic_ids: dict[str, tuple[int, ...]] = {}
    if semantic_index is not None:
        for modality in semantic_index.modalities:
            indices = semantic_index.indices_for(modality, track.track_id)
            if indices is not None:
                semantic_ids[modality] = indices
    return TrackRendering(
        track_id=track.track_id,
        title=track.title,
        artist=track.artist,
        album=track.album,
        popularity=track.popularity,
        release_date=track.release_date.isoformat(),
        tempo=track.tempo,
        key=track.key,
        attributes=track.attributes,
        semantic_ids=semantic_ids,
    )


@dataclass(frozen=True)
class UserProfile:
    user_type: str = COLD_START
    user_id: str | None = None
    age_group: str = "unknown"
    gender: str = "unknown"
    country: str = "unknown"
    recent_tracks: tuple[TrackRendering, ...] = ()

    def __post_init__(self):
        if self.user_type not in (KNOWN_USER, COLD_START):
            raise ProfileError(f"user_type must be known or cold_start, got {self.user_type!r}")
        if self.user_type == COLD_START and self.user_id is not None:
            raise ProfileError("a cold_start profile cannot carry a user_id")
        if self.user_type == KNOWN_USER and not self.user_id:
            raise ProfileError("a known profile needs a user_id")
        if len(self.recent_tracks) > MAX_RECENT_TRACKS:
            raise ProfileError(f"recent_tracks is capped at {MAX_RECENT_TRACKS}")

    @property
    def is_cold_start(self) -> bool:
        return self.user_type == COLD_START

    def to_json(self) -> dict:
        return {
            "user_type": self.user_type,
            "user_id": self.user_id,
            "age_group": self.age_group,
            "gender": self.gender,
            "country": self.country,
            "recent_tracks": [track.to_json() for track in self.recent_tracks],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "UserProfile":
        if not isinstance(payload, dict):
            raise ProfileError("profile must be a JSON object")
        user_type = payload.get("user_type", COLD_START)
        user_id = payload.get("user_id")
        if user_id is not None and not isinstance(user_id, str):
            raise ProfileError("user_id must be a string")
        return cls(
            user_type=user_type,
            user_id=user_id,
            age_group=str(payload.get("age_group", "unknown")),
            gender=str(payload.get("gender", "unknown")),
            country=str(payload.get("country", "unknown")),
            recent_tracks=tuple(
                TrackRendering.from_json(entry)
                for entry in payload.get("recent_tracks", [])
            ),
        )


@dataclass(frozen=True)
class Turn:
    query: str
    recommendations: tuple[TrackRendering, ...]
    response: str
    plan: tuple[dict, ...] = ()
    rationale: str = ""
    trace: dict | None = None

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "recommendations": [track.to_json() for track in self.recommendations],
            "response": self.response,
            "plan": [dict(call) for call in self.plan],
            "rationale": self.rationale,
            "trace": self.trace or {},
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Turn":
        return cls(
            query=payload["query"],
            recommendations=tuple(
                TrackRendering.from_json(entry) for entry in payload["recommendations"]
            ),
            response=payload["response"],
            plan=tuple(payload.get("plan", [])),
            rationale=payload.get("rationale", ""),
            trace=payload.get("trace", {}),
        )


class ConversationState:
    """Append-only turn history; houses what the prompts call s_{t-1}."""

    def __init__(self, turns: Sequence[Turn] = ()):
        self._turns: list[Turn] = list(turns)

    @property
    def turns(self) -> tuple[Turn, ...]:
        return tuple(self._turns)

    def __len__(self) -> int:
        return len(self._turns)

    def append(self, turn: Turn) -> None:
        self._turns.append(turn)

    def last_recommended(self) -> TrackRendering | None:
        for turn in reversed(self._turns):
            if turn.recommendations:
                return turn.recommendations[0]
        return None


# ---------------------------------------------------------------------------
# Prompt building

def system_block(registry: ToolRegistry) -> str:
    return SYSTEM_PROMPT + "\n\n## Tools\n" + registry.schema_document()


def profile_block(profile: UserProfile) -> str:
    lines = ["## User Profile"]
    if profile.is_cold_start:
        lines.append("user_type: cold_start")
        lines.append("user_id: N/A (cold user)")
    else:
        lines.append("user_type: known")
        lines.append(f"user_id: {profile.user_id}")
    lines.append(
        f"age_group: {profile.age_group} | gender: {profile.gender} | "
        f"country: {profile.country}"
    )
    if profile.is_cold_start:
        lines.append(COLD_START_DIRECTIVE)
    if profile.recent_tracks:
        lines.append("Recent tracks:")
        for track in profile.recent_tracks:
            lines.extend(track.prompt_lines())
    return "\n".join(lines)


def history_block(state: ConversationState) -> str:
    lines = ["## Conversation History"]
    for number, turn in enumerate(state.turns, start=1):
        lines.append(f"### Turn {number}")
        lines.append(f"User: {turn.query}")
        if turn.recommendations:
            lines.append("Recommended:")
            for track in turn.recommendations:
                lines.extend(track.prompt_lines())
        lines.append(f"Assistant: {turn.response}")
    return "\n".join(lines)


def user_block(query: str, state: ConversationState, profile: UserProfile) -> str:
    parts = [profile_block(profile)]
    if len(state) > 0:
        parts.append(history_block(state))
    parts.append(f"## Current Query\n{query}")
    return "\n\n".join(parts)


def build_tool_prompt(
    query: str,
    state: ConversationState,
    profile: UserProfile,
    registry: ToolRegistry = DEFAULT_REGISTRY,
) -> str:
    """The full planning document: system text, tool schemas, profile,
    history, then the current query. Deterministic for fixed inputs."""
    return system_block(registry) + "\n\n" + user_block(query, state, profile)


def build_response_prompt(
    recommendations: Sequence[TrackRendering],
    query: str,
    state: ConversationState,
    profile: UserProfile,
) -> str:
    """Prompt for phrasing the reply around the top recommendation."""
    if not recommendations:
        raise ResponseError("cannot build a response prompt without recommendations")
    top = recommendations[0]
    parts = [
        "You are a conversational music recommendation agent. The tools "
        "already ran; explain the top recommendation to the user in one "
        "or two friendly sentences, referencing its title and artist.",
        profile_block(profile),
    ]
    if len(state) > 0:
        parts.append(history_block(state))
    parts.append(f"## Current Query\n{query}")
    parts.append("## Top Recommendation\n" + "\n".join(top.prompt_lines()))
    if len(recommendations) > 1:
        parts.append(f"({len(recommendations)} tracks ranked in total.)")
    return "\n\n".join(parts)


def template_response(recommendations: Sequence[TrackRendering], query: str) -> str:
    """Deterministic reply used when no chat provider is configured."""
    if not recommendations:
        raise ResponseError("cannot respond without recommendations")
    top = recommendations[0]
    text = f'How about "{top.title}" by {top.artist}?'
    tags = ", ".join(top.attributes[:4])
    if tags:
        text += f" It fits {tags}."
    if len(recommendations) > 1:
        text += f" I ranked {len(recommendations)} tracks for you."
    return text


# ---------------------------------------------------------------------------
# Plan parsing

def _find_plan(text: str, registry: ToolRegistry) -> tuple[ToolPlan, int]:
    decoder = json.JSONDecoder()
    for start, char in enumerate(text):
        if char != "[":
            continue
        try:
            value, _ = decoder.raw_decode(text, start)
        except ValueError:
            continue
        if not isinstance(value, list) or not value:
            continue
        if not all(
            isinstance(item, dict)
            and isinstance(item.get("tool_name"), str)
            and isinstance(item.get("tool_args"), dict)
            for item in value
        ):
            continue
        if len(value) > MAX_PLAN_CALLS:
            raise PlanError(
                f"planner produced {len(value)} calls, the cap is {MAX_PLAN_CALLS}"
            )
        plan = ToolPlan(
            tuple(normalize_call(item["tool_name"], item["tool_args"]) for item in value)
        )
        registry.validate_plan(plan)
        return plan, start
    raise PlanParseError("no tool-call array found in planner output")


def parse_plan(text: str, registry: ToolRegistry = DEFAULT_REGISTRY) -> ToolPlan:
    """Extract the first well-formed tool-call array from model output.

    Surrounding prose is ignored. Alias spellings are normalized, then
    every call is validated against the registry.
    """
    plan, _ = _find_plan(text, registry)
    return plan


# ---------------------------------------------------------------------------
# Rule-based planner

_STOPWORDS = frozenset(
    """
    a an the and or but if then than so to of in on at for with without
    from by about as is are was were be been being am do does did done
    can could should would will shall may might must have has had
    i you he she it we they me him her us them mine yours my your his
    its our their this that these those there here what when which who
    whom how why whose
    please want wants wanted like liked likes need needs needed love
    loved give gives show shows find finds get gets put plays play
    played playing listen listening hear hearing
    recommend recommends recommended recommendation recommendations
    suggest suggests suggested song songs track tracks music tune tunes
    piece pieces album albums artist artists band bands record records
    something anything nothing everything some any other others another
    more most less least very really quite kind sort bit lot lots time
    times again also too just only even still yet now today tonight
    ok okay yes no not dont don isn isnt won wont im ive id
    new old recent latest newest popular top hits hit trending famous
    over under above below around about faster slower bpm beats beat
    similar vibe vibes mood feel feels feeling sound sounds sounding
    voices voice style styles genre genres
    """.split()
)

_SIMILARITY_CUES = ("more like", "similar", "like this", "like that", "same as")
_RECENT_CUES = ("recent", "new", "newest", "latest")
_POPULAR_CUES = ("popular", "top", "hits", "trending", "famous")
_ARTIST_CUES = ("by", "artist", "discography", "from")

_WORD_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)?", re.UNICODE)
_PROPER_RE = re.compile(r"^[A-Z][a-z']+$")
_QUOTED_RE = re.compile(r'"([^"]+)"')
_TEMPO_RE = re.compile(
    r"(over|above|under|below|around|about|least|most)?\s*(\d{2,3})\s*bpm",
    re.IGNORECASE,
)
_YEAR_RE = re.compile(r"\b(1[89]\d\d|20\d\d)\b")


def _words(text: str) -> list[str]:
    return _WORD_RE.findall(text)


def _proper_nouns(query: str) -> list[str]:
    """Capitalized mid-sentence words, possessives stripped.

    Sentence-initial words are skipped since ordinary words carry a
    capital there too.
    """
    nouns: list[str] = []
    for match in _WORD_RE.finditer(query):
        before = query[: match.start()].rstrip()
        if not before or before[-1] in ".?!":
            continue
        word = match.group()
        if not _PROPER_RE.match(word):
            continue
        if word.endswith("'s"):
            word = word[:-2]
        if word and word.lower() not in _STOPWORDS:
            nouns.append(word)
    return nouns


def _descriptive_tokens(query: str, exclude: set[str]) -> list[str]:
    tokens: list[str] = []
    for word in _words(query):
        lowered = word.lower().replace("'", "")
        plain = word.lower()
        if plain in _STOPWORDS or lowered in _STOPWORDS:
            continue
        if plain in exclude:
            continue
        if plain.isdigit():
            continue
        if plain not in tokens:
            tokens.append(plain)
    return tokens


def _sql_constraints(query: str) -> tuple[list[str], str | None, set[str]]:
    """(WHERE conditions, ORDER BY clause, tokens consumed)."""
    lowered = query.lower()
    conditions: list[str] = []
    consumed: set[str] = set()

    tempo_match = _TEMPO_RE.search(lowered)
    if tempo_match:
        qualifier, value = tempo_match.group(1), int(tempo_match.group(2))
        consumed.add(str(value))
        if qualifier in ("over", "above", "least"):
            conditions.append(f"tempo > {value}")
        elif qualifier in ("under", "below", "most"):
            conditions.append(f"tempo < {value}")
        else:
            conditions.append(f"tempo >= {value - 5} AND tempo <= {value + 5}")

    for match in _YEAR_RE.finditer(lowered):
        year = match.group(1)
        if year in consumed:
            continue
        consumed.add(year)
        before = lowered[: match.start()]
        if re.search(r"(since|after)\s*$", before):
            conditions.append(f"release_date >= '{year}-01-01'")
        elif re.search(r"before\s*$", before):
            conditions.append(f"release_date < '{year}-01-01'")
        else:
            conditions.append(
                f"release_date >= '{year}-01-01' AND release_date <= '{year}-12-31'"
            )
        break  # one year constraint is enough

    tokens = set(_words(lowered))
    order = None
    if tokens & set(_RECENT_CUES):
        order = "ORDER BY release_date DESC"
    elif tokens & set(_POPULAR_CUES):
        order = "ORDER BY popularity DESC"
    return conditions, order, consumed


@dataclass
class PlannerOutput:
    plan: ToolPlan
    rationale: str
    raw: str


def rule_based_plan(
    query: str,
    state: ConversationState,
    profile: UserProfile,
    topk: int = 20,
) -> PlannerOutput:
    """Deterministic planner: a fixed precedence over query shapes.

    Numeric, date or recency constraints go to sql; similarity wording
    with a prior recommendation goes to item_to_item; quoted or
    capitalized names go to bm25; everything else embeds the
    descriptive words. A known user gets a personalization rerank,
    otherwise an attribute rerank when descriptive words remain.
    """
    lowered = query.lower()
    conditions, order, consumed = _sql_constraints(query)
    quoted = _QUOTED_RE.findall(query)
    nouns = _proper_nouns(query)
    exclude = set(consumed)
    for noun in nouns:
        # Cover the possessive spelling too, so "Marlow's" does not
        # leak into the descriptive rerank query as a token.
        exclude.add(noun.lower())
        exclude.add(noun.lower() + "'s")
    for phrase in quoted:
        exclude.update(word.lower() for word in _words(phrase))
    descriptive = _descriptive_tokens(query, exclude)
    dense_query = ", ".join(descriptive) if descriptive else query

    retrieval: ToolCall
    reasons: list[str] = []
    if conditions or order:
        sql_text = "SELECT * FROM tracks"
        if conditions:
            sql_text += " WHERE " + " AND ".join(conditions)
        if order:
            sql_text += " " + order
        retrieval = ToolCall("sql", {"sql_query": sql_text, "topk": topk})
        reasons.append("structured constraints go to sql")
    elif (
        any(cue in lowered for cue in _SIMILARITY_CUES)
        and state.last_recommended() is not None
    ):
        seed = state.last_recommended()
        assert seed is not None
        retrieval = ToolCall(
            "item_to_item_similarity",
            {
                "track_id": seed.track_id,
                "modality_type": "audio",
                "vector_db_type": "audio",
                "topk": topk,
            },
        )
        reasons.append(f"similarity wording seeds item_to_item on {seed.track_id}")
    elif quoted or nouns:
        words = set(_words(lowered))
        if "album" in words:
            corpus = "album"
        elif words & set(_ARTIST_CUES) or re.search(r"[A-Z][a-z']*'s\b", query):
            corpus = "artist"
        else:
            corpus = "title"
        keyword_query = quoted[0] if quoted else " ".join(nouns)
        retrieval = ToolCall(
            "bm25", {"query": keyword_query, "corpus_type": corpus, "topk": topk}
        )
        reasons.append(f"named entities go to bm25 over {corpus}")
    else:
        retrieval = ToolCall(
            "text_to_item_similarity",
            {
                "query": dense_query,
                "modality_type": "text",
                "vector_db_type": "attributes",
                "topk": topk,
            },
        )
        reasons.append("descriptive wording embeds against attributes")

    calls = [retrieval]
    if not profile.is_cold_start and profile.user_id:
        calls.append(
            ToolCall(
                "user_to_item_similarity",
                {"user_id": profile.user_id, "topk": topk},
            )
        )
        reasons.append("known user gets a personalization rerank")
    elif retrieval.tool_name != "text_to_item_similarity" and descriptive:
        calls.append(
            ToolCall(
                "text_to_item_similarity",
                {
                    "query": ", ".join(descriptive),
                    "modality_type": "text",
                    "vector_db_type": "attributes",
                    "topk": topk,
                },
            )
        )
        reasons.append("descriptive words rerank by attributes")

    plan = ToolPlan(tuple(calls))
    rationale = "Stage 1 planning: " + "; ".join(reasons) + "."
    return PlannerOutput(plan=plan, rationale=rationale, raw=json.dumps(plan.render()))


class Planner(Protocol):
    def plan(
        self, query: str, state: ConversationState, profile: UserProfile
    ) -> PlannerOutput: ...

    def replan(
        self,
        query: str,
        state: ConversationState,
        profile: UserProfile,
        failed_call: ToolCall,
        error: str,
        attempt: int,
    ) -> ToolCall: ...


class RuleBasedPlanner:
    """Offline planner; replans by retrying the same call, leaving
    recovery from persistent errors to the pipeline's fallback."""

    def __init__(self, topk: int = 20):
        self.topk = topk

    def plan(
        self, query: str, state: ConversationState, profile: UserProfile
    ) -> PlannerOutput:
        return rule_based_plan(query, state, profile, topk=self.topk)

    def replan(
        self,
        query: str,
        state: ConversationState,
        profile: UserProfile,
        failed_call: ToolCall,
        error: str,
        attempt: int,
    ) -> ToolCall:
        return failed_call


class ChatProvider(Protocol):
    def complete(self, messages: list[dict[str, str]]) -> str: ...


class HttpChatProvider:
    """Chat-completion client: POST {messages, temperature, top_p}
    returning {content}."""

    def __init__(
        self,
        url: str,
        temperature: float = 0.6,
        top_p: float = 0.95,
        timeout: float = 60.0,
        auth_token: str | None = None,
    ):
        self.url = url
        self.temperature = temperature
        self.top_p = top_p
        self.timeout = timeout
        self.auth_token = auth_token

    def complete(self, messages: list[dict[str, str]]) -> str:
        headers = {}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        try:
            response = requests.post(
                self.url,
                json={
                    "messages": messages,
                    "temperature": self.temperature,
                    "top_p": self.top_p,
                },
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            payload = response.json()
        except requests.RequestException as exc:
            raise PlanParseError(f"chat provider request failed: {exc}") from exc
        content = payload.get("content") if isinstance(payload, dict) else None
        if not isinstance(content, str):
            raise PlanParseError("chat provider returned no content field")
        return content


class LlmPlanner:
    """Provider-backed planner with an audit trail per invocation."""

    def __init__(
        self,
        provider: ChatProvider,
        registry: ToolRegistry = DEFAULT_REGISTRY,
        audit_path: str | None = None,
    ):
        self.provider = provider
        self.registry = registry
        self.audit_path = audit_path

    def _audit(self, prompt: str, raw: str, plan: ToolPlan | None) -> None:
        if self.audit_path is None:
            return
        record = {
            "prompt": prompt,
            "raw": raw,
            "plan": plan.render() if plan is not None else None,
        }
        with open(self.audit_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record) + "\n")

    def plan(
        self, query: str, state: ConversationState, profile: UserProfile
    ) -> PlannerOutput:
        messages = [
            {"role": "system", "content": system_block(self.registry)},
            {"role": "user", "content": user_block(query, state, profile)},
        ]
        raw = self.provider.complete(messages)
        prompt = build_tool_prompt(query, state, profile, self.registry)
        try:
            plan, start = _find_plan(raw, self.registry)
        except MelodexError:
            self._audit(prompt, raw, None)
            raise
        self._audit(prompt, raw, plan)
        return PlannerOutput(plan=plan, rationale=raw[:start].strip(), raw=raw)

    def replan(
        self,
        query: str,
        state: ConversationState,
        profile: UserProfile,
        failed_call: ToolCall,
        error: str,
        attempt: int,
    ) -> ToolCall:
        messages = [
            {"role": "system", "content": system_block(self.registry)},
            {"role": "user", "content": user_block(query, state, profile)},
            {
                "role": "user",
                "content": (
                    f"The tool call {json.dumps(failed_call.render())} failed "
                    f"with: {error}. Produce a corrected JSON tool-call array."
                ),
            },
        ]
        try:
            raw = self.provider.complete(messages)
            plan, _ = _find_plan(raw, self.registry)
        except MelodexError:
            return failed_call
        return plan.calls[0]
