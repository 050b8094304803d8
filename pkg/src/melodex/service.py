"""Multi-turn session service over the planning and execution stack.

Each user message runs plan -> execute -> respond, appends the turn to
the session, and journals it to an append-only file so sessions
survive restarts. The HTTP surface is consumed by both the chat UI
and the evaluation harness.
"""

from __future__ import annotations

import dataclasses
import glob
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .catalog import Catalog, CatalogError
from .errors import MelodexError
from .pipeline import ExecutionTrace, ToolEnv, execute_plan, fallback_plan, tool_stats
from .planner import (
    ChatProvider,
    ConversationState,
    Planner,
    ProfileError,
    Turn,
    TrackRendering,
    UserProfile,
    build_response_prompt,
    render_track,
    template_response,
)
from .semantic import SemanticIndex

DEFAULT_FINAL_K = 20


class UnknownSessionError(MelodexError):
    pass


class UnknownTrackError(MelodexError):
    pass


class AgentEngine:
    """Planner plus tool environment; turns a query into a full turn."""

    def __init__(
        self,
        catalog: Catalog,
        env: ToolEnv,
        semantic_index: SemanticIndex,
        planner: Planner,
        chat_provider: ChatProvider | None = None,
        max_retries: int = 3,
    ):
        self.catalog = catalog
        self.env = env
        self.semantic_index = semantic_index
        self.planner = planner
        self.chat_provider = chat_provider
        self.max_retries = max_retries
        self._traces: list[ExecutionTrace] = []
        self._trace_lock = threading.Lock()

    def render_track_id(self, track_id: str) -> TrackRendering:
        try:
            track = self.catalog.get(track_id)
        except CatalogError:
            raise UnknownTrackError(f"unknown track {track_id!r}") from None
        return render_track(track, self.semantic_index)

    def _respond(
        self,
        recommendations: list[TrackRendering],
        query: str,
        state: ConversationState,
        profile: UserProfile,
    ) -> str:
        if self.chat_provider is not None:
            prompt = build_response_prompt(recommendations, query, state, profile)
            try:
                content = self.chat_provider.complete(
                    [{"role": "user", "content": prompt}]
                )
                if content.strip():
                    return content.strip()
            except MelodexError:
                pass  # fall through to the template
        return template_response(recommendations, query)

    def run_turn(
        self,
        profile: UserProfile,
        state: ConversationState,
        query: str,
        final_k: int = DEFAULT_FINAL_K,
    ) -> Turn:
        planning_failed = False
        output = None
        for _ in range(self.max_retries + 1):
            try:
                output = self.planner.plan(query, state, profile)
                break
            except MelodexError:
                continue
        if output is None:
            planning_failed = True
            plan = fallback_plan(query, final_k)
            rationale = "Planner output was unusable; fell back to keyword search."
        else:
            plan = output.plan
            rationale = output.rationale

        forbidden = (
            frozenset({"user_to_item_similarity"}) if profile.is_cold_start else frozenset()
        )
        ranked, trace = execute_plan(
            plan,
            self.env,
            final_k,
            raw_query=query,
            replanner=lambda failed, error, attempt: self.planner.replan(
                query, state, profile, failed, error, attempt
            ),
            max_retries=self.max_retries,
            forbidden_tools=forbidden,
        )
        if planning_failed:
            trace.fallback_used = True
        with self._trace_lock:
            self._traces.append(trace)

        recommendations = [self.render_track_id(track_id) for track_id in ranked]
        response = self._respond(recommendations, query, state, profile)
        return Turn(
            query=query,
            recommendations=tuple(recommendations),
            response=response,
            plan=tuple(plan.render()),
            rationale=rationale,
            trace=trace.summary(),
        )

    def stats(self) -> dict:
        with self._trace_lock:
            return tool_stats(list(self._traces))


@dataclass
class Session:
    session_id: str
    profile: UserProfile
    state: ConversationState
    final_k: int
    created_at: float
    updated_at: float
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def snapshot(self) -> dict:
        return {
            "session_id": self.session_id,
            "profile": self.profile.to_json(),
            "final_k": self.final_k,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "turns": [turn.to_json() for turn in self.state.turns],
        }


class SessionStore:
    """In-memory session index backed by per-session journal files."""

    def __init__(self, journal_dir: str | None = None):
        self.journal_dir = journal_dir
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        if journal_dir is not None:
            os.makedirs(journal_dir, exist_ok=True)
            self._load()

    def _journal_path(self, session_id: str) -> str:
        assert self.journal_dir is not None
        return os.path.join(self.journal_dir, f"session-{session_id}.jsonl")

    def _append_line(self, session_id: str, record: dict) -> None:
        if self.journal_dir is None:
            return
        with open(self._journal_path(session_id), "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record) + "\n")
            handle.flush()

    def _load(self) -> None:
        assert self.journal_dir is not None
        for path in sorted(glob.glob(os.path.join(self.journal_dir, "session-*.jsonl"))):
            session = None
            with open(path, encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError:
                        break  # torn tail write; keep what we have
                    if record.get("kind") == "created":
                        session = Session(
                            session_id=record["session_id"],
                            profile=UserProfile.from_json(record["profile"]),
                            state=ConversationState(),
                            final_k=record["final_k"],
                            created_at=record["at"],
                            updated_at=record["at"],
                        )
                    elif record.get("kind") == "turn" and session is not None:
                        session.state.append(Turn.from_json(record["turn"]))
                        session.updated_at = record["at"]
            if session is not None:
                self._sessions[session.session_id] = session

    def create(self, profile: UserProfile, final_k: int) -> Session:
        now = time.time()
        session = Session(
            session_id=uuid.uuid4().hex,
            profile=profile,
            state=ConversationState(),
            final_k=final_k,
            created_at=now,
            updated_at=now,
        )
        with self._lock:
            self._sessions[session.session_id] = session
        self._append_line(
            session.session_id,
            {
                "kind": "created",
                "session_id": session.session_id,
                "profile": profile.to_json(),
                "final_k": final_k,
                "at": now,
            },
        )
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSessionError(f"unknown session {session_id!r}")
        return session

    def append_turn(self, session: Session, turn: Turn) -> None:
        now = time.time()
        self._append_line(
            session.session_id, {"kind": "turn", "turn": turn.to_json(), "at": now}
        )
        session.state.append(turn)
        session.updated_at = now


def _error(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error_kind": kind, "message": message})


def _profile_from_payload(payload: object, engine: AgentEngine) -> UserProfile:
    if not isinstance(payload, dict):
        raise ProfileError("profile must be a JSON object")
    data = dict(payload)
    recent_ids = data.pop("recent_track_ids", [])
    profile = UserProfile.from_json(data)
    if recent_ids:
        if not isinstance(recent_ids, list) or not all(
            isinstance(track_id, str) for track_id in recent_ids
        ):
            raise ProfileError("recent_track_ids must be a list of track ids")
        renderings = tuple(engine.render_track_id(track_id) for track_id in recent_ids)
        profile = dataclasses.replace(profile, recent_tracks=renderings)
    return profile


def create_app(engine: AgentEngine, store: SessionStore) -> FastAPI:
    app = FastAPI(title="melodex")

    @app.exception_handler(RequestValidationError)
    def handle_bad_request(request, exc):
        return _error(400, "invalid_request", str(exc))

    @app.post("/sessions")
    def create_session(payload: dict):
        final_k = payload.get("final_k", DEFAULT_FINAL_K)
        if not isinstance(final_k, int) or isinstance(final_k, bool) or final_k < 1:
            return _error(400, "invalid_profile", "final_k must be a positive integer")
        try:
            profile = _profile_from_payload(payload.get("profile", {}), engine)
        except UnknownTrackError as exc:
            return _error(400, "unknown_track", str(exc))
        except MelodexError as exc:
            return _error(400, "invalid_profile", str(exc))
        session = store.create(profile, final_k)
        return {"session_id": session.session_id}

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, payload: dict):
        query = payload.get("query")
        if not isinstance(query, str) or not query.strip():
            return _error(400, "invalid_query", "query must be a non-empty string")
        try:
            session = store.get(session_id)
        except UnknownSessionError as exc:
            return _error(404, "unknown_session", str(exc))
        with session.lock:
            turn = engine.run_turn(session.profile, session.state, query, session.final_k)
            store.append_turn(session, turn)
            turn_index = len(session.state) - 1
        body = {"session_id": session_id, "turn_index": turn_index}
        body.update(turn.to_json())
        return body

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            session = store.get(session_id)
        except UnknownSessionError as exc:
            return _error(404, "unknown_session", str(exc))
        with session.lock:
            return session.snapshot()

    @app.get("/tracks/{track_id}")
    def get_track(track_id: str):
        try:
            return engine.render_track_id(track_id).to_json()
        except UnknownTrackError as exc:
            return _error(404, "unknown_track", str(exc))

    @app.get("/stats/tools")
    def get_tool_stats():
        return engine.stats()

    return app
