import json

import pytest
from fastapi.testclient import TestClient

from melodex.errors import MelodexError
from melodex.fixtures import default_engine
from melodex.planner import (
    KNOWN_USER,
    ConversationState,
    PlannerOutput,
    PlanParseError,
    UserProfile,
)
from melodex.service import (
    AgentEngine,
    SessionStore,
    UnknownSessionError,
    UnknownTrackError,
    create_app,
)
from melodex.tools import TOOL_NAMES, ToolCall, ToolPlan


class FixedPlanner:
    """Planner that always emits one prearranged plan."""

    def __init__(self, plan: ToolPlan, rationale: str = "fixed plan"):
        self.output = PlannerOutput(
            plan=plan, rationale=rationale, raw=json.dumps(plan.render())
        )

    def plan(self, query, state, profile):
        return self.output

    def replan(self, query, state, profile, failed_call, error, attempt):
        return failed_call


class CrashingPlanner:
    def __init__(self):
        self.calls = 0

    def plan(self, query, state, profile):
        self.calls += 1
        raise PlanParseError("no plan")

    def replan(self, query, state, profile, failed_call, error, attempt):
        return failed_call


class ScriptedChat:
    def __init__(self, reply):
        self.reply = reply
        self.prompts = []

    def complete(self, messages):
        self.prompts.append(messages)
        if isinstance(self.reply, Exception):
            raise self.reply
        return self.reply


@pytest.fixture()
def engine(environment):
    return default_engine(environment)


def known_profile(environment):
    return UserProfile(
        user_type=KNOWN_USER, user_id=environment.stores.user_table.ids[0]
    )


def attribute_query(environment):
    tags = environment.catalog.get(environment.catalog.track_ids()[0]).attributes
    return " ".join(tags[:2])


class TestAgentEngine:
    def test_cold_start_turn(self, environment, engine):
        state = ConversationState()
        turn = engine.run_turn(UserProfile(), state, "mellow dreamy evening")
        assert 1 <= len(turn.recommendations) <= environment.final_k
        assert turn.response.startswith("How about ")
        assert turn.plan[0]["tool_name"] == "text_to_item_similarity"
        assert turn.trace["attempts"][0]["outcome"] == "ok"
        assert len(state) == 0  # caller owns the state

    def test_known_user_gets_rerank(self, environment, engine):
        profile = known_profile(environment)
        turn = engine.run_turn(profile, ConversationState(), "mellow dreamy evening")
        assert [call["tool_name"] for call in turn.plan] == [
            "text_to_item_similarity",
            "user_to_item_similarity",
        ]
        assert not turn.trace["fallback_used"]

    def test_cold_start_cannot_run_user_tool(self, environment):
        plan = ToolPlan(
            (ToolCall("user_to_item_similarity", {"user_id": "user-0000", "topk": 10}),)
        )
        engine = AgentEngine(
            environment.catalog,
            environment.tool_env,
            environment.semantic_index,
            FixedPlanner(plan),
        )
        turn = engine.run_turn(
            UserProfile(), ConversationState(), attribute_query(environment)
        )
        assert turn.trace["fallback_used"]
        assert turn.trace["attempts"][0]["outcome"] == "validation_error"
        assert turn.recommendations

    def test_unusable_planner_falls_back(self, environment):
        planner = CrashingPlanner()
        engine = AgentEngine(
            environment.catalog,
            environment.tool_env,
            environment.semantic_index,
            planner,
        )
        turn = engine.run_turn(
            UserProfile(), ConversationState(), attribute_query(environment)
        )
        assert planner.calls == engine.max_retries + 1
        assert turn.rationale == (
            "Planner output was unusable; fell back to keyword search."
        )
        assert turn.trace["fallback_used"]
        assert turn.recommendations

    def test_final_k_caps_output(self, environment, engine):
        turn = engine.run_turn(
            UserProfile(), ConversationState(), "mellow dreamy evening", final_k=3
        )
        assert len(turn.recommendations) == 3

    def test_chat_provider_phrases_response(self, environment):
        chat = ScriptedChat("  Here is a tune you may enjoy.  ")
        engine = AgentEngine(
            environment.catalog,
            environment.tool_env,
            environment.semantic_index,
            default_engine(environment).planner,
            chat_provider=chat,
        )
        turn = engine.run_turn(UserProfile(), ConversationState(), "mellow evening")
        assert turn.response == "Here is a tune you may enjoy."
        prompt = chat.prompts[0][0]["content"]
        assert "## Top Recommendation" in prompt

    def test_chat_provider_failure_uses_template(self, environment):
        chat = ScriptedChat(PlanParseError("provider down"))
        engine = AgentEngine(
            environment.catalog,
            environment.tool_env,
            environment.semantic_index,
            default_engine(environment).planner,
            chat_provider=chat,
        )
        turn = engine.run_turn(UserProfile(), ConversationState(), "mellow evening")
        assert turn.response.startswith("How about ")

    def test_blank_chat_reply_uses_template(self, environment):
        chat = ScriptedChat("   ")
        engine = AgentEngine(
            environment.catalog,
            environment.tool_env,
            environment.semantic_index,
            default_engine(environment).planner,
            chat_provider=chat,
        )
        turn = engine.run_turn(UserProfile(), ConversationState(), "mellow evening")
        assert turn.response.startswith("How about ")

    def test_render_track_id(self, environment, engine):
        track_id = environment.catalog.track_ids()[0]
        rendered = engine.render_track_id(track_id)
        assert rendered.track_id == track_id
        assert rendered.semantic_ids  # sidecar covers the catalog
        with pytest.raises(UnknownTrackError):
            engine.render_track_id("no-such-track")

    def test_stats_accumulate_over_turns(self, environment):
        engine = default_engine(environment)
        assert engine.stats()["sql"]["first_attempt_calls"] == 0
        engine.run_turn(UserProfile(), ConversationState(), "popular hits")
        engine.run_turn(UserProfile(), ConversationState(), "something new")
        stats = engine.stats()
        assert stats["sql"]["first_attempt_calls"] == 2
        assert stats["sql"]["first_attempt_success_rate"] == 1.0


class TestSessionStore:
    def test_memory_only_mode(self):
        store = SessionStore(journal_dir=None)
        session = store.create(UserProfile(), final_k=10)
        assert store.get(session.session_id) is session

    def test_unknown_session(self):
        store = SessionStore(journal_dir=None)
        with pytest.raises(UnknownSessionError):
            store.get("missing")

    def test_journal_round_trip(self, tmp_path, environment, engine):
        journal = tmp_path / "journal"
        store = SessionStore(journal_dir=str(journal))
        session = store.create(UserProfile(country="SE"), final_k=6)
        turn = engine.run_turn(
            session.profile, session.state, "mellow dreamy evening", session.final_k
        )
        store.append_turn(session, turn)

        reloaded = SessionStore(journal_dir=str(journal))
        restored = reloaded.get(session.session_id)
        assert restored.profile == session.profile
        assert restored.final_k == 6
        assert len(restored.state) == 1
        assert restored.state.turns[0] == turn

    def test_torn_tail_line_tolerated(self, tmp_path, environment, engine):
        journal = tmp_path / "journal"
        store = SessionStore(journal_dir=str(journal))
        session = store.create(UserProfile(), final_k=5)
        turn = engine.run_turn(
            session.profile, session.state, "mellow dreamy evening", session.final_k
        )
        store.append_turn(session, turn)
        path = journal / f"session-{session.session_id}.jsonl"
        with open(path, "a", encoding="utf-8") as handle:
            handle.write('{"kind": "turn", "turn": {')  # crash mid-write

        reloaded = SessionStore(journal_dir=str(journal))
        restored = reloaded.get(session.session_id)
        assert len(restored.state) == 1

    def test_multiple_sessions_reload(self, tmp_path):
        journal = tmp_path / "journal"
        store = SessionStore(journal_dir=str(journal))
        first = store.create(UserProfile(), final_k=5)
        second = store.create(UserProfile(country="NO"), final_k=9)
        reloaded = SessionStore(journal_dir=str(journal))
        assert reloaded.get(first.session_id).final_k == 5
        assert reloaded.get(second.session_id).profile.country == "NO"


@pytest.fixture()
def client(environment, engine):
    app = create_app(engine, SessionStore(journal_dir=None))
    with TestClient(app) as test_client:
        yield test_client


class TestApi:
    def test_full_conversation_flow(self, environment, client):
        created = client.post(
            "/sessions",
            json={"profile": {"user_type": "cold_start", "country": "DE"}, "final_k": 8},
        )
        assert created.status_code == 200
        session_id = created.json()["session_id"]

        reply = client.post(
            f"/sessions/{session_id}/messages", json={"query": "mellow dreamy evening"}
        )
        assert reply.status_code == 200
        body = reply.json()
        assert body["turn_index"] == 0
        assert 1 <= len(body["recommendations"]) <= 8
        assert body["response"]
        assert body["plan"]

        followup = client.post(
            f"/sessions/{session_id}/messages", json={"query": "more like that"}
        )
        assert followup.json()["turn_index"] == 1
        assert followup.json()["plan"][0]["tool_name"] == "item_to_item_similarity"

        snapshot = client.get(f"/sessions/{session_id}").json()
        assert snapshot["session_id"] == session_id
        assert snapshot["final_k"] == 8
        assert len(snapshot["turns"]) == 2
        assert snapshot["turns"][0]["query"] == "mellow dreamy evening"

    def test_known_profile_with_recent_tracks(self, environment, client):
        track_id = environment.catalog.track_ids()[0]
        user_id = environment.stores.user_table.ids[0]
        created = client.post(
            "/sessions",
            json={
                "profile": {
                    "user_type": "known",
                    "user_id": user_id,
                    "recent_track_ids": [track_id],
                }
            },
        )
        assert created.status_code == 200
        session_id = created.json()["session_id"]
        snapshot = client.get(f"/sessions/{session_id}").json()
        assert snapshot["profile"]["user_id"] == user_id
        assert snapshot["profile"]["recent_tracks"][0]["track_id"] == track_id

    def test_track_endpoint(self, environment, client):
        track_id = environment.catalog.track_ids()[0]
        body = client.get(f"/tracks/{track_id}").json()
        assert body["track_id"] == track_id
        assert "semantic_ids" in body

    def test_stats_endpoint(self, client):
        body = client.get("/stats/tools").json()
        assert set(body) == set(TOOL_NAMES)

    def test_unknown_session_404(self, client):
        for response in (
            client.get("/sessions/nope"),
            client.post("/sessions/nope/messages", json={"query": "hi"}),
        ):
            assert response.status_code == 404
            assert response.json()["error_kind"] == "unknown_session"

    def test_unknown_track_404(self, client):
        response = client.get("/tracks/nope")
        assert response.status_code == 404
        assert response.json()["error_kind"] == "unknown_track"

    def test_invalid_profile_400(self, client):
        response = client.post("/sessions", json={"profile": {"user_type": "guest"}})
        assert response.status_code == 400
        assert response.json()["error_kind"] == "invalid_profile"

    def test_unknown_recent_track_400(self, client):
        response = client.post(
            "/sessions",
            json={"profile": {"recent_track_ids": ["nope"]}},
        )
        assert response.status_code == 400
        assert response.json()["error_kind"] == "unknown_track"

    def test_invalid_final_k_400(self, client):
        for bad in (0, -2, "ten", True):
            response = client.post("/sessions", json={"final_k": bad})
            assert response.status_code == 400
            assert response.json()["error_kind"] == "invalid_profile"

    def test_invalid_query_400(self, client):
        created = client.post("/sessions", json={})
        session_id = created.json()["session_id"]
        for payload in ({}, {"query": ""}, {"query": "   "}, {"query": 7}):
            response = client.post(f"/sessions/{session_id}/messages", json=payload)
            assert response.status_code == 400
            assert response.json()["error_kind"] == "invalid_query"

    def test_malformed_body_400(self, client):
        response = client.post(
            "/sessions",
            content="not json",
            headers={"content-type": "application/json"},
        )
        assert response.status_code == 400
        assert response.json()["error_kind"] == "invalid_request"
