"""Replay conversation fixtures and score Hit@K against two backends:
the full planner-plus-tools engine and a keyword-search baseline.

Reports carry per-k micro (over all turns) and macro (per conversation,
then averaged) hit rates plus tool analytics, and serialize to JSON
with sorted keys and no timing fields, so identical runs produce
byte-identical documents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

from .bm25 import Bm25Index
from .errors import MelodexError
from .planner import ConversationState, UserProfile
from .service import AgentEngine

DEFAULT_KS = (1, 10, 20)


class EvalError(MelodexError):
    pass


@dataclass(frozen=True)
class EvalTurn:
    query: str
    truth: str
    label: str  # retrieval tool expected to recover the truth
    retrieval_call: dict

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "truth": self.truth,
            "label": self.label,
            "retrieval_call": self.retrieval_call,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "EvalTurn":
        return cls(
            query=payload["query"],
            truth=payload["truth"],
            label=payload["label"],
            retrieval_call=payload["retrieval_call"],
        )


@dataclass(frozen=True)
class EvalConversation:
    conversation_id: str
    profile: UserProfile
    turns: tuple[EvalTurn, ...]

    def __post_init__(self):
        if not self.turns:
            raise EvalError(f"conversation {self.conversation_id!r} has no turns")

    def to_json(self) -> dict:
        return {
            "conversation_id": self.conversation_id,
            "profile": self.profile.to_json(),
            "turns": [turn.to_json() for turn in self.turns],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "EvalConversation":
        return cls(
            conversation_id=payload["conversation_id"],
            profile=UserProfile.from_json(payload["profile"]),
            turns=tuple(EvalTurn.from_json(turn) for turn in payload["turns"]),
        )


def save_conversations(path: str, conversations: Sequence[EvalConversation]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for conversation in conversations:
            handle.write(json.dumps(conversation.to_json()) + "\n")


def load_conversations(path: str) -> list[EvalConversation]:
    conversations = []
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                conversations.append(EvalConversation.from_json(json.loads(text)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise EvalError(f"conversations line {number}: {exc}") from None
    if not conversations:
        raise EvalError(f"no conversations found in {path!r}")
    return conversations


def hit_at_k(recommendations: Sequence[str], truth: str, k: int) -> int:
    """1 iff the truth appears among the first min(k, len) items."""
    if k < 1:
        raise EvalError("k must be >= 1")
    return int(truth in recommendations[:k])


class EvalBackend(Protocol):
    name: str

    def run_conversation(self, conversation: EvalConversation) -> list[list[str]]: ...


class AgentBackend:
    """Full engine: plan, execute, respond, carrying state across turns."""

    name = "tools"

    def __init__(self, engine: AgentEngine, final_k: int = 20):
        self.engine = engine
        self.final_k = final_k

    def run_conversation(self, conversation: EvalConversation) -> list[list[str]]:
        state = ConversationState()
        outputs: list[list[str]] = []
        for turn in conversation.turns:
            result = self.engine.run_turn(
                conversation.profile, state, turn.query, self.final_k
            )
            outputs.append([track.track_id for track in result.recommendations])
            state.append(result)
        return outputs

    def stats(self) -> dict:
        return self.engine.stats()


class Bm25OnlyBackend:
    """Baseline: the raw query against one keyword index, no planning."""

    name = "bm25"

    def __init__(self, index: Bm25Index, final_k: int = 20):
        self.index = index
        self.final_k = final_k

    def run_conversation(self, conversation: EvalConversation) -> list[list[str]]:
        return [
            [doc_id for doc_id, _ in self.index.search(turn.query, self.final_k)]
            for turn in conversation.turns
        ]


def run_eval(
    conversations: Sequence[EvalConversation],
    backend: EvalBackend,
    ks: Iterable[int] = DEFAULT_KS,
) -> dict:
    """Score every turn of every conversation at each cutoff.

    The backend only ever sees queries and profiles; ground truth stays
    on this side of the call.
    """
    k_values = sorted(set(ks))
    if not k_values or k_values[0] < 1:
        raise EvalError("ks must be positive integers")
    if not conversations:
        raise EvalError("no conversations to evaluate")

    micro_totals = {k: 0 for k in k_values}
    macro_totals = {k: 0.0 for k in k_values}
    turn_count = 0
    for conversation in conversations:
        outputs = backend.run_conversation(conversation)
        if len(outputs) != len(conversation.turns):
            raise EvalError(
                f"backend returned {len(outputs)} outputs for "
                f"{len(conversation.turns)} turns"
            )
        conversation_hits = {k: 0 for k in k_values}
        for turn, ranked in zip(conversation.turns, outputs):
            turn_count += 1
            for k in k_values:
                hit = hit_at_k(ranked, turn.truth, k)
                micro_totals[k] += hit
                conversation_hits[k] += hit
        for k in k_values:
            macro_totals[k] += conversation_hits[k] / len(conversation.turns)

    report = {
        "backend": backend.name,
        "conversation_count": len(conversations),
        "turn_count": turn_count,
        "ks": k_values,
        "micro_hit": {f"hit@{k}": micro_totals[k] / turn_count for k in k_values},
        "macro_hit": {
            f"hit@{k}": macro_totals[k] / len(conversations) for k in k_values
        },
    }
    stats = getattr(backend, "stats", None)
    if callable(stats):
        report["tool_stats"] = stats()
    return report


def render_report(report: dict) -> str:
    """Canonical JSON rendering; identical runs give identical bytes."""
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(render_report(report))


def format_report_table(report: dict) -> str:
    """Small human-readable summary for the terminal."""
    lines = [
        f"backend: {report['backend']}",
        f"conversations: {report['conversation_count']}  turns: {report['turn_count']}",
    ]
    for k in report["ks"]:
        key = f"hit@{k}"
        lines.append(
            f"  {key:<8} micro {report['micro_hit'][key]:.4f}  "
            f"macro {report['macro_hit'][key]:.4f}"
        )
    tool_stats = report.get("tool_stats")
    if tool_stats:
        lines.append("  tool                          calls  success")
        for name, entry in tool_stats.items():
            lines.append(
                f"  {name:<28} {entry['first_attempt_calls']:>6}  "
                f"{entry['first_attempt_success_rate']:.3f}"
            )
    return "\n".join(lines)
