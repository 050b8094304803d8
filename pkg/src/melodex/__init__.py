"""Melodex: a conversational music recommendation engine built around a
tool-calling planner and a retrieve-then-rerank execution pipeline.

The engine combines boolean SQL filtering, BM25 sparse retrieval, dense
vector retrieval (text-to-item, item-to-item, user-to-item), and
semantic-ID lookup over residual-quantized codes, orchestrated per turn
by either a rule-based or an LLM-backed planner.
"""

from .errors import MelodexError

__all__ = ["MelodexError"]
__version__ = "0.1.0"
