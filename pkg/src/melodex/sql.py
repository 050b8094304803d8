"""SQL-subset parser and executor for boolean filtering over the catalog.

Accepted grammar:

    SELECT (* | track_id) FROM tracks
        [WHERE expr] [ORDER BY column [ASC | DESC]] [LIMIT n]

    expr := expr OR expr | expr AND expr | NOT expr | ( expr )
          | column (= | != | <> | < | <= | > | >=) literal
          | column [NOT] LIKE string
          | column [NOT] IN ( literal, ... )

String comparisons are case-insensitive. Date literals are ISO
YYYY-MM-DD; a bare year (quoted or not) normalizes to YYYY-01-01.
Anything outside the subset (JOIN, GROUP BY, subqueries, aggregates)
is rejected at parse time.
"""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass
from typing import Callable, Union

from .catalog import (
    Catalog,
    DATE_COLUMNS,
    NUMERIC_COLUMNS,
    SQL_COLUMNS,
    STRING_COLUMNS,
    Track,
)
from .errors import MelodexError


class SqlError(MelodexError):
    pass


class SqlSyntaxError(SqlError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownColumnError(SqlError):
    def __init__(self, column: str, offset: int):
        super().__init__(f"unknown column {column!r} (at offset {offset})")
        self.column = column
        self.offset = offset


class SqlTypeError(SqlError):
    pass


class UnsupportedSqlError(SqlError):
    pass


# Literal value attached to a comparison. Dates are normalized to
# datetime.date during parsing, so the executor never re-parses text.
Literal = Union[int, float, str, dt.date]


@dataclass(frozen=True)
class TrueExpr:
    pass


@dataclass(frozen=True)
class Comparison:
    column: str
    op: str  # one of = != < <= > >=
    value: Literal


@dataclass(frozen=True)
class Like:
    column: str
    pattern: str


@dataclass(frozen=True)
class InList:
    column: str
    values: tuple[Literal, ...]


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


Expr = Union[TrueExpr, Comparison, Like, InList, Not, And, Or]


@dataclass(frozen=True)
class SqlQuery:
    projection: str  # "*" or "track_id"
    predicate: Expr
    order_by: tuple[str, bool] | None  # (column, ascending)
    limit: int | None


# ---------------------------------------------------------------------------
# Lexer

_KEYWORDS = {
    "select", "from", "where", "and", "or", "not", "like", "in",
    "order", "by", "asc", "desc", "limit",
}
# Recognized so we can reject them with a clear message instead of a
# generic syntax error.
_UNSUPPORTED_KEYWORDS = {
    "join", "inner", "outer", "left", "right", "on", "group", "having",
    "union", "distinct", "count", "sum", "avg", "min", "max", "as",
    "offset", "between", "is", "null", "exists", "case",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+\.\d+|\d+)
  | (?P<string>'(?:[^'])*')
  | (?P<op><=|>=|!=|<>|=|<|>)
  | (?P<punct>[(),*])
  | (?P<word>[A-Za-z_][A-Za-z_0-9]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # keyword | ident | number | string | op | punct | eof
    text: str
    value: Literal | None
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise SqlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        pos = match.end()
        if match.lastgroup == "ws":
            continue
        start = match.start()
        raw = match.group()
        if match.lastgroup == "number":
            value: Literal = float(raw) if "." in raw else int(raw)
            tokens.append(_Token("number", raw, value, start))
        elif match.lastgroup == "string":
            tokens.append(_Token("string", raw, raw[1:-1], start))
        elif match.lastgroup == "op":
            tokens.append(_Token("op", raw, None, start))
        elif match.lastgroup == "punct":
            tokens.append(_Token("punct", raw, None, start))
        else:
            lower = raw.lower()
            if lower in _KEYWORDS:
                tokens.append(_Token("keyword", lower, None, start))
            elif lower in _UNSUPPORTED_KEYWORDS:
                raise UnsupportedSqlError(
                    f"unsupported SQL construct {raw!r} (at offset {start})"
                )
            else:
                tokens.append(_Token("ident", lower, None, start))
    tokens.append(_Token("eof", "", None, len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Parser

_COLUMN_ALIASES = {"date": "release_date"}
_BARE_YEAR_RE = re.compile(r"^\d{4}$")


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        token = self.current
        self.pos += 1
        return token

    def expect_keyword(self, word: str) -> _Token:
        token = self.current
        if token.kind != "keyword" or token.text != word:
            raise SqlSyntaxError(f"expected {word.upper()}", token.offset)
        return self.advance()

    def expect_punct(self, char: str) -> _Token:
        token = self.current
        if token.kind != "punct" or token.text != char:
            raise SqlSyntaxError(f"expected {char!r}", token.offset)
        return self.advance()

    def at_keyword(self, word: str) -> bool:
        return self.current.kind == "keyword" and self.current.text == word

    # -- grammar productions ------------------------------------------------

    def parse_query(self) -> SqlQuery:
        self.expect_keyword("select")
        projection = self._parse_projection()
        self.expect_keyword("from")
        table = self.current
        if table.kind != "ident" or table.text != "tracks":
            raise SqlSyntaxError("expected table name 'tracks'", table.offset)
        self.advance()

        predicate: Expr = TrueExpr()
        if self.at_keyword("where"):
            self.advance()
            predicate = self._parse_or()

        order_by = None
        if self.at_keyword("order"):
            self.advance()
            self.expect_keyword("by")
            column = self._parse_column()
            ascending = True
            if self.at_keyword("asc"):
                self.advance()
            elif self.at_keyword("desc"):
                self.advance()
                ascending = False
            order_by = (column, ascending)

        limit = None
        if self.at_keyword("limit"):
            self.advance()
            token = self.current
            if token.kind != "number" or not isinstance(token.value, int) or token.value < 1:
                raise SqlSyntaxError("LIMIT requires a positive integer", token.offset)
            limit = token.value
            self.advance()

        end = self.current
        if end.kind != "eof":
            raise SqlSyntaxError(f"unexpected trailing input {end.text!r}", end.offset)
        return SqlQuery(projection=projection, predicate=predicate,
                        order_by=order_by, limit=limit)

    def _parse_projection(self) -> str:
        token = self.current
        if token.kind == "punct" and token.text == "*":
            self.advance()
            return "*"
        if token.kind == "ident" and token.text == "track_id":
            self.advance()
            return "track_id"
        if token.kind == "ident" and token.text in SQL_COLUMNS:
            raise UnsupportedSqlError(
                f"projection must be * or track_id, got {token.text!r} "
                f"(at offset {token.offset})"
            )
        raise SqlSyntaxError("expected * or track_id", token.offset)

    def _parse_column(self) -> str:
        token = self.current
        if token.kind != "ident":
            raise SqlSyntaxError("expected column name", token.offset)
        name = _COLUMN_ALIASES.get(token.text, token.text)
        if name not in SQL_COLUMNS:
            raise UnknownColumnError(token.text, token.offset)
        self.advance()
        return name

    def _parse_or(self) -> Expr:
        left = self._parse_and()
        while self.at_keyword("or"):
            self.advance()
            left = Or(left, self._parse_and())
        return left

    def _parse_and(self) -> Expr:
        left = self._parse_unary()
        while self.at_keyword("and"):
            self.advance()
            left = And(left, self._parse_unary())
        return left

    def _parse_unary(self) -> Expr:
        if self.at_keyword("not"):
            self.advance()
            return Not(self._parse_unary())
        if self.current.kind == "punct" and self.current.text == "(":
            self.advance()
            inner = self._parse_or()
            self.expect_punct(")")
            return inner
        return self._parse_comparison()

    def _parse_comparison(self) -> Expr:
        column = self._parse_column()
        token = self.current
        negated = False
        if self.at_keyword("not"):
            self.advance()
            negated = True
            token = self.current
            if not (self.at_keyword("like") or self.at_keyword("in")):
                raise SqlSyntaxError("expected LIKE or IN after NOT", token.offset)

        if self.at_keyword("like"):
            self.advance()
            pattern = self.current
            if pattern.kind != "string":
                raise SqlSyntaxError("LIKE requires a string pattern", pattern.offset)
            if column not in STRING_COLUMNS:
                raise SqlTypeError(f"LIKE is only valid on string columns, not {column!r}")
            self.advance()
            expr: Expr = Like(column, str(pattern.value))
            return Not(expr) if negated else expr

        if self.at_keyword("in"):
            self.advance()
            self.expect_punct("(")
            values: list[Literal] = []
            while True:
                values.append(self._parse_literal(column))
                if self.current.kind == "punct" and self.current.text == ",":
                    self.advance()
                    continue
                break
            self.expect_punct(")")
            expr = InList(column, tuple(values))
            return Not(expr) if negated else expr

        if token.kind != "op":
            raise SqlSyntaxError("expected comparison operator", token.offset)
        op = "!=" if token.text == "<>" else token.text
        self.advance()
        value = self._parse_literal(column)
        return Comparison(column, op, value)

    def _parse_literal(self, column: str) -> Literal:
        token = self.current
        if token.kind not in ("number", "string"):
            raise SqlSyntaxError("expected literal value", token.offset)
        self.advance()
        return _coerce_literal(column, token)


def _coerce_literal(column: str, token: _Token) -> Literal:
    """Type-check a literal against its column, normalizing dates."""
    value = token.value
    if column in NUMERIC_COLUMNS:
        if not isinstance(value, (int, float)):
            raise SqlTypeError(
                f"column {column!r} is numeric but literal is {token.text}"
            )
        return value
    if column in DATE_COLUMNS:
        if isinstance(value, int) and 1000 <= value <= 9999:
            return dt.date(value, 1, 1)
        if isinstance(value, str):
            text = value.strip()
            if _BARE_YEAR_RE.match(text):
                return dt.date(int(text), 1, 1)
            try:
                return dt.date.fromisoformat(text)
            except ValueError:
                raise SqlTypeError(
                    f"column {column!r} needs a YYYY-MM-DD or year literal, got {value!r}"
                ) from None
        raise SqlTypeError(f"column {column!r} needs a date literal, got {token.text}")
    # string column
    if not isinstance(value, str):
        raise SqlTypeError(f"column {column!r} is text but literal is {token.text}")
    return value


def parse_sql(text: str) -> SqlQuery:
    """Parse a query in the supported SQL subset, raising on anything else."""
    return _Parser(_tokenize(text)).parse_query()


# ---------------------------------------------------------------------------
# Pretty printer

def _render_literal(value: Literal) -> str:
    if isinstance(value, dt.date):
        return f"'{value.isoformat()}'"
    if isinstance(value, str):
        return "'" + value + "'"
    return repr(value)


def _render_expr(expr: Expr) -> str:
    if isinstance(expr, TrueExpr):
        return ""
    if isinstance(expr, Comparison):
        return f"{expr.column} {expr.op} {_render_literal(expr.value)}"
    if isinstance(expr, Like):
        return f"{expr.column} LIKE {_render_literal(expr.pattern)}"
    if isinstance(expr, InList):
        inner = ", ".join(_render_literal(v) for v in expr.values)
        return f"{expr.column} IN ({inner})"
    if isinstance(expr, Not):
        return f"NOT ({_render_expr(expr.operand)})"
    if isinstance(expr, And):
        return f"({_render_expr(expr.left)} AND {_render_expr(expr.right)})"
    if isinstance(expr, Or):
        return f"({_render_expr(expr.left)} OR {_render_expr(expr.right)})"
    raise SqlError(f"cannot render {expr!r}")


def pretty_print(query: SqlQuery) -> str:
    """Canonical rendering; parsing it back yields an equal SqlQuery."""
    parts = [f"SELECT {query.projection} FROM tracks"]
    if not isinstance(query.predicate, TrueExpr):
        parts.append(f"WHERE {_render_expr(query.predicate)}")
    if query.order_by is not None:
        column, ascending = query.order_by
        parts.append(f"ORDER BY {column} {'ASC' if ascending else 'DESC'}")
    if query.limit is not None:
        parts.append(f"LIMIT {query.limit}")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Executor

def _like_regex(pattern: str) -> re.Pattern:
    out = []
    for char in pattern.lower():
        if char == "%":
            out.append(".*")
        elif char == "_":
            out.append(".")
        else:
            out.append(re.escape(char))
    return re.compile("".join(out), re.DOTALL)


def _column_getter(column: str) -> Callable[[Track], Literal]:
    if column in STRING_COLUMNS:
        return lambda track, c=column: getattr(track, c).lower()
    return lambda track, c=column: getattr(track, c)


_OPS: dict[str, Callable] = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def compile_predicate(expr: Expr) -> Callable[[Track], bool]:
    """Compile an expression tree into a closure over Track."""
    if isinstance(expr, TrueExpr):
        return lambda track: True
    if isinstance(expr, Comparison):
        getter = _column_getter(expr.column)
        op = _OPS[expr.op]
        value = expr.value.lower() if isinstance(expr.value, str) else expr.value
        return lambda track: op(getter(track), value)
    if isinstance(expr, Like):
        getter = _column_getter(expr.column)
        regex = _like_regex(expr.pattern)
        return lambda track: regex.fullmatch(getter(track)) is not None
    if isinstance(expr, InList):
        getter = _column_getter(expr.column)
        values = frozenset(
            v.lower() if isinstance(v, str) else v for v in expr.values
        )
        return lambda track: getter(track) in values
    if isinstance(expr, Not):
        inner = compile_predicate(expr.operand)
        return lambda track: not inner(track)
    if isinstance(expr, And):
        left, right = compile_predicate(expr.left), compile_predicate(expr.right)
        return lambda track: left(track) and right(track)
    if isinstance(expr, Or):
        left, right = compile_predicate(expr.left), compile_predicate(expr.right)
        return lambda track: left(track) or right(track)
    raise SqlError(f"cannot compile {expr!r}")


def execute_sql(catalog: Catalog, query: SqlQuery, topk: int) -> list[str]:
    """Run a parsed query and return ranked track ids.

    Without ORDER BY the ordering is popularity descending; ties always
    break by track_id ascending, so output is fully deterministic.
    """
    if topk < 1:
        raise SqlError("topk must be >= 1")
    predicate = compile_predicate(query.predicate)
    rows = [track for track in catalog if predicate(track)]
    rows.sort(key=lambda t: t.track_id)
    if query.order_by is not None:
        column, ascending = query.order_by
        getter = _column_getter(column)
        rows.sort(key=getter, reverse=not ascending)
    else:
        rows.sort(key=lambda t: t.popularity, reverse=True)
    cap = topk if query.limit is None else min(topk, query.limit)
    return [track.track_id for track in rows[:cap]]
