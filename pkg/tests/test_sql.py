import datetime as dt
import random

import pytest
from hypothesis import given, settings, strategies as st

from melodex.catalog import Catalog
from melodex.fixtures import make_tracks
from melodex.sql import (
    And,
    Comparison,
    InList,
    Like,
    Not,
    Or,
    SqlError,
    SqlSyntaxError,
    SqlTypeError,
    TrueExpr,
    UnknownColumnError,
    UnsupportedSqlError,
    execute_sql,
    parse_sql,
    pretty_print,
)

from conftest import make_track
from oracles import expected_sql_ids, random_sql_case


@pytest.fixture(scope="module")
def tracks():
    return make_tracks(150, seed=5)


@pytest.fixture(scope="module")
def catalog(tracks):
    return Catalog(tracks)


def run(catalog, text, topk=100):
    return execute_sql(catalog, parse_sql(text), topk)


class TestParsing:
    def test_minimal_query(self):
        query = parse_sql("SELECT * FROM tracks")
        assert query.projection == "*"
        assert isinstance(query.predicate, TrueExpr)
        assert query.order_by is None and query.limit is None

    def test_track_id_projection(self):
        assert parse_sql("SELECT track_id FROM tracks").projection == "track_id"

    def test_other_projection_rejected(self):
        with pytest.raises(UnsupportedSqlError):
            parse_sql("SELECT title FROM tracks")

    def test_case_insensitive_keywords(self):
        query = parse_sql("select * from tracks where tempo > 100 order by tempo desc limit 5")
        assert query.order_by == ("tempo", False)
        assert query.limit == 5

    def test_date_alias(self):
        query = parse_sql("SELECT * FROM tracks WHERE date >= '2020-01-01' ORDER BY date")
        assert query.predicate == Comparison("release_date", ">=", dt.date(2020, 1, 1))
        assert query.order_by == ("release_date", True)

    def test_bare_year_literals(self):
        for literal in ("2015", "'2015'"):
            query = parse_sql(f"SELECT * FROM tracks WHERE release_date > {literal}")
            assert query.predicate == Comparison("release_date", ">", dt.date(2015, 1, 1))

    def test_diamond_normalized(self):
        query = parse_sql("SELECT * FROM tracks WHERE key <> 'C major'")
        assert query.predicate == Comparison("key", "!=", "C major")

    def test_boolean_precedence(self):
        query = parse_sql(
            "SELECT * FROM tracks WHERE popularity > 5 OR tempo > 100 AND tempo < 120"
        )
        assert isinstance(query.predicate, Or)
        assert isinstance(query.predicate.right, And)

    def test_parens_override_precedence(self):
        query = parse_sql(
            "SELECT * FROM tracks WHERE (popularity > 5 OR tempo > 100) AND tempo < 120"
        )
        assert isinstance(query.predicate, And)
        assert isinstance(query.predicate.left, Or)

    def test_not_like_and_not_in(self):
        query = parse_sql(
            "SELECT * FROM tracks WHERE title NOT LIKE 'a%' AND key NOT IN ('C major')"
        )
        assert isinstance(query.predicate.left, Not)
        assert isinstance(query.predicate.left.operand, Like)
        assert isinstance(query.predicate.right, Not)
        assert isinstance(query.predicate.right.operand, InList)

    @pytest.mark.parametrize(
        "text",
        [
            "SELECT * FROM albums",
            "SELECT FROM tracks",
            "SELECT * tracks",
            "SELECT * FROM tracks WHERE",
            "SELECT * FROM tracks WHERE tempo >",
            "SELECT * FROM tracks WHERE tempo 100",
            "SELECT * FROM tracks LIMIT 0",
            "SELECT * FROM tracks LIMIT -3",
            "SELECT * FROM tracks LIMIT many",
            "SELECT * FROM tracks ORDER tempo",
            "SELECT * FROM tracks extra",
            "SELECT * FROM tracks WHERE title NOT 'x'",
            "SELECT * FROM tracks WHERE title LIKE 5",
            "SELECT * FROM tracks WHERE key IN ()",
        ],
    )
    def test_syntax_errors(self, text):
        with pytest.raises(SqlSyntaxError):
            parse_sql(text)

    def test_syntax_error_carries_offset(self):
        with pytest.raises(SqlSyntaxError) as excinfo:
            parse_sql("SELECT * FROM tracks $$")
        assert excinfo.value.offset == 21
        assert "offset 21" in str(excinfo.value)

    @pytest.mark.parametrize(
        "text",
        [
            "SELECT * FROM tracks JOIN albums",
            "SELECT COUNT FROM tracks",
            "SELECT DISTINCT track_id FROM tracks",
            "SELECT * FROM tracks GROUP BY artist",
            "SELECT * FROM tracks WHERE tempo BETWEEN 1 AND 2",
            "SELECT * FROM tracks UNION SELECT * FROM tracks",
            "SELECT * FROM tracks WHERE title IS NULL",
        ],
    )
    def test_unsupported_keywords(self, text):
        with pytest.raises(UnsupportedSqlError):
            parse_sql(text)

    def test_unknown_column(self):
        with pytest.raises(UnknownColumnError):
            parse_sql("SELECT * FROM tracks WHERE genre = 'rock'")
        with pytest.raises(UnknownColumnError):
            parse_sql("SELECT * FROM tracks ORDER BY genre")

    @pytest.mark.parametrize(
        "text",
        [
            "SELECT * FROM tracks WHERE tempo = 'fast'",
            "SELECT * FROM tracks WHERE title = 5",
            "SELECT * FROM tracks WHERE release_date = 99",
            "SELECT * FROM tracks WHERE release_date = 'soon'",
            "SELECT * FROM tracks WHERE release_date = 10.5",
            "SELECT * FROM tracks WHERE tempo LIKE '1%'",
        ],
    )
    def test_type_errors(self, text):
        with pytest.raises(SqlTypeError):
            parse_sql(text)


class TestExecution:
    def test_default_order_popularity_then_id(self):
        tracks = [
            make_track(0, popularity=10),
            make_track(1, popularity=30),
            make_track(2, popularity=30),
            make_track(3, popularity=20),
        ]
        catalog = Catalog(tracks)
        ids = run(catalog, "SELECT * FROM tracks")
        assert ids == [
            tracks[1].track_id,
            tracks[2].track_id,
            tracks[3].track_id,
            tracks[0].track_id,
        ]

    def test_order_by_ties_break_by_id(self):
        tracks = [
            make_track(0, tempo=100.0),
            make_track(1, tempo=100.0),
            make_track(2, tempo=90.0),
        ]
        catalog = Catalog(tracks)
        asc = run(catalog, "SELECT * FROM tracks ORDER BY tempo ASC")
        assert asc == [tracks[2].track_id, tracks[0].track_id, tracks[1].track_id]
        desc = run(catalog, "SELECT * FROM tracks ORDER BY tempo DESC")
        assert desc == [tracks[0].track_id, tracks[1].track_id, tracks[2].track_id]

    def test_string_matching_case_insensitive(self):
        track = make_track(0, artist="Nova Marlow")
        catalog = Catalog([track])
        assert run(catalog, "SELECT * FROM tracks WHERE artist = 'nova marlow'")
        assert run(catalog, "SELECT * FROM tracks WHERE artist = 'NOVA MARLOW'")
        assert run(catalog, "SELECT * FROM tracks WHERE artist LIKE 'NOVA%'")

    def test_like_wildcards(self):
        tracks = [
            make_track(0, title="Golden Hour"),
            make_track(1, title="Golden Hours"),
            make_track(2, title="Silver Hour"),
        ]
        catalog = Catalog(tracks)
        assert set(run(catalog, "SELECT * FROM tracks WHERE title LIKE 'golden%'")) == {
            tracks[0].track_id,
            tracks[1].track_id,
        }
        assert run(catalog, "SELECT * FROM tracks WHERE title LIKE '_olden Hour'") == [
            tracks[0].track_id
        ]
        assert set(run(catalog, "SELECT * FROM tracks WHERE title LIKE '%hour%'")) == {
            tracks[0].track_id,
            tracks[1].track_id,
            tracks[2].track_id,
        }

    def test_like_escapes_regex_metacharacters(self):
        track = make_track(0, title="What? (Remix) [Live]")
        other = make_track(1, title="WhatX Remix Live")
        catalog = Catalog([track, other])
        assert run(catalog, "SELECT * FROM tracks WHERE title LIKE '%(remix)%'") == [
            track.track_id
        ]
        assert run(catalog, "SELECT * FROM tracks WHERE title LIKE 'what?%'") == [
            track.track_id
        ]

    def test_in_list_and_negation(self):
        tracks = [make_track(i, key=("C major", "D minor")[i % 2]) for i in range(4)]
        catalog = Catalog(tracks)
        chosen = set(run(catalog, "SELECT * FROM tracks WHERE key IN ('c MAJOR')"))
        assert chosen == {t.track_id for t in tracks if t.key == "C major"}
        rest = set(run(catalog, "SELECT * FROM tracks WHERE key NOT IN ('c MAJOR')"))
        assert rest == {t.track_id for t in tracks} - chosen

    def test_limit_and_topk_interaction(self, catalog):
        all_ids = run(catalog, "SELECT * FROM tracks", topk=1000)
        assert run(catalog, "SELECT * FROM tracks LIMIT 7", topk=1000) == all_ids[:7]
        assert run(catalog, "SELECT * FROM tracks LIMIT 50", topk=3) == all_ids[:3]
        assert run(catalog, "SELECT * FROM tracks", topk=5) == all_ids[:5]

    def test_empty_result_is_fine(self, catalog):
        assert run(catalog, "SELECT * FROM tracks WHERE popularity > 100000") == []

    def test_topk_must_be_positive(self, catalog):
        with pytest.raises(SqlError):
            execute_sql(catalog, parse_sql("SELECT * FROM tracks"), 0)

    def test_bare_year_comparison_semantics(self):
        inside = make_track(0, release_date=dt.date(2015, 6, 1))
        boundary = make_track(1, release_date=dt.date(2015, 1, 1))
        before = make_track(2, release_date=dt.date(2014, 12, 31))
        catalog = Catalog([inside, boundary, before])
        at_least = set(run(catalog, "SELECT * FROM tracks WHERE release_date >= 2015"))
        assert at_least == {inside.track_id, boundary.track_id}
        strictly_after = set(run(catalog, "SELECT * FROM tracks WHERE release_date > 2015"))
        assert strictly_after == {inside.track_id}


class TestRandomizedOracle:
    def test_500_random_queries(self, tracks, catalog):
        rng = random.Random(99)
        for number in range(500):
            case = random_sql_case(rng, tracks)
            topk = rng.randint(1, 60)
            got = execute_sql(catalog, parse_sql(case.text), topk)
            want = expected_sql_ids(tracks, case, topk)
            assert got == want, f"case {number}: {case.text!r} topk={topk}"

    def test_pretty_print_round_trip(self, tracks, catalog):
        rng = random.Random(7)
        for _ in range(200):
            case = random_sql_case(rng, tracks)
            query = parse_sql(case.text)
            rendered = pretty_print(query)
            assert parse_sql(rendered) == query
            assert execute_sql(catalog, parse_sql(rendered), 25) == execute_sql(
                catalog, query, 25
            )


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10**9), topk=st.integers(min_value=1, max_value=40))
def test_execution_invariants(seed, topk):
    tracks = make_tracks(40, seed=3)
    catalog = Catalog(tracks)
    case = random_sql_case(random.Random(seed), tracks)
    ids = execute_sql(catalog, parse_sql(case.text), topk)
    assert len(ids) == len(set(ids))
    assert set(ids) <= set(catalog.track_ids())
    cap = topk if case.limit is None else min(topk, case.limit)
    assert len(ids) <= cap
