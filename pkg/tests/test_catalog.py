import datetime as dt
import json

import pytest
from hypothesis import given, strategies as st

from melodex.catalog import (
    CORPUS_TYPES,
    CatalogError,
    Catalog,
    DuplicateTrackError,
    MalformedRecordError,
    Track,
    ingest_catalog,
    load_catalog,
    track_to_record,
)

from conftest import make_track


def record_lines(tracks):
    return [json.dumps(track_to_record(t)) for t in tracks]


class TestIngest:
    def test_round_trip(self):
        tracks = [make_track(i) for i in range(6)]
        catalog = ingest_catalog(record_lines(tracks))
        assert len(catalog) == 6
        for track in tracks:
            assert catalog.get(track.track_id) == track

    def test_load_catalog_from_file(self, tmp_path):
        tracks = [make_track(i) for i in range(3)]
        path = tmp_path / "catalog.jsonl"
        path.write_text("\n".join(record_lines(tracks)) + "\n", encoding="utf-8")
        catalog = load_catalog(path)
        assert sorted(catalog.track_ids()) == sorted(t.track_id for t in tracks)

    def test_attributes_lowercased(self):
        record = track_to_record(make_track(0))
        record["attributes"] = ["Mellow", "INDIE"]
        catalog = ingest_catalog([json.dumps(record)])
        assert catalog.get(record["track_id"]).attributes == ("mellow", "indie")

    def test_duplicate_track_id_reports_line(self):
        lines = record_lines([make_track(1), make_track(1)])
        with pytest.raises(DuplicateTrackError) as excinfo:
            ingest_catalog(lines)
        assert "line 2" in str(excinfo.value)

    def test_blank_line_rejected(self):
        lines = record_lines([make_track(0)]) + ["", ""]
        with pytest.raises(MalformedRecordError) as excinfo:
            ingest_catalog(lines)
        assert "line 2" in str(excinfo.value)

    def test_invalid_json_reports_line(self):
        with pytest.raises(MalformedRecordError) as excinfo:
            ingest_catalog(["{not json"])
        assert "line 1" in str(excinfo.value)

    def test_non_object_record(self):
        with pytest.raises(MalformedRecordError):
            ingest_catalog(["[1, 2, 3]"])

    @pytest.mark.parametrize(
        "mutate, fragment",
        [
            (lambda r: r.pop("title"), "missing field"),
            (lambda r: r.update(track_id="short"), "22-character"),
            (lambda r: r.update(track_id=12345), "22-character"),
            (lambda r: r.update(title=7), "title"),
            (lambda r: r.update(popularity=-1), "popularity"),
            (lambda r: r.update(popularity=True), "popularity"),
            (lambda r: r.update(popularity=3.5), "popularity"),
            (lambda r: r.update(release_date="2020-13-40"), "release_date"),
            (lambda r: r.update(release_date=20200101), "release_date"),
            (lambda r: r.update(tempo=0), "tempo"),
            (lambda r: r.update(tempo=-10.0), "tempo"),
            (lambda r: r.update(tempo="fast"), "tempo"),
            (lambda r: r.update(tempo=True), "tempo"),
            (lambda r: r.update(attributes="mellow"), "attributes"),
            (lambda r: r.update(attributes=["ok", 3]), "attributes"),
            (lambda r: r.update(lyrics=None), "lyrics"),
        ],
    )
    def test_malformed_records(self, mutate, fragment):
        record = track_to_record(make_track(0))
        mutate(record)
        with pytest.raises(MalformedRecordError) as excinfo:
            ingest_catalog([json.dumps(record)])
        assert fragment in str(excinfo.value)

    def test_integer_tempo_accepted_as_float(self):
        record = track_to_record(make_track(0))
        record["tempo"] = 120
        catalog = ingest_catalog([json.dumps(record)])
        track = catalog.get(record["track_id"])
        assert track.tempo == 120.0 and isinstance(track.tempo, float)


class TestCatalogAccess:
    def test_get_unknown_raises(self, small_catalog):
        with pytest.raises(CatalogError):
            small_catalog.get("missing" + "x" * 15)

    def test_contains_and_len(self, small_catalog):
        assert len(small_catalog) == 10
        some_id = small_catalog.track_ids()[0]
        assert some_id in small_catalog
        assert "absent" not in small_catalog

    def test_iter_yields_tracks(self, small_catalog):
        seen = {track.track_id for track in small_catalog}
        assert seen == set(small_catalog.track_ids())

    def test_constructor_rejects_duplicates(self):
        with pytest.raises(DuplicateTrackError):
            Catalog([make_track(0), make_track(0)])


class TestCorpusText:
    def test_projections_lowercase(self):
        track = make_track(
            0, title="LOUD Title", artist="The BAND", album="Big ALBUM",
            lyrics="Shouted WORDS", attributes=("quiet", "loud"),
        )
        catalog = Catalog([track])
        tid = track.track_id
        assert catalog.corpus_text(tid, "title") == "loud title"
        assert catalog.corpus_text(tid, "artist") == "the band"
        assert catalog.corpus_text(tid, "album") == "big album"
        assert catalog.corpus_text(tid, "lyrics") == "shouted words"
        assert catalog.corpus_text(tid, "attributes") == "quiet loud"

    def test_unknown_corpus_raises(self, small_catalog):
        tid = small_catalog.track_ids()[0]
        with pytest.raises(CatalogError):
            small_catalog.corpus_text(tid, "genre")

    def test_corpus_types_constant(self):
        assert CORPUS_TYPES == ("title", "artist", "album", "lyrics", "attributes")


_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")), min_size=0, max_size=30
)


@given(
    title=_text,
    artist=_text,
    album=_text,
    key=_text,
    lyrics=_text,
    popularity=st.integers(min_value=0, max_value=10**6),
    days=st.integers(min_value=0, max_value=40000),
    tempo=st.floats(min_value=0.01, max_value=1000.0, allow_nan=False),
    attributes=st.lists(_text, max_size=5),
    number=st.integers(min_value=0, max_value=10**9),
)
def test_track_record_round_trip(
    title, artist, album, key, lyrics, popularity, days, tempo, attributes, number
):
    track = Track(
        track_id=f"{number:022d}",
        title=title,
        artist=artist,
        album=album,
        popularity=popularity,
        release_date=dt.date(1900, 1, 1) + dt.timedelta(days=days),
        tempo=tempo,
        key=key,
        lyrics=lyrics,
        attributes=tuple(a.lower() for a in attributes),
    )
    restored = ingest_catalog([json.dumps(track_to_record(track))])
    assert restored.get(track.track_id) == track
