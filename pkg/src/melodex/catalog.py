"""Track catalog: ingest of line-delimited records and metadata access.

The catalog is a single immutable relational table plus the lowercased
text projections (title, artist, album, lyrics, attributes) that the
sparse and dense retrievers index.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import MelodexError

TRACK_ID_LENGTH = 22

# Columns of the queryable metadata table, in schema order.
SQL_COLUMNS = (
    "track_id",
    "title",
    "artist",
    "album",
    "popularity",
    "release_date",
    "tempo",
    "key",
)
STRING_COLUMNS = frozenset({"track_id", "title", "artist", "album", "key"})
NUMERIC_COLUMNS = frozenset({"popularity", "tempo"})
DATE_COLUMNS = frozenset({"release_date"})

CORPUS_TYPES = ("title", "artist", "album", "lyrics", "attributes")


class CatalogError(MelodexError):
    pass


class DuplicateTrackError(CatalogError):
    def __init__(self, track_id: str, line: int):
        super().__init__(f"duplicate track_id {track_id!r} at line {line}")
        self.track_id = track_id


class MalformedRecordError(CatalogError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"malformed record at line {line}: {reason}")
        self.line = line


@dataclass(frozen=True)
class Track:
    track_id: str
    title: str
    artist: str
    album: str
    popularity: int
    release_date: dt.date
    tempo: float
    key: str
    lyrics: str
    attributes: tuple[str, ...]


def _parse_record(record: dict, line: int) -> Track:
    def fail(reason: str) -> MalformedRecordError:
        return MalformedRecordError(line, reason)

    try:
        track_id = record["track_id"]
        title = record["title"]
        artist = record["artist"]
        album = record["album"]
        popularity = record["popularity"]
        release_date = record["release_date"]
        tempo = record["tempo"]
        key = record["key"]
        lyrics = record["lyrics"]
        attributes = record["attributes"]
    except KeyError as exc:
        raise fail(f"missing field {exc.args[0]!r}") from None

    if not isinstance(track_id, str) or len(track_id) != TRACK_ID_LENGTH:
        raise fail(f"track_id must be a {TRACK_ID_LENGTH}-character string, got {track_id!r}")
    for name, value in (("title", title), ("artist", artist), ("album", album),
                        ("key", key), ("lyrics", lyrics)):
        if not isinstance(value, str):
            raise fail(f"{name} must be a string")
    if not isinstance(popularity, int) or isinstance(popularity, bool) or popularity < 0:
        raise fail(f"popularity must be a non-negative integer, got {popularity!r}")
    try:
        date = dt.date.fromisoformat(release_date)
    except (TypeError, ValueError):
        raise fail(f"release_date must be YYYY-MM-DD, got {release_date!r}") from None
    if not isinstance(tempo, (int, float)) or isinstance(tempo, bool) or not tempo > 0:
        raise fail(f"tempo must be a positive number, got {tempo!r}")
    if not isinstance(attributes, list) or not all(isinstance(a, str) for a in attributes):
        raise fail("attributes must be a list of strings")

    return Track(
        track_id=track_id,
        title=title,
        artist=artist,
        album=album,
        popularity=popularity,
        release_date=date,
        tempo=float(tempo),
        key=key,
        lyrics=lyrics,
        attributes=tuple(a.lower() for a in attributes),
    )


class Catalog:
    """Immutable collection of tracks keyed by track_id."""

    def __init__(self, tracks: Iterable[Track]):
        self._tracks: dict[str, Track] = {}
        for track in tracks:
            if track.track_id in self._tracks:
                raise DuplicateTrackError(track.track_id, line=0)
            self._tracks[track.track_id] = track

    def __len__(self) -> int:
        return len(self._tracks)

    def __contains__(self, track_id: str) -> bool:
        return track_id in self._tracks

    def __iter__(self) -> Iterator[Track]:
        return iter(self._tracks.values())

    def get(self, track_id: str) -> Track:
        try:
            return self._tracks[track_id]
        except KeyError:
            raise CatalogError(f"unknown track_id {track_id!r}") from None

    def track_ids(self) -> list[str]:
        return list(self._tracks)

    def corpus_text(self, track_id: str, corpus: str) -> str:
        """Lowercased text projection used to build retrieval corpora."""
        track = self.get(track_id)
        if corpus == "title":
            return track.title.lower()
        if corpus == "artist":
            return track.artist.lower()
        if corpus == "album":
            return track.album.lower()
        if corpus == "lyrics":
            return track.lyrics.lower()
        if corpus == "attributes":
            return " ".join(track.attributes)
        raise CatalogError(f"unknown corpus {corpus!r}")


def ingest_catalog(source: Iterable[str]) -> Catalog:
    """Build a catalog from an iterable of JSON lines.

    Blank lines are not tolerated: every line must hold one record.
    Errors carry the 1-based line number of the offending record.
    """
    tracks: dict[str, Track] = {}
    for line_no, line in enumerate(source, start=1):
        text = line.strip()
        if not text:
            raise MalformedRecordError(line_no, "empty line")
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedRecordError(line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(record, dict):
            raise MalformedRecordError(line_no, "record is not a JSON object")
        track = _parse_record(record, line_no)
        if track.track_id in tracks:
            raise DuplicateTrackError(track.track_id, line_no)
        tracks[track.track_id] = track
    return Catalog(tracks.values())


def load_catalog(path: str | Path) -> Catalog:
    with open(path, encoding="utf-8") as handle:
        return ingest_catalog(handle)


def track_to_record(track: Track) -> dict:
    """Inverse of ingest for one track, in the catalog file schema."""
    return {
        "track_id": track.track_id,
        "title": track.title,
        "artist": track.artist,
        "album": track.album,
        "popularity": track.popularity,
        "release_date": track.release_date.isoformat(),
        "tempo": track.tempo,
        "key": track.key,
        "lyrics": track.lyrics,
        "attributes": list(track.attributes),
    }
