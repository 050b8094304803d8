"""Shared fixtures: a small hand-built catalog and a generated suite."""

from __future__ import annotations

import datetime as dt

import pytest

from melodex.catalog import Catalog, Track
from melodex.fixtures import generate_fixture_suite, load_environment


def make_track(number: int, **overrides) -> Track:
    """A valid track with deterministic defaults, keyed by number."""
    track_id = f"trk{number:05d}".ljust(22, "x")
    fields = {
        "track_id": track_id,
        "title": f"Song {number}",
        "artist": f"Artist {number % 5}",
        "album": f"Album {number % 3}",
        "popularity": (number * 7) % 101,
        "release_date": dt.date(2000, 1, 1) + dt.timedelta(days=number * 37),
        "tempo": 80.0 + (number * 3) % 100,
        "key": ("C major", "A minor", "F# major", "D minor")[number % 4],
        "lyrics": f"la la verse {number} chorus",
        "attributes": ("mellow", "indie") if number % 2 else ("upbeat", "electronic"),
    }
    fields.update(overrides)
    return Track(**fields)


@pytest.fixture
def small_catalog() -> Catalog:
    return Catalog([make_track(i) for i in range(10)])


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """One generated suite shared by the read-only integration tests."""
    root = tmp_path_factory.mktemp("suite")
    generate_fixture_suite(
        root,
        n_tracks=120,
        n_users=16,
        n_conversations=8,
        turns_per_conversation=3,
        seed=11,
    )
    return root


@pytest.fixture(scope="session")
def environment(fixture_dir):
    return load_environment(fixture_dir)
