"""Synthetic data: a catalog, embeddings, interactions, trained
artifacts, and recoverable evaluation conversations, all derived from
one seed.

The generator writes every artifact to disk first and then rebuilds
the serving environment by loading those files, so whatever the
conversations were simulated against is byte-for-byte what a later
`load_environment` sees. Each conversation turn is sampled until the
rule planner maps its query to the intended retrieval tool and that
call returns a non-empty pool; the ground truth is drawn from that
pool, which makes every turn recoverable by construction.
"""

from __future__ import annotations

import datetime as dt
import json
import random
import string
from dataclasses import dataclass
from pathlib import Path

from .bm25 import Bm25Index, build_corpus_indexes
from .bpr import BprConfig, chronological_split, export_cf_tables, interactions_from_dates, load_interactions, train_bpr
from .catalog import Catalog, Track, load_catalog, track_to_record
from .errors import MelodexError
from .evaluation import EvalConversation, EvalTurn, save_conversations
from .pipeline import FailureInjector, ToolEnv
from .planner import (
    COLD_START,
    KNOWN_USER,
    ConversationState,
    RuleBasedPlanner,
    UserProfile,
    rule_based_plan,
)
from .semantic import (
    SID_MODALITIES,
    RvqConfig,
    SemanticIndex,
    build_semantic_index,
    encode_table,
    load_sidecar,
    save_model,
    train_rvq,
    write_sidecar,
)
from .service import AgentEngine
from .vectors import (
    TEXT_VECTOR_DBS,
    EmbeddingTable,
    HashingEmbedder,
    ProviderRegistry,
    VectorStores,
    load_embedding_table,
)

CATALOG_FILE = "catalog.jsonl"
INTERACTIONS_FILE = "interactions.jsonl"
CONVERSATIONS_FILE = "conversations.jsonl"
MANIFEST_FILE = "manifest.json"
CF_USERS_FILE = "cf-users.jsonl"
CF_ITEMS_FILE = "cf-items.jsonl"
SIDECAR_FILE = "semantic-ids.jsonl"


def embeddings_file(vector_db: str) -> str:
    return f"embeddings-{vector_db}.jsonl"


def rvq_model_file(modality: str) -> str:
    return f"rvq-{modality}.json"


class FixtureError(MelodexError):
    pass


# ---------------------------------------------------------------------------
# Word pools

_FIRST_NAMES = (
    "Nova", "Iris", "Felix", "Marlow", "Juniper", "Silas", "Wren", "Otis",
    "Lena", "Rufus", "Clara", "Dmitri", "Paloma", "Ezra", "Sable", "Theo",
    "Imogen", "Caspian", "Odessa", "Lionel", "Freya", "Gideon", "Mireille",
    "Anders", "Beatrix", "Cosmo", "Delphine", "Emeric", "Fable", "Greta",
)

_LAST_NAMES = (
    "Marlow", "Vance", "Okafor", "Lindqvist", "Serrano", "Whitfield",
    "Nakamura", "Devereaux", "Holloway", "Kovacs", "Ashworth", "Bellamy",
    "Castellan", "Duval", "Eastman", "Fontaine", "Garland", "Hawthorne",
    "Ivanov", "Jardine", "Kessler", "Lockwood", "Mercer", "Navarro",
    "Oakes", "Pemberton", "Quill", "Rosales", "Sterling", "Thorne",
)

# Title and album words stay clear of planner cue words ("album", "by",
# "from", possessives, years, bpm) so a quoted title never smuggles a
# corpus hint into the query.
_TITLE_WORDS = (
    "Golden", "Velvet", "Midnight", "Paper", "Hollow", "Neon", "Quiet",
    "Scarlet", "Winter", "Ember", "Glass", "Silver", "Wild", "Broken",
    "Electric", "Lantern", "Harbor", "Meadow", "Thunder", "Crystal",
    "Garden", "Mirror", "Shadow", "Summer", "Copper", "Aurora",
    "Cedar", "Drift", "Echo", "Fern", "Gale", "Haven", "Indigo",
)

_ALBUM_WORDS = (
    "Harvest", "Voyage", "Reverie", "Monolith", "Tides", "Afterglow",
    "Parallax", "Bloom", "Static", "Horizon", "Vesper", "Atlas",
    "Solstice", "Mosaic", "Cascade", "Prism", "Ballads", "Sketches",
    "Fragments", "Odyssey", "Tapestry", "Embers", "Latitudes", "Relics",
)

# Descriptive tags double as query words for dense retrieval, so none
# of them may collide with the planner's stopwords or cue words.
_TAGS = (
    "mellow", "dreamy", "upbeat", "acoustic", "ambient", "electronic",
    "jazzy", "soulful", "gritty", "funky", "cinematic", "hypnotic",
    "breezy", "moody", "anthemic", "wistful", "shimmering", "driving",
    "lush", "orchestral", "synthpop", "downtempo", "folk", "house",
    "techno", "disco", "grunge", "lofi", "psychedelic", "baroque",
    "tropical", "industrial", "minimal", "bluesy", "twangy", "ethereal",
)

_LYRIC_WORDS = (
    "river", "stone", "ashes", "window", "highway", "candle", "letter",
    "ocean", "wire", "rooftop", "season", "stranger", "whisper", "engine",
    "garden", "shoreline", "ember", "compass", "train", "mirror",
    "valley", "lantern", "sparrow", "thread", "harbor", "winter", "dust",
)

_KEYS = tuple(
    f"{note} {mode}"
    for note in ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
    for mode in ("major", "minor")
)

_AGE_GROUPS = ("18-24", "25-34", "35-44", "45-54", "55+")
_GENDERS = ("female", "male", "nonbinary", "unknown")
_COUNTRIES = ("US", "GB", "DE", "JP", "BR", "SE", "KR", "MX")

_ID_ALPHABET = string.ascii_letters + string.digits


# ---------------------------------------------------------------------------
# Catalog generation

def _track_id(rng: random.Random, taken: set[str]) -> str:
    while True:
        candidate = "".join(rng.choices(_ID_ALPHABET, k=22))
        if candidate not in taken:
            taken.add(candidate)
            return candidate


def make_tracks(n_tracks: int, seed: int = 0) -> list[Track]:
    """Deterministic synthetic tracks with plausible metadata."""
    if n_tracks < 1:
        raise FixtureError("n_tracks must be >= 1")
    rng = random.Random(seed)
    n_artists = max(4, n_tracks // 6)
    artists = []
    seen_names: set[str] = set()
    while len(artists) < n_artists:
        name = f"{rng.choice(_FIRST_NAMES)} {rng.choice(_LAST_NAMES)}"
        if name in seen_names:
            continue
        seen_names.add(name)
        albums = [
            " ".join(rng.sample(_ALBUM_WORDS, rng.randint(1, 2)))
            for _ in range(rng.randint(1, 3))
        ]
        artists.append((name, albums))

    epoch = dt.date(1980, 1, 1)
    span = (dt.date(2024, 12, 31) - epoch).days
    taken: set[str] = set()
    tracks = []
    for _ in range(n_tracks):
        artist, albums = rng.choice(artists)
        title = " ".join(rng.sample(_TITLE_WORDS, rng.randint(2, 3)))
        lyrics = " ".join(rng.choices(_LYRIC_WORDS, k=rng.randint(18, 36)))
        tracks.append(
            Track(
                track_id=_track_id(rng, taken),
                title=title,
                artist=artist,
                album=rng.choice(albums),
                popularity=rng.randint(0, 100),
                release_date=epoch + dt.timedelta(days=rng.randrange(span + 1)),
                tempo=round(rng.uniform(62.0, 178.0), 1),
                key=rng.choice(_KEYS),
                lyrics=lyrics,
                attributes=tuple(sorted(rng.sample(_TAGS, rng.randint(3, 6)))),
            )
        )
    return tracks


def _space_text(track: Track, vector_db: str) -> str:
    """The text whose embedding stands in for each modality's vector."""
    tags = " ".join(track.attributes)
    if vector_db == "metadata":
        return f"{track.title} {track.artist} {track.album}"
    if vector_db == "lyrics":
        return track.lyrics
    if vector_db == "attributes":
        return tags
    if vector_db == "audio":
        bucket = int(track.tempo) // 10
        return f"{tags} tempo{bucket} key{track.key.replace(' ', '').lower()}"
    if vector_db == "image":
        return f"{track.artist} {track.album} artwork"
    raise FixtureError(f"unknown vector db {vector_db!r}")


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")


def make_interactions(
    tracks: list[Track], n_users: int, seed: int = 0
) -> list[tuple[str, str, dt.date]]:
    """Per-user listening events clustered around two favorite tags."""
    if n_users < 1:
        raise FixtureError("n_users must be >= 1")
    rng = random.Random(seed)
    by_tag: dict[str, list[Track]] = {}
    for track in tracks:
        for tag in track.attributes:
            by_tag.setdefault(tag, []).append(track)

    records = []
    for user_no in range(n_users):
        user_id = f"user-{user_no:04d}"
        favored = rng.sample(sorted(by_tag), 2)
        candidates = {t.track_id: t for tag in favored for t in by_tag[tag]}
        pool = sorted(candidates)
        count = min(len(pool), rng.randint(12, 20))
        chosen = rng.sample(pool, count)
        start = dt.date(2023, 1, 1) + dt.timedelta(days=rng.randrange(120))
        for offset, track_id in enumerate(chosen):
            records.append((user_id, track_id, start + dt.timedelta(days=offset)))
    return records


# ---------------------------------------------------------------------------
# Environment assembly

@dataclass
class Environment:
    """Everything the service and harness need, loaded and wired."""

    catalog: Catalog
    bm25_indexes: dict[str, Bm25Index]
    stores: VectorStores
    providers: ProviderRegistry
    semantic_index: SemanticIndex
    tool_env: ToolEnv
    manifest: dict

    @property
    def final_k(self) -> int:
        return int(self.manifest.get("final_k", 20))


def load_environment(
    fixture_dir: str | Path, injector: FailureInjector | None = None
) -> Environment:
    """Rebuild the serving environment from a generated fixture tree."""
    root = Path(fixture_dir)
    manifest_path = root / MANIFEST_FILE
    if not manifest_path.exists():
        raise FixtureError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    catalog = load_catalog(root / CATALOG_FILE)
    bm25_indexes = build_corpus_indexes(catalog)

    item_tables: dict[str, EmbeddingTable] = {
        db: load_embedding_table(str(root / embeddings_file(db)), db)
        for db in TEXT_VECTOR_DBS
    }
    item_tables["cf"] = load_embedding_table(str(root / CF_ITEMS_FILE), "cf")
    user_table = load_embedding_table(str(root / CF_USERS_FILE), "cf-users")
    stores = VectorStores(item_tables=item_tables, user_table=user_table)

    providers = ProviderRegistry()
    embedder = HashingEmbedder(
        dimension=int(manifest["dimension"]), seed=int(manifest["embed_seed"])
    )
    for db in TEXT_VECTOR_DBS:
        providers.register("text", db, embedder)

    with open(root / SIDECAR_FILE, encoding="utf-8") as handle:
        encodings = load_sidecar(handle)
    semantic_index = build_semantic_index(encodings)

    tool_env = ToolEnv(
        catalog, bm25_indexes, stores, providers, semantic_index, injector=injector
    )
    return Environment(
        catalog=catalog,
        bm25_indexes=bm25_indexes,
        stores=stores,
        providers=providers,
        semantic_index=semantic_index,
        tool_env=tool_env,
        manifest=manifest,
    )


def default_engine(environment: Environment, final_k: int | None = None) -> AgentEngine:
    k = environment.final_k if final_k is None else final_k
    return AgentEngine(
        environment.catalog,
        environment.tool_env,
        environment.semantic_index,
        RuleBasedPlanner(topk=k),
    )


# ---------------------------------------------------------------------------
# Conversation simulation

_KINDS = (
    ("artist", 16),
    ("title", 14),
    ("album", 8),
    ("tempo", 14),
    ("year", 12),
    ("recent", 6),
    ("popular", 6),
    ("attributes", 14),
    ("similar", 10),
)

_EXPECTED_TOOL = {
    "artist": "bm25",
    "title": "bm25",
    "album": "bm25",
    "tempo": "sql",
    "year": "sql",
    "recent": "sql",
    "popular": "sql",
    "attributes": "text_to_item_similarity",
    "similar": "item_to_item_similarity",
}


def _render_query(kind: str, rng: random.Random, tracks: list[Track]) -> str:
    track = rng.choice(tracks)
    if kind == "artist":
        template = rng.choice(
            (
                "Play something by {artist}",
                "Got any tracks by {artist}?",
                "Play the {artist} discography",
                "Put on some songs by {artist}",
            )
        )
        return template.format(artist=track.artist)
    if kind == "title":
        template = rng.choice(
            ('Play "{title}"', 'Queue up "{title}" for me', 'Can you play "{title}"?')
        )
        return template.format(title=track.title)
    if kind == "album":
        template = rng.choice(
            ("Play the album {album}", "Put on the album {album}")
        )
        return template.format(album=track.album)
    if kind == "tempo":
        style = rng.choice(("over", "under", "around"))
        if style == "over":
            bpm = max(55, int(track.tempo) - rng.randint(1, 8))
            return f"something over {bpm} bpm"
        if style == "under":
            bpm = int(track.tempo) + rng.randint(1, 8)
            return f"tracks under {bpm} bpm please"
        return f"songs around {int(round(track.tempo))} bpm"
    if kind == "year":
        year = track.release_date.year
        template = rng.choice(
            (
                f"tracks from {year}",
                f"songs since {year}",
                f"anything before {year + 1}",
                f"music from {year}",
            )
        )
        return template
    if kind == "recent":
        return rng.choice(("play recent releases", "something new please"))
    if kind == "popular":
        return rng.choice(("play popular stuff", "give me the top hits"))
    if kind == "attributes":
        tags = list(track.attributes)
        first = rng.choice(tags)
        second = rng.choice([tag for tag in tags if tag != first] or tags)
        template = rng.choice(
            (
                "something {a} and {b}",
                "feeling {a} and {b} tonight",
                "play me something {a}",
            )
        )
        return template.format(a=first, b=second)
    if kind == "similar":
        return rng.choice(
            (
                "more like that please",
                "something similar please",
                "give me the same as that",
            )
        )
    raise FixtureError(f"unknown query kind {kind!r}")


def _sample_profile(
    rng: random.Random, known_users: tuple[str, ...]
) -> UserProfile:
    if known_users and rng.random() < 0.5:
        return UserProfile(
            user_type=KNOWN_USER,
            user_id=rng.choice(known_users),
            age_group=rng.choice(_AGE_GROUPS),
            gender=rng.choice(_GENDERS),
            country=rng.choice(_COUNTRIES),
        )
    return UserProfile(
        user_type=COLD_START,
        age_group=rng.choice(_AGE_GROUPS),
        gender=rng.choice(_GENDERS),
        country=rng.choice(_COUNTRIES),
    )


def simulate_conversations(
    environment: Environment,
    n_conversations: int,
    turns_per_conversation: int,
    seed: int,
    final_k: int = 20,
) -> list[EvalConversation]:
    """Drive the real engine and record recoverable ground truth.

    Every query is resampled until the rule planner's retrieval call
    matches the intended tool and returns a non-empty pool; the truth
    is drawn from that pool. Reranking preserves pool membership, so
    replaying the same queries recovers every truth at final_k.
    """
    rng = random.Random(seed)
    tracks = sorted(environment.catalog, key=lambda t: t.track_id)
    known_users = (
        environment.stores.user_table.ids
        if environment.stores.user_table is not None
        else ()
    )
    engine = default_engine(environment, final_k)
    kinds = [kind for kind, _ in _KINDS]
    weights = [weight for _, weight in _KINDS]

    conversations = []
    for conv_no in range(n_conversations):
        profile = _sample_profile(rng, known_users)
        state = ConversationState()
        turns = []
        for _ in range(turns_per_conversation):
            turn = None
            for _ in range(50):
                kind = rng.choices(kinds, weights=weights, k=1)[0]
                if kind == "similar" and state.last_recommended() is None:
                    continue
                query = _render_query(kind, rng, tracks)
                output = rule_based_plan(query, state, profile, topk=final_k)
                call = output.plan.calls[0]
                if call.tool_name != _EXPECTED_TOOL[kind]:
                    continue
                pool = environment.tool_env.run_call(call)
                if not pool:
                    continue
                truth = rng.choice(pool)
                turn = EvalTurn(
                    query=query,
                    truth=truth,
                    label=call.tool_name,
                    retrieval_call=call.render(),
                )
                break
            if turn is None:
                raise FixtureError(
                    f"could not sample a recoverable turn for conversation {conv_no}"
                )
            result = engine.run_turn(profile, state, turn.query, final_k)
            recommended = [track.track_id for track in result.recommendations]
            if turn.truth not in recommended:
                raise FixtureError(
                    f"turn lost its truth during execution: {turn.query!r}"
                )
            state.append(result)
            turns.append(turn)
        conversations.append(
            EvalConversation(
                conversation_id=f"conv-{conv_no:03d}",
                profile=profile,
                turns=tuple(turns),
            )
        )
    return conversations


# ---------------------------------------------------------------------------
# Full suite generation

def generate_fixture_suite(
    out_dir: str | Path,
    n_tracks: int = 240,
    n_users: int = 40,
    n_conversations: int = 30,
    turns_per_conversation: int = 4,
    seed: int = 0,
    final_k: int = 20,
) -> dict:
    """Write the complete fixture tree and return its manifest.

    Artifacts land on disk before any conversation is simulated, and
    the simulation runs against the loaded files, so generation and
    later loads agree exactly.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    manifest = {
        "seed": seed,
        "dimension": 64,
        "embed_seed": seed + 3,
        "n_tracks": n_tracks,
        "n_users": n_users,
        "n_conversations": n_conversations,
        "turns_per_conversation": turns_per_conversation,
        "final_k": final_k,
        "boundary_fraction": 0.8,
        "bpr": {
            "dimension": 32,
            "learning_rate": 0.05,
            "regularization": 0.002,
            "epochs": 20,
            "negatives_per_positive": 1,
            "rng_seed": seed + 1,
        },
        "rvq": {
            "commitment_weight": 0.25,
            "kmeans_iters": 25,
            "rng_seed": seed + 2,
        },
    }

    tracks = make_tracks(n_tracks, seed)
    _write_jsonl(root / CATALOG_FILE, [track_to_record(track) for track in tracks])

    embedder = HashingEmbedder(dimension=manifest["dimension"], seed=manifest["embed_seed"])
    ordered = sorted(tracks, key=lambda t: t.track_id)
    for db in TEXT_VECTOR_DBS:
        rows = [
            {
                "id": track.track_id,
                "vector": embedder.embed(_space_text(track, db), f"text:{db}").tolist(),
            }
            for track in ordered
        ]
        _write_jsonl(root / embeddings_file(db), rows)

    events = make_interactions(tracks, n_users, seed)
    interactions = interactions_from_dates(events)
    _write_jsonl(
        root / INTERACTIONS_FILE,
        [
            {"user_id": i.user_id, "track_id": i.track_id, "timestamp": i.timestamp}
            for i in interactions
        ],
    )

    train, _ = chronological_split(interactions, manifest["boundary_fraction"])
    result = train_bpr(train, [t.track_id for t in tracks], BprConfig(**manifest["bpr"]))
    export_cf_tables(result, str(root / CF_USERS_FILE), str(root / CF_ITEMS_FILE))

    rvq_config = RvqConfig(**manifest["rvq"])
    source_tables = {
        db: load_embedding_table(str(root / embeddings_file(db)), db)
        for db in TEXT_VECTOR_DBS
    }
    source_tables["cf_item"] = load_embedding_table(str(root / CF_ITEMS_FILE), "cf_item")
    encodings = {}
    for modality in SID_MODALITIES:
        table = source_tables[modality]
        model = train_rvq(modality, table.matrix, rvq_config)
        save_model(model, str(root / rvq_model_file(modality)))
        encodings[modality] = encode_table(model, table, expected_ids=table.ids)
    write_sidecar(str(root / SIDECAR_FILE), encodings)

    (root / MANIFEST_FILE).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    environment = load_environment(root)
    conversations = simulate_conversations(
        environment, n_conversations, turns_per_conversation, seed + 4, final_k
    )
    save_conversations(str(root / CONVERSATIONS_FILE), conversations)
    return manifest


def load_fixture_interactions(fixture_dir: str | Path):
    """The interactions file, parsed; convenience for training flows."""
    with open(Path(fixture_dir) / INTERACTIONS_FILE, encoding="utf-8") as handle:
        return load_interactions(handle)
