"""Command line entry points: data prep, training, serving, eval."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .bm25 import build_corpus_indexes
from .bpr import BprConfig, chronological_split, export_cf_tables, pairwise_auc, train_bpr
from .catalog import CORPUS_TYPES, load_catalog
from .errors import MelodexError
from .evaluation import (
    AgentBackend,
    Bm25OnlyBackend,
    format_report_table,
    load_conversations,
    run_eval,
    write_report,
)
from .fixtures import (
    CATALOG_FILE,
    CF_ITEMS_FILE,
    CF_USERS_FILE,
    CONVERSATIONS_FILE,
    MANIFEST_FILE,
    SIDECAR_FILE,
    default_engine,
    embeddings_file,
    generate_fixture_suite,
    load_environment,
    load_fixture_interactions,
    rvq_model_file,
)
from .pipeline import FALLBACK_CORPUS, FailureInjector
from .planner import HttpChatProvider, LlmPlanner, RuleBasedPlanner
from .semantic import (
    SID_MODALITIES,
    RvqConfig,
    encode_table,
    load_sidecar,
    train_rvq,
    save_model,
    write_sidecar,
)
from .service import AgentEngine, SessionStore, create_app
from .vectors import TEXT_VECTOR_DBS, load_embedding_table


def _read_manifest(fixture_dir: str) -> dict:
    path = Path(fixture_dir) / MANIFEST_FILE
    if not path.exists():
        raise click.ClickException(f"no manifest at {path}")
    return json.loads(path.read_text(encoding="utf-8"))


@click.group()
def main():
    """Conversational music recommendation toolkit."""


@main.command()
@click.argument("catalog_path", type=click.Path(exists=True, dir_okay=False))
def ingest(catalog_path: str):
    """Validate a catalog file and summarize its contents."""
    try:
        catalog = load_catalog(catalog_path)
    except MelodexError as exc:
        raise click.ClickException(str(exc))
    artists = {track.artist for track in catalog}
    dates = [track.release_date for track in catalog]
    click.echo(f"tracks: {len(catalog)}")
    click.echo(f"artists: {len(artists)}")
    if dates:
        click.echo(f"release dates: {min(dates)} to {max(dates)}")


@main.command()
@click.argument("catalog_path", type=click.Path(exists=True, dir_okay=False))
def index(catalog_path: str):
    """Build the keyword indexes and report corpus statistics."""
    try:
        catalog = load_catalog(catalog_path)
    except MelodexError as exc:
        raise click.ClickException(str(exc))
    indexes = build_corpus_indexes(catalog)
    for corpus in CORPUS_TYPES:
        idx = indexes[corpus]
        click.echo(
            f"{corpus}: {len(idx.doc_ids)} docs, {len(idx.postings)} terms, "
            f"avg length {idx.avg_length:.1f}"
        )


@main.command("train-bpr")
@click.argument("fixture_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--epochs", type=int, default=None, help="Override the manifest epoch count.")
def train_bpr_command(fixture_dir: str, epochs: int | None):
    """Train personalization vectors from the interactions file."""
    manifest = _read_manifest(fixture_dir)
    root = Path(fixture_dir)
    settings = dict(manifest["bpr"])
    if epochs is not None:
        settings["epochs"] = epochs
    config = BprConfig(**settings)

    catalog = load_catalog(root / CATALOG_FILE)
    interactions = load_fixture_interactions(fixture_dir)
    train, test = chronological_split(interactions, manifest.get("boundary_fraction", 0.8))
    click.echo(f"interactions: {len(train)} train / {len(test)} test")

    result = train_bpr(train, catalog.track_ids(), config)
    export_cf_tables(result, str(root / CF_USERS_FILE), str(root / CF_ITEMS_FILE))
    if result.epoch_losses:
        click.echo(
            f"loss: {result.epoch_losses[0]:.4f} -> {result.epoch_losses[-1]:.4f} "
            f"over {len(result.epoch_losses)} epochs"
        )
    if test:
        click.echo(f"held-out pairwise AUC: {pairwise_auc(result, train, test):.4f}")
    click.echo(f"wrote {CF_USERS_FILE} and {CF_ITEMS_FILE}")


@main.command("train-rvq")
@click.argument("fixture_dir", type=click.Path(exists=True, file_okay=False))
@click.option(
    "--modality",
    "modalities",
    multiple=True,
    type=click.Choice(SID_MODALITIES),
    help="Limit training to these modalities (default: all).",
)
def train_rvq_command(fixture_dir: str, modalities: tuple[str, ...]):
    """Fit residual codebooks and write the semantic id sidecar."""
    manifest = _read_manifest(fixture_dir)
    root = Path(fixture_dir)
    config = RvqConfig(**manifest["rvq"])
    selected = modalities or SID_MODALITIES

    sidecar_path = root / SIDECAR_FILE
    encodings: dict = {}
    if sidecar_path.exists():
        with open(sidecar_path, encoding="utf-8") as handle:
            encodings = dict(load_sidecar(handle))

    for modality in selected:
        if modality == "cf_item":
            table = load_embedding_table(str(root / CF_ITEMS_FILE), "cf_item")
        else:
            table = load_embedding_table(str(root / embeddings_file(modality)), modality)
        model = train_rvq(modality, table.matrix, config)
        save_model(model, str(root / rvq_model_file(modality)))
        encodings[modality] = encode_table(model, table, expected_ids=table.ids)
        mse = ", ".join(f"{value:.5f}" for value in model.layer_mse)
        used = ", ".join(f"{value:.0%}" for value in model.utilization)
        click.echo(f"{modality}: layer mse [{mse}] utilization [{used}]")

    write_sidecar(str(sidecar_path), encodings)
    click.echo(f"wrote {SIDECAR_FILE} covering {len(encodings)} modalities")


@main.command()
@click.argument("fixture_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8060, show_default=True, type=int)
@click.option(
    "--journal-dir",
    type=click.Path(file_okay=False),
    default=None,
    help="Persist sessions as JSONL journals in this directory.",
)
@click.option("--planner-url", default=None, help="Chat endpoint for planning (rule-based otherwise).")
@click.option("--chat-url", default=None, help="Chat endpoint for phrasing responses.")
def serve(
    fixture_dir: str,
    host: str,
    port: int,
    journal_dir: str | None,
    planner_url: str | None,
    chat_url: str | None,
):
    """Run the recommendation service over a fixture tree."""
    import uvicorn

    environment = load_environment(fixture_dir)
    if planner_url:
        planner = LlmPlanner(HttpChatProvider(planner_url))
    else:
        planner = RuleBasedPlanner(topk=environment.final_k)
    chat_provider = HttpChatProvider(chat_url) if chat_url else None
    engine = AgentEngine(
        environment.catalog,
        environment.tool_env,
        environment.semantic_index,
        planner,
        chat_provider=chat_provider,
    )
    store = SessionStore(journal_dir)
    app = create_app(engine, store)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("eval")
@click.argument("fixture_dir", type=click.Path(exists=True, file_okay=False))
@click.option(
    "--backend",
    type=click.Choice(("tools", "bm25")),
    default="tools",
    show_default=True,
    help="Full tool pipeline or the keyword-only baseline.",
)
@click.option("--k", "ks", multiple=True, type=int, help="Cutoffs (default 1, 10, 20).")
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@click.option(
    "--inject-sql",
    type=float,
    default=0.0,
    show_default=True,
    help="Probability of injected sql tool failures, for resilience checks.",
)
@click.option("--inject-seed", type=int, default=0, show_default=True)
def eval_command(
    fixture_dir: str,
    backend: str,
    ks: tuple[int, ...],
    report_path: str | None,
    inject_sql: float,
    inject_seed: int,
):
    """Replay the recorded conversations and score recovery."""
    injector = (
        FailureInjector({"sql": inject_sql}, seed=inject_seed) if inject_sql > 0 else None
    )
    environment = load_environment(fixture_dir, injector=injector)
    conversations = load_conversations(str(Path(fixture_dir) / CONVERSATIONS_FILE))
    if backend == "tools":
        eval_backend = AgentBackend(default_engine(environment), environment.final_k)
    else:
        eval_backend = Bm25OnlyBackend(
            environment.bm25_indexes[FALLBACK_CORPUS], environment.final_k
        )
    report = run_eval(conversations, eval_backend, ks or (1, 10, 20))
    click.echo(format_report_table(report))
    if report_path:
        write_report(report, report_path)
        click.echo(f"wrote {report_path}")


@main.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--tracks", "n_tracks", default=240, show_default=True, type=int)
@click.option("--users", "n_users", default=40, show_default=True, type=int)
@click.option("--conversations", "n_conversations", default=30, show_default=True, type=int)
@click.option("--turns", "turns_per_conversation", default=4, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def fixtures(
    out_dir: str,
    n_tracks: int,
    n_users: int,
    n_conversations: int,
    turns_per_conversation: int,
    seed: int,
):
    """Generate a complete synthetic data tree for serving and eval."""
    manifest = generate_fixture_suite(
        out_dir,
        n_tracks=n_tracks,
        n_users=n_users,
        n_conversations=n_conversations,
        turns_per_conversation=turns_per_conversation,
        seed=seed,
    )
    click.echo(
        f"wrote fixtures to {out_dir}: {manifest['n_tracks']} tracks, "
        f"{manifest['n_users']} users, {manifest['n_conversations']} conversations"
    )


if __name__ == "__main__":
    main()
