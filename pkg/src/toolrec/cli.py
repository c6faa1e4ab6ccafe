"""Command-line pipeline: build-vocab, train, index, recommend, evaluate, serve.

All machine-readable outputs are deterministic for a fixed seed and config
(logs carry no timestamps, archives use fixed zip metadata), so re-running a
command reproduces its artifacts byte for byte.

Exit codes: 0 success, 1 usage problem, 2 data problem, 3 runtime failure.
"""

from __future__ import annotations

import json
import sys

import click

from .corpus import (CorpusError, DatasetSplit, load_corpus, load_mcp_corpus,
                     load_task_corpus, concat_text, split_dataset)
from .encoder import (CheckpointError, EncoderError, encode_corpus,
                      load_checkpoint, load_index, save_checkpoint, save_index)
from .lexical import (LexicalError, Vocabulary, VocabularyConfig,
                      build_vocabulary, embed_text)
from .metrics import DEFAULT_KS, MetricsError, evaluate
from .recommender import Engine, RecommendConfig, RecommendError
from .rerank import (BackendConfigError, BuiltinHeuristicBackend,
                     ExternalHTTPBackend)
from .structural import FusionWeights, Taxonomy, TaxonomyError, ThemeSystemRules
from .training import TrainConfig, TrainingError, train

USAGE_ERRORS = (RecommendError, BackendConfigError)
DATA_ERRORS = (CorpusError, TaxonomyError, LexicalError, CheckpointError,
               EncoderError, MetricsError, TrainingError, FileNotFoundError,
               json.JSONDecodeError)


def _corpus_texts(servers, tasks):
    return ([concat_text(t) for t in tasks.values()]
            + [concat_text(m) for m in servers.values()])


def _server_vectors(servers, vocab):
    return [(m.id, embed_text(concat_text(m), vocab)) for m in servers.values()]


def _load_split(path) -> DatasetSplit:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return DatasetSplit(train=tuple(raw["train"]), valid=tuple(raw["valid"]),
                        test=tuple(raw["test"]), seed=int(raw["seed"]))


def _save_split(path, split: DatasetSplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"train": list(split.train), "valid": list(split.valid),
                   "test": list(split.test), "seed": split.seed},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")


def _make_backend(reranker, endpoint, model, api_key_env, timeout, debug):
    if reranker == "none":
        return None
    if reranker == "builtin":
        return BuiltinHeuristicBackend()
    return ExternalHTTPBackend(endpoint=endpoint or "", model=model or "",
                               api_key_env=api_key_env, timeout=timeout,
                               debug=debug)


def _build_engine(mcp, taxonomy_path, vocab_path, checkpoint, index_path,
                  rules_path, no_structural, no_two_tower):
    servers = load_mcp_corpus(mcp)
    taxonomy = Taxonomy.load(taxonomy_path)
    vocab = Vocabulary.load(vocab_path)
    rules = ThemeSystemRules.load(rules_path) if rules_path else None
    if no_structural:
        weights = FusionWeights(alpha_sem=1.0, alpha_str=0.0)
    else:
        weights = FusionWeights()
    if no_two_tower:
        if index_path:
            raise click.UsageError(
                "--index holds tower embeddings; it cannot combine with "
                "--no-two-tower")
        return Engine(None, None, vocab, servers, taxonomy, weights=weights,
                      rules=rules)
    if not checkpoint:
        raise click.UsageError("--checkpoint is required unless --no-two-tower")
    task_tower, server_tower, _ = load_checkpoint(
        checkpoint, expected_vocab_hash=vocab.content_hash())
    index = load_index(index_path) if index_path else None
    return Engine(task_tower, server_tower, vocab, servers, taxonomy,
                  index=index, weights=weights, rules=rules)


@click.group()
def cli():
    """Task-to-tool-server recommendation pipeline."""


@cli.command("build-vocab")
@click.option("--mcp", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tasks", "tasks_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--min-doc-freq", default=1, type=click.IntRange(min=1),
              show_default=True)
@click.option("--max-doc-freq-ratio", default=1.0,
              type=click.FloatRange(min=0.0, max=1.0), show_default=True)
@click.option("--counts-only", is_flag=True,
              help="Plain term frequencies, no idf weighting.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_build_vocab(mcp, tasks_path, min_doc_freq, max_doc_freq_ratio,
                    counts_only, out):
    """Build the shared task+server vocabulary and write it to OUT."""
    servers = load_mcp_corpus(mcp)
    tasks = load_task_corpus(tasks_path)
    vocab = build_vocabulary(_corpus_texts(servers, tasks), VocabularyConfig(
        min_doc_freq=min_doc_freq, max_doc_freq_ratio=max_doc_freq_ratio,
        use_idf=not counts_only))
    vocab.save(out)
    click.echo(f"vocabulary of {vocab.dim} tokens -> {out}")


@cli.command("train")
@click.option("--mcp", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tasks", "tasks_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--interactions", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory for vocab, split, checkpoint and log.")
@click.option("--epochs", default=200, type=click.IntRange(min=0), show_default=True)
@click.option("--batch-size", default=256, type=click.IntRange(min=1),
              show_default=True)
@click.option("--learning-rate", default=1e-3,
              type=click.FloatRange(min=0, min_open=True), show_default=True)
@click.option("--weight-decay", default=0.01, type=click.FloatRange(min=0),
              show_default=True)
@click.option("--temperature", default=0.07,
              type=click.FloatRange(min=0, min_open=True), show_default=True)
@click.option("--layers", default=3, type=click.IntRange(min=1), show_default=True)
@click.option("--hidden", default=512, type=click.IntRange(min=1), show_default=True)
@click.option("--embedding-dim", default=256, type=click.IntRange(min=1),
              show_default=True)
@click.option("--dropout", default=0.2, type=click.FloatRange(min=0, max=1,
              max_open=True), show_default=True)
@click.option("--eval-every", default=1, type=click.IntRange(min=0),
              show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--loss", default="contrastive",
              type=click.Choice(["contrastive", "bce"]), show_default=True)
@click.option("--contrastive-direction", default="symmetric",
              type=click.Choice(["symmetric", "one-sided"]), show_default=True)
@click.option("--min-doc-freq", default=1, type=click.IntRange(min=1),
              show_default=True)
@click.option("--counts-only", is_flag=True)
def cmd_train(mcp, tasks_path, interactions, out, epochs, batch_size,
              learning_rate, weight_decay, temperature, layers, hidden,
              embedding_dim, dropout, eval_every, seed, loss,
              contrastive_direction, min_doc_freq, counts_only):
    """Train both towers and keep the best-validation-recall checkpoint."""
    import pathlib

    out_dir = pathlib.Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    servers, tasks, inter = load_corpus(mcp, tasks_path, interactions)

    vocab = build_vocabulary(_corpus_texts(servers, tasks), VocabularyConfig(
        min_doc_freq=min_doc_freq, use_idf=not counts_only))
    vocab.save(out_dir / "vocab.txt")

    split = split_dataset(inter.task_ids(), seed)
    _save_split(out_dir / "split.json", split)

    if loss == "bce":
        loss_variant = "bce"
    elif contrastive_direction == "one-sided":
        loss_variant = "one_sided"
    else:
        loss_variant = "symmetric"
    config = TrainConfig(
        batch_size=batch_size, epochs=epochs, learning_rate=learning_rate,
        weight_decay=weight_decay, temperature=temperature, seed=seed,
        eval_every=eval_every, n_layers=layers, hidden_dim=hidden,
        out_dim=embedding_dim, dropout_rate=dropout, loss=loss_variant)

    result = train(servers, tasks, inter, split, vocab, config,
                   log_path=out_dir / "train_log.jsonl")
    save_checkpoint(out_dir / "checkpoint.npz", result.task_tower,
                    result.server_tower, vocab.content_hash(),
                    extra={"best_epoch": result.best_epoch,
                           "best_recall10": result.best_recall,
                           "diverged": result.diverged,
                           "config": {
                               "batch_size": batch_size, "epochs": epochs,
                               "learning_rate": learning_rate,
                               "weight_decay": weight_decay,
                               "temperature": temperature, "seed": seed,
                               "layers": layers, "hidden": hidden,
                               "embedding_dim": embedding_dim,
                               "dropout": dropout, "loss": loss_variant}})
    status = "diverged; kept last finite epoch" if result.diverged else \
        f"best epoch {result.best_epoch} (recall@10 {result.best_recall:.4f})"
    click.echo(f"trained {epochs} epoch(s): {status}")
    click.echo(f"artifacts -> {out_dir}")


@cli.command("index")
@click.option("--mcp", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--vocab", "vocab_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_index(mcp, vocab_path, checkpoint, out):
    """Precompute the server embedding index."""
    servers = load_mcp_corpus(mcp)
    vocab = Vocabulary.load(vocab_path)
    _, server_tower, _ = load_checkpoint(checkpoint,
                                         expected_vocab_hash=vocab.content_hash())
    index = encode_corpus(server_tower, _server_vectors(servers, vocab))
    save_index(out, index)
    click.echo(f"indexed {len(index)} servers -> {out} "
               f"(snapshot {index.snapshot_id})")


_shared_engine_options = [
    click.option("--mcp", required=True,
                 type=click.Path(exists=True, dir_okay=False)),
    click.option("--taxonomy", "taxonomy_path", required=True,
                 type=click.Path(exists=True, dir_okay=False)),
    click.option("--vocab", "vocab_path", required=True,
                 type=click.Path(exists=True, dir_okay=False)),
    click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False)),
    click.option("--index", "index_path",
                 type=click.Path(exists=True, dir_okay=False)),
    click.option("--rules", "rules_path",
                 type=click.Path(exists=True, dir_okay=False),
                 help="Theme to allowed-systems map."),
    click.option("--no-structural", is_flag=True,
                 help="Rank by semantic similarity alone."),
    click.option("--no-two-tower", is_flag=True,
                 help="Direct cosine over sparse lexical vectors."),
    click.option("--reranker", default="none",
                 type=click.Choice(["none", "builtin", "external"]),
                 show_default=True),
    click.option("--endpoint", help="External re-ranker URL."),
    click.option("--model", help="External re-ranker model name."),
    click.option("--api-key-env", default="RERANK_API_KEY", show_default=True),
    click.option("--timeout", default=30.0, type=click.FloatRange(min=0,
                 min_open=True), show_default=True),
    click.option("--debug-prompts", is_flag=True),
]


def _with_engine_options(fn):
    for option in reversed(_shared_engine_options):
        fn = option(fn)
    return fn


@cli.command("recommend")
@_with_engine_options
@click.option("--task-file", type=click.Path(exists=True, dir_okay=False),
              help="Task records, one per line.")
@click.option("--task-text", help="Ad-hoc task description.")
@click.option("--language", default="")
@click.option("--category", default="")
@click.option("--subcategory", default="")
@click.option("--theme", default="")
@click.option("--k1", default=20, type=click.IntRange(min=1), show_default=True)
@click.option("--k2", default=50, type=click.IntRange(min=1), show_default=True)
@click.option("--k", default=10, type=click.IntRange(min=1), show_default=True)
@click.option("--record", "record_path", type=click.Path(dir_okay=False),
              help="Also write machine-readable rows here.")
def cmd_recommend(mcp, taxonomy_path, vocab_path, checkpoint, index_path,
                  rules_path, no_structural, no_two_tower, reranker, endpoint,
                  model, api_key_env, timeout, debug_prompts, task_file,
                  task_text, language, category, subcategory, theme, k1, k2, k,
                  record_path):
    """Rank servers for one or more tasks and print the result."""
    from .corpus import TaskRecord

    if bool(task_file) == bool(task_text):
        raise click.UsageError("give exactly one of --task-file or --task-text")
    config = RecommendConfig(k1=k1, k2=k2, k=k)
    backend = _make_backend(reranker, endpoint, model, api_key_env, timeout,
                            debug_prompts)
    engine = _build_engine(mcp, taxonomy_path, vocab_path, checkpoint,
                           index_path, rules_path, no_structural, no_two_tower)
    if task_file:
        task_corpus = load_task_corpus(task_file)
        task_list = list(task_corpus.values())
    else:
        task_list = [TaskRecord(id="adhoc", name="", description=task_text,
                                language=language.casefold(),
                                category=category.casefold(),
                                subcategory=subcategory.casefold(),
                                theme=theme.casefold())]
    records = []
    for task in task_list:
        ranked = engine.recommend(task, config, backend)
        click.echo(f"task {task.id}: status={ranked.status}"
                   + (f" ({ranked.reason})" if ranked.reason else ""))
        click.echo(f"{'rank':>4}  {'id':<24} {'semantic':>9} {'structural':>10} "
                   f"{'fused':>9}  source")
        for item in ranked.items:
            click.echo(f"{item.rank:>4}  {item.id:<24} "
                       f"{item.scores.semantic:>9.4f} "
                       f"{item.scores.structural:>10.4f} "
                       f"{item.scores.fused:>9.4f}  {item.provenance}")
        records.append({
            "task_id": task.id,
            "status": ranked.status,
            "reason": ranked.reason,
            "items": [{
                "id": item.id, "rank": item.rank,
                "provenance": item.provenance,
                "semantic": item.scores.semantic,
                "structural": item.scores.structural,
                "fused": item.scores.fused,
            } for item in ranked.items],
        })
    if record_path:
        with open(record_path, "w", encoding="utf-8") as fh:
            for row in records:
                fh.write(json.dumps(row, sort_keys=True))
                fh.write("\n")


@cli.command("evaluate")
@_with_engine_options
@click.option("--tasks", "tasks_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--interactions", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--split", "split_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--subset", default="test",
              type=click.Choice(["train", "valid", "test"]), show_default=True)
@click.option("--ks", default="5,10", show_default=True,
              help="Comma-separated cutoffs.")
@click.option("--k1", default=20, type=click.IntRange(min=1), show_default=True)
@click.option("--k2", default=50, type=click.IntRange(min=1), show_default=True)
@click.option("--out", "report_path", type=click.Path(dir_okay=False))
def cmd_evaluate(mcp, taxonomy_path, vocab_path, checkpoint, index_path,
                 rules_path, no_structural, no_two_tower, reranker, endpoint,
                 model, api_key_env, timeout, debug_prompts, tasks_path,
                 interactions, split_path, subset, ks, k1, k2, report_path):
    """Macro-averaged metrics over a stored split."""
    try:
        ks_list = sorted({int(x) for x in ks.split(",") if x.strip()})
    except ValueError as exc:
        raise click.UsageError(f"bad --ks value {ks!r}") from exc
    if not ks_list:
        raise click.UsageError("--ks needs at least one cutoff")
    _, tasks, inter = load_corpus(mcp, tasks_path, interactions)
    split = _load_split(split_path)
    subset_ids = getattr(split, subset)
    backend = _make_backend(reranker, endpoint, model, api_key_env, timeout,
                            debug_prompts)
    engine = _build_engine(mcp, taxonomy_path, vocab_path, checkpoint,
                           index_path, rules_path, no_structural, no_two_tower)
    config = RecommendConfig(k1=k1, k2=k2, k=max(ks_list))

    def ranker(task_id):
        return engine.recommend(tasks[task_id], config, backend).ids()

    report = evaluate(ranker, subset_ids, inter, ks_list)
    click.echo(report.table())
    if report_path:
        report.save(report_path)
        click.echo(f"report -> {report_path}")


@cli.command("serve")
@_with_engine_options
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, type=click.IntRange(min=1, max=65535),
              show_default=True)
@click.option("--k1", default=20, type=click.IntRange(min=1), show_default=True)
@click.option("--k2", default=50, type=click.IntRange(min=1), show_default=True)
@click.option("--k", default=10, type=click.IntRange(min=1), show_default=True)
def cmd_serve(mcp, taxonomy_path, vocab_path, checkpoint, index_path,
              rules_path, no_structural, no_two_tower, reranker, endpoint,
              model, api_key_env, timeout, debug_prompts, host, port, k1, k2, k):
    """Run the HTTP recommendation service."""
    import uvicorn

    from .service import create_app

    backend = _make_backend(reranker, endpoint, model, api_key_env, timeout,
                            debug_prompts)
    engine = _build_engine(mcp, taxonomy_path, vocab_path, checkpoint,
                           index_path, rules_path, no_structural, no_two_tower)
    app = create_app(engine, RecommendConfig(k1=k1, k2=k2, k=k), backend)
    uvicorn.run(app, host=host, port=port)


def main(argv=None) -> int:
    """Entry point with explicit exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except USAGE_ERRORS as exc:
        click.echo(f"usage error: {exc}", err=True)
        return 1
    except DATA_ERRORS as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except Exception as exc:  # pragma: no cover - safety net
        click.echo(f"runtime failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
