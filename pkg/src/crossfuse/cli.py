"""Command-line entry point.

Subcommands wire the library modules into reproducible experiments: every
writing command drops its artifacts plus a ``manifest.json`` (command,
parameter hash, seed, versions — no timestamps, so reruns are byte-identical)
under ``--out-dir``. Operational failures print one machine-parseable line
``error:<category>: <message>`` on stderr and exit nonzero.

Compute modules are imported lazily inside the handlers so ``--threads`` can
cap the BLAS pools before numpy loads.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import sys
from pathlib import Path

import click

_THREAD_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _fail(category: str, message: str) -> None:
    line = " ".join(str(message).split()) or "unknown error"
    click.echo(f"error:{category}: {line}", err=True)
    sys.exit(1)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        from .errors import CrossfuseError

        try:
            return fn(*args, **kwargs)
        except CrossfuseError as exc:
            _fail(exc.category, str(exc))
        except OSError as exc:
            _fail("io", str(exc))

    return wrapper


def _write_manifest(out_dir: Path, command: str, params: dict, seed=None) -> None:
    import numpy

    from . import __version__

    canonical = json.dumps(params, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "params": json.loads(canonical),
        "config_sha256": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "seed": seed,
        "versions": {
            "crossfuse": __version__,
            "numpy": numpy.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_channel_runs(pairs: tuple[str, ...]) -> dict:
    from .errors import ConfigError
    from .runs import Channel, read_run, run_to_channel_scores

    if not pairs:
        raise ConfigError("at least one --run channel=path is required")
    runs = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--run expects channel=path, got {pair!r}")
        name, path = pair.split("=", 1)
        try:
            channel = Channel(name)
        except ValueError:
            raise ConfigError(
                f"unknown channel {name!r}; expected one of {[c.value for c in Channel]}"
            ) from None
        if channel in runs:
            raise ConfigError(f"duplicate channel {name!r}")
        runs[channel] = run_to_channel_scores(read_run(path), channel)
    return runs


@click.group()
@click.option("--threads", type=int, default=None, help="Cap BLAS/OpenMP thread pools.")
def main(threads):
    """Hybrid mono-/cross-modal retrieval experiments."""
    if threads is not None:
        if threads < 1:
            _fail("config", f"--threads must be >= 1, got {threads}")
        for var in _THREAD_ENV:
            os.environ[var] = str(threads)


@main.command()
@click.argument("embeddings", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--qrels", "qrels_paths", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--run", "run_paths", multiple=True, type=click.Path(exists=True, dir_okay=False))
@handle_errors
def validate(embeddings, qrels_paths, run_paths):
    """Validate embedding, qrels, and run files."""
    from .embedstore import read_embeddings
    from .evalir import read_qrels
    from .runs import read_run

    if not embeddings and not qrels_paths and not run_paths:
        _fail("config", "nothing to validate")
    for path in embeddings:
        matrix = read_embeddings(path)
        click.echo(
            f"{path}: ok role={matrix.role.value} dim={matrix.dim} count={matrix.count} "
            f"normalized={str(matrix.normalized).lower()}"
        )
    for path in qrels_paths:
        qrels = read_qrels(path)
        click.echo(f"{path}: ok queries={len(qrels.judgments)}")
    for path in run_paths:
        run = read_run(path)
        click.echo(f"{path}: ok queries={len(run.results)} tag={run.tag}")


@main.command("split-corpus")
@click.option("--articles", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--limit", default=100, show_default=True, help="Max words per passage.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def split_corpus(articles, limit, out_dir):
    """Split articles into passages and write the corpus manifests."""
    from .corpus import build_manifests, read_articles, write_names, write_passages
    from .fusion import write_entity_passage_map

    out = _out_dir(out_dir)
    parsed = read_articles(articles)
    epmap, passages, names = build_manifests(parsed, limit=limit)
    write_passages(passages, out / "passages.jsonl")
    write_entity_passage_map(epmap, out / "entity_passages.tsv")
    write_names(names, out / "entity_names.tsv")
    _write_manifest(out, "split-corpus", {"articles": articles, "limit": limit})
    click.echo(f"{len(parsed)} articles -> {len(passages)} passages")


@main.command()
@click.option("--queries", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-k", "--k", default=100, show_default=True)
@click.option("--channel", "channel_name", default=None, help="Override the inferred channel.")
@click.option("--tag", default=None, help="Run tag (defaults to the channel name).")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def search(queries, corpus, k, channel_name, tag, out_dir):
    """Exact top-k search of one channel; writes a TREC run file."""
    from . import search as search_mod
    from .embedstore import read_embeddings
    from .errors import ConfigError
    from .runs import Channel, channel_scores_to_run, write_run

    channel = None
    if channel_name is not None:
        try:
            channel = Channel(channel_name)
        except ValueError:
            raise ConfigError(f"unknown channel {channel_name!r}") from None
    out = _out_dir(out_dir)
    q = read_embeddings(queries)
    c = read_embeddings(corpus)
    scores = search_mod.topk(q, c, k, channel=channel)
    run = channel_scores_to_run(scores, tag=tag)
    run_path = out / f"{run.tag}.run"
    write_run(run, run_path)
    _write_manifest(
        out,
        "search",
        {"queries": queries, "corpus": corpus, "k": k, "channel": run.tag, "tag": run.tag},
    )
    click.echo(f"wrote {run_path} ({len(run.results)} queries)")


@main.command()
@click.option("--run", "run_pairs", multiple=True, help="channel=path, repeatable.")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tag", default="fused")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def fuse(run_pairs, spec_path, tag, out_dir):
    """Fuse channel runs with a fusion spec; writes a TREC run file."""
    from .fusion import fuse as fuse_op
    from .fusion import load_fusion_spec
    from .runs import write_run

    out = _out_dir(out_dir)
    runs = _parse_channel_runs(run_pairs)
    spec = load_fusion_spec(spec_path)
    fused = fuse_op(runs, spec, tag=tag)
    run_path = out / f"{tag}.run"
    write_run(fused, run_path)
    _write_manifest(out, "fuse", {"runs": sorted(run_pairs), "spec": spec_path, "tag": tag})
    click.echo(f"wrote {run_path} ({len(fused.results)} queries)")


@main.command("tune-weights")
@click.option("--run", "run_pairs", multiple=True, help="channel=path, repeatable.")
@click.option("--qrels", "qrels_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--step", default=0.05, show_default=True)
@click.option("--metric", default="MRR", show_default=True, type=click.Choice(["MRR", "P@1"], case_sensitive=False))
@click.option("--normalization", default=None, type=click.Choice(["none", "min_max", "z_score"]))
@click.option("--pool-k", default=None, type=int, help="Per-channel candidate pool size.")
@click.option("--cutoff", default=1000, show_default=True, help="MRR rank cutoff.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def tune_weights(run_pairs, qrels_path, step, metric, normalization, pool_k, cutoff, out_dir):
    """Simplex grid search of fusion weights against qrels."""
    from .evalir import read_qrels
    from .fusion import FusionSpec, default_normalization, grid_search_weights, save_fusion_spec

    out = _out_dir(out_dir)
    runs = _parse_channel_runs(run_pairs)
    qrels = read_qrels(qrels_path)
    weights, achieved = grid_search_weights(
        runs, qrels, step=step, metric=metric,
        normalization=normalization, candidate_pool_k=pool_k, cutoff=cutoff,
    )
    spec = FusionSpec(
        weights=weights,
        normalization=normalization or default_normalization(runs),
        candidate_pool_k=pool_k,
    )
    save_fusion_spec(spec, out / "weights.yaml")
    result = {
        "metric": metric.upper(),
        "achieved": achieved,
        "weights": {ch.value: w for ch, w in sorted(weights.items(), key=lambda p: p[0].value)},
        "step": step,
    }
    (out / "tuning.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(
        out,
        "tune-weights",
        {"runs": sorted(run_pairs), "qrels": qrels_path, "step": step, "metric": metric.upper(),
         "normalization": normalization, "pool_k": pool_k, "cutoff": cutoff},
    )
    click.echo(
        f"best {metric.upper()} {achieved:.6f} at "
        + " ".join(f"{ch.value}={w:g}" for ch, w in sorted(weights.items(), key=lambda p: p[0].value))
    )


def _read_triples(directory: Path):
    from .embedstore import ChannelRole, read_embeddings
    from .errors import ValidationError
    from .train import TripleSet

    required = {
        "query_image": ChannelRole.QUERY_IMAGE,
        "entity_name": ChannelRole.ENTITY_NAME,
        "passage_image": ChannelRole.PASSAGE_IMAGE,
    }
    matrices = {}
    for stem, role in required.items():
        path = directory / f"{stem}.emb"
        if not path.exists():
            raise ValidationError(f"missing {path} (triple sets need {sorted(required)})")
        matrix = read_embeddings(path)
        if matrix.role is not role:
            raise ValidationError(f"{path}: role {matrix.role.value}, expected {role.value}")
        matrices[stem] = matrix
    ids = matrices["query_image"].ids
    return TripleSet(
        matrices["query_image"].data,
        matrices["entity_name"].data,
        matrices["passage_image"].data,
        list(matrices["entity_name"].ids),
    ), ids


@main.command()
@click.option("--train-dir", "train_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--val-dir", "val_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", default=None, type=click.Choice(["mono", "cross", "joint"]))
@click.option("--seed", default=None, type=int)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def train(train_dir, val_dir, config_path, strategy, seed, out_dir):
    """Train adapters on triple sets; writes the best checkpoint."""
    from .train import TrainConfig, load_train_config, save_checkpoint
    from .train import train as train_op

    out = _out_dir(out_dir)
    config = load_train_config(config_path) if config_path else TrainConfig()
    if strategy is not None:
        config.strategy = strategy
    if seed is not None:
        config.seed = seed
    config.validate()
    triples, _ = _read_triples(Path(train_dir))
    val, _ = _read_triples(Path(val_dir))
    state = train_op(triples, val, config)
    save_checkpoint(state.best_checkpoint, out / "checkpoint.ckpt")
    history = [
        {"epoch": e, "train_loss": loss, "val_in_batch_mrr": mrr}
        for e, loss, mrr in state.history
    ]
    (out / "history.json").write_text(json.dumps(history, indent=2) + "\n", encoding="utf-8")
    _write_manifest(
        out,
        "train",
        {"train_dir": train_dir, "val_dir": val_dir, "config": config.__dict__},
        seed=config.seed,
    )
    click.echo(
        f"best val in-batch MRR {state.best_val_mrr:.6f} at step {state.best_checkpoint.step} "
        f"({config.strategy})"
    )


@main.command("export-channels")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", "embedding_pairs", multiple=True, help="role=path, repeatable.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def export_channels_cmd(checkpoint_path, embedding_pairs, out_dir):
    """Apply checkpoint adapters to embeddings and write adapted channels."""
    import yaml

    from .embedstore import ChannelRole, read_embeddings, write_embeddings
    from .errors import ConfigError
    from .train import export_channels, load_checkpoint

    if not embedding_pairs:
        raise ConfigError("at least one --embeddings role=path is required")
    out = _out_dir(out_dir)
    matrices = {}
    for pair in embedding_pairs:
        if "=" not in pair:
            raise ConfigError(f"--embeddings expects role=path, got {pair!r}")
        name, path = pair.split("=", 1)
        try:
            role = ChannelRole(name)
        except ValueError:
            raise ConfigError(f"unknown role {name!r}") from None
        matrices[role] = read_embeddings(path)
    checkpoint = load_checkpoint(checkpoint_path)
    adapted, weights = export_channels(checkpoint, matrices)
    for role, matrix in adapted.items():
        write_embeddings(matrix, out / f"{role.value}.emb")
    (out / "weights.yaml").write_text(yaml.safe_dump(weights, sort_keys=True), encoding="utf-8")
    _write_manifest(
        out,
        "export-channels",
        {"checkpoint": checkpoint_path, "embeddings": sorted(embedding_pairs)},
    )
    click.echo(f"exported {len(adapted)} channel(s) from step-{checkpoint.step} checkpoint")


@main.command("eval-ir")
@click.option("--run", "run_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--qrels", "qrels_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--metrics", default="mrr,p@1", show_default=True, help="Comma list: mrr, p@K, r@K, s@K.")
@click.option("--cutoff", default=1000, show_default=True, help="MRR rank cutoff.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def eval_ir(run_path, qrels_path, metrics, cutoff, out_dir):
    """Compute IR metrics for a run; prints a table and writes report.json."""
    from . import evalir
    from .errors import ConfigError
    from .runs import read_run

    out = _out_dir(out_dir)
    run = read_run(run_path)
    qrels = evalir.read_qrels(qrels_path)
    reports = []
    for spec in [m.strip().lower() for m in metrics.split(",") if m.strip()]:
        if spec == "mrr":
            reports.append(evalir.mrr(run, qrels, cutoff=cutoff))
            continue
        name, _, k_s = spec.partition("@")
        if name in ("p", "r", "s") and k_s.isdigit():
            reports.append(evalir.METRICS[name](run, qrels, int(k_s)))
        else:
            raise ConfigError(f"unknown metric {spec!r}")
    evalir.write_report(reports, out / "report.json")
    _write_manifest(
        out, "eval-ir", {"run": run_path, "qrels": qrels_path, "metrics": metrics, "cutoff": cutoff}
    )
    click.echo(evalir.format_table(reports))


@main.command("eval-answers")
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--targets", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def eval_answers(predictions, targets, out_dir):
    """Score predicted answers with EM, token F1, and soft match."""
    from .answers import AnswerRecord, evaluate_answers, read_predictions, read_targets
    from .errors import ValidationError

    out = _out_dir(out_dir)
    preds = read_predictions(predictions)
    target_map = read_targets(targets)
    missing = sorted(set(target_map) - set(preds))
    if missing:
        raise ValidationError(f"predictions missing for questions {missing[:5]}")
    records = [
        AnswerRecord(qid, preds[qid], target.golds, target.kind)
        for qid, target in target_map.items()
    ]
    result = evaluate_answers(records)
    doc = {
        "aggregate": result.aggregate,
        "per_question": result.per_question,
        "parse_failures": result.parse_failures,
    }
    (out / "answers_report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out, "eval-answers", {"predictions": predictions, "targets": targets})
    agg = result.aggregate
    click.echo(
        f"questions={len(result.per_question)} EM={agg['EM']:.4f} F1={agg['F1']:.4f} "
        f"SoftMatch={agg['SoftMatch']:.4f} parse_failures={len(result.parse_failures)}"
    )


@main.command()
@click.option("--run-a", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--run-b", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--qrels", "qrels_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", default="mrr", show_default=True, type=click.Choice(["mrr", "p@1"]))
@click.option("--cutoff", default=1000, show_default=True)
@click.option("--rounds", default=100_000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--mode", default="auto", show_default=True, type=click.Choice(["auto", "exhaustive", "montecarlo"]))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def significance(run_a, run_b, qrels_path, metric, cutoff, rounds, seed, mode, out_dir):
    """Fisher randomization test between two runs on a per-query metric."""
    from . import evalir
    from .runs import read_run

    out = _out_dir(out_dir)
    a = read_run(run_a)
    b = read_run(run_b)
    qrels = evalir.read_qrels(qrels_path)
    if metric == "mrr":
        rep_a = evalir.mrr(a, qrels, cutoff=cutoff)
        rep_b = evalir.mrr(b, qrels, cutoff=cutoff)
    else:
        rep_a = evalir.precision_at(a, qrels, k=1)
        rep_b = evalir.precision_at(b, qrels, k=1)
    qids = sorted(qrels.judgments)
    pa = [rep_a.per_query[q] for q in qids]
    pb = [rep_b.per_query[q] for q in qids]
    p_value = evalir.fisher_randomization(pa, pb, rounds=rounds, seed=seed, mode=mode)
    doc = {
        "metric": rep_a.metric,
        "mean_a": rep_a.aggregate,
        "mean_b": rep_b.aggregate,
        "p_value": p_value,
        "rounds": rounds,
        "mode": mode,
        "queries": len(qids),
    }
    (out / "significance.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(
        out,
        "significance",
        {"run_a": run_a, "run_b": run_b, "qrels": qrels_path, "metric": metric,
         "cutoff": cutoff, "rounds": rounds, "mode": mode},
        seed=seed,
    )
    click.echo(
        f"{rep_a.metric}: A={rep_a.aggregate:.6f} B={rep_b.aggregate:.6f} p={p_value:.6g}"
    )


if __name__ == "__main__":
    main()
