"""Command-line front end: ingest, fit, evaluate, desiderata, correlate."""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click
import numpy as np

from popbias import catalog as cat
from popbias import evaluation as ev
from popbias.desiderata import DESIDERATA, desiderata_grid
from popbias.distfit import fit_pareto
from popbias.llm_gateway import ProviderConfig, PromptVariant, ProviderError, WokRecommender
from popbias.metrics import METRICS
from popbias.recommenders import (
    ItemKnnRecommender,
    RandomRecommender,
    TopPopRecommender,
    UserKnnRecommender,
    build_item_knn,
    build_user_knn,
    RatingMatrix,
)

DEFAULT_CONFIG: dict = {
    "data": {"movies": "", "ratings": ""},
    "folds": {
        "fold_count": 5,
        "users_per_fold": 1000,
        "seed": 0,
        "train_fraction": 0.8,
        "min_ratings": 10,
    },
    "recommenders": ["random", "top_pop", "item_knn", "user_knn"],
    "knn_k": 30,
    "k": 10,
    "metrics": list(ev.DEFAULT_METRICS),
    "prompt_variant": "base",
    "strict_parse": False,
    "provider": {
        "dialect": "stub",
        "endpoint": "",
        "model_name": "stub-model",
        "api_key_env": "",
        "fixtures_dir": "",
        "temperature": 0.0,
        "top_p": 1.0,
        "top_k": 250,
        "max_tokens": 1024,
        "max_in_flight": 4,
        "timeout": 60.0,
        "retries": 2,
        "backoff": 0.5,
    },
}

KNOWN_RECOMMENDERS = ("random", "top_pop", "item_knn", "user_knn", "wok")


def _merge_config(defaults: dict, overrides: dict, path: str = "") -> dict:
    merged = dict(defaults)
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise click.ClickException(f"unknown config key: {where}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise click.ClickException(f"config key {where} must be a mapping")
            merged[key] = _merge_config(defaults[key], value, where)
        else:
            merged[key] = value
    return merged


def load_config(path: str | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise click.ClickException(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise click.ClickException(f"invalid JSON in {path}: {exc}")
    return _merge_config(DEFAULT_CONFIG, raw)


@click.group()
def main() -> None:
    """Popularity-bias measurement toolkit for top-k recommenders."""


def _load_data(movies: str, ratings: str, strict: bool):
    if not Path(movies).is_file():
        raise click.ClickException(f"movies file not found: {movies}")
    if not Path(ratings).is_file():
        raise click.ClickException(f"ratings file not found: {ratings}")
    try:
        entries, movie_issues = cat.read_movies_file(movies, strict=strict)
        interactions, rating_issues = cat.read_ratings_file(ratings, strict=strict)
    except cat.ParseError as exc:
        raise click.ClickException(str(exc))
    return entries, movie_issues, interactions, rating_issues


@main.command()
@click.option("--movies", required=True, type=str, help="movies.dat path")
@click.option("--ratings", required=True, type=str, help="ratings.dat path")
@click.option("--out", type=str, default=None, help="directory for cached outputs")
@click.option("--strict-parse", is_flag=True, help="abort on the first malformed line")
def ingest(movies: str, ratings: str, out: str | None, strict_parse: bool) -> None:
    """Parse the catalog, build the popularity table, print a summary."""
    entries, movie_issues, interactions, rating_issues = _load_data(
        movies, ratings, strict_parse
    )
    if not interactions:
        raise click.ClickException("no interactions parsed")
    phi = cat.compute_popularity(interactions)
    scores = np.array(sorted(phi.values()), dtype=float)
    top_item = max(phi.items(), key=lambda kv: (kv[1], -kv[0]))
    click.echo(f"movies: {len(entries)} ({len(movie_issues)} malformed lines)")
    click.echo(f"ratings: {len(interactions)} ({len(rating_issues)} malformed lines)")
    click.echo(f"items with ratings: {len(phi)}")
    quants = np.quantile(scores, [0.0, 0.25, 0.5, 0.75, 1.0])
    click.echo(
        "popularity quantiles (min/p25/p50/p75/max): "
        + "/".join(f"{q:.0f}" for q in quants)
    )
    click.echo(f"most popular item: {top_item[0]} ({top_item[1]:.0f} ratings)")
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "popularity.csv").open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["item", "count"])
            for item in sorted(phi):
                writer.writerow([item, int(phi[item])])
        summary = {
            "movies": len(entries),
            "ratings": len(interactions),
            "items_with_ratings": len(phi),
            "movie_parse_issues": len(movie_issues),
            "rating_parse_issues": len(rating_issues),
            "max_popularity_item": top_item[0],
        }
        (out_dir / "ingest_summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        click.echo(f"wrote {out_dir / 'popularity.csv'}")


@main.command()
@click.argument("scores_file", required=False, type=str)
@click.option("--ratings", type=str, default=None, help="derive scores from ratings.dat")
@click.option("--x-min", type=float, default=None, help="support lower bound")
def fit(scores_file: str | None, ratings: str | None, x_min: float | None) -> None:
    """Fit a Pareto tail to popularity scores and report goodness of fit."""
    if (scores_file is None) == (ratings is None):
        raise click.ClickException("provide either SCORES_FILE or --ratings")
    if ratings is not None:
        interactions, _ = cat.read_ratings_file(ratings)
        if not interactions:
            raise click.ClickException("no interactions parsed")
        samples = [float(v) for v in cat.compute_popularity(interactions).values()]
    else:
        path = Path(scores_file)
        if not path.is_file():
            raise click.ClickException(f"scores file not found: {scores_file}")
        try:
            samples = [
                float(line) for line in path.read_text(encoding="utf-8").split() if line
            ]
        except ValueError as exc:
            raise click.ClickException(f"non-numeric score: {exc}")
    try:
        result = fit_pareto(samples, x_min=x_min)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"n: {result.n}")
    click.echo(f"x_min: {result.x_min:.6g}")
    click.echo(f"alpha: {result.alpha:.4f}")
    click.echo(f"ks_stat: {result.ks_stat:.4f}")


def _provider_config(cfg: dict) -> ProviderConfig:
    return ProviderConfig(**cfg["provider"])


def _build_fold_recommenders(cfg, fold, phi, index, entries_by_id):
    """Construct the configured recommenders, trained on this fold."""
    train_interactions = [it for split in fold for it in split.train]
    recs = []
    matrix = None
    for name in cfg["recommenders"]:
        if name == "random":
            recs.append(RandomRecommender(phi.keys(), seed=cfg["folds"]["seed"]))
        elif name == "top_pop":
            recs.append(TopPopRecommender(phi))
        elif name in ("item_knn", "user_knn"):
            if matrix is None:
                matrix = RatingMatrix.from_interactions(train_interactions)
            if name == "item_knn":
                recs.append(ItemKnnRecommender(build_item_knn(matrix, cfg["knn_k"])))
            else:
                recs.append(UserKnnRecommender(build_user_knn(matrix, cfg["knn_k"]), matrix))
        elif name == "wok":
            variant = PromptVariant(cfg["prompt_variant"])
            recs.append(WokRecommender(_provider_config(cfg), index, entries_by_id, variant))
        else:
            raise click.ClickException(
                f"unknown recommender {name!r} (known: {', '.join(KNOWN_RECOMMENDERS)})"
            )
    return recs


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="JSON run config")
@click.option("--movies", type=str, default=None, help="override data.movies")
@click.option("--ratings", type=str, default=None, help="override data.ratings")
@click.option("--seed", type=int, default=None, help="override folds.seed")
@click.option("--out", type=str, default=None, help="output directory (default: cwd)")
@click.option("--provider", type=str, default=None, help="override provider.dialect")
@click.option("--strict-parse", is_flag=True, default=None, help="abort on malformed lines")
def evaluate(config_path, movies, ratings, seed, out, provider, strict_parse) -> None:
    """Run the fold protocol and write report.csv plus manifest.json."""
    cfg = load_config(config_path)
    if movies:
        cfg["data"]["movies"] = movies
    if ratings:
        cfg["data"]["ratings"] = ratings
    if seed is not None:
        cfg["folds"]["seed"] = seed
    if provider:
        cfg["provider"]["dialect"] = provider
    if strict_parse:
        cfg["strict_parse"] = True
    if not cfg["data"]["movies"] or not cfg["data"]["ratings"]:
        raise click.ClickException("data.movies and data.ratings are required")
    for metric_id in cfg["metrics"]:
        if metric_id not in METRICS:
            raise click.ClickException(f"unknown metric {metric_id!r}")

    entries, _, interactions, _ = _load_data(
        cfg["data"]["movies"], cfg["data"]["ratings"], cfg["strict_parse"]
    )
    if not interactions:
        raise click.ClickException("no interactions parsed")
    phi = cat.compute_popularity(interactions)
    index = cat.TitleIndex.build(entries)
    entries_by_id = {e.item: e for e in entries}

    try:
        plan = ev.make_folds(interactions, ev.FoldSpec(**cfg["folds"]))
    except ValueError as exc:
        raise click.ClickException(str(exc))

    per_rec_stats: dict[str, list[ev.FoldStats]] = {}
    errors: dict[str, str] = {}
    for fold_no, fold in enumerate(plan.folds):
        if not fold:
            raise click.ClickException(f"fold {fold_no} is empty after exclusions")
        for rec in _build_fold_recommenders(cfg, fold, phi, index, entries_by_id):
            if rec.name in errors:
                continue
            try:
                stats = ev.evaluate_recommender(rec, fold, phi, cfg["metrics"], cfg["k"])
            except ProviderError as exc:
                errors[rec.name] = str(exc)
                per_rec_stats.pop(rec.name, None)
                click.echo(f"note: {rec.name} aborted: {exc}", err=True)
                continue
            per_rec_stats.setdefault(rec.name, []).append(stats)

    rows = [
        ev.summarize(name, stats)
        for name, stats in per_rec_stats.items()
        if len(stats) == len(plan.folds)
    ]
    if not rows:
        raise click.ClickException("no recommender completed all folds")

    out_dir = Path(out) if out else Path.cwd()
    out_dir.mkdir(parents=True, exist_ok=True)
    report_csv = ev.emit_report(rows, fmt="csv")
    (out_dir / "report.csv").write_text(report_csv, encoding="utf-8")
    (out_dir / "report.md").write_text(ev.emit_report(rows, fmt="markdown"), encoding="utf-8")
    manifest = ev.build_manifest(cfg, plan, rows, errors)
    (out_dir / "manifest.json").write_text(manifest, encoding="utf-8")
    click.echo(report_csv, nl=False)
    click.echo(f"wrote {out_dir / 'report.csv'}")


@main.command()
@click.option(
    "--metric",
    "metric_filter",
    multiple=True,
    help="restrict the grid to these metrics (repeatable)",
)
@click.option("--witnesses", is_flag=True, help="print the witness for every verdict")
def desiderata(metric_filter: tuple[str, ...], witnesses: bool) -> None:
    """Check every metric against every metric desideratum."""
    metric_ids = list(metric_filter) if metric_filter else list(METRICS)
    for metric_id in metric_ids:
        if metric_id not in METRICS:
            raise click.ClickException(f"unknown metric {metric_id!r}")
    verdicts = desiderata_grid(metric_ids)
    by_cell = {(v.desideratum, v.metric): v for v in verdicts}
    width = max(len(m) for m in metric_ids) + 2
    header = " " * 22 + "".join(m.ljust(width) for m in metric_ids)
    click.echo(header)
    for d in DESIDERATA:
        marks = "".join(
            ("✓" if by_cell[(d, m)].passed else "✗").ljust(width)
            for m in metric_ids
        )
        click.echo(f"{d:<22}{marks}")
    if witnesses:
        click.echo("")
        for v in verdicts:
            mark = "✓" if v.passed else "✗"
            click.echo(f"{mark} {v.metric} / {v.desideratum}: {v.witness}")


def _read_report_bias_columns(path: Path) -> tuple[list[str], list[dict[str, float]]]:
    """Bias metric columns and row values from one report CSV."""
    if not path.is_file():
        raise click.ClickException(f"report not found: {path}")
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        skip = {"recommender", "hr5", "hr10", "unmatched"}
        metric_cols = [
            c
            for c in fields
            if c not in skip and not c.endswith("_sem") and c in METRICS
        ]
        rows = []
        for record in reader:
            if not record.get("recommender"):
                break  # blank separator before an appended matrix section
            rows.append({c: float(record[c]) for c in metric_cols})
    if not metric_cols:
        raise click.ClickException(f"no metric columns found in {path}")
    return metric_cols, rows


@main.command()
@click.argument("reports", nargs=-1, required=True, type=str)
@click.option("--out", type=str, default=None, help="write the matrix CSV here")
def correlate(reports: tuple[str, ...], out: str | None) -> None:
    """Kendall-tau correlations between bias metrics across report rows."""
    all_rows: list[dict[str, float]] = []
    columns: list[str] | None = None
    for path in reports:
        cols, rows = _read_report_bias_columns(Path(path))
        if columns is None:
            columns = cols
        else:
            columns = [c for c in columns if c in cols]
        all_rows.extend(rows)
    assert columns is not None
    bias_by_metric = {c: [row[c] for row in all_rows] for c in columns}
    try:
        matrix = ev.correlate_metrics(bias_by_metric)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["metric", *matrix.metric_ids])
    for a in matrix.metric_ids:
        writer.writerow(
            [a, *("" if matrix.tau(a, b) is None else f"{matrix.tau(a, b):.4f}" for b in matrix.metric_ids)]
        )
    text = buffer.getvalue()
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    sys.exit(main())
