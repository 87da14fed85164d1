"""Command-line entry points.

    conceptsearch index CORPUS --out DIR        build an index from a corpus
    conceptsearch search DIR --query "..."      query an index
    conceptsearch eval DIR BENCHMARK            run retrieval metrics
    conceptsearch validate-annotations FILE     run the annotation validators
    conceptsearch loss-check                    verify losses and gradients
    conceptsearch serve DIR --port P            start the HTTP API

A corpus is either a ``.jsonl`` file of ``{"id", "source", "language"}``
records or a directory tree of source files (id = relative path, language
from the file extension).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from conceptsearch import __version__
from conceptsearch.annotation import validate, validation_report
from conceptsearch.config import build_provider, load_settings
from conceptsearch.evaluation import run_benchmark
from conceptsearch.index import Index
from conceptsearch.training import (
    ConceptExample,
    FocalParams,
    NegativeCandidate,
    NegativeProvenance,
    alignment_loss,
    focal_loss,
    gradient_relative_error,
    numeric_gradient,
    select_hard_negatives,
    total_loss,
)

_EXT_LANGUAGE = {
    ".py": "python",
    ".rb": "ruby",
    ".js": "javascript",
    ".go": "go",
    ".java": "java",
    ".php": "php",
}


def _load_corpus(corpus: Path):
    if corpus.is_file():
        with open(corpus, encoding="utf-8") as fp:
            for line in fp:
                line = line.strip()
                if line:
                    record = json.loads(line)
                    yield record["id"], record["source"], record.get("language", "other")
        return
    for path in sorted(corpus.rglob("*")):
        if path.is_file() and path.suffix in _EXT_LANGUAGE:
            yield (
                str(path.relative_to(corpus)),
                path.read_text(encoding="utf-8"),
                _EXT_LANGUAGE[path.suffix],
            )


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(), default=None, help="Provider config file (TOML).")
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    ctx.obj = load_settings(config_path)


@main.command("index")
@click.argument("corpus", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.pass_obj
def index_command(settings, corpus: Path, out_dir: Path) -> None:
    """Analyze, embed, and persist a corpus into a new index."""
    provider = build_provider(settings)
    index = Index.create(out_dir, provider)
    stats = index.ingest(_load_corpus(corpus))
    click.echo(
        f"indexed {len(stats.added)} entries ({stats.total_tokens} tokens) into {out_dir}"
    )
    for candidate_id, error in stats.skipped:
        click.echo(f"skipped {candidate_id}: {error}", err=True)


@main.command("search")
@click.argument("index_dir", type=click.Path(exists=True, path_type=Path))
@click.option("--query", required=True)
@click.option("--top-k", default=5, show_default=True)
@click.option("--delta-highlight", type=float, default=None)
@click.option("--delta-cluster", type=float, default=None)
@click.option("--json", "as_json", is_flag=True, help="Emit the wire-format JSON.")
@click.pass_obj
def search_command(settings, index_dir: Path, query: str, top_k: int,
                   delta_highlight: float | None, delta_cluster: float | None,
                   as_json: bool) -> None:
    """Search an index and print ranked, explained results."""
    provider = build_provider(settings)
    index = Index.open(index_dir, provider)
    outcome = index.search(
        query, top_k=top_k, delta_highlight=delta_highlight, delta_cluster=delta_cluster
    )
    if as_json:
        payload = {
            "concepts": [
                {
                    "id": k,
                    "token_spans": [
                        [outcome.query_tokens[i].start, outcome.query_tokens[i].end]
                        for i in concept.token_indices
                    ],
                    "fallback": concept.fallback,
                }
                for k, concept in enumerate(outcome.concepts)
            ],
            "results": [
                {
                    "id": r.candidate_id,
                    "score": r.score,
                    "degenerate": r.degenerate,
                    "matches": [
                        {"concept": m.concept, "line": m.line_index, "similarity": m.similarity}
                        for m in r.matches
                    ],
                    "source": index.entry(r.candidate_id).source,
                }
                for r in outcome.results
            ],
        }
        click.echo(json.dumps(payload, indent=2))
        return

    for diagnostic in outcome.diagnostics:
        click.echo(f"note: {diagnostic}", err=True)
    for k, concept in enumerate(outcome.concepts):
        words = " ".join(outcome.query_tokens[i].text for i in concept.token_indices)
        label = words if words else "(whole query)"
        click.echo(f"concept {k}: {label}" + (" [fallback]" if concept.fallback else ""))
    for rank_pos, result in enumerate(outcome.results, start=1):
        flag = " [no aligned lines]" if result.degenerate else ""
        click.echo(f"{rank_pos:2d}. {result.candidate_id}  score={result.score:.4f}{flag}")
        for m in result.matches:
            lines = index.entry(result.candidate_id).source.splitlines()
            text = lines[m.line_index].strip() if m.line_index < len(lines) else ""
            click.echo(f"      concept {m.concept} -> line {m.line_index} ({m.similarity:.4f}): {text}")


@main.command("eval")
@click.argument("index_dir", type=click.Path(exists=True, path_type=Path))
@click.argument("benchmark", type=click.Path(exists=True, path_type=Path))
@click.option("--metric", type=click.Choice(["mrr", "mmrr", "all"]), default="all", show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def eval_command(settings, index_dir: Path, benchmark: Path, metric: str, as_json: bool) -> None:
    """Run retrieval metrics for a benchmark file against an index."""
    provider = build_provider(settings)
    index = Index.open(index_dir, provider)
    metrics = ("mrr", "mmrr") if metric == "all" else (metric,)
    report = run_benchmark(index, benchmark, metrics=metrics)
    if as_json:
        click.echo(json.dumps(report, indent=2))
        return
    click.echo(f"queries evaluated: {report['queries']}  skipped: {report['skipped']}")
    for name in metrics:
        if name in report:
            click.echo(f"{name.upper():6s} {report[name]:.6f}")


@main.command("validate-annotations")
@click.argument("annotations", type=click.Path(exists=True, path_type=Path))
@click.option("--json", "as_json", is_flag=True)
def validate_command(annotations: Path, as_json: bool) -> None:
    """Validate annotation records; nonzero exit if any record fails."""
    outcomes = []
    with open(annotations, encoding="utf-8") as fp:
        for i, line in enumerate(fp):
            line = line.strip()
            if line:
                outcomes.append(validate(line, record_id=str(i)))
    report = validation_report(outcomes)
    if as_json:
        click.echo(json.dumps(report, indent=2))
    else:
        click.echo(f"records: {report['total_attempts']}")
        for status, count in report["counts"].items():
            click.echo(f"  {status}: {count}")
        for outcome in outcomes:
            for assertion, detail in outcome.violations:
                click.echo(f"  record {outcome.record_id}: {assertion}: {detail}", err=True)
    failed = sum(v for k, v in report["counts"].items() if k != "pass")
    sys.exit(1 if failed else 0)


@main.command("loss-check")
@click.option("--cases", default=25, show_default=True, help="Seeded cases per check.")
@click.option("--tolerance", default=1e-4, show_default=True)
def loss_check_command(cases: int, tolerance: float) -> None:
    """Verify loss values and analytic gradients against finite differences."""
    from conceptsearch.embedding import TestEmbedProvider

    rng = np.random.default_rng(7)
    reference = TestEmbedProvider(dimension=32, seed=99)
    rows: list[tuple[str, float, float, bool]] = []

    # focal loss: value identity at gamma=0 and gradient check
    worst_focal = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 12))
        p = rng.uniform(0.02, 0.98, n)
        y = (rng.random(n) < 0.5).astype(float)
        params = FocalParams(alpha=float(rng.uniform(0.1, 0.9)), gamma=float(rng.choice([0.0, 1.0, 2.0])))
        report = focal_loss(p, y, params)
        numeric = numeric_gradient(lambda q: focal_loss(q, y, params).value, p.copy())
        worst_focal = max(worst_focal, gradient_relative_error(report.gradients["p"], numeric))
    bce = focal_loss(np.array([0.3, 0.8]), np.array([1.0, 0.0]), FocalParams(alpha=0.5, gamma=0.0))
    expected = 0.5 * (-(np.log(0.3) + np.log(0.2)))
    focal_identity = abs(bce.value - expected)
    rows.append(("focal loss == 0.5 x BCE at gamma=0", focal_identity, 1e-12, focal_identity <= 1e-12))
    rows.append(("focal loss gradient vs finite differences", worst_focal, tolerance, worst_focal <= tolerance))

    # alignment loss: ln(K+1) identity and gradient check
    dim = 8
    worst_align = 0.0
    for _ in range(cases):
        n_neg = int(rng.integers(1, 6))
        example = ConceptExample(
            query_text="q",
            query_span=rng.standard_normal(dim),
            positive_span=rng.standard_normal(dim),
            negatives=tuple(
                NegativeCandidate(
                    embedding=rng.standard_normal(dim),
                    provenance=NegativeProvenance.INTER_SAMPLE,
                    description="d",
                )
                for _ in range(n_neg)
            ),
        )
        report = alignment_loss([example], tau=0.1)

        def loss_of_query(q, example=example):
            shifted = ConceptExample(
                query_text=example.query_text,
                query_span=q,
                positive_span=example.positive_span,
                negatives=example.negatives,
            )
            return alignment_loss([shifted], tau=0.1).value

        numeric = numeric_gradient(loss_of_query, example.query_span.copy())
        worst_align = max(
            worst_align,
            gradient_relative_error(report.gradients["query_spans"][0], numeric),
        )
    k = 3
    base = np.ones(dim)
    equal = ConceptExample(
        query_text="q",
        query_span=base,
        positive_span=base * 2.0,
        negatives=tuple(
            NegativeCandidate(
                embedding=base * float(s),
                provenance=NegativeProvenance.INTRA_SAMPLE,
                description="d",
            )
            for s in (3.0, 4.0, 5.0)
        ),
    )
    equal_err = abs(alignment_loss([equal], tau=0.1).value - np.log(k + 1))
    rows.append(("alignment loss == ln(K+1) at equal similarity", equal_err, 1e-9, equal_err <= 1e-9))
    rows.append(("alignment loss gradient vs finite differences", worst_align, tolerance, worst_align <= tolerance))

    # hard negative selection vs a full sort, and total loss additivity
    example = ConceptExample(
        query_text="query text",
        query_span=rng.standard_normal(dim),
        positive_span=rng.standard_normal(dim),
        negatives=tuple(
            NegativeCandidate(
                embedding=rng.standard_normal(dim),
                provenance=NegativeProvenance.INTER_SAMPLE,
                description=f"description {i}",
            )
            for i in range(20)
        ),
    )
    reference32 = TestEmbedProvider(dimension=32, seed=99)
    selected = select_hard_negatives([example], k=5, reference=reference32)[0]
    ordering_ok = list(selected.scores) == sorted(selected.scores, reverse=True)
    rows.append(("hard negatives sorted by descending score", 0.0 if ordering_ok else 1.0, 0.0, ordering_ok))

    f1 = focal_loss(np.array([0.4]), np.array([1.0]), FocalParams())
    f2 = focal_loss(np.array([0.6]), np.array([0.0]), FocalParams())
    al = alignment_loss([example], tau=0.1)
    combined = total_loss(f1, f2, al)
    additive = abs(combined.value - (f1.value + f2.value + al.value))
    rows.append(("total loss equals component sum", additive, 0.0, additive == 0.0))

    width = max(len(name) for name, *_ in rows)
    click.echo(f"{'check'.ljust(width)}  {'error':>12}  {'tolerance':>10}  result")
    failed = False
    for name, error, tol, ok in rows:
        click.echo(f"{name.ljust(width)}  {error:12.3e}  {tol:10.0e}  {'ok' if ok else 'FAIL'}")
        failed = failed or not ok
    sys.exit(1 if failed else 0)


@main.command("serve")
@click.argument("index_dir", type=click.Path(exists=True, path_type=Path))
@click.option("--port", default=8600, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--console", "console_dir", type=click.Path(exists=True), default=None,
              help="Static directory with the search console build.")
@click.pass_obj
def serve_command(settings, index_dir: Path, port: int, host: str, console_dir: str | None) -> None:
    """Serve the HTTP search API (and optionally the console UI)."""
    import uvicorn

    from conceptsearch.server import make_search_app

    provider = build_provider(settings)
    index = Index.open(index_dir, provider)
    app = make_search_app(index, console_dir=console_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
