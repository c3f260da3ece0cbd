"""Benchmark CLI.

    rillflow-bench wordcount --words 1000000 --commit-every-records 1000 --out run1
    rillflow-bench pagerank-stream --edges 20000 --batch-size 1000 --verify --out run2
    rillflow-bench pagerank-backfill --backfill-fraction 0.9 --out run3

Outputs in --out: input.log.jsonl (wordcount), output.log.jsonl,
canonical.log.jsonl, report.json, report.txt. With --verify the exit code
is nonzero on any oracle mismatch.
"""
from __future__ import annotations

import sys

import click

from .runner import BenchConfig, run_scenario


def _common(f):
    opts = [
        click.option("--workers", type=int, default=1, show_default=True),
        click.option("--commit-every-records", type=int, default=None,
                     help="Commit every N data records."),
        click.option("--commit-every-ms", type=float, default=None,
                     help="Commit on ingress-time boundaries (wordcount)."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--dataset", type=click.Path(), default=None,
                     help="Input dataset path (generated when omitted)."),
        click.option("--batch-size", type=int, default=1000, show_default=True),
        click.option("--backfill-fraction", type=float, default=0.9, show_default=True),
        click.option("--repeat", type=int, default=5, show_default=True,
                     help="Run count; the median of all runs is reported."),
        click.option("--out", "out_dir", type=click.Path(), default="bench-out",
                     show_default=True),
        click.option("--verify", is_flag=True,
                     help="Check results against the independent oracle; exit 1 on mismatch."),
        click.option("--clock", type=click.Choice(["simulated", "real"]),
                     default="simulated", show_default=True),
        click.option("--backend", type=click.Choice(["inline", "process"]),
                     default="inline", show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


@click.group()
def main():
    """Desk-scale wordcount and PageRank benchmarks."""


def _finish(cfg: BenchConfig):
    res = run_scenario(cfg)
    med = res["summary"].get("median", {})
    click.echo(f"runs: {cfg.repeat}  median runtime_s: {med.get('runtime_s')}")
    if "records_per_s" in med:
        click.echo(f"median throughput: {med.get('records_per_s'):.0f} records/s")
    pcts = res["summary"].get("median_percentiles_ms")
    if pcts:
        click.echo(
            "median latency: "
            + ", ".join(f"p{q}={pcts[q]}" for q in sorted(pcts) if pcts[q] is not None)
        )
    click.echo(f"report: {res['paths']['report_json']}")
    if cfg.verify:
        click.echo(f"verify: {'ok' if res['verify_ok'] else 'MISMATCH'}")
        if not res["verify_ok"]:
            sys.exit(1)


@main.command()
@_common
@click.option("--words", type=int, default=1_000_000, show_default=True)
@click.option("--dict-size", type=int, default=5000, show_default=True)
@click.option("--word-len", type=int, default=7, show_default=True)
@click.option("--rate", type=float, default=None,
              help="Replay rate, records/s (paced under --clock real).")
@click.option("--burn-in-seconds", type=float, default=0.0, show_default=True)
@click.option("--burn-in-start-fraction", type=float, default=0.1, show_default=True)
def wordcount(**kw):
    """Streaming wordcount with latency matching."""
    _finish(BenchConfig(scenario="wordcount", **kw))


def _pagerank_cmd(name: str, doc: str):
    @main.command(name=name, help=doc)
    @_common
    @click.option("--edges", type=int, default=20_000, show_default=True)
    @click.option("--steps", type=int, default=5, show_default=True)
    def cmd(**kw):
        kw.pop("commit_every_ms", None)
        kw.pop("commit_every_records", None)
        _finish(BenchConfig(scenario=name, **kw))

    return cmd


_pagerank_cmd("pagerank-batch", "PageRank, single epoch over the whole edge set.")
_pagerank_cmd("pagerank-stream", "PageRank, commits every --batch-size edges from empty.")
_pagerank_cmd(
    "pagerank-backfill",
    "PageRank: epoch 0 holds --backfill-fraction of edges, the rest stream.",
)


if __name__ == "__main__":
    main()
