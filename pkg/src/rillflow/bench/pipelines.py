"""The two benchmark pipelines, built on the public Table API."""
from __future__ import annotations

from ..core import ValueType
from ..exprs import col, if_else, key_of, this_id
from ..graph import GraphBuilder, SinkSpec, concat, count, int_sum, update_rows


def build_wordcount_graph(sink_spec: SinkSpec | None = None):
    """source(word) -> groupby(word) -> count -> sink."""
    b = GraphBuilder()
    words = b.source("words", {"word": ValueType.STR}, key=["word"])
    counts = words.group_by(word=col("word")).reduce(count=count())
    b.sink(counts, "counts", sink_spec)
    return b.build()


def build_pagerank_graph(steps: int = 5, sink_spec: SinkSpec | None = None):
    """Iterative integer PageRank over an edge table, iteration unrolled.

    Per step each vertex sends floor(rank*5 / degree*6) surfers along each
    out-edge and every vertex receives a base grant of 1000; vertices with
    no in-edges keep inflow 0 via the `base` side of the concat.
    """
    b = GraphBuilder()
    edges = b.source(
        "edges", {"u": ValueType.STR, "v": ValueType.STR}, key=["u", "v"]
    )
    in_vertices = edges.group_by(col("v")).reduce(degree=int_sum(0))
    out_vertices = edges.group_by(col("u")).reduce(degree=count())
    degrees = update_rows(in_vertices, out_vertices)
    base = out_vertices.difference(in_vertices).select(flow=0)

    ranks = degrees.select(rank=6_000)

    for _ in range(steps):
        with_rank = degrees.ix_join(ranks, this_id(), columns=["rank"])
        outflow = with_rank.select(
            flow=if_else(
                col("degree") == 0, 0, (col("rank") * 5) // (col("degree") * 6)
            )
        )
        edge_flow = edges.ix_join(outflow, key_of(col("u")), columns=["flow"])
        inflows = edge_flow.group_by(col("v")).reduce(flow=int_sum(col("flow")))
        inflows = concat(base, inflows)
        ranks = inflows.select(rank=col("flow") + 1_000)

    b.sink(ranks, "ranks", sink_spec)
    return b.build()
