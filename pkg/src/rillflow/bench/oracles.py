"""Independent straight-line oracles used by --verify and the test suite.

These implement the benchmark semantics directly over plain dicts, with no
dataflow machinery, so engine results can be checked against a second,
unrelated code path.
"""
from __future__ import annotations

from collections import Counter


def wordcount_oracle(words) -> dict:
    """word -> total occurrences (single-pass hash-map counter)."""
    return dict(Counter(words))


def pagerank_oracle(edges, steps: int = 5) -> dict:
    """vertex label -> integer rank after `steps` rounds of the recurrence.

    edges: iterable of (u, v) label pairs; duplicates count as parallel
    edges (they add to out-degree and deliver flow once each).
    """
    edges = list(edges)
    out_degree = Counter(u for u, _ in edges)
    has_in = {v for _, v in edges}
    vertices = set(out_degree) | has_in
    degree = {x: out_degree.get(x, 0) for x in vertices}
    rank = {x: 6_000 for x in vertices}
    for _ in range(steps):
        outflow = {
            x: 0 if degree[x] == 0 else (rank[x] * 5) // (degree[x] * 6)
            for x in vertices
        }
        inflow = {x: 0 for x in vertices}
        for u, v in edges:
            inflow[v] += outflow[u]
        # vertices without in-edges get the base grant only
        rank = {x: (inflow[x] if x in has_in else 0) + 1_000 for x in vertices}
    return rank
