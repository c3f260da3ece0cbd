from __future__ import annotations

import rillflow as rf
from rillflow.connectors import COMMIT, Data


def words_graph():
    from rillflow.bench.pipelines import build_wordcount_graph

    return build_wordcount_graph()


def pagerank_graph(steps: int = 5):
    from rillflow.bench.pipelines import build_pagerank_graph

    return build_pagerank_graph(steps)


def insert(payload: dict) -> Data:
    return Data("insert", payload)


def delete(payload: dict) -> Data:
    return Data("delete", payload)


def stream_of(payloads, commit_every=None):
    """Insert records with a commit every `commit_every` (or only at end)."""
    recs = []
    for i, p in enumerate(payloads, start=1):
        recs.append(insert(p))
        if commit_every and i % commit_every == 0:
            recs.append(COMMIT)
    recs.append(COMMIT)
    return recs


def final_rows(results, sink: str) -> list:
    """Accumulated sink state as a sorted list of rows (with multiplicity)."""
    state = rf.accumulate_sink(results, sink)
    out = []
    for row, m in state.values():
        out.extend([row] * m)
    out.sort()
    return out


def run_rows(graph, inputs, sink, **kw) -> list:
    return final_rows(rf.run_to_results(graph, inputs, **kw), sink)
