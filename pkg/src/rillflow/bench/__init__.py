"""Benchmark scenarios: dataset generation, pipelines, latency matching,
run orchestration and reporting."""

from .pipelines import build_pagerank_graph, build_wordcount_graph
from .oracles import pagerank_oracle, wordcount_oracle

__all__ = [
    "build_pagerank_graph",
    "build_wordcount_graph",
    "pagerank_oracle",
    "wordcount_oracle",
]
