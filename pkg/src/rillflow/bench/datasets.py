"""Dataset generation: word streams, synthetic graphs, edge stream shaping."""
from __future__ import annotations

import json
import random
import string
from pathlib import Path

ALPHABET = string.ascii_lowercase


def gen_words(path, n: int, dict_size: int = 5000, word_len: int = 7, seed: int = 0):
    """Write n words uniform over a seeded dictionary of `dict_size`
    distinct lowercase words, one JSONL object per line."""
    if dict_size < 1:
        raise ValueError("dict_size must be >= 1")
    if dict_size > len(ALPHABET) ** word_len:
        raise ValueError(
            f"dict_size {dict_size} exceeds {word_len}-letter alphabet capacity"
        )
    rng = random.Random(seed)
    words: list[str] = []
    seen = set()
    while len(words) < dict_size:
        w = "".join(rng.choice(ALPHABET) for _ in range(word_len))
        if w not in seen:
            seen.add(w)
            words.append(w)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for _ in range(n):
            f.write('{"word":"%s"}\n' % rng.choice(words))
    return path


def gen_powerlaw_edges(n_edges: int, seed: int = 0, out_per_node: int = 2):
    """Seeded preferential-attachment digraph: new nodes draw targets from a
    degree-weighted pool, giving the heavy-tailed shape of social graphs.
    Returns a list of distinct (u, v) label pairs, no self-loops."""
    rng = random.Random(seed)
    edges: list[tuple] = []
    seen = set()
    pool = ["n0", "n1"]
    first = ("n0", "n1")
    edges.append(first)
    seen.add(first)
    node_id = 2
    while len(edges) < n_edges:
        u = f"n{node_id}"
        node_id += 1
        for _ in range(out_per_node):
            if len(edges) >= n_edges:
                break
            v = rng.choice(pool)
            e = (u, v)
            if e in seen or u == v:
                continue
            seen.add(e)
            edges.append(e)
            pool.append(u)
            pool.append(v)
    return edges


def write_edges_jsonl(path, edges):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for u, v in edges:
            f.write(json.dumps({"u": u, "v": v}, separators=(",", ":")) + "\n")
    return path


def read_edges_jsonl(path, limit: int | None = None):
    edges = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            edges.append((obj["u"], obj["v"]))
            if limit is not None and len(edges) >= limit:
                break
    return edges


def gen_edge_stream(edge_file, out_path, batch_size: int, backfill_fraction: float = 0.0):
    """Shape an edge file into an explicit-commit stream: the first
    floor(fraction * E) edges land in epoch 0, the rest commit every
    `batch_size` edges."""
    if not 0 <= backfill_fraction <= 1:
        raise ValueError("backfill_fraction must be in [0, 1]")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    edges = read_edges_jsonl(edge_file)
    prefix = int(backfill_fraction * len(edges))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        def emit(u, v):
            f.write(json.dumps({"u": u, "v": v}, separators=(",", ":")) + "\n")

        for u, v in edges[:prefix]:
            emit(u, v)
        if prefix:
            f.write('{"_action":"commit"}\n')
        since = 0
        for u, v in edges[prefix:]:
            emit(u, v)
            since += 1
            if since == batch_size:
                f.write('{"_action":"commit"}\n')
                since = 0
        if since:
            f.write('{"_action":"commit"}\n')
    return out_path
