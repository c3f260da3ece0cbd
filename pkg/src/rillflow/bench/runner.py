"""Scenario orchestration: wordcount and the three PageRank run modes."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import connectors as conn
from ..core import Update
from ..engine import RunMode, SystemClock, run
from ..graph import SinkSpec
from ..parallel import RawJsonlSource, run_parallel
from .datasets import (
    gen_edge_stream,
    gen_powerlaw_edges,
    gen_words,
    read_edges_jsonl,
    write_edges_jsonl,
)
from .latency import build_report, match_latencies
from .oracles import pagerank_oracle, wordcount_oracle
from .pipelines import build_pagerank_graph, build_wordcount_graph

SCENARIOS = ("wordcount", "pagerank-batch", "pagerank-stream", "pagerank-backfill")


@dataclass
class BenchConfig:
    """Fully serializable; a config plus its seed reproduces a run's logical
    outputs exactly (under the simulated clock, byte-exactly)."""

    scenario: str
    workers: int = 1
    commit_every_records: int | None = None
    commit_every_ms: float | None = None
    seed: int = 0
    dataset: str | None = None
    out_dir: str = "bench-out"
    repeat: int = 5
    verify: bool = False
    # wordcount dataset parameters
    words: int = 1_000_000
    dict_size: int = 5000
    word_len: int = 7
    # pagerank dataset parameters
    edges: int = 20_000
    batch_size: int = 1000
    backfill_fraction: float = 0.9
    steps: int = 5
    # replay / timing
    rate: float | None = None
    burn_in_seconds: float = 0.0
    burn_in_start_fraction: float = 0.1
    clock: str = "simulated"  # "simulated" | "real"
    backend: str = "inline"  # "inline" | "process"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; have {SCENARIOS}")
        if self.commit_every_records is not None and self.commit_every_ms is not None:
            raise ValueError("choose one commit policy, records or millis")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunArtifacts:
    metrics: dict
    input_log: str | None = None
    output_log: str | None = None
    canonical_log: str | None = None
    epoch_walls_ms: list = field(default_factory=list)
    per_commit_state: list = field(default_factory=list)  # pagerank: [{vertexkey: rank}]
    final_state: dict | None = None
    verify_ok: bool | None = None
    verify_detail: str = ""


def _make_clock(cfg: BenchConfig):
    return conn.SimulatedClock() if cfg.clock == "simulated" else SystemClock()


def _canonical_from_log(timed_path, canon_path) -> None:
    """Project the timed update log to the canonical (time-free) stream."""
    with open(timed_path, "r", encoding="utf-8") as src, open(
        canon_path, "w", encoding="utf-8"
    ) as dst:
        for line in src:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            obj.pop("time_ms", None)
            dst.write(json.dumps(obj, separators=(",", ":")) + "\n")


def _accumulate_log(path) -> dict:
    """Streaming fold of an update log into final rows: key -> data dict."""
    state: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            key = obj["key"]
            rows = state.setdefault(key, {})
            rk = tuple(sorted(obj["data"].items()))
            m = rows.get(rk, 0) + obj["diff"]
            if m:
                rows[rk] = m
            else:
                del rows[rk]
            if not rows:
                del state[key]
    out = {}
    for key, rows in state.items():
        ((rk, m),) = rows.items()
        out[key] = dict(rk)
    return out


class _InputLogTee:
    """Wraps a timestamped record stream, logging data records as they are
    admitted (sequence, word, ingress time, burn-in flag)."""

    def __init__(self, stream, path, column: str):
        self._stream = stream
        self._path = path
        self._column = column

    def __iter__(self):
        seq = 0
        with open(self._path, "w", encoding="utf-8") as f:
            for rec in self._stream:
                if isinstance(rec, conn.TimestampedRecord) and isinstance(
                    rec.record, conn.Data
                ):
                    f.write(
                        json.dumps(
                            {
                                "seq": seq,
                                "word": rec.record.payload[self._column],
                                "time_ms": rec.ingress_ms,
                                "burn_in": rec.burn_in,
                            },
                            separators=(",", ":"),
                        )
                        + "\n"
                    )
                    seq += 1
                yield rec


def _wordcount_policy(cfg: BenchConfig) -> conn.CommitPolicy:
    if cfg.commit_every_ms is not None:
        return conn.every_millis(cfg.commit_every_ms)
    return conn.every_n_records(cfg.commit_every_records or 1000)


def run_wordcount(cfg: BenchConfig) -> RunArtifacts:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    words_path = Path(cfg.dataset) if cfg.dataset else out / "words.jsonl"
    if not words_path.exists():
        gen_words(words_path, cfg.words, cfg.dict_size, cfg.word_len, cfg.seed)
    graph = build_wordcount_graph()
    schema = graph.node(graph.sources["words"]).schema
    clock = _make_clock(cfg)
    input_log = str(out / "input.log.jsonl")
    output_log = str(out / "output.log.jsonl")
    canonical_log = str(out / "canonical.log.jsonl")
    sink_specs = {"counts": SinkSpec("jsonl", output_log)}

    throughput_only = cfg.backend == "process" and cfg.rate is None
    t0 = time.perf_counter()
    if throughput_only:
        # raw ingest path: lines parsed inside the workers; no latency log
        source = RawJsonlSource(str(words_path), cfg.commit_every_records or 1000)
        results = list(
            run_parallel(
                graph,
                {"words": source},
                workers=cfg.workers,
                mode=RunMode.STREAMING,
                clock=clock,
                sink_specs=sink_specs,
            )
        )
        input_log = None
    else:
        spec = conn.ReplaySpec(
            mean_throughput=cfg.rate or 100_000.0,
            burn_in_seconds=cfg.burn_in_seconds,
            burn_in_start_fraction=cfg.burn_in_start_fraction,
            seed=cfg.seed,
        )
        pace = cfg.clock == "real" and cfg.rate is not None
        timed = conn.replay(
            conn.read_jsonl_records(str(words_path), schema), spec, clock, pace=pace
        )
        stream = conn.apply_commit_policy(
            _InputLogTee(timed, input_log, "word"), _wordcount_policy(cfg), clock
        )
        runner = run if cfg.backend == "inline" else run_parallel
        kwargs = {"mode": RunMode.STREAMING, "clock": clock, "sink_specs": sink_specs}
        if cfg.backend == "inline":
            kwargs["workers"] = cfg.workers
            results = list(run(graph, {"words": stream}, **kwargs))
        else:
            results = list(
                run_parallel(graph, {"words": stream}, workers=cfg.workers, **kwargs)
            )
    runtime_s = time.perf_counter() - t0
    _canonical_from_log(output_log, canonical_log)

    n_records = sum(r.counters["updates_in"] for r in results)
    art = RunArtifacts(
        metrics={
            "records": n_records,
            "epochs": len(results),
            "runtime_s": runtime_s,
            "records_per_s": n_records / runtime_s if runtime_s > 0 else None,
            "updates_out": sum(r.counters["updates_out"] for r in results),
        },
        input_log=input_log,
        output_log=output_log,
        canonical_log=canonical_log,
        epoch_walls_ms=[r.counters["wall_ms"] for r in results],
    )
    if input_log is not None:
        rep = match_latencies(input_log, output_log)
        art.metrics.update(rep.to_dict())
    if cfg.verify:
        words = []
        with open(words_path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    words.append(json.loads(line)["word"])
        expected = wordcount_oracle(words)
        got_rows = _accumulate_log(canonical_log)
        got = {d["word"]: d["count"] for d in got_rows.values()}
        art.verify_ok = got == expected
        if not art.verify_ok:
            art.verify_detail = (
                f"{len(set(expected.items()) ^ set(got.items()))} differing entries"
            )
    return art


def _pagerank_fraction(cfg: BenchConfig, mode: str) -> float:
    if mode == "pagerank-batch":
        return 1.0
    if mode == "pagerank-stream":
        return 0.0
    return cfg.backfill_fraction


def ensure_edges(cfg: BenchConfig) -> Path:
    """Edge dataset: the configured file (e.g. a LiveJournal prefix converted
    to JSONL) or a seeded synthetic power-law fallback."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.dataset:
        return Path(cfg.dataset)
    path = out / "edges.jsonl"
    if not path.exists():
        write_edges_jsonl(path, gen_powerlaw_edges(cfg.edges, cfg.seed))
    return path


def run_pagerank(cfg: BenchConfig, collect_states: bool = True) -> RunArtifacts:
    mode = cfg.scenario
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges_path = ensure_edges(cfg)
    edges = read_edges_jsonl(edges_path, limit=cfg.edges)
    if len(edges) > cfg.edges:
        edges = edges[: cfg.edges]
    work_edges = out / "edges.capped.jsonl"
    write_edges_jsonl(work_edges, edges)
    fraction = _pagerank_fraction(cfg, mode)
    stream_path = out / "edge_stream.jsonl"
    gen_edge_stream(work_edges, stream_path, cfg.batch_size, fraction)

    graph = build_pagerank_graph(cfg.steps)
    schema = graph.node(graph.sources["edges"]).schema
    clock = _make_clock(cfg)
    records = conn.read_jsonl(str(stream_path), schema, conn.explicit_commits())
    engine_mode = RunMode.BATCH if mode == "pagerank-batch" else (
        RunMode.BACKFILL if mode == "pagerank-backfill" else RunMode.STREAMING
    )

    state: dict = {}
    per_commit = []
    walls = []
    all_updates = []
    t0 = time.perf_counter()
    if cfg.backend == "inline":
        result_iter = run(
            graph, {"edges": records}, workers=cfg.workers, mode=engine_mode, clock=clock
        )
    else:
        result_iter = run_parallel(
            graph, {"edges": records}, workers=cfg.workers, mode=engine_mode, clock=clock
        )
    for r in result_iter:
        for u in r.sink_updates.get("ranks", ()):
            rows = state.setdefault(u.key, {})
            m = rows.get(u.row, 0) + u.diff
            if m:
                rows[u.row] = m
            else:
                del rows[u.row]
            if not rows:
                del state[u.key]
            all_updates.append(u)
        walls.append(r.counters["wall_ms"])
        if collect_states:
            per_commit.append(
                {k: next(iter(rows))[0] for k, rows in state.items()}
            )
    runtime_s = time.perf_counter() - t0

    output_log = str(out / "output.log.jsonl")
    canonical_log = str(out / "canonical.log.jsonl")
    ranks_schema = graph.node(dict(graph.sinks)["ranks"]).schema
    writer = conn.JsonlUpdateWriter(output_log)
    epoch = None
    buf = []
    t_ms = clock.now_ms()
    for u in all_updates:
        if epoch is not None and u.epoch != epoch:
            writer.write(epoch, buf, t_ms, ranks_schema)
            buf = []
        epoch = u.epoch
        buf.append(u)
    if buf:
        writer.write(epoch, buf, t_ms, ranks_schema)
    writer.close()
    _canonical_from_log(output_log, canonical_log)

    final = {k: next(iter(rows))[0] for k, rows in state.items()}
    art = RunArtifacts(
        metrics={
            "edges": len(edges),
            "epochs": len(walls),
            "runtime_s": runtime_s,
            "epoch0_wall_ms": walls[0] if walls else None,
            "updates_out": len(all_updates),
        },
        output_log=output_log,
        canonical_log=canonical_log,
        epoch_walls_ms=walls,
        per_commit_state=per_commit,
        final_state=final,
    )
    if cfg.verify:
        _verify_pagerank(cfg, mode, edges, fraction, art)
    return art


def _prefix_sizes(n_edges: int, batch_size: int, fraction: float) -> list:
    """Edge-count prefix covered by each successive commit."""
    prefix = int(fraction * n_edges)
    sizes = []
    if prefix:
        sizes.append(prefix)
    at = prefix
    while at < n_edges:
        at = min(at + batch_size, n_edges)
        sizes.append(at)
    if not sizes:
        sizes.append(0)
    return sizes


def _verify_pagerank(cfg, mode, edges, fraction, art: RunArtifacts) -> None:
    sizes = _prefix_sizes(len(edges), cfg.batch_size, fraction)
    problems = []
    if mode == "pagerank-stream":
        if len(art.per_commit_state) != len(sizes):
            problems.append(
                f"expected {len(sizes)} commits, saw {len(art.per_commit_state)}"
            )
        for i, (n, got) in enumerate(zip(sizes, art.per_commit_state)):
            want = sorted(pagerank_oracle(edges[:n], cfg.steps).values())
            if sorted(got.values()) != want:
                problems.append(f"commit {i} (prefix {n}) diverges from oracle")
    else:
        want = sorted(pagerank_oracle(edges, cfg.steps).values())
        if sorted(art.final_state.values()) != want:
            problems.append("final ranks diverge from oracle")
    art.verify_ok = not problems
    art.verify_detail = "; ".join(problems)


def run_scenario(cfg: BenchConfig) -> dict:
    """Repeat the configured scenario, saving logs and the report; returns
    {"summary", "verify_ok", "paths"}."""
    from .report import save_report, summarize_runs

    runs = []
    verify_ok = True
    for i in range(cfg.repeat):
        if cfg.scenario == "wordcount":
            art = run_wordcount(cfg)
        else:
            art = run_pagerank(cfg, collect_states=cfg.verify)
        m = dict(art.metrics)
        if art.verify_ok is not None:
            m["verify_ok"] = art.verify_ok
            if not art.verify_ok:
                verify_ok = False
                m["verify_detail"] = art.verify_detail
        runs.append(m)
    summary = summarize_runs(runs)
    jp, tp = save_report(cfg.out_dir, cfg.to_dict(), summary)
    return {"summary": summary, "verify_ok": verify_ok, "paths": {"report_json": str(jp), "report_txt": str(tp)}}
