"""Process-pool execution backend: W worker processes run the same graph
SPMD, each owning its key partition of every stateful operator.

Per epoch the parent scatters record chunks round-robin (workers parse and
key them in parallel), workers exchange routed deltas peer-to-peer in
lockstep topological order, and sink deltas flow back to the parent, which
consolidates exactly like the inline backend. Chunks never span a commit,
and records carry stream sequence numbers so source admission order is
identical to the single-process engine. Flushes are pipelined a few epochs
deep; results are still yielded strictly in epoch order.
"""
from __future__ import annotations

import json
import multiprocessing as mp
import time
import traceback
from dataclasses import dataclass

from .core import Update, hash_key, row_sort_key
from .engine import EpochResult, RunMode, SystemClock, epoch_events
from .graph import OperatorGraph, SinkSpec
from .ops import EngineError, NodeExecutor, WorkerPlan, consolidate_deltas
from . import connectors as conn

CHUNK_RECORDS = 4096
PIPELINE_DEPTH = 4
GATHER_TIMEOUT_S = 600


@dataclass
class RawJsonlSource:
    """A JSONL file of insert-only records, parsed inside the workers.

    Commit placement is by record count, so the parent only counts lines.
    Streams containing "_action" records need the parsed `read_jsonl` path.
    """

    path: str
    commit_every: int | None = None  # None: everything in epoch 0


def _worker_main(graph, idx, W, in_q, mesh, out_q):
    try:
        plan = WorkerPlan(W)
        execs = [NodeExecutor(n, graph, plan) for n in graph.nodes]
        source_info = {}
        for name, nid in graph.sources.items():
            node = graph.node(nid)
            key_idx = tuple(node.schema.index(c) for c in node.params["key_columns"])
            source_info[name] = (node.schema, key_idx)
        pending = {}  # epoch -> source -> list of (seq, op, key, row)

        def keyed(source, seq, kind, payload):
            schema, key_idx = source_info[source]
            row = tuple(payload[name] for name in schema.names)
            key = hash_key([row[i] for i in key_idx])
            return (seq, "i" if kind == "insert" else "d", key, row)

        while True:
            msg = in_q.get()
            tag = msg[0]
            if tag == "stop":
                return
            if tag == "chunk":
                _, epoch, source, start_seq, body, raw = msg
                recs = pending.setdefault(epoch, {}).setdefault(source, [])
                if raw:
                    schema, key_idx = source_info[source]
                    names = schema.names
                    for j, line in enumerate(body):
                        obj = json.loads(line)
                        if "_action" in obj:
                            raise EngineError(
                                "raw-source",
                                "streams with _action records need the parsed reader",
                            )
                        row = tuple(obj[n] for n in names)
                        key = hash_key([row[i] for i in key_idx])
                        recs.append((start_seq + j, "i", key, row))
                else:
                    for j, (kind, payload) in enumerate(body):
                        recs.append(keyed(source, start_seq + j, kind, payload))
                continue

            # tag == "flush": run one epoch through the whole graph
            _, epoch = msg
            t0 = time.perf_counter()
            mine = pending.pop(epoch, {})
            buckets = {name: [[] for _ in range(W)] for name in graph.sources}
            for name, recs in mine.items():
                per = buckets[name]
                for rec in recs:
                    per[(int(rec[2]) >> 64) % W].append(rec)
            own_src = None
            for dest in range(W):
                payload = {name: per[dest] for name, per in buckets.items()}
                if dest == idx:
                    own_src = payload
                else:
                    mesh[idx][dest].put(("src", epoch, idx, payload))
            merged = {name: [] for name in graph.sources}
            for frm in range(W):
                if frm == idx:
                    payload = own_src
                else:
                    m = mesh[frm][idx].get()
                    assert m[0] == "src" and m[1] == epoch and m[2] == frm
                    payload = m[3]
                for name, recs in payload.items():
                    merged[name].extend(recs)

            outs = {}
            updates_in = 0
            sink_out = {}
            for node in graph.nodes:
                ex = execs[node.id]
                if node.kind == "source":
                    recs = merged[node.params["name"]]
                    recs.sort(key=lambda r: r[0])  # restore stream order
                    out = ex.apply_shard(idx, epoch, [[r[1:] for r in recs]])
                    updates_in += len(out)
                    outs[node.id] = out
                elif node.kind == "sink":
                    sink_out[node.params["name"]] = outs[node.inputs[0]]
                elif node.kind in ("select", "filter"):
                    src = outs[node.inputs[0]]
                    out = ex.apply_shard(idx, epoch, [src]) if src else []
                    outs[node.id] = consolidate_deltas(out) if out else []
                else:
                    per_input = []
                    for i, input_id in enumerate(node.inputs):
                        routed = ex.route(i, outs[input_id], epoch)
                        own = None
                        for dest in range(W):
                            if dest == idx:
                                own = routed[dest]
                            else:
                                mesh[idx][dest].put(
                                    ("x", epoch, node.id, i, idx, routed[dest])
                                )
                        gathered = []
                        for frm in range(W):
                            if frm == idx:
                                gathered.extend(own)
                            else:
                                m = mesh[frm][idx].get()
                                assert m[0] == "x" and m[2] == node.id and m[3] == i
                                gathered.extend(m[5])
                        per_input.append(gathered)
                    out = ex.apply_shard(idx, epoch, per_input)
                    outs[node.id] = consolidate_deltas(out) if out else []
            counters = {
                "updates_in": updates_in,
                "arrangement_rows": sum(ex.state_rows() for ex in execs),
                "worker_wall_ms": (time.perf_counter() - t0) * 1000.0,
            }
            out_q.put(("sink", epoch, idx, sink_out, counters))
    except BaseException:
        out_q.put(("error", idx, traceback.format_exc()))


def _raw_events(source: RawJsonlSource):
    """("chunk", epoch, start_seq, lines) / ("flush", epoch) events with
    chunks aligned to commit boundaries."""
    n = source.commit_every
    epoch = 0
    seq = 0
    buf: list = []
    emitted = False

    def drain():
        nonlocal seq, buf
        start = seq
        for i in range(0, len(buf), CHUNK_RECORDS):
            yield ("chunk", epoch, start + i, buf[i : i + CHUNK_RECORDS])
        seq += len(buf)
        buf = []

    with open(source.path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            buf.append(line)
            if n is not None and len(buf) == n:
                yield from drain()
                yield ("flush", epoch)
                emitted = True
                epoch += 1
    if buf or not emitted:
        yield from drain()
        yield ("flush", epoch)


class _SinkStage:
    """Parent-side sink handling shared with result gathering."""

    def __init__(self, graph, sink_specs, clock):
        self.graph = graph
        self.clock = clock
        self.writers = {}
        self.collect = set()
        overrides = sink_specs or {}
        for n in graph.nodes:
            if n.kind != "sink":
                continue
            name = n.params["name"]
            spec: SinkSpec = overrides.get(name, n.params["spec"])
            if spec.kind == "collect":
                self.collect.add(name)
            elif spec.kind == "null":
                self.writers[name] = conn.NullSink()
            else:
                self.writers[name] = conn.JsonlUpdateWriter(spec.path)
        self.schemas = {name: graph.node(nid).schema for name, nid in graph.sinks}

    def emit(self, epoch, per_worker, counters_sum, wall_ms) -> EpochResult:
        result = EpochResult(epoch=epoch)
        for name, _ in self.graph.sinks:
            deltas = []
            for sink_out in per_worker:
                deltas.extend(sink_out.get(name, ()))
            merged = consolidate_deltas(deltas)
            merged.sort(key=lambda d: (int(d[0]), row_sort_key(d[1])))
            updates = [Update(k, row, d, epoch) for k, row, d in merged]
            result.counters[f"sink_{name}_updates"] = len(updates)
            if name in self.collect:
                result.sink_updates[name] = updates
            writer = self.writers.get(name)
            if writer is not None:
                writer.write(epoch, updates, self.clock.now_ms(), self.schemas[name])
        result.counters.update(counters_sum)
        result.counters["epoch"] = epoch
        result.counters["updates_out"] = sum(
            result.counters.get(f"sink_{name}_updates", 0)
            for name, _ in self.graph.sinks
        )
        result.counters["wall_ms"] = wall_ms
        return result

    def close(self):
        for w in self.writers.values():
            w.close()


def run_parallel(graph: OperatorGraph, inputs: dict, *, workers: int = 2,
                 mode: RunMode = RunMode.STREAMING, clock=None,
                 sink_specs: dict | None = None):
    """Run the graph on `workers` processes; yields EpochResults exactly as
    the inline backend does (same consolidation and canonical ordering)."""
    if isinstance(mode, str):
        mode = RunMode(mode)
    W = workers
    if W < 1:
        raise ValueError("workers must be >= 1")
    clock = clock if clock is not None else SystemClock()
    ctx = mp.get_context()
    in_qs = [ctx.Queue(maxsize=64) for _ in range(W)]
    mesh = [[ctx.Queue() if i != j else None for j in range(W)] for i in range(W)]
    out_q = ctx.Queue()
    procs = [
        ctx.Process(target=_worker_main, args=(graph, w, W, in_qs[w], mesh, out_q), daemon=True)
        for w in range(W)
    ]
    for p in procs:
        p.start()
    sinks = _SinkStage(graph, sink_specs, clock)

    flush_sent: list = []  # epochs flushed but not yet gathered
    flush_t0: dict = {}
    stash: dict = {}  # epoch -> [per-worker sink_out], counters

    def fail(message):
        for p in procs:
            if p.is_alive():
                p.terminate()
        raise EngineError("parallel", message)

    def gather_one() -> EpochResult:
        epoch = flush_sent.pop(0)
        while True:
            slot = stash.get(epoch)
            if slot is not None and slot[2] == W:
                break
            try:
                msg = out_q.get(timeout=GATHER_TIMEOUT_S)
            except Exception:
                fail("timed out waiting for workers")
            if msg[0] == "error":
                fail(f"worker {msg[1]} failed:\n{msg[2]}")
            _, e, idx, sink_out, counters = msg
            slot = stash.setdefault(e, [[None] * W, {"updates_in": 0, "arrangement_rows": 0}, 0])
            slot[0][idx] = sink_out
            for k in slot[1]:
                slot[1][k] += counters[k]
            slot[2] += 1
        per_worker, counters_sum, _ = stash.pop(epoch)
        wall = (time.perf_counter() - flush_t0.pop(epoch)) * 1000.0
        return sinks.emit(epoch, per_worker, counters_sum, wall)

    def send_flush(epoch):
        flush_t0[epoch] = time.perf_counter()
        for q in in_qs:
            q.put(("flush", epoch))
        flush_sent.append(epoch)

    closed_total = 0
    try:
        raw = {name: s for name, s in inputs.items() if isinstance(s, RawJsonlSource)}
        if raw:
            if len(inputs) != 1:
                fail("raw sources support single-source graphs only")
            name, source = next(iter(raw.items()))
            rr = 0
            for ev in _raw_events(source):
                if ev[0] == "chunk":
                    _, epoch, start_seq, lines = ev
                    in_qs[rr % W].put(("chunk", epoch, name, start_seq, lines, True))
                    rr += 1
                else:
                    send_flush(ev[1])
                    closed_total += 1
                    while len(flush_sent) > PIPELINE_DEPTH:
                        yield gather_one()
        else:
            rr = 0
            seqs = {name: 0 for name in graph.sources}
            for ev in epoch_events(graph, inputs):
                if ev[0] == "data":
                    _, name, epoch, records = ev
                    for i in range(0, len(records), CHUNK_RECORDS):
                        part = records[i : i + CHUNK_RECORDS]
                        in_qs[rr % W].put(("chunk", epoch, name, seqs[name], part, False))
                        rr += 1
                        seqs[name] += len(part)
                else:
                    send_flush(ev[1])
                    closed_total += 1
                    while len(flush_sent) > PIPELINE_DEPTH:
                        yield gather_one()
                if mode is RunMode.BATCH and closed_total > 1:
                    fail("batch mode closed more than one epoch")
        while flush_sent:
            yield gather_one()
    finally:
        for q in in_qs:
            q.put(("stop",))
        for p in procs:
            p.join(timeout=10)
            if p.is_alive():
                p.terminate()
        sinks.close()
