"""Epoch-driven execution of an operator graph.

The same graph runs in batch (one epoch), streaming (commit-driven epochs)
and backfill (large epoch 0, then streaming) modes. Per closed epoch the
scheduler drains every operator once in topological order; sinks receive
the consolidated per-epoch difference, never intermediate churn.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

from .core import Key, Update, hash_key, row_sort_key
from .graph import OperatorGraph, SinkSpec
from .ops import EngineError, NodeExecutor, WorkerPlan, consolidate_deltas
from . import connectors as conn


class RunMode(Enum):
    BATCH = "batch"
    STREAMING = "streaming"
    BACKFILL = "backfill"


class SystemClock:
    def __init__(self):
        self._t0 = time.monotonic()

    def now_ms(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0


def sink_sort_key(schema):
    """Canonical (key, row) ordering for one sink's updates. Rows are
    column-wise homogeneous, so plain tuple comparison works unless the
    schema contains floats or none (those need the total-order mapping)."""
    from .core import ValueType

    plain = all(t not in (ValueType.FLOAT, ValueType.NONE) for _, t in schema.columns)
    if plain:
        return lambda d: (d[0], d[1])
    return lambda d: (int(d[0]), row_sort_key(d[1]))


@dataclass
class EpochResult:
    """Consolidated per-sink updates for one closed epoch, plus counters."""

    epoch: int
    sink_updates: dict = field(default_factory=dict)  # collect sinks only
    counters: dict = field(default_factory=dict)


class Frontier:
    """Per-source committed epochs; the global output epoch is their min.

    Output epochs are monotone and each closes exactly once, when every
    source has committed it.
    """

    def __init__(self, sources):
        self.committed = {name: -1 for name in sources}
        self.done = set()
        self.closed = -1

    def _global(self) -> int:
        pending = [e for name, e in self.committed.items() if name not in self.done]
        if not pending:
            return max(self.committed.values(), default=-1)
        return min(pending)

    def advance(self, source: str, epoch: int) -> list:
        """Commit `epoch` for `source`; returns newly closed global epochs."""
        if source not in self.committed:
            raise EngineError("frontier", f"unknown source {source!r}")
        if epoch <= self.committed[source]:
            raise EngineError(
                "frontier",
                f"non-monotone commit for {source!r}: {epoch} after {self.committed[source]}",
            )
        self.committed[source] = epoch
        return self._newly_closed()

    def mark_done(self, source: str) -> list:
        self.done.add(source)
        return self._newly_closed()

    def _newly_closed(self) -> list:
        g = self._global()
        closed = list(range(self.closed + 1, g + 1))
        if closed:
            self.closed = g
        return closed


class Runtime:
    """Instantiated operators plus scheduling state for one run."""

    def __init__(self, graph: OperatorGraph, workers: int = 1, debug: bool = False,
                 clock=None):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.graph = graph
        self.plan = WorkerPlan(workers)
        self.debug = debug
        self.clock = clock if clock is not None else SystemClock()
        self.execs = [NodeExecutor(n, graph, self.plan) for n in graph.nodes]
        self._source_info = {}
        for name, nid in graph.sources.items():
            node = graph.node(nid)
            key_idx = tuple(node.schema.index(c) for c in node.params["key_columns"])
            self._source_info[name] = (nid, node.schema, key_idx)
        # per source: epoch -> per-worker record buckets
        self._pending = {name: {} for name in graph.sources}
        self._writers = {}
        self._collect = set()
        self._universe_nodes = {}
        if debug:
            self._acc = {n.id: {} for n in graph.nodes}
            for n in graph.nodes:
                self._universe_nodes.setdefault(n.universe, n.id)

    # -- input admission -------------------------------------------------------

    def admit(self, source: str, epoch: int, kind: str, payload: dict) -> None:
        """Convert one data record to a keyed row and route it to its shard."""
        self.admit_batch(source, epoch, [(kind, payload)])

    def admit_batch(self, source: str, epoch: int, records) -> None:
        nid, schema, key_idx = self._source_info[source]
        names = schema.names
        buckets = self._pending[source].setdefault(
            epoch, [[] for _ in range(self.plan.workers)]
        )
        W = self.plan.workers
        whole_row_key = key_idx == tuple(range(len(names)))
        try:
            if whole_row_key:
                for kind, payload in records:
                    row = tuple(payload[name] for name in names)
                    key = hash_key(row)
                    buckets[(int(key) >> 64) % W].append(
                        ("i" if kind == "insert" else "d", key, row)
                    )
            else:
                for kind, payload in records:
                    row = tuple(payload[name] for name in names)
                    key = hash_key([row[i] for i in key_idx])
                    buckets[(int(key) >> 64) % W].append(
                        ("i" if kind == "insert" else "d", key, row)
                    )
        except KeyError as e:
            raise EngineError(f"source:{source}", f"record missing column {e}", epoch=epoch)

    def open_sinks(self, overrides: dict | None = None) -> None:
        """Instantiate sink writers from graph specs, with per-run overrides."""
        overrides = overrides or {}
        for n in self.graph.nodes:
            if n.kind != "sink":
                continue
            name = n.params["name"]
            spec: SinkSpec = overrides.get(name, n.params["spec"])
            if spec.kind == "collect":
                self._collect.add(name)
            elif spec.kind == "null":
                self._writers[name] = conn.NullSink()
            else:
                self._writers[name] = conn.JsonlUpdateWriter(spec.path)

    def close_sinks(self) -> None:
        for w in self._writers.values():
            w.close()

    @property
    def sink_writers(self) -> dict:
        return self._writers

    # -- epoch flush -------------------------------------------------------------

    def flush(self, epoch: int) -> EpochResult:
        t0 = time.perf_counter()
        W = self.plan.workers
        outs: dict[int, list] = {}
        updates_in = 0
        result = EpochResult(epoch=epoch)
        for node in self.graph.nodes:
            ex = self.execs[node.id]
            if node.kind == "source":
                name = node.params["name"]
                buckets = self._pending[name].pop(epoch, None)
                if buckets is None:
                    buckets = [[] for _ in range(W)]
                per_worker = []
                for w in range(W):
                    out_w = ex.apply_shard(w, epoch, [buckets[w]])
                    updates_in += len(out_w)
                    per_worker.append(out_w)
                outs[node.id] = per_worker
            elif node.kind == "sink":
                deltas = []
                for bucket in outs[node.inputs[0]]:
                    deltas.extend(bucket)
                self._emit_sink(node, epoch, deltas, result)
            elif node.kind in ("select", "filter"):
                src = outs[node.inputs[0]]
                per_worker = []
                for w in range(W):
                    out_w = ex.apply_shard(w, epoch, [src[w]]) if src[w] else []
                    per_worker.append(consolidate_deltas(out_w) if out_w else [])
                outs[node.id] = per_worker
            else:
                routed = []
                any_input = False
                for idx, input_id in enumerate(node.inputs):
                    flat = []
                    for bucket in outs[input_id]:
                        flat.extend(bucket)
                    if flat:
                        any_input = True
                    routed.append(ex.route(idx, flat, epoch))
                per_worker = []
                if not any_input:
                    per_worker = [[] for _ in range(W)]
                else:
                    for w in range(W):
                        per_input = [routed[i][w] for i in range(len(node.inputs))]
                        if len(per_input) == 1:
                            per_input = [per_input[0]]
                        out_w = ex.apply_shard(w, epoch, per_input)
                        per_worker.append(consolidate_deltas(out_w) if out_w else [])
                outs[node.id] = per_worker
            if self.debug and node.kind != "sink":
                self._debug_accumulate(node.id, outs[node.id])
        if self.debug:
            self._debug_check_universes(epoch)
        self._maybe_compact(epoch)
        result.counters.update(
            {
                "epoch": epoch,
                "updates_in": updates_in,
                "updates_out": sum(
                    result.counters.get(f"sink_{name}_updates", 0)
                    for name, _ in self.graph.sinks
                ),
                "arrangement_rows": sum(ex.state_rows() for ex in self.execs),
                "wall_ms": (time.perf_counter() - t0) * 1000.0,
            }
        )
        return result

    def _emit_sink(self, node, epoch: int, deltas, result: EpochResult) -> None:
        # upstream node outputs are already consolidated, and worker shards
        # hold disjoint keys, so the merged list needs only sorting
        name = node.params["name"]
        merged = sorted(deltas, key=sink_sort_key(node.schema))
        updates = [Update(k, row, d, epoch) for k, row, d in merged]
        result.counters[f"sink_{name}_updates"] = len(updates)
        if name in self._collect:
            result.sink_updates[name] = updates
        writer = self._writers.get(name)
        if writer is not None:
            writer.write(epoch, updates, self.clock.now_ms(), node.schema)

    def _maybe_compact(self, epoch: int) -> None:
        for ex in self.execs:
            for shard in ex.shards.values():
                for attr in ("arr", "a", "b", "right"):
                    arr = getattr(shard, attr, None)
                    if arr is not None and hasattr(arr, "maybe_compact"):
                        arr.maybe_compact(epoch)

    # -- debug universe soundness ----------------------------------------------

    def _debug_accumulate(self, node_id: int, per_worker) -> None:
        acc = self._acc[node_id]
        for bucket in per_worker:
            for k, row, d in bucket:
                rows = acc.setdefault(k, {})
                m = rows.get(row, 0) + d
                if m:
                    rows[row] = m
                else:
                    del rows[row]
                if not rows:
                    del acc[k]

    def _debug_check_universes(self, epoch: int) -> None:
        def keys_of(universe: int):
            nid = self._universe_nodes.get(universe)
            if nid is None:
                return None
            return set(self._acc[nid].keys())

        for rel in self.graph.relations:
            left, right = keys_of(rel.left), keys_of(rel.right)
            if left is None or right is None:
                continue
            if rel.kind == "subset" and not left <= right:
                raise EngineError(
                    "universe-check",
                    f"universe {rel.left} not a subset of {rel.right}",
                    epoch=epoch,
                )
            if rel.kind == "disjoint" and left & right:
                raise EngineError(
                    "universe-check",
                    f"universes {rel.left} and {rel.right} overlap",
                    epoch=epoch,
                )


def epoch_events(graph: OperatorGraph, inputs: dict):
    """Shared input-driving loop for all execution backends.

    Pulls each source up to its next commit (round-robin), tracking the
    frontier; yields ("data", source, epoch, [(kind, payload), ...]) with
    each source's records for one epoch, then ("flush", epoch) per newly
    closed global epoch. A source ending with uncommitted records gets a
    final implicit commit so bounded runs terminate cleanly.
    """
    missing = set(graph.sources) - set(inputs)
    if missing:
        raise EngineError("run", f"no input stream for sources {sorted(missing)}")
    frontier = Frontier(graph.sources)
    iters = {name: iter(stream) for name, stream in inputs.items()}
    cur_epoch = {name: 0 for name in graph.sources}
    active = [name for name in graph.sources]
    admitted = {name: False for name in graph.sources}
    while active:
        for name in list(active):
            it = iters[name]
            batch = []
            while True:
                try:
                    rec = next(it)
                except StopIteration:
                    active.remove(name)
                    closed = []
                    if (
                        batch
                        or admitted[name]
                        or (cur_epoch[name] == 0 and frontier.committed[name] < 0)
                    ):
                        if batch:
                            yield ("data", name, cur_epoch[name], batch)
                        closed = frontier.advance(name, cur_epoch[name])
                    closed += frontier.mark_done(name)
                    for e in closed:
                        yield ("flush", e)
                    break
                if isinstance(rec, conn.TimestampedRecord):
                    rec = rec.record
                if isinstance(rec, conn.Commit):
                    if batch:
                        yield ("data", name, cur_epoch[name], batch)
                    closed = frontier.advance(name, cur_epoch[name])
                    cur_epoch[name] += 1
                    admitted[name] = False
                    for e in closed:
                        yield ("flush", e)
                    break
                batch.append(rec)
                admitted[name] = True
                if len(batch) >= 8192:
                    yield ("data", name, cur_epoch[name], batch)
                    batch = []


def run(graph: OperatorGraph, inputs: dict, *, workers: int = 1,
        mode: RunMode = RunMode.STREAMING, debug: bool = False, clock=None,
        sink_specs: dict | None = None, runtime_out: list | None = None):
    """Execute the graph over the given record streams.

    inputs: source name -> iterable of StreamRecord / TimestampedRecord.
    Yields one EpochResult per closed epoch. All modes run identically; batch
    mode additionally asserts that only a single epoch closes.
    """
    if isinstance(mode, str):
        mode = RunMode(mode)
    rt = Runtime(graph, workers=workers, debug=debug, clock=clock)
    if runtime_out is not None:
        runtime_out.append(rt)
    rt.open_sinks(sink_specs)
    closed_total = 0
    try:
        for ev in epoch_events(graph, inputs):
            if ev[0] == "data":
                _, name, epoch, records = ev
                rt.admit_batch(name, epoch, records)
            else:
                yield rt.flush(ev[1])
                closed_total += 1
                if mode is RunMode.BATCH and closed_total > 1:
                    raise EngineError("run", "batch mode closed more than one epoch")
    finally:
        rt.close_sinks()


def run_to_results(graph, inputs, **kwargs) -> list:
    return list(run(graph, inputs, **kwargs))


def accumulate_sink(results, sink: str) -> dict:
    """Final accumulated state of one sink across epoch results."""
    state: dict[Key, dict] = {}
    for r in results:
        for u in r.sink_updates.get(sink, ()):
            rows = state.setdefault(u.key, {})
            m = rows.get(u.row, 0) + u.diff
            if m:
                rows[u.row] = m
            else:
                del rows[u.row]
            if not rows:
                del state[u.key]
    out = {}
    for k, rows in state.items():
        if len(rows) > 1 or any(m < 0 for m in rows.values()):
            raise EngineError("accumulate", f"inconsistent sink state at {k!r}: {rows}")
        ((row, m),) = rows.items()
        out[k] = (row, m)
    return out
