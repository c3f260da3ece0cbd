"""Incremental operator runtime: arrangements, per-kind delta logic, sharding.

Deltas flow as plain `(key, row, diff)` tuples, consolidated per epoch.
Stateful operators keep key-partitioned state and recompute only touched
keys, emitting the net difference between the old and new output at each
key. Every shard is single-owner: worker w holds exactly the keys with
`worker_of(key) == w`.
"""
from __future__ import annotations

from dataclasses import dataclass

from .core import Key, hash_key, worker_of
from .exprs import RowError, compile_expr
from .graph import OperatorNode


class EngineError(Exception):
    """Fail-stop operator error: poisons the epoch and aborts the run."""

    def __init__(self, where: str, message: str, key: Key | None = None, epoch: int | None = None):
        self.where = where
        self.message = message
        self.key = key
        self.epoch = epoch
        parts = [f"{where}: {message}"]
        if key is not None:
            parts.append(f"key={key.hex()}")
        if epoch is not None:
            parts.append(f"epoch={epoch}")
        super().__init__(" ".join(parts))


class SourceError(EngineError):
    pass


@dataclass(frozen=True)
class WorkerPlan:
    """Key partitioning across W symmetric workers (high hash bits mod W)."""

    workers: int

    def worker_of(self, key: Key) -> int:
        return (int(key) >> 64) % self.workers


def exchange(updates, plan: WorkerPlan) -> list:
    """Partition update-like tuples (key first) into per-worker lists,
    preserving relative order within each worker."""
    buckets = [[] for _ in range(plan.workers)]
    w = plan.workers
    for u in updates:
        buckets[(int(u[0]) >> 64) % w].append(u)
    return buckets


def consolidate_deltas(deltas) -> list:
    """Net per (key, row) diffs within one epoch; drops zeros."""
    acc = {}
    for k, row, d in deltas:
        kk = (k, row)
        acc[kk] = acc.get(kk, 0) + d
    return [(k, row, d) for (k, row), d in acc.items() if d != 0]


class Arrangement:
    """Key-indexed consolidated multiset with a per-epoch delta log.

    `state` maps key -> (row, multiplicity >= 1); at most one distinct live
    row per key (keyed-map invariant). The log holds per-epoch consolidated
    deltas; layers at or below the compaction watermark may be merged
    without changing any accumulated reading at epochs >= the watermark.
    """

    __slots__ = ("state", "log", "watermark", "where")

    def __init__(self, where: str = "arrangement"):
        self.state: dict = {}
        self.log: list = []
        self.watermark = -1
        self.where = where

    def live(self, key):
        return self.state.get(key)

    def apply(self, epoch: int, deltas) -> None:
        if not deltas:
            return
        self.log.append([epoch, list(deltas)])
        st = self.state
        pending = None
        for k, row, d in deltas:
            cur = st.get(k)
            if cur is None:
                if d > 0:
                    st[k] = (row, d)
                    continue
            elif cur[0] == row:
                m = cur[1] + d
                if m > 0:
                    st[k] = (row, m)
                    continue
                if m == 0:
                    del st[k]
                    continue
            # replacement or transiently inconsistent; resolve per key below
            if pending is None:
                pending = {}
            rows = pending.get(k)
            if rows is None:
                rows = {} if cur is None else {cur[0]: cur[1]}
                if k in st:
                    del st[k]
                pending[k] = rows
            rows[row] = rows.get(row, 0) + d
        if pending:
            for k, rows in pending.items():
                live = [(r, m) for r, m in rows.items() if m != 0]
                if not live:
                    continue
                if len(live) > 1 or live[0][1] < 0:
                    raise EngineError(
                        self.where, f"keyed-map invariant violated: {live}", key=k, epoch=epoch
                    )
                self.state[k] = live[0]

    def log_entries(self) -> int:
        return sum(len(layer[1]) for layer in self.log)

    def accumulated(self, epoch: int | None = None) -> dict:
        """Recompute state from the log up to `epoch` (inclusive)."""
        acc: dict = {}
        for layer_epoch, deltas in self.log:
            if epoch is not None and layer_epoch > epoch:
                continue
            for k, row, d in deltas:
                rows = acc.setdefault(k, {})
                rows[row] = rows.get(row, 0) + d
        out = {}
        for k, rows in acc.items():
            live = [(r, m) for r, m in rows.items() if m != 0]
            if len(live) == 1 and live[0][1] > 0:
                out[k] = live[0]
            elif live:
                raise EngineError(self.where, f"corrupt log at key {k!r}: {live}")
        return out

    def compact(self, watermark: int) -> None:
        """Merge log layers at or below the watermark into one; accumulated
        state at any epoch >= watermark is unchanged."""
        old = [layer for layer in self.log if layer[0] <= watermark]
        keep = [layer for layer in self.log if layer[0] > watermark]
        if len(old) <= 1:
            if watermark > self.watermark:
                self.watermark = watermark
            return
        merged: dict = {}
        for _, deltas in old:
            for k, row, d in deltas:
                kk = (k, row)
                merged[kk] = merged.get(kk, 0) + d
        base = [(k, row, d) for (k, row), d in merged.items() if d != 0]
        self.log = ([[watermark, base]] if base else []) + keep
        self.watermark = max(self.watermark, watermark)

    def maybe_compact(self, latest_epoch: int) -> None:
        # policy: merge once the log outgrows twice the accumulated state
        if self.log_entries() > 2 * max(len(self.state), 1):
            self.compact(latest_epoch)


def _diff_cell(old, new, key, out):
    """Emit deltas turning one keyed cell (row, mult) | None into another."""
    if old == new:
        return
    if old is not None and new is not None and old[0] == new[0]:
        out.append((key, old[0], new[1] - old[1]))
        return
    if old is not None:
        out.append((key, old[0], -old[1]))
    if new is not None:
        out.append((key, new[0], new[1]))


# ---------------------------------------------------------------------------
# Executors: one per graph node kind, holding per-worker shards.
# ---------------------------------------------------------------------------


class SourceShard:
    """Admits external records, converting them to deltas with modification
    (same key, different row) handled as retract-then-insert."""

    def __init__(self, where: str):
        self.arr = Arrangement(where)
        self.where = where

    def admit(self, epoch: int, records) -> list:
        """records: iterable of ("i" | "d", key, row)."""
        st = self.arr.state
        out = []
        for op, k, row in records:
            cur = st.get(k)
            if op == "i":
                if cur is None:
                    st[k] = (row, 1)
                    out.append((k, row, 1))
                elif cur[0] == row:
                    st[k] = (row, cur[1] + 1)
                    out.append((k, row, 1))
                else:
                    old_row, m = cur
                    st[k] = (row, 1)
                    out.append((k, old_row, -m))
                    out.append((k, row, 1))
            else:
                if cur is None or cur[0] != row:
                    raise SourceError(
                        self.where, f"delete of a row that is not live: {row!r}", key=k, epoch=epoch
                    )
                m = cur[1] - 1
                if m:
                    st[k] = (row, m)
                else:
                    del st[k]
                out.append((k, row, -1))
        out = consolidate_deltas(out)
        if out:
            self.arr.log.append([epoch, out])
        return out

    def rows(self) -> int:
        return len(self.arr.state)


class StatelessShard:
    """select / filter: each input delta maps to at most one output delta."""

    def __init__(self, node: OperatorNode, in_schema):
        self.where = f"node{node.id}({node.kind})"
        self.kind = node.kind
        if node.kind == "select":
            self.fns = [compile_expr(e, in_schema) for _, e in node.params["outputs"]]
        else:
            self.pred = compile_expr(node.params["predicate"], in_schema)

    def apply(self, epoch: int, deltas) -> list:
        out = []
        try:
            if self.kind == "select":
                fns = self.fns
                for k, row, d in deltas:
                    out.append((k, tuple(f(row, k) for f in fns), d))
            else:
                pred = self.pred
                for k, row, d in deltas:
                    if pred(row, k):
                        out.append((k, row, d))
        except RowError as e:
            raise EngineError(self.where, str(e), key=e.key, epoch=epoch) from e
        return out

    def rows(self) -> int:
        return 0


class GroupShard:
    """groupby_reduce: per-group abelian accumulators (count / int_sum).

    State: group key -> [group values, count, sums]. Group is live iff
    count > 0; aggregate rows are rebuilt from accumulators, so creation,
    update and deletion all emit minimal deltas.
    """

    def __init__(self, node: OperatorNode):
        self.where = f"node{node.id}(groupby_reduce)"
        group = node.params["group"]
        reducers = node.params["reducers"]
        self.named_idx = [i for i, (name, _) in enumerate(group) if name is not None]
        self.sum_count = sum(1 for _, spec in reducers if spec.kind == "int_sum")
        # row layout: named group values, then reducers in declared order
        layout = []  # ("count", None) | ("sum", index)
        si = 0
        for _, spec in reducers:
            if spec.kind == "count":
                layout.append(("count", None))
            else:
                layout.append(("sum", si))
                si += 1
        self.layout = layout
        self.state: dict = {}

    def _row(self, gvals, cnt, sums):
        vals = [gvals[i] for i in self.named_idx]
        for kind, si in self.layout:
            vals.append(cnt if kind == "count" else sums[si])
        return tuple(vals)

    def apply(self, epoch: int, contribs) -> list:
        """contribs: iterable of (gk, gvals, d, svals) already multiplied by diff."""
        staged: dict = {}
        nsums = self.sum_count
        if nsums == 0:
            for gk, gvals, d, _ in contribs:
                cur = staged.get(gk)
                if cur is None:
                    staged[gk] = [gvals, d, []]
                else:
                    cur[1] += d
        else:
            for gk, gvals, d, svals in contribs:
                cur = staged.get(gk)
                if cur is None:
                    staged[gk] = [gvals, d, list(svals)]
                else:
                    cur[1] += d
                    cs = cur[2]
                    for i in range(nsums):
                        cs[i] += svals[i]
        out = []
        st = self.state
        for gk, (gvals, dcnt, dsums) in staged.items():
            cur = st.get(gk)
            if cur is None:
                if dcnt == 0 and not any(dsums):
                    continue
                if dcnt < 0:
                    raise EngineError(self.where, "group count below zero", key=gk, epoch=epoch)
                if dcnt == 0:
                    raise EngineError(
                        self.where, "nonzero sum in empty group", key=gk, epoch=epoch
                    )
                st[gk] = [gvals, dcnt, dsums]
                out.append((gk, self._row(gvals, dcnt, dsums), 1))
                continue
            cnt = cur[1] + dcnt
            if cnt < 0:
                raise EngineError(self.where, "group count below zero", key=gk, epoch=epoch)
            sums = [a + b for a, b in zip(cur[2], dsums)]
            old_row = self._row(cur[0], cur[1], cur[2])
            if cnt == 0:
                if any(sums):
                    raise EngineError(
                        self.where, "nonzero sum in emptied group", key=gk, epoch=epoch
                    )
                del st[gk]
                out.append((gk, old_row, -1))
                continue
            cur[1] = cnt
            cur[2] = sums
            new_row = self._row(cur[0], cnt, sums)
            if new_row != old_row:
                out.append((gk, old_row, -1))
                out.append((gk, new_row, 1))
        return out

    def rows(self) -> int:
        return len(self.state)


class IxShard:
    """ix_join: left rows indexed by their dereference key, right by its own
    key; per touched join key the joined output is recomputed before/after."""

    def __init__(self, node: OperatorNode, target_schema):
        self.where = f"node{node.id}(ix_join)"
        self.left: dict = {}  # join key -> {left key: (row, mult)}
        self.right = Arrangement(self.where + ".target")
        self.proj = tuple(target_schema.index(c) for c in node.params["columns"])
        self.skip_missing = node.params.get("skip_missing", False)

    def _joined(self, left_rows, right_cell):
        if right_cell is None or not left_rows:
            return {}
        r_row, r_mult = right_cell
        ext = tuple(r_row[i] for i in self.proj)
        return {tk: (row + ext, m * r_mult) for tk, (row, m) in left_rows.items()}

    def apply(self, epoch: int, left_payloads, right_deltas) -> list:
        # left_payloads: (jk, left key, row, diff); right_deltas: (key, row, diff)
        left_by: dict = {}
        for jk, tk, row, d in left_payloads:
            left_by.setdefault(jk, []).append((tk, row, d))
        touched = list(left_by)
        touched_set = set(touched)
        right_by: dict = {}
        for k, row, d in right_deltas:
            right_by.setdefault(k, []).append((row, d))
            if k not in touched_set:
                touched_set.add(k)
                touched.append(k)

        old_snapshot = {}
        for jk in touched:
            rows = self.left.get(jk)
            old_snapshot[jk] = (dict(rows) if rows else {}, self.right.live(jk))

        self.right.apply(epoch, right_deltas)
        for jk, changes in left_by.items():
            rows = self.left.setdefault(jk, {})
            for tk, row, d in changes:
                cur = rows.get(tk)
                staged = {} if cur is None else {cur[0]: cur[1]}
                staged[row] = staged.get(row, 0) + d
                live = [(r, m) for r, m in staged.items() if m != 0]
                if not live:
                    rows.pop(tk, None)
                elif len(live) > 1 or live[0][1] < 0:
                    raise EngineError(
                        self.where, f"keyed-map invariant violated: {live}", key=tk, epoch=epoch
                    )
                else:
                    rows[tk] = live[0]
            if not rows:
                del self.left[jk]

        out = []
        for jk in touched:
            old_left, old_right = old_snapshot[jk]
            new_left = self.left.get(jk) or {}
            new_right = self.right.live(jk)
            if new_left and new_right is None and not self.skip_missing:
                raise EngineError(
                    self.where, "dereference of a missing key", key=jk, epoch=epoch
                )
            old_out = self._joined(old_left, old_right)
            new_out = self._joined(new_left, new_right)
            for tk in old_out.keys() | new_out.keys():
                _diff_cell(old_out.get(tk), new_out.get(tk), tk, out)
        return out

    def rows(self) -> int:
        return sum(len(rows) for rows in self.left.values()) + len(self.right.state)


class SetShard:
    """difference / update_rows / concat over co-partitioned arrangements."""

    def __init__(self, node: OperatorNode):
        self.where = f"node{node.id}({node.kind})"
        self.kind = node.kind
        self.a = Arrangement(self.where + ".left")
        self.b = Arrangement(self.where + ".right")

    def _combine(self, a_cell, b_cell, key, epoch):
        if self.kind == "difference":
            return a_cell if b_cell is None else None
        if self.kind == "update_rows":
            return b_cell if b_cell is not None else a_cell
        if a_cell is not None and b_cell is not None:
            raise EngineError(self.where, "concat inputs overlap", key=key, epoch=epoch)
        return a_cell if a_cell is not None else b_cell

    def apply(self, epoch: int, a_deltas, b_deltas) -> list:
        touched = []
        seen = set()
        for k, _, _ in a_deltas:
            if k not in seen:
                seen.add(k)
                touched.append(k)
        for k, _, _ in b_deltas:
            if k not in seen:
                seen.add(k)
                touched.append(k)
        old = {k: (self.a.live(k), self.b.live(k)) for k in touched}
        self.a.apply(epoch, a_deltas)
        self.b.apply(epoch, b_deltas)
        out = []
        for k in touched:
            a_old, b_old = old[k]
            old_cell = self._combine(a_old, b_old, k, epoch)
            new_cell = self._combine(self.a.live(k), self.b.live(k), k, epoch)
            _diff_cell(old_cell, new_cell, k, out)
        return out

    def rows(self) -> int:
        return len(self.a.state) + len(self.b.state)


# ---------------------------------------------------------------------------
# Node executors: routing + per-worker shards.
# ---------------------------------------------------------------------------


OP_SHARD_KINDS = (
    "source",
    "select",
    "filter",
    "groupby_reduce",
    "ix_join",
    "difference",
    "update_rows",
    "concat",
    "sink",
)


class NodeExecutor:
    """Wraps one graph node: knows how to route each input's deltas to
    worker shards and how to apply a shard's buckets."""

    def __init__(self, node: OperatorNode, graph, plan: WorkerPlan):
        self.node = node
        self.kind = node.kind
        self.plan = plan
        self.stateless = node.kind in ("select", "filter", "sink")
        self.shards: dict = {}  # worker index -> shard, created lazily
        in_schemas = [graph.node(i).schema for i in node.inputs]
        self._in_schemas = in_schemas

        if node.kind == "groupby_reduce":
            self._group_fns = [
                compile_expr(e, in_schemas[0]) for _, e in node.params["group"]
            ]
            self._sum_fns = [
                compile_expr(spec.expr, in_schemas[0])
                for _, spec in node.params["reducers"]
                if spec.kind == "int_sum"
            ]
        elif node.kind == "ix_join":
            self._key_fn = compile_expr(node.params["key_expr"], in_schemas[0])
        elif node.kind not in OP_SHARD_KINDS:
            raise ValueError(f"unknown node kind {node.kind}")

    def shard(self, worker: int):
        s = self.shards.get(worker)
        if s is None:
            s = self._make_shard()
            self.shards[worker] = s
        return s

    def _make_shard(self):
        node = self.node
        if node.kind == "source":
            return SourceShard(f"node{node.id}(source:{node.params['name']})")
        if node.kind in ("select", "filter"):
            return StatelessShard(node, self._in_schemas[0])
        if node.kind == "groupby_reduce":
            return GroupShard(node)
        if node.kind == "ix_join":
            return IxShard(node, self._in_schemas[1])
        return SetShard(node)

    def route(self, input_idx: int, deltas, epoch: int) -> list:
        """Transform one input's deltas into per-worker payload buckets."""
        w = self.plan.workers
        buckets = [[] for _ in range(w)]
        where = f"node{self.node.id}({self.kind})"
        if self.kind == "groupby_reduce":
            gfns = self._group_fns
            sfns = self._sum_fns
            try:
                if len(gfns) == 1 and not sfns:
                    g0 = gfns[0]
                    empty = ()
                    for k, row, d in deltas:
                        gvals = (g0(row, k),)
                        gk = hash_key(gvals)
                        buckets[(int(gk) >> 64) % w].append((gk, gvals, d, empty))
                else:
                    for k, row, d in deltas:
                        gvals = tuple(f(row, k) for f in gfns)
                        gk = hash_key(gvals)
                        svals = tuple(f(row, k) * d for f in sfns)
                        buckets[(int(gk) >> 64) % w].append((gk, gvals, d, svals))
            except RowError as e:
                raise EngineError(where, str(e), key=e.key, epoch=epoch) from e
        elif self.kind == "ix_join" and input_idx == 0:
            kf = self._key_fn
            try:
                for k, row, d in deltas:
                    jk = kf(row, k)
                    buckets[(int(jk) >> 64) % w].append((jk, k, row, d))
            except RowError as e:
                raise EngineError(where, str(e), key=e.key, epoch=epoch) from e
        else:
            for delta in deltas:
                buckets[(int(delta[0]) >> 64) % w].append(delta)
        return buckets

    def apply_shard(self, worker: int, epoch: int, per_input) -> list:
        shard = self.shard(worker)
        if self.kind == "source":
            return shard.admit(epoch, per_input[0])
        if self.kind in ("select", "filter"):
            return shard.apply(epoch, per_input[0])
        if self.kind == "groupby_reduce":
            return shard.apply(epoch, per_input[0])
        if self.kind == "ix_join":
            return shard.apply(epoch, per_input[0], per_input[1])
        return shard.apply(epoch, per_input[0], per_input[1])

    def state_rows(self) -> int:
        return sum(s.rows() for s in self.shards.values())
