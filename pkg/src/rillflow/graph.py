"""Builder-time Table API: user pipeline code -> typed acyclic operator graph.

Building performs no data processing. Every table operation appends one
operator node; handles are immutable. Universe (row-identifier set)
relations are tracked so set operations can be validated at build time
where provable and checked at runtime otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .core import Schema, ValueType
from .exprs import (
    Expr,
    TypecheckError,
    expr_signature,
    typecheck,
    wrap,
)

OP_KINDS = (
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


class BuildError(Exception):
    pass


@dataclass(frozen=True, eq=False)
class ReducerSpec:
    """Abelian reducer: count or int_sum(expr). Supports retraction by negation."""

    kind: str
    expr: Expr | None = None

    def signature(self) -> str:
        if self.kind == "count":
            return "count()"
        return f"int_sum({expr_signature(self.expr)})"


def count() -> ReducerSpec:
    return ReducerSpec("count")


def int_sum(expr) -> ReducerSpec:
    return ReducerSpec("int_sum", wrap(expr))


@dataclass(eq=False)
class OperatorNode:
    id: int
    kind: str
    inputs: tuple
    schema: Schema
    universe: int
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class UniverseRelation:
    kind: str  # "subset" | "disjoint"
    left: int
    right: int


@dataclass(eq=False)
class OperatorGraph:
    """Validated acyclic operator graph; node order is topological."""

    nodes: tuple
    sources: dict  # name -> node id
    sinks: tuple  # (sink name, input node id)
    relations: tuple  # declared UniverseRelations, checked in debug mode

    def node(self, node_id: int) -> OperatorNode:
        return self.nodes[node_id]

    def signature(self) -> tuple:
        """Structural fingerprint: identical pipeline code -> identical value."""
        sig = []
        for n in self.nodes:
            params = tuple(sorted((k, _param_signature(v)) for k, v in n.params.items()))
            sig.append((n.id, n.kind, n.inputs, n.schema.columns, n.universe, params))
        sig.append(("sinks", self.sinks))
        sig.append(("sources", tuple(sorted(self.sources.items()))))
        return tuple(sig)


def _param_signature(v) -> str:
    if isinstance(v, Expr):
        return expr_signature(v)
    if isinstance(v, ReducerSpec):
        return v.signature()
    if isinstance(v, tuple):
        return "(" + ",".join(_param_signature(x) for x in v) + ")"
    return repr(v)


class TableHandle:
    """Schema + universe + graph node; every operation returns a new handle."""

    __slots__ = ("_builder", "node", "schema", "universe")

    def __init__(self, builder: "GraphBuilder", node: int, schema: Schema, universe: int):
        self._builder = builder
        self.node = node
        self.schema = schema
        self.universe = universe

    def __repr__(self):
        return f"<table node={self.node} universe={self.universe} cols={list(self.schema.names)}>"

    def select(self, **outputs) -> "TableHandle":
        """Row-wise transformation; keeps keys and universe."""
        return self._builder._select(self, outputs)

    def filter(self, predicate) -> "TableHandle":
        return self._builder._filter(self, wrap(predicate))

    def group_by(self, *exprs, **named_exprs) -> "GroupedTable":
        """Group by expression values. Named expressions become output
        columns; positional ones only contribute to the group key."""
        group = [(None, wrap(e)) for e in exprs]
        group += [(name, wrap(e)) for name, e in named_exprs.items()]
        if not group:
            raise BuildError("group_by requires at least one expression")
        return GroupedTable(self, tuple(group))

    def ix_join(self, target: "TableHandle", key_expr, columns=None,
                skip_missing: bool = False) -> "TableHandle":
        """Vectorized dereference: extend each row with target's columns at
        the key computed by key_expr. Missing keys are an error unless
        skip_missing is set (rows drop until the target key appears)."""
        return self._builder._ix_join(self, target, wrap(key_expr), columns, skip_missing)

    def difference(self, other: "TableHandle") -> "TableHandle":
        """Rows of self whose keys are absent from other (keys compared only)."""
        return self._builder._difference(self, other)


class GroupedTable:
    __slots__ = ("_table", "_group")

    def __init__(self, table: TableHandle, group: tuple):
        self._table = table
        self._group = group

    def reduce(self, **reducers) -> TableHandle:
        return self._table._builder._groupby_reduce(self._table, self._group, reducers)


def update_rows(a: TableHandle, b: TableHandle) -> TableHandle:
    """Key-union of two same-schema tables; b's row wins on collisions."""
    return a._builder._update_rows(a, b)


def concat(a: TableHandle, b: TableHandle) -> TableHandle:
    """Key-disjoint union of two same-schema tables."""
    return a._builder._concat(a, b)


@dataclass(frozen=True)
class SinkSpec:
    """Where a sink's per-epoch consolidated updates go.

    kind: "collect" (returned in EpochResults), "null" (counted only),
    "jsonl" (timed update log at path).
    """

    kind: str = "collect"
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("collect", "null", "jsonl"):
            raise BuildError(f"invalid sink spec kind {self.kind!r}")
        if self.kind == "jsonl" and not self.path:
            raise BuildError("jsonl sink requires a path")


class GraphBuilder:
    def __init__(self):
        self._nodes: list[OperatorNode] = []
        self._sources: dict[str, int] = {}
        self._sinks: list[tuple] = []
        self._sink_names: set = set()
        self._next_universe = 0
        self._relations: list[UniverseRelation] = []

    # -- construction helpers ------------------------------------------------

    def _fresh_universe(self) -> int:
        u = self._next_universe
        self._next_universe += 1
        return u

    def _add(self, kind, inputs, schema, universe, params) -> TableHandle:
        node = OperatorNode(
            id=len(self._nodes),
            kind=kind,
            inputs=tuple(inputs),
            schema=schema,
            universe=universe,
            params=params,
        )
        self._nodes.append(node)
        return TableHandle(self, node.id, schema, universe)

    def _relate(self, kind: str, left: int, right: int):
        self._relations.append(UniverseRelation(kind, left, right))

    def _subset_ancestors(self, universe: int) -> set:
        seen = {universe}
        frontier = [universe]
        while frontier:
            u = frontier.pop()
            for r in self._relations:
                if r.kind == "subset" and r.left == u and r.right not in seen:
                    seen.add(r.right)
                    frontier.append(r.right)
        return seen

    def _provably_disjoint(self, a: int, b: int) -> bool:
        anc_a = self._subset_ancestors(a)
        anc_b = self._subset_ancestors(b)
        for r in self._relations:
            if r.kind != "disjoint":
                continue
            if (r.left in anc_a and r.right in anc_b) or (r.left in anc_b and r.right in anc_a):
                return True
        return False

    # -- operators -----------------------------------------------------------

    def source(self, name: str, columns: Schema | dict, key: list) -> TableHandle:
        """Register an input table; row key = hash_key(key column values)."""
        if name in self._sources:
            raise BuildError(f"duplicate source name {name!r}")
        sch = columns if isinstance(columns, Schema) else Schema(tuple(columns.items()))
        if len(set(key)) != len(key):
            raise BuildError(f"duplicate key columns {key}")
        if not key:
            raise BuildError("source requires at least one key column")
        for k in key:
            if not sch.has(k):
                raise BuildError(f"unknown key column {k!r}; have {list(sch.names)}")
        handle = self._add(
            "source", (), sch, self._fresh_universe(),
            {"name": name, "key_columns": tuple(key)},
        )
        self._sources[name] = handle.node
        return handle

    def _select(self, t: TableHandle, outputs: dict) -> TableHandle:
        if not outputs:
            raise BuildError("select requires at least one output column")
        cols = []
        exprs = []
        for name, raw in outputs.items():
            e = wrap(raw)
            cols.append((name, typecheck(e, t.schema)))
            exprs.append((name, e))
        return self._add(
            "select", (t.node,), Schema(tuple(cols)), t.universe,
            {"outputs": tuple(exprs)},
        )

    def _filter(self, t: TableHandle, predicate: Expr) -> TableHandle:
        pt = typecheck(predicate, t.schema)
        if pt is not ValueType.BOOL:
            raise TypecheckError("filter.predicate", f"expected bool, found {pt.value}")
        u = self._fresh_universe()
        self._relate("subset", u, t.universe)
        return self._add("filter", (t.node,), t.schema, u, {"predicate": predicate})

    def _groupby_reduce(self, t: TableHandle, group: tuple, reducers: dict) -> TableHandle:
        cols = []
        for name, e in group:
            gt = typecheck(e, t.schema)
            if gt is ValueType.NONE:
                raise TypecheckError("group_by", "cannot group by none-typed expression")
            if name is not None:
                cols.append((name, gt))
        if not reducers:
            raise BuildError("reduce requires at least one reducer")
        red = []
        for name, spec in reducers.items():
            if not isinstance(spec, ReducerSpec):
                raise BuildError(f"reducer {name!r} must be count() or int_sum(...)")
            if spec.kind == "int_sum":
                st = typecheck(spec.expr, t.schema)
                if st is not ValueType.INT:
                    raise TypecheckError(f"reduce.{name}", f"int_sum needs int, found {st.value}")
            cols.append((name, ValueType.INT))
            red.append((name, spec))
        return self._add(
            "groupby_reduce", (t.node,), Schema(tuple(cols)), self._fresh_universe(),
            {"group": group, "reducers": tuple(red)},
        )

    def _ix_join(self, t: TableHandle, target: TableHandle, key_expr: Expr, columns,
                 skip_missing: bool) -> TableHandle:
        kt = typecheck(key_expr, t.schema)
        if kt is not ValueType.KEY:
            raise TypecheckError("ix_join.key", f"expected key, found {kt.value}")
        names = tuple(columns) if columns is not None else target.schema.names
        cols = list(t.schema.columns)
        for name in names:
            if t.schema.has(name):
                raise BuildError(f"ix_join column {name!r} collides with left schema")
            cols.append((name, target.schema.type_of(name)))
        return self._add(
            "ix_join", (t.node, target.node), Schema(tuple(cols)), t.universe,
            {"key_expr": key_expr, "columns": names, "skip_missing": skip_missing},
        )

    def _difference(self, a: TableHandle, b: TableHandle) -> TableHandle:
        u = self._fresh_universe()
        self._relate("subset", u, a.universe)
        self._relate("disjoint", u, b.universe)
        return self._add("difference", (a.node, b.node), a.schema, u, {})

    def _check_same_schema(self, op: str, a: TableHandle, b: TableHandle):
        if a.schema.columns != b.schema.columns:
            raise BuildError(
                f"{op} requires identical schemas: {a.schema.columns} vs {b.schema.columns}"
            )

    def _update_rows(self, a: TableHandle, b: TableHandle) -> TableHandle:
        self._check_same_schema("update_rows", a, b)
        u = self._fresh_universe()
        self._relate("subset", a.universe, u)
        self._relate("subset", b.universe, u)
        return self._add("update_rows", (a.node, b.node), a.schema, u, {})

    def _concat(self, a: TableHandle, b: TableHandle) -> TableHandle:
        self._check_same_schema("concat", a, b)
        if a.universe == b.universe:
            raise BuildError("concat of a universe with itself can never be disjoint")
        proven = self._provably_disjoint(a.universe, b.universe)
        u = self._fresh_universe()
        self._relate("subset", a.universe, u)
        self._relate("subset", b.universe, u)
        if proven:
            self._relate("disjoint", a.universe, b.universe)
        return self._add(
            "concat", (a.node, b.node), a.schema, u, {"runtime_check": not proven}
        )

    def sink(self, t: TableHandle, name: str, spec: SinkSpec | None = None):
        """Register an output; the engine emits consolidated per-epoch updates."""
        if name in self._sink_names:
            raise BuildError(f"duplicate sink name {name!r}")
        if spec is None:
            spec = SinkSpec()
        node = self._add("sink", (t.node,), t.schema, t.universe, {"name": name, "spec": spec})
        self._sink_names.add(name)
        self._sinks.append((name, t.node, node.node))

    # -- finalization ----------------------------------------------------------

    def build(self) -> OperatorGraph:
        if not self._sources:
            raise BuildError("graph has no source")
        if not self._sinks:
            raise BuildError("graph has no sink")
        reachable = set()
        frontier = [nid for nid in self._sources.values()]
        deps = {n.id: set() for n in self._nodes}
        for n in self._nodes:
            for i in n.inputs:
                deps[i].add(n.id)
        while frontier:
            nid = frontier.pop()
            if nid in reachable:
                continue
            reachable.add(nid)
            frontier.extend(deps[nid])
        for name, _, sink_node in self._sinks:
            if sink_node not in reachable:
                raise BuildError(f"sink {name!r} is not reachable from any source")
        return OperatorGraph(
            nodes=tuple(self._nodes),
            sources=dict(self._sources),
            sinks=tuple((name, input_node) for name, input_node, _ in self._sinks),
            relations=tuple(self._relations),
        )
