from __future__ import annotations

import pytest

import rillflow as rf
from rillflow.graph import BuildError, GraphBuilder, SinkSpec, concat, update_rows
from rillflow.exprs import TypecheckError, col, key_of, this_id


def words_builder():
    b = GraphBuilder()
    t = b.source("words", {"word": rf.STR}, key=["word"])
    return b, t


def test_source_fresh_universe_and_schema():
    b = GraphBuilder()
    t1 = b.source("a", {"word": rf.STR}, key=["word"])
    t2 = b.source("b", {"u": rf.STR, "v": rf.STR}, key=["u", "v"])
    assert t1.universe != t2.universe
    assert t2.schema.names == ("u", "v")


def test_source_duplicate_key_columns_rejected():
    b = GraphBuilder()
    with pytest.raises(BuildError):
        b.source("w", {"w": rf.STR}, key=["w", "w"])


def test_source_unknown_key_column():
    b = GraphBuilder()
    with pytest.raises(BuildError):
        b.source("w", {"w": rf.STR}, key=["nope"])


def test_select_same_universe_new_schema():
    b, t = words_builder()
    s = t.select(w=col("word"), flag=rf.const(1))
    assert s.universe == t.universe
    assert s.schema.columns == (("w", rf.STR), ("flag", rf.INT))


def test_select_typecheck_failure():
    b, t = words_builder()
    with pytest.raises(TypecheckError):
        t.select(x=col("word") + 1)


def test_filter_universe_subset():
    b, t = words_builder()
    f = t.filter(col("word") == "a")
    assert f.universe != t.universe
    assert f.schema == t.schema
    rels = {(r.kind, r.left, r.right) for r in b._relations}
    assert ("subset", f.universe, t.universe) in rels


def test_filter_requires_bool():
    b, t = words_builder()
    with pytest.raises(TypecheckError):
        t.filter(col("word"))


def test_groupby_schema_and_reducers():
    b, t = words_builder()
    g = t.group_by(word=col("word")).reduce(count=rf.count())
    assert g.schema.columns == (("word", rf.STR), ("count", rf.INT))
    # positional group expressions are key-only
    g2 = t.group_by(col("word")).reduce(n=rf.count())
    assert g2.schema.columns == (("n", rf.INT),)


def test_int_sum_requires_int_expression():
    b, t = words_builder()
    with pytest.raises(TypecheckError):
        t.group_by(col("word")).reduce(s=rf.int_sum(col("word")))


def test_groupby_requires_reducer_and_group():
    b, t = words_builder()
    with pytest.raises(BuildError):
        t.group_by()
    with pytest.raises(BuildError):
        t.group_by(col("word")).reduce()


def test_ix_join_schema_and_universe():
    b = GraphBuilder()
    edges = b.source("edges", {"u": rf.STR, "v": rf.STR}, key=["u", "v"])
    deg = edges.group_by(col("u")).reduce(degree=rf.count())
    j = edges.ix_join(deg, key_of(col("u")), columns=["degree"])
    assert j.universe == edges.universe
    assert j.schema.names == ("u", "v", "degree")


def test_ix_join_key_expr_must_be_key_typed():
    b = GraphBuilder()
    edges = b.source("edges", {"u": rf.STR, "v": rf.STR}, key=["u", "v"])
    deg = edges.group_by(col("u")).reduce(degree=rf.count())
    with pytest.raises(TypecheckError):
        edges.ix_join(deg, col("u"))


def test_ix_join_column_collision():
    b = GraphBuilder()
    edges = b.source("edges", {"u": rf.STR, "v": rf.STR}, key=["u", "v"])
    other = edges.select(u=col("u"))
    with pytest.raises(BuildError):
        edges.ix_join(other, this_id())


def test_difference_keeps_left_schema():
    b = GraphBuilder()
    a = b.source("a", {"x": rf.INT, "k": rf.STR}, key=["k"])
    c = b.source("c", {"k": rf.STR}, key=["k"])
    d = a.difference(c)
    assert d.schema == a.schema
    rels = {(r.kind, r.left, r.right) for r in b._relations}
    assert ("subset", d.universe, a.universe) in rels
    assert ("disjoint", d.universe, c.universe) in rels


def test_update_rows_schema_mismatch():
    b = GraphBuilder()
    a = b.source("a", {"x": rf.INT, "k": rf.STR}, key=["k"])
    c = b.source("c", {"k": rf.STR}, key=["k"])
    with pytest.raises(BuildError):
        update_rows(a, c)


def test_concat_same_universe_rejected():
    b, t = words_builder()
    with pytest.raises(BuildError):
        concat(t, t)


def test_concat_proven_disjoint_skips_runtime_check():
    b = GraphBuilder()
    a = b.source("a", {"k": rf.STR}, key=["k"])
    c = b.source("c", {"k": rf.STR}, key=["k"])
    d = a.difference(c)  # provably disjoint from c
    node = concat(d, c)
    assert b._nodes[node.node].params["runtime_check"] is False
    e = concat(a, c)  # unrelated universes: checked at runtime
    assert b._nodes[e.node].params["runtime_check"] is True


def test_build_requires_sink_and_source():
    b, t = words_builder()
    with pytest.raises(BuildError) as e:
        b.build()
    assert "no sink" in str(e.value)
    with pytest.raises(BuildError):
        GraphBuilder().build()


def test_duplicate_sink_name():
    b, t = words_builder()
    b.sink(t, "out")
    with pytest.raises(BuildError):
        b.sink(t, "out")


def test_invalid_sink_spec():
    with pytest.raises(BuildError):
        SinkSpec("bogus")
    with pytest.raises(BuildError):
        SinkSpec("jsonl")  # needs a path


def test_wordcount_graph_shape():
    from rillflow.bench.pipelines import build_wordcount_graph

    g = build_wordcount_graph()
    kinds = [n.kind for n in g.nodes]
    assert kinds == ["source", "groupby_reduce", "sink"]


def test_pagerank_graph_unrolls_steps():
    from rillflow.bench.pipelines import build_pagerank_graph

    g5 = build_pagerank_graph(5)
    g1 = build_pagerank_graph(1)
    per_step = ("ix_join", "select", "groupby_reduce", "concat")
    count5 = sum(1 for n in g5.nodes if n.kind == "concat")
    count1 = sum(1 for n in g1.nodes if n.kind == "concat")
    assert count5 == 5 and count1 == 1
    # five unrolled copies of the per-step operator group
    assert sum(1 for n in g5.nodes if n.kind == "ix_join") == 10  # two per step


def test_builder_purity_isomorphic_graphs():
    from rillflow.bench.pipelines import build_pagerank_graph

    assert build_pagerank_graph(3).signature() == build_pagerank_graph(3).signature()
    assert build_pagerank_graph(3).signature() != build_pagerank_graph(4).signature()


def test_build_performs_no_data_processing():
    b, t = words_builder()
    b.sink(t.group_by(word=col("word")).reduce(count=rf.count()), "counts")
    g = b.build()
    # building yields only the graph description; no arrangements exist yet
    assert all(not hasattr(n, "state") for n in g.nodes)
