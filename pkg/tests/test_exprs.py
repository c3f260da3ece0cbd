from __future__ import annotations

import pytest

from rillflow.core import I64_MAX, ValueType, hash_key, schema
from rillflow.exprs import (
    RowError,
    TypecheckError,
    col,
    compile_expr,
    const,
    evaluate,
    if_else,
    key_of,
    this_id,
    typecheck,
)

INTS = schema(rank=ValueType.INT, degree=ValueType.INT)
WORDS = schema(word=ValueType.STR)


def ev(expr, row, sch, key=None):
    return evaluate(expr, row, sch, key)


def test_column_ref_type():
    assert typecheck(col("word"), WORDS) is ValueType.STR


def test_unknown_column_located():
    with pytest.raises(TypecheckError) as e:
        typecheck(col("missing"), WORDS)
    assert "missing" in str(e.value)


def test_int_plus_string_rejected():
    with pytest.raises(TypecheckError) as e:
        typecheck(const(1) + const("a"), WORDS)
    assert "int + str" in str(e.value)


def test_if_else_branch_type():
    expr = if_else(col("degree") == 0, 0, col("rank") // col("degree"))
    assert typecheck(expr, INTS) is ValueType.INT


def test_if_else_branch_disagreement():
    with pytest.raises(TypecheckError) as e:
        typecheck(if_else(const(True), 1, "a"), WORDS)
    assert "branch types disagree" in str(e.value)


def test_if_else_condition_must_be_bool():
    with pytest.raises(TypecheckError):
        typecheck(if_else(const(1), 1, 2), WORDS)


def test_floordiv_integer_only():
    floats = schema(x=ValueType.FLOAT)
    with pytest.raises(TypecheckError):
        typecheck(col("x") // col("x"), floats)


def test_bool_ops_require_bools():
    with pytest.raises(TypecheckError):
        typecheck(const(1) & const(2), WORDS)


def test_comparison_requires_same_types():
    with pytest.raises(TypecheckError):
        typecheck(col("word") < const(1), WORDS)


def test_pagerank_outflow_value():
    # first-iteration flow: (rank*5) // (degree*6) with rank 6000, degree 1
    expr = (col("rank") * 5) // (col("degree") * 6)
    assert ev(expr, (6000, 1), INTS) == 5000


def test_if_else_branch_selection():
    expr = if_else(col("degree") == 0, 0, 1)
    assert ev(expr, (0,), schema(degree=ValueType.INT)) == 0


def test_arith_example():
    s = schema(x=ValueType.INT, y=ValueType.INT)
    assert ev(col("x") + col("y") * 2, (1, 3), s) == 7


def test_division_by_zero_carries_key_and_path():
    k = hash_key(["r"])
    with pytest.raises(RowError) as e:
        ev(col("rank") // col("degree"), (10, 0), INTS, key=k)
    assert "division by zero" in str(e.value)
    assert e.value.key == k
    assert "//" in e.value.path


def test_if_else_is_lazy():
    # guarded division never evaluates the dividing branch
    expr = if_else(col("degree") == 0, 0, col("rank") // col("degree"))
    assert ev(expr, (10, 0), INTS) == 0


def test_overflow_checked():
    s = schema(x=ValueType.INT)
    with pytest.raises(RowError) as e:
        ev(col("x") * const(2), (I64_MAX,), s)
    assert "overflow" in str(e.value)


def test_overflow_addition():
    s = schema(x=ValueType.INT)
    assert ev(col("x") + 0, (I64_MAX,), s) == I64_MAX
    with pytest.raises(RowError):
        ev(col("x") + 1, (I64_MAX,), s)


def test_referential_transparency():
    expr = (col("rank") * 5) // (col("degree") * 6)
    fn = compile_expr(expr, INTS)
    assert fn((6000, 2), None) == fn((6000, 2), None) == 2500


def test_this_id_yields_key():
    s = WORDS
    k = hash_key(["w"])
    assert typecheck(this_id(), s) is ValueType.KEY
    assert ev(this_id(), ("w",), s, key=k) == k


def test_key_of_matches_group_hash():
    # key_of(col) must equal hash_key of the column value, the groupby key rule
    assert ev(key_of(col("word")), ("abc",), WORDS) == hash_key(["abc"])
    assert typecheck(key_of(col("word")), WORDS) is ValueType.KEY


def test_key_of_rejects_empty():
    with pytest.raises(ValueError):
        key_of()


def test_comparisons():
    s = schema(x=ValueType.INT)
    assert ev(col("x") >= 3, (3,), s) is True
    assert ev(col("x") != 3, (3,), s) is False
    assert ev((col("x") > 0) & (col("x") < 10), (5,), s) is True
    assert ev((col("x") < 0) | (col("x") > 4), (5,), s) is True


def test_string_comparison():
    assert ev(col("word") < "b", ("a",), WORDS) is True


def test_expressions_have_no_truth_value():
    with pytest.raises(TypeError):
        bool(col("x") == 1)


def test_float_arithmetic():
    s = schema(x=ValueType.FLOAT, y=ValueType.FLOAT)
    assert ev(col("x") * col("y"), (2.0, 3.5), s) == 7.0
    assert typecheck(col("x") + col("y"), s) is ValueType.FLOAT


def test_mixed_int_float_rejected():
    s = schema(x=ValueType.INT, y=ValueType.FLOAT)
    with pytest.raises(TypecheckError):
        typecheck(col("x") + col("y"), s)


def test_constants_auto_wrapped():
    s = schema(x=ValueType.INT)
    assert ev(5 + col("x"), (1,), s) == 6
    assert ev(10 - col("x"), (1,), s) == 9
