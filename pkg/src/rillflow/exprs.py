"""Typed column expressions: construction, typechecking, evaluation.

Expressions are built with operator overloading (`col("rank") * 5`) and
compile to plain closures taking `(row, key)`. Arithmetic is checked
64-bit: overflow and division by zero are row-level runtime errors that
carry the offending key and the expression path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .core import I64_MAX, I64_MIN, Key, Schema, ValueType, hash_key, type_of

ARITH_OPS = {"+", "-", "*", "//"}
CMP_OPS = {"==", "!=", "<", "<=", ">", ">="}
BOOL_OPS = {"and", "or"}
ORDERED_TYPES = {ValueType.INT, ValueType.FLOAT, ValueType.STR, ValueType.BOOL}


class TypecheckError(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class RowError(Exception):
    """Runtime expression failure at a specific row."""

    def __init__(self, path: str, message: str, key: Key | None = None):
        self.path = path
        self.message = message
        self.key = key
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f" at key {self.key.hex()}" if self.key is not None else ""
        return f"{self.path}: {self.message}{where}"

    def with_key(self, key: Key) -> "RowError":
        return RowError(self.path, self.message, key)


class Expr:
    """Base expression node. Subclasses are immutable."""

    __slots__ = ()

    def __add__(self, other):
        return BinOp("+", self, wrap(other))

    def __radd__(self, other):
        return BinOp("+", wrap(other), self)

    def __sub__(self, other):
        return BinOp("-", self, wrap(other))

    def __rsub__(self, other):
        return BinOp("-", wrap(other), self)

    def __mul__(self, other):
        return BinOp("*", self, wrap(other))

    def __rmul__(self, other):
        return BinOp("*", wrap(other), self)

    def __floordiv__(self, other):
        return BinOp("//", self, wrap(other))

    def __rfloordiv__(self, other):
        return BinOp("//", wrap(other), self)

    def __eq__(self, other):  # expression, not structural equality
        return BinOp("==", self, wrap(other))

    def __ne__(self, other):
        return BinOp("!=", self, wrap(other))

    def __lt__(self, other):
        return BinOp("<", self, wrap(other))

    def __le__(self, other):
        return BinOp("<=", self, wrap(other))

    def __gt__(self, other):
        return BinOp(">", self, wrap(other))

    def __ge__(self, other):
        return BinOp(">=", self, wrap(other))

    def __and__(self, other):
        return BinOp("and", self, wrap(other))

    def __or__(self, other):
        return BinOp("or", self, wrap(other))

    def __bool__(self):
        raise TypeError(
            "expressions have no truth value; use if_else(...) and the & | operators"
        )

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False, repr=False)
class ColumnRef(Expr):
    name: str

    def __repr__(self):
        return f"col({self.name!r})"


@dataclass(frozen=True, eq=False, repr=False)
class Const(Expr):
    value: object

    def __repr__(self):
        return f"const({self.value!r})"


@dataclass(frozen=True, eq=False, repr=False)
class BinOp(Expr):
    op: str
    lhs: Expr
    rhs: Expr

    def __repr__(self):
        return f"({self.lhs!r} {self.op} {self.rhs!r})"


@dataclass(frozen=True, eq=False, repr=False)
class IfElse(Expr):
    cond: Expr
    then: Expr
    orelse: Expr

    def __repr__(self):
        return f"if_else({self.cond!r}, {self.then!r}, {self.orelse!r})"


@dataclass(frozen=True, eq=False, repr=False)
class ThisId(Expr):
    """The row's own key."""

    def __repr__(self):
        return "this_id()"


@dataclass(frozen=True, eq=False, repr=False)
class KeyOf(Expr):
    """hash_key over the argument values; how groupby and ix derive keys."""

    args: tuple = field(default_factory=tuple)

    def __repr__(self):
        inner = ", ".join(repr(a) for a in self.args)
        return f"key_of({inner})"


def wrap(value) -> Expr:
    if isinstance(value, Expr):
        return value
    type_of(value)  # reject non-Value constants early
    return Const(value)


def col(name: str) -> ColumnRef:
    return ColumnRef(name)


def const(value) -> Const:
    return Const(value)


def if_else(cond, then, orelse) -> IfElse:
    return IfElse(wrap(cond), wrap(then), wrap(orelse))


def this_id() -> ThisId:
    return ThisId()


def key_of(*args) -> KeyOf:
    if not args:
        raise ValueError("key_of requires at least one argument")
    return KeyOf(tuple(wrap(a) for a in args))


def _format_type(t: ValueType) -> str:
    return t.value


def typecheck(expr: Expr, schema: Schema) -> ValueType:
    """Assign a single type to the expression or raise a located error."""
    return _typecheck(expr, schema, "expr")


def _typecheck(expr: Expr, schema: Schema, path: str) -> ValueType:
    if isinstance(expr, ColumnRef):
        if not schema.has(expr.name):
            raise TypecheckError(
                f"{path}.col({expr.name})",
                f"unknown column {expr.name!r}; have {list(schema.names)}",
            )
        return schema.type_of(expr.name)
    if isinstance(expr, Const):
        return type_of(expr.value)
    if isinstance(expr, ThisId):
        return ValueType.KEY
    if isinstance(expr, KeyOf):
        for i, a in enumerate(expr.args):
            t = _typecheck(a, schema, f"{path}.key_of[{i}]")
            if t is ValueType.NONE:
                raise TypecheckError(f"{path}.key_of[{i}]", "cannot key by none")
        return ValueType.KEY
    if isinstance(expr, BinOp):
        lt = _typecheck(expr.lhs, schema, f"{path}.{expr.op}.lhs")
        rt = _typecheck(expr.rhs, schema, f"{path}.{expr.op}.rhs")
        op = expr.op
        where = f"{path}.{op}"
        if op in ARITH_OPS:
            if lt is not rt or lt not in (ValueType.INT, ValueType.FLOAT):
                raise TypecheckError(
                    where, f"{_format_type(lt)} {op} {_format_type(rt)}"
                )
            if op == "//" and lt is not ValueType.INT:
                raise TypecheckError(where, "floor division is integer-only")
            return lt
        if op in CMP_OPS:
            if lt is not rt:
                raise TypecheckError(
                    where, f"{_format_type(lt)} {op} {_format_type(rt)}"
                )
            if op not in ("==", "!=") and lt not in ORDERED_TYPES:
                raise TypecheckError(where, f"{_format_type(lt)} is not ordered")
            return ValueType.BOOL
        if op in BOOL_OPS:
            if lt is not ValueType.BOOL or rt is not ValueType.BOOL:
                raise TypecheckError(
                    where, f"{_format_type(lt)} {op} {_format_type(rt)}"
                )
            return ValueType.BOOL
        raise TypecheckError(where, f"unknown operator {op!r}")
    if isinstance(expr, IfElse):
        ct = _typecheck(expr.cond, schema, f"{path}.if.cond")
        if ct is not ValueType.BOOL:
            raise TypecheckError(f"{path}.if.cond", f"condition is {_format_type(ct)}")
        tt = _typecheck(expr.then, schema, f"{path}.if.then")
        et = _typecheck(expr.orelse, schema, f"{path}.if.else")
        if tt is not et:
            raise TypecheckError(
                f"{path}.if", f"branch types disagree: {_format_type(tt)} vs {_format_type(et)}"
            )
        return tt
    raise TypecheckError(path, f"unknown expression node {type(expr).__name__}")


def compile_expr(expr: Expr, schema: Schema):
    """Compile a typechecked expression to fn(row, key) -> value."""
    typecheck(expr, schema)
    return _compile(expr, schema, "expr")


def _compile(expr: Expr, schema: Schema, path: str):
    if isinstance(expr, ColumnRef):
        i = schema.index(expr.name)
        return lambda row, key: row[i]
    if isinstance(expr, Const):
        v = expr.value
        return lambda row, key: v
    if isinstance(expr, ThisId):
        return lambda row, key: key
    if isinstance(expr, KeyOf):
        fns = [_compile(a, schema, f"{path}.key_of[{i}]") for i, a in enumerate(expr.args)]
        if len(fns) == 1:
            f0 = fns[0]
            return lambda row, key: hash_key((f0(row, key),))
        return lambda row, key: hash_key([f(row, key) for f in fns])
    if isinstance(expr, IfElse):
        c = _compile(expr.cond, schema, f"{path}.if.cond")
        t = _compile(expr.then, schema, f"{path}.if.then")
        e = _compile(expr.orelse, schema, f"{path}.if.else")
        return lambda row, key: t(row, key) if c(row, key) else e(row, key)
    if isinstance(expr, BinOp):
        lt = _typecheck(expr.lhs, schema, path)
        lf = _compile(expr.lhs, schema, f"{path}.{expr.op}.lhs")
        rf = _compile(expr.rhs, schema, f"{path}.{expr.op}.rhs")
        op = expr.op
        where = f"{path}.{op}"
        if op in ARITH_OPS and lt is ValueType.INT:
            return _compile_int_arith(op, lf, rf, where)
        if op == "+":
            return lambda row, key: lf(row, key) + rf(row, key)
        if op == "-":
            return lambda row, key: lf(row, key) - rf(row, key)
        if op == "*":
            return lambda row, key: lf(row, key) * rf(row, key)
        if op == "==":
            return lambda row, key: lf(row, key) == rf(row, key)
        if op == "!=":
            return lambda row, key: lf(row, key) != rf(row, key)
        if op == "<":
            return lambda row, key: lf(row, key) < rf(row, key)
        if op == "<=":
            return lambda row, key: lf(row, key) <= rf(row, key)
        if op == ">":
            return lambda row, key: lf(row, key) > rf(row, key)
        if op == ">=":
            return lambda row, key: lf(row, key) >= rf(row, key)
        if op == "and":
            return lambda row, key: lf(row, key) and rf(row, key)
        if op == "or":
            return lambda row, key: lf(row, key) or rf(row, key)
    raise TypecheckError(path, f"unknown expression node {type(expr).__name__}")


def _compile_int_arith(op: str, lf, rf, where: str):
    # Checked 64-bit arithmetic: overflow and zero division are row errors.
    if op == "+":
        def add(row, key):
            v = lf(row, key) + rf(row, key)
            if not I64_MIN <= v <= I64_MAX:
                raise RowError(where, f"integer overflow: {v}")
            return v

        return add
    if op == "-":
        def sub(row, key):
            v = lf(row, key) - rf(row, key)
            if not I64_MIN <= v <= I64_MAX:
                raise RowError(where, f"integer overflow: {v}")
            return v

        return sub
    if op == "*":
        def mul(row, key):
            v = lf(row, key) * rf(row, key)
            if not I64_MIN <= v <= I64_MAX:
                raise RowError(where, f"integer overflow: {v}")
            return v

        return mul

    def floordiv(row, key):
        d = rf(row, key)
        if d == 0:
            raise RowError(where, "division by zero")
        v = lf(row, key) // d
        if not I64_MIN <= v <= I64_MAX:
            raise RowError(where, f"integer overflow: {v}")
        return v

    return floordiv


def evaluate(expr: Expr, row: tuple, schema: Schema, key: Key | None = None):
    """One-shot evaluation; pure in (expr, row, key). Raises RowError on
    division by zero or overflow, tagged with the key when given."""
    fn = compile_expr(expr, schema)
    try:
        return fn(row, key)
    except RowError as e:
        raise e.with_key(key) if key is not None and e.key is None else e


def expr_signature(expr: Expr) -> str:
    """Deterministic structural description, used for graph isomorphism."""
    return repr(expr)
