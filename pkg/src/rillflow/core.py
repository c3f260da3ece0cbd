"""Value model, row keys, epochs, update records, schemas, consolidation.

Everything here is an immutable plain value, safe to copy between workers.
Rows are tuples of primitive values; keys are 128-bit integers produced
exclusively by :func:`hash_key`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from hashlib import blake2b
from typing import Iterable, NamedTuple

I64_MIN = -(1 << 63)
I64_MAX = (1 << 63) - 1

# Epochs are plain unsigned ints, strictly increasing per source; epoch 0 is
# the first batch.
Epoch = int


class ValueType(Enum):
    INT = "int"
    FLOAT = "float"
    STR = "str"
    BOOL = "bool"
    KEY = "key"
    NONE = "none"


class Key(int):
    """128-bit row identifier. Derived only via hash_key, never arithmetic."""

    __slots__ = ()

    def hex(self) -> str:
        return format(int(self), "032x")

    def __repr__(self) -> str:
        return f"Key({self.hex()})"


# Values are plain Python objects: int | float | str | bool | Key | None.
Value = "int | float | str | bool | Key | None"
Row = "tuple"

# Canonical variant order used for cross-type sorting.
_TAG = {
    ValueType.INT: 0,
    ValueType.FLOAT: 1,
    ValueType.STR: 2,
    ValueType.BOOL: 3,
    ValueType.KEY: 4,
    ValueType.NONE: 5,
}


def type_of(value) -> ValueType:
    # bool and Key subclass int; test them first.
    if value is None:
        return ValueType.NONE
    if isinstance(value, bool):
        return ValueType.BOOL
    if isinstance(value, Key):
        return ValueType.KEY
    if isinstance(value, int):
        return ValueType.INT
    if isinstance(value, float):
        return ValueType.FLOAT
    if isinstance(value, str):
        return ValueType.STR
    raise TypeError(f"unsupported value: {value!r} ({type(value).__name__})")


def _float_order_bits(v: float) -> int:
    """Map a float to an int whose natural order is the IEEE total order."""
    bits = struct.unpack(">Q", struct.pack(">d", v))[0]
    if bits >> 63:
        return (~bits) & 0xFFFFFFFFFFFFFFFF
    return bits | 0x8000000000000000


def value_sort_key(value) -> tuple:
    t = type_of(value)
    tag = _TAG[t]
    if t is ValueType.NONE:
        return (tag, 0)
    if t is ValueType.FLOAT:
        return (tag, _float_order_bits(value))
    if t is ValueType.BOOL:
        return (tag, int(value))
    return (tag, value)


def row_sort_key(row: tuple) -> tuple:
    return tuple(value_sort_key(v) for v in row)


_pack_q = struct.Struct(">q").pack
_pack_d = struct.Struct(">d").pack
_pack_I = struct.Struct(">I").pack


def encode_values(values: Iterable) -> bytes:
    """Canonical type-tagged byte encoding, the hashing pre-image.

    Bit-exact: distinguishes 0.0 from -0.0 and int from float.
    """
    parts = []
    for v in values:
        cls = type(v)
        if cls is str:
            b = v.encode("utf-8")
            parts.append(b"\x02" + _pack_I(len(b)) + b)
        elif cls is int:
            if not I64_MIN <= v <= I64_MAX:
                raise ValueError(f"integer out of 64-bit range: {v}")
            parts.append(b"\x00" + _pack_q(v))
        elif cls is bool:
            parts.append(b"\x03\x01" if v else b"\x03\x00")
        elif cls is float:
            parts.append(b"\x01" + _pack_d(v))
        elif v is None:
            parts.append(b"\x05")
        elif isinstance(v, Key):
            parts.append(b"\x04" + int(v).to_bytes(16, "big"))
        elif isinstance(v, int) and not isinstance(v, bool):
            if not I64_MIN <= v <= I64_MAX:
                raise ValueError(f"integer out of 64-bit range: {v}")
            parts.append(b"\x00" + _pack_q(v))
        else:
            raise TypeError(f"unsupported value: {v!r}")
    return b"".join(parts)


_hash_cache: dict = {}
_HASH_CACHE_CAP = 1 << 17


def hash_key(values) -> Key:
    """Deterministic 128-bit key over a non-empty list of values."""
    if not values:
        raise ValueError("hash_key requires a non-empty value list")
    # Cache all-string keys only: strings never compare equal to other
    # variants, so dict equality cannot alias differently-encoded inputs
    # (1 == 1.0 == True would).
    ck = None
    for v in values:
        if type(v) is not str:
            break
    else:
        ck = tuple(values)
        cached = _hash_cache.get(ck)
        if cached is not None:
            return cached
    digest = blake2b(encode_values(values), digest_size=16).digest()
    key = Key(int.from_bytes(digest, "big"))
    if ck is not None:
        if len(_hash_cache) >= _HASH_CACHE_CAP:
            _hash_cache.clear()
        _hash_cache[ck] = key
    return key


def worker_of(key: Key, workers: int) -> int:
    """Shard assignment: high 64 bits of the key, mod worker count."""
    return (int(key) >> 64) % workers


class Update(NamedTuple):
    """Atomic signed change record, the unit flowing through every operator."""

    key: Key
    row: tuple
    diff: int
    epoch: int


def _update_sort_key(u: Update) -> tuple:
    return (u.epoch, int(u.key), row_sort_key(u.row))


def consolidate(updates: Iterable[Update]) -> list[Update]:
    """Sum diffs per (key, row, epoch), drop zeros, sort by (epoch, key, row)."""
    acc: dict[tuple, int] = {}
    for u in updates:
        k = (u.epoch, u.key, u.row)
        acc[k] = acc.get(k, 0) + u.diff
    merged = [
        Update(key, row, diff, epoch)
        for (epoch, key, row), diff in acc.items()
        if diff != 0
    ]
    merged.sort(key=_update_sort_key)
    return merged


def accumulate(updates: Iterable[Update]) -> dict:
    """Fold updates into final state: key -> (row, multiplicity).

    Enforces the keyed-map invariant: at most one distinct live row per key,
    multiplicity never negative.
    """
    per_key: dict[Key, dict[tuple, int]] = {}
    for u in updates:
        rows = per_key.setdefault(u.key, {})
        m = rows.get(u.row, 0) + u.diff
        if m:
            rows[u.row] = m
        else:
            rows.pop(u.row, None)
    state = {}
    for key, rows in per_key.items():
        live = [(row, m) for row, m in rows.items() if m != 0]
        if not live:
            continue
        if any(m < 0 for _, m in live):
            raise ValueError(f"negative multiplicity at key {key!r}")
        if len(live) > 1:
            raise ValueError(f"multiple live rows at key {key!r}: {live}")
        state[key] = live[0]
    return state


@dataclass(frozen=True)
class Schema:
    """Ordered (name, type) columns; names unique."""

    columns: tuple

    def __post_init__(self):
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in schema: {names}")
        for _, t in self.columns:
            if not isinstance(t, ValueType):
                raise TypeError(f"column type must be ValueType, got {t!r}")

    @property
    def names(self) -> tuple:
        return tuple(n for n, _ in self.columns)

    def index(self, name: str) -> int:
        for i, (n, _) in enumerate(self.columns):
            if n == name:
                return i
        raise KeyError(f"no column {name!r} in schema {self.names}")

    def type_of(self, name: str) -> ValueType:
        return self.columns[self.index(name)][1]

    def has(self, name: str) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.columns)


def schema(**columns: ValueType) -> Schema:
    """Build a Schema from keyword column declarations (insertion-ordered)."""
    return Schema(tuple(columns.items()))
