"""File sources, commit policies, the bursty replay streamer, and sinks.

Wire format (JSONL): one object per line; plain objects are inserts, the
reserved "_action" key marks deletes and explicit commits:

    {"word": "abc"}                     insert
    {"_action": "delete", "word": "abc"} delete of a prior insert
    {"_action": "commit"}                commit (explicit policy only)
"""
from __future__ import annotations

import csv
import json
import math
import random
import time
from dataclasses import dataclass
from typing import NamedTuple

from .core import I64_MAX, I64_MIN, Key, Schema, Update, ValueType, row_sort_key


class ConnectorError(Exception):
    pass


class Data(NamedTuple):
    kind: str  # "insert" | "delete"
    payload: dict


@dataclass(frozen=True)
class Commit:
    pass


COMMIT = Commit()


@dataclass(frozen=True)
class TimestampedRecord:
    """A record plus its source-admission time (stand-in for broker
    append time); burn_in flags records the latency matcher must discard."""

    record: object
    ingress_ms: float
    burn_in: bool = False


@dataclass(frozen=True)
class CommitPolicy:
    """Exactly one policy per source; explicit in-stream commits are only
    legal under the `explicit` policy."""

    kind: str  # "every_n_records" | "every_millis" | "explicit" | "end_of_input_only"
    n: int | None = None
    millis: float | None = None


def every_n_records(n: int) -> CommitPolicy:
    if n < 1:
        raise ValueError("commit interval must be >= 1 record")
    return CommitPolicy("every_n_records", n=n)


def every_millis(ms: float) -> CommitPolicy:
    if ms <= 0:
        raise ValueError("commit interval must be positive")
    return CommitPolicy("every_millis", millis=ms)


def explicit_commits() -> CommitPolicy:
    return CommitPolicy("explicit")


def end_of_input_only() -> CommitPolicy:
    return CommitPolicy("end_of_input_only")


class SimulatedClock:
    """Deterministic clock driven by the replay schedule."""

    def __init__(self):
        self._now = 0.0

    def now_ms(self) -> float:
        return self._now

    def set_ms(self, t: float) -> None:
        if t > self._now:
            self._now = t


def _convert(value, vtype: ValueType, where: str):
    if vtype is ValueType.STR:
        if isinstance(value, str):
            return value
    elif vtype is ValueType.BOOL:
        if isinstance(value, bool):
            return value
    elif vtype is ValueType.INT:
        if isinstance(value, bool):
            pass
        elif isinstance(value, int):
            if not I64_MIN <= value <= I64_MAX:
                raise ConnectorError(f"{where}: integer out of range: {value}")
            return value
    elif vtype is ValueType.FLOAT:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif vtype is ValueType.NONE:
        if value is None:
            return None
    raise ConnectorError(
        f"{where}: expected {vtype.value}, got {type(value).__name__} ({value!r})"
    )


def _payload_from(obj: dict, schema: Schema, where: str) -> dict:
    """Validate (and where needed coerce) obj against the schema, in place."""
    for name, vtype in schema.columns:
        if name not in obj:
            raise ConnectorError(f"{where}: missing column {name!r}")
        v = obj[name]
        cls = type(v)
        if (vtype is ValueType.STR and cls is str) or (
            vtype is ValueType.INT and cls is int and I64_MIN <= v <= I64_MAX
        ):
            continue
        obj[name] = _convert(v, vtype, f"{where}, column {name!r}")
    return obj


def apply_commit_policy(records, policy: CommitPolicy, clock=None):
    """Inject Commit records per policy. End of input always commits any
    uncommitted trailing records so bounded runs terminate cleanly."""
    since_commit = 0
    last_commit_ms = 0.0
    ever = False

    def time_of(rec):
        if isinstance(rec, TimestampedRecord):
            return rec.ingress_ms
        return clock.now_ms() if clock is not None else 0.0

    for rec in records:
        inner = rec.record if isinstance(rec, TimestampedRecord) else rec
        if isinstance(inner, Commit):
            if policy.kind != "explicit":
                raise ConnectorError(
                    f"explicit commit record under {policy.kind!r} policy"
                )
            since_commit = 0
            ever = True
            yield inner
            continue
        if policy.kind == "every_millis":
            t = time_of(rec)
            if t - last_commit_ms >= policy.millis and since_commit > 0:
                last_commit_ms = t
                since_commit = 0
                ever = True
                yield COMMIT
        yield rec
        since_commit += 1
        if policy.kind == "every_n_records" and since_commit == policy.n:
            since_commit = 0
            ever = True
            yield COMMIT
    if since_commit > 0 or not ever:
        yield COMMIT


def read_jsonl_records(path, schema: Schema):
    """Yield raw Data/Commit records from a JSONL file, in file order.

    Parse and type errors carry the line number.
    """
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConnectorError(f"{where}: invalid JSON: {e}") from e
            if not isinstance(obj, dict):
                raise ConnectorError(f"{where}: expected an object")
            action = obj.pop("_action", None)
            if action == "commit":
                yield COMMIT
            elif action == "delete":
                yield Data("delete", _payload_from(obj, schema, where))
            elif action is None:
                yield Data("insert", _payload_from(obj, schema, where))
            else:
                raise ConnectorError(f"{where}: unknown _action {action!r}")


def read_jsonl(path, schema: Schema, policy: CommitPolicy | None = None, clock=None):
    """Stream records from a JSONL file in file order, injecting commits
    per policy."""
    if policy is None:
        policy = end_of_input_only()
    return apply_commit_policy(read_jsonl_records(path, schema), policy, clock)


def read_csv(path, schema: Schema, policy: CommitPolicy | None = None, clock=None):
    """CSV source: header row required; values parsed to the schema types."""
    if policy is None:
        policy = end_of_input_only()

    def parse(text: str, vtype: ValueType, where: str):
        try:
            if vtype is ValueType.STR:
                return text
            if vtype is ValueType.INT:
                return _convert(int(text), vtype, where)
            if vtype is ValueType.FLOAT:
                return float(text)
            if vtype is ValueType.BOOL:
                if text in ("true", "True", "1"):
                    return True
                if text in ("false", "False", "0"):
                    return False
                raise ValueError(text)
        except ValueError as e:
            raise ConnectorError(f"{where}: cannot parse {text!r} as {vtype.value}") from e
        raise ConnectorError(f"{where}: unsupported column type {vtype.value}")

    def records():
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                raise ConnectorError(f"{path}: missing header row") from None
            for name in schema.names:
                if name not in header:
                    raise ConnectorError(f"{path}: header lacks column {name!r}")
            idx = {name: header.index(name) for name in schema.names}
            for lineno, fields in enumerate(reader, start=2):
                where = f"{path}:{lineno}"
                payload = {}
                for name, vtype in schema.columns:
                    if idx[name] >= len(fields):
                        raise ConnectorError(f"{where}: short row")
                    payload[name] = parse(fields[idx[name]], vtype, where)
                yield Data("insert", payload)

    return apply_commit_policy(records(), policy, clock)


@dataclass(frozen=True)
class ReplaySpec:
    """Bursty schedule: per 10 ms tick the record count is geometric with
    mean matching the momentary target rate; the rate ramps linearly from
    `burn_in_start_fraction` of the mean to the full mean over the burn-in."""

    mean_throughput: float  # records / second, post burn-in
    burn_in_seconds: float = 0.0
    burn_in_start_fraction: float = 0.1
    seed: int = 0
    tick_ms: float = 10.0

    def __post_init__(self):
        if self.mean_throughput <= 0:
            raise ValueError("mean_throughput must be positive")
        if not 0 <= self.burn_in_start_fraction <= 1:
            raise ValueError("burn_in_start_fraction must be in [0, 1]")


def replay(records, spec: ReplaySpec, clock=None, pace: bool = False):
    """Emit records on the bursty schedule as TimestampedRecords.

    Order is preserved; only timing is synthetic. With a SimulatedClock the
    clock is advanced to each record's ingress time (no sleeping); with
    `pace=True` emission sleeps to follow the schedule in real time.
    """
    rng = random.Random(spec.seed)
    it = iter(records)
    t_ms = 0.0
    tick = spec.tick_ms
    burn_ms = spec.burn_in_seconds * 1000.0
    start = time.monotonic() if pace else None
    exhausted = False
    while not exhausted:
        if burn_ms > 0 and t_ms < burn_ms:
            frac = spec.burn_in_start_fraction + (1 - spec.burn_in_start_fraction) * (
                t_ms / burn_ms
            )
        else:
            frac = 1.0
        mean = spec.mean_throughput * frac * tick / 1000.0
        p = 1.0 / (1.0 + mean)
        u = rng.random()
        count = int(math.log(1.0 - u) / math.log(1.0 - p)) if p < 1.0 else 0
        for j in range(count):
            try:
                rec = next(it)
            except StopIteration:
                exhausted = True
                break
            stamp = t_ms + tick * (j + 1) / (count + 1)
            if pace and start is not None:
                lag = stamp / 1000.0 - (time.monotonic() - start)
                if lag > 0:
                    time.sleep(lag)
            if clock is not None and isinstance(clock, SimulatedClock):
                clock.set_ms(stamp)
            yield TimestampedRecord(rec, stamp, burn_in=stamp < burn_ms)
        t_ms += tick


def _json_value(v):
    if isinstance(v, Key):
        return v.hex()
    return v


def _data_obj(row, schema: Schema) -> dict:
    return {name: _json_value(v) for (name, _), v in zip(schema.columns, row)}


class JsonlUpdateWriter:
    """Timed update log: one line per update, epochs in order, lines within
    an epoch canonically sorted (the engine sorts before writing)."""

    def __init__(self, path):
        self.path = path
        self._f = open(path, "w", encoding="utf-8")
        self.updates_written = 0

    def write(self, epoch: int, updates, time_ms: float, schema: Schema) -> None:
        f = self._f
        t = int(round(time_ms))
        for u in updates:
            obj = {
                "epoch": epoch,
                "diff": u.diff,
                "key": u.key.hex(),
                "data": _data_obj(u.row, schema),
                "time_ms": t,
            }
            f.write(json.dumps(obj, separators=(",", ":")))
            f.write("\n")
            self.updates_written += 1

    def close(self):
        self._f.close()


class CanonicalWriter(JsonlUpdateWriter):
    """Time-free canonical output stream; byte-identical across reruns."""

    def write(self, epoch: int, updates, time_ms: float, schema: Schema) -> None:
        f = self._f
        for u in updates:
            obj = {
                "epoch": epoch,
                "diff": u.diff,
                "key": u.key.hex(),
                "data": _data_obj(u.row, schema),
            }
            f.write(json.dumps(obj, separators=(",", ":")))
            f.write("\n")
            self.updates_written += 1


class NullSink:
    """Discards updates; counts them (and epochs) for throughput reporting."""

    def __init__(self):
        self.updates = 0
        self.epochs = 0

    def write(self, epoch: int, updates, time_ms: float, schema: Schema) -> None:
        n = len(updates)
        self.updates += n
        if n:
            self.epochs += 1

    def close(self):
        pass


def read_update_log(path, schema: Schema | None = None):
    """Read a timed or canonical update log back; returns (updates, times).

    Inverse of JsonlUpdateWriter up to the multiset of updates.
    """
    updates = []
    times = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            data = obj["data"]
            if schema is not None:
                row = tuple(data[name] for name in schema.names)
            else:
                row = tuple(data.values())
            updates.append(
                Update(Key(int(obj["key"], 16)), row, obj["diff"], obj["epoch"])
            )
            times.append(obj.get("time_ms"))
    return updates, times


def payload_stream(payloads, deletes=(), commit_after=None):
    """Test helper: wrap payload dicts as insert Data records, optionally
    committing every `commit_after` records."""
    records = [Data("insert", p) for p in payloads]
    records += [Data("delete", p) for p in deletes]
    if commit_after is None:
        return records
    out = []
    for i, r in enumerate(records, start=1):
        out.append(r)
        if i % commit_after == 0:
            out.append(COMMIT)
    if len(records) % commit_after != 0 or not records:
        out.append(COMMIT)
    return out
