"""Optimistic input/output matching and latency statistics.

Each input occurrence of a word is matched against the earliest output
event for that word carrying the exact expected count; when no exact match
exists, the earliest later event with a larger count is used. The per-word
match pointer never moves backward, so matched output times are monotone
per word, and one batched output event may serve several consecutive input
occurrences. Burn-in-flagged inputs are matched but excluded from the
percentile statistics.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class InputEvent:
    seq: int
    word: str
    time_ms: float
    burn_in: bool = False


@dataclass(frozen=True)
class OutputEvent:
    word: str
    count: int
    time_ms: float


@dataclass(frozen=True)
class MatchResult:
    input_seq: int
    output_index: int | None  # index into the output event list, or unmatched
    latency_ms: float | None
    burn_in: bool


PERCENTILES = (80, 90, 95, 99)


@dataclass
class LatencyReport:
    matched: int = 0
    unmatched: int = 0
    burn_in_excluded: int = 0
    latencies_ms: list = field(default_factory=list)  # post-burn-in only
    percentiles: dict = field(default_factory=dict)
    sustained_throughput: float | None = None
    no_measurable_events: bool = False

    def to_dict(self) -> dict:
        return {
            "matched": self.matched,
            "unmatched": self.unmatched,
            "burn_in_excluded": self.burn_in_excluded,
            "measured": len(self.latencies_ms),
            "percentiles_ms": self.percentiles,
            "sustained_throughput_rps": self.sustained_throughput,
            "no_measurable_events": self.no_measurable_events,
        }


def percentile(sorted_values, q: float):
    """Nearest-rank percentile over an ascending list."""
    if not sorted_values:
        return None
    rank = max(1, math.ceil(q / 100.0 * len(sorted_values)))
    return sorted_values[min(rank - 1, len(sorted_values) - 1)]


def match_events(inputs, outputs) -> list:
    """Match input occurrences to output events per the two-pointer rule;
    returns one MatchResult per input, in input order."""
    out_by_word: dict = {}
    for j, ev in enumerate(outputs):
        out_by_word.setdefault(ev.word, []).append((ev.count, ev.time_ms, j))
    pointer: dict = {}
    occurrence: dict = {}
    results = []
    for ev in inputs:
        k = occurrence.get(ev.word, 0) + 1
        occurrence[ev.word] = k
        cand = out_by_word.get(ev.word, ())
        p = pointer.get(ev.word, 0)
        exact = None
        larger = None
        for j in range(p, len(cand)):
            c = cand[j][0]
            if c == k:
                exact = j
                break
            if c > k and larger is None:
                larger = j
        hit = exact if exact is not None else larger
        if hit is None:
            results.append(MatchResult(ev.seq, None, None, ev.burn_in))
            continue
        pointer[ev.word] = hit
        count, t_out, out_index = cand[hit]
        results.append(MatchResult(ev.seq, out_index, t_out - ev.time_ms, ev.burn_in))
    return results


def build_report(inputs, outputs, matches=None) -> LatencyReport:
    if matches is None:
        matches = match_events(inputs, outputs)
    rep = LatencyReport()
    for m in matches:
        if m.latency_ms is None:
            rep.unmatched += 1
        elif m.burn_in:
            rep.matched += 1
            rep.burn_in_excluded += 1
        else:
            rep.matched += 1
            rep.latencies_ms.append(m.latency_ms)
    rep.latencies_ms.sort()
    rep.percentiles = {p: percentile(rep.latencies_ms, p) for p in PERCENTILES}
    if not rep.latencies_ms:
        rep.no_measurable_events = True
        return rep
    measured = [
        (i, m) for i, m in zip(inputs, matches) if m.latency_ms is not None and not m.burn_in
    ]
    t_first = min(i.time_ms for i, _ in measured)
    t_last = max(i.time_ms + m.latency_ms for i, m in measured)
    span_s = (t_last - t_first) / 1000.0
    rep.sustained_throughput = len(measured) / span_s if span_s > 0 else None
    return rep


def read_input_log(path) -> list:
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            events.append(
                InputEvent(obj["seq"], obj["word"], obj["time_ms"], obj.get("burn_in", False))
            )
    return events


def read_output_log(path, word_col: str = "word", count_col: str = "count") -> list:
    """Insert events (diff > 0) from a sink update log, in log order."""
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj["diff"] <= 0:
                continue
            data = obj["data"]
            events.append(OutputEvent(data[word_col], data[count_col], obj["time_ms"]))
    return events


def match_latencies(input_log_path, output_log_path) -> LatencyReport:
    """File-level entry point: reads both logs and builds the report."""
    inputs = read_input_log(input_log_path)
    outputs = read_output_log(output_log_path)
    return build_report(inputs, outputs)
