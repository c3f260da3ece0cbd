"""Run summaries: per-run metrics, cross-run medians, JSON + text output."""
from __future__ import annotations

import json
import statistics
from pathlib import Path


def median_of(runs: list, key: str):
    vals = [r[key] for r in runs if r.get(key) is not None]
    if not vals:
        return None
    return statistics.median(vals)


def summarize_runs(runs: list) -> dict:
    """Aggregate repeated runs; the median of all runs is reported."""
    summary = {"runs": runs, "repeat": len(runs)}
    if not runs:
        return summary
    numeric = [
        k
        for k, v in runs[0].items()
        if isinstance(v, (int, float)) and not isinstance(v, bool)
    ]
    summary["median"] = {k: median_of(runs, k) for k in numeric}
    pcts = [r.get("percentiles_ms") for r in runs]
    if all(p is not None for p in pcts):
        merged = {}
        for q in pcts[0]:
            vals = [p[q] for p in pcts if p.get(q) is not None]
            merged[q] = statistics.median(vals) if vals else None
        summary["median_percentiles_ms"] = merged
    return summary


def render_text(config: dict, summary: dict) -> str:
    lines = ["# bench report", ""]
    lines.append("config:")
    for k, v in sorted(config.items()):
        lines.append(f"  {k}: {v}")
    lines.append("")
    for i, run in enumerate(summary.get("runs", [])):
        lines.append(f"run {i}:")
        for k, v in sorted(run.items()):
            if k == "percentiles_ms" and isinstance(v, dict):
                pct = ", ".join(f"p{q}={v[q]}" for q in sorted(v))
                lines.append(f"  latency percentiles: {pct}")
            else:
                lines.append(f"  {k}: {v}")
    med = summary.get("median")
    if med:
        lines.append("")
        lines.append(f"median over {summary['repeat']} runs:")
        for k, v in sorted(med.items()):
            lines.append(f"  {k}: {v}")
    mp = summary.get("median_percentiles_ms")
    if mp:
        pct = ", ".join(f"p{q}={mp[q]}" for q in sorted(mp))
        lines.append(f"  latency percentiles: {pct}")
    if summary.get("runs") and all(
        r.get("no_measurable_events") for r in summary["runs"]
    ):
        lines.append("")
        lines.append("warning: no measurable events (all matched inputs were burn-in)")
    return "\n".join(lines) + "\n"


def save_report(out_dir, config: dict, summary: dict) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    txt_path = out / "report.txt"
    payload = {"config": config, "summary": summary}
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    txt_path.write_text(render_text(config, summary))
    return json_path, txt_path


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
