"""Result aggregation: accuracy tables, per-class error counts, and plots.

Everything here is recomputed from the raw JSONL records; the report holds
no state of its own. Malformed lines are skipped and counted.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .runner import summarize
from .svg import line_chart, scatter_chart


def read_results(path) -> tuple[list[dict], int]:
    """Parse a results JSONL file; returns (records, skipped_line_count)."""
    records, skipped = [], 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                skipped += 1
                continue
            if not isinstance(record, dict):
                skipped += 1
                continue
            records.append(record)
    return records, skipped


def per_class_misclassifications(records: list[dict]) -> dict[int, int]:
    """Count of final misclassifications keyed by true label index."""
    counts: dict[int, int] = {}
    for record in records:
        true_index = record.get("true_index")
        if true_index is None:
            continue
        if record.get("final_prediction") != true_index:
            counts[true_index] = counts.get(true_index, 0) + 1
    return counts


def write_report(results_path, out_dir) -> dict:
    """Emit accuracy CSV, per-class CSV, and SVG plots; returns the summary."""
    records, skipped = read_results(results_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary = summarize(records)
    summary["skipped_lines"] = skipped

    with open(out / "accuracy.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([
            "images", "clean_accuracy_pct", "adversarial_accuracy_pct",
            "success_rate_pct", "mean_queries", "failures", "skipped_lines",
        ])
        writer.writerow([
            summary["images"],
            f"{summary['clean_accuracy'] * 100:.1f}",
            f"{summary['adversarial_accuracy'] * 100:.1f}",
            f"{summary['success_rate'] * 100:.1f}",
            f"{summary['mean_queries']:.1f}",
            summary["failures"],
            skipped,
        ])

    counts = per_class_misclassifications(records)
    with open(out / "per_class.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["true_index", "misclassified"])
        for index in sorted(counts):
            writer.writerow([index, counts[index]])

    curves = []
    for record in records:
        points = [
            (h.get("generation", i + 1), h.get("best_so_far", h.get("best", 0.0)))
            for i, h in enumerate(record.get("history", []))
        ]
        if points:
            curves.append((str(record.get("image_id", "?")), points))
    (out / "objective_curves.svg").write_text(
        line_chart(curves, "Stage-2 objective by generation", "generation", "best objective")
    )

    hits = [(r["query_count"], 1.0) for r in records if r.get("success")]
    misses = [(r["query_count"], 0.0) for r in records if not r.get("success")]
    (out / "success_vs_queries.svg").write_text(
        scatter_chart(
            [("success", hits), ("failure", misses)],
            "Attack outcome vs. query budget", "queries", "success",
        )
    )
    return summary
