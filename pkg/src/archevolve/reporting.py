"""Offline analytics over a campaign archive.

Four views of the record log: the lineage tree (dot/json export), the model
gallery (candidates beating the baseline on both axes), the discovery scaling
fit (gallery count against cumulative compute hours), and motivation
classification (which components were touched, and whether the idea came
from cognition, analysis, or was original).
"""

from __future__ import annotations

import json
import logging
import re

import numpy as np

from . import assets
from .errors import ValidationError
from .gateway import LLMGateway
from .records import STATUS_ACCEPTED, ArchitectureRecord

logger = logging.getLogger(__name__)

PROVENANCE_LABELS = ("analysis", "cognition", "original")
UNCLASSIFIED = "unclassified"

# quartile fill colors, worst to best
_QUARTILE_COLORS = ("#d7e3f4", "#a8c6e8", "#6f9fd8", "#2e6fbd")
_NO_FITNESS_COLOR = "#d9d9d9"

_CATEGORY_RE = re.compile(r"^\s*CATEGORY:\s*(.+?)\s*$", re.MULTILINE)
_PROVENANCE_RE = re.compile(r"^\s*PROVENANCE:\s*([A-Za-z]+)\s*$", re.MULTILINE)


def is_gallery(record: ArchitectureRecord) -> bool:
    """Beats the baseline on both axes — a strict conjunction."""
    return (
        record.status == STATUS_ACCEPTED
        and record.fitness is not None
        and record.fitness.r_loss > 0.0
        and record.fitness.r_bench > 0.0
    )


def gallery_filter(records: list[ArchitectureRecord]) -> list[ArchitectureRecord]:
    return [r for r in records if is_gallery(r)]


# ----------------------------------------------------------------- lineage


def export_tree(records: list[ArchitectureRecord], fmt: str) -> str:
    """Render the lineage forest; ``fmt`` is ``dot`` or ``json``."""
    if fmt not in ("dot", "json"):
        raise ValidationError(f"unknown export format {fmt!r}; expected dot or json")
    ordered = sorted(records, key=lambda r: r.record_id)
    if fmt == "json":
        return json.dumps(
            {
                "nodes": [
                    {
                        "id": r.record_id,
                        "name": r.name,
                        "status": r.status,
                        "fitness": r.fitness.composite if r.fitness else None,
                    }
                    for r in ordered
                ],
                "edges": [
                    {"parent": r.parent_id, "child": r.record_id}
                    for r in ordered
                    if r.parent_id is not None
                ],
            },
            sort_keys=True,
            indent=2,
        )
    return _render_dot(ordered)


def _quartile_color(composite: float, thresholds: np.ndarray) -> str:
    rank = int(np.searchsorted(thresholds, composite, side="right"))
    return _QUARTILE_COLORS[min(rank, len(_QUARTILE_COLORS) - 1)]


def _render_dot(ordered: list[ArchitectureRecord]) -> str:
    composites = np.array(
        [r.fitness.composite for r in ordered if r.fitness is not None], dtype=float
    )
    thresholds = (
        np.quantile(composites, [0.25, 0.5, 0.75]) if composites.size else np.array([])
    )
    lines = [
        "digraph lineage {",
        "  rankdir=TB;",
        '  node [shape=box, style=filled, fontname="Helvetica"];',
    ]
    for r in ordered:
        if r.fitness is not None:
            color = _quartile_color(r.fitness.composite, thresholds)
            label = f"{r.name}\\n{r.fitness.composite:.3f}"
        else:
            color = _NO_FITNESS_COLOR
            label = f"{r.name}\\n({r.status})"
        safe = label.replace('"', r"\"")
        lines.append(f'  n{r.record_id} [label="{safe}", fillcolor="{color}"];')
    for r in ordered:
        if r.parent_id is not None:
            lines.append(f"  n{r.parent_id} -> n{r.record_id};")
    lines.append("}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- scaling


def scaling_table(records: list[ArchitectureRecord]) -> list[dict]:
    """Cumulative compute hours against cumulative gallery count.

    One row per record in id order (compute accrues on every run, discovery
    only on gallery entries), so the table plots the full staircase.
    """
    rows = []
    hours = 0.0
    count = 0
    for record in sorted(records, key=lambda r: r.record_id):
        hours += record.wall_seconds / 3600.0
        if is_gallery(record):
            count += 1
            discovery = True
        else:
            discovery = False
        rows.append(
            {
                "record_id": record.record_id,
                "cumulative_hours": hours,
                "gallery_count": count,
                "discovery": discovery,
            }
        )
    return rows


def report_scaling(records: list[ArchitectureRecord]) -> dict:
    """Least-squares discovery rate over the gallery-event points."""
    table = scaling_table(records)
    points = [r for r in table if r["discovery"]]
    report = {
        "table": table,
        "gallery_points": len(points),
        "hours_total": table[-1]["cumulative_hours"] if table else 0.0,
        "slope_per_hour": None,
        "intercept": None,
    }
    if len(points) < 2:
        report["note"] = "slope undefined: fewer than 2 gallery points"
        return report
    x = np.array([p["cumulative_hours"] for p in points], dtype=float)
    y = np.array([p["gallery_count"] for p in points], dtype=float)
    if float(np.ptp(x)) == 0.0:
        report["note"] = "slope undefined: no spread in compute hours"
        return report
    design = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    report["slope_per_hour"] = float(slope)
    report["intercept"] = float(intercept)
    return report


# ------------------------------------------------------------ provenance


def _classify_one(
    motivation: str,
    gateway: LLMGateway,
    taxonomy: list[str],
    categories_block: str,
    prompts_dir=None,
) -> tuple[str, str]:
    prompt = assets.render(
        assets.load_prompt("classifier", prompts_dir),
        motivation=motivation,
        categories=categories_block,
    )
    reply = gateway.chat("classifier", prompt)
    category_match = _CATEGORY_RE.search(reply)
    provenance_match = _PROVENANCE_RE.search(reply)
    category = category_match.group(1) if category_match else None
    provenance = provenance_match.group(1).lower() if provenance_match else None
    if category not in taxonomy:
        if category is not None:
            logger.warning("classifier named unknown category %r", category)
        category = UNCLASSIFIED
    if provenance not in PROVENANCE_LABELS:
        if provenance is not None:
            logger.warning("classifier named unknown provenance %r", provenance)
        provenance = UNCLASSIFIED
    return category, provenance


def _provenance_row(labels: list[str]) -> dict:
    total = len(labels)
    counts = {key: 0 for key in (*PROVENANCE_LABELS, UNCLASSIFIED)}
    for label in labels:
        counts[label] += 1
    percent = {
        key: (100.0 * value / total if total else 0.0)
        for key, value in counts.items()
    }
    return {"count": total, "counts": counts, "percent": percent}


def classify_motivations(
    records: list[ArchitectureRecord],
    gateway: LLMGateway,
    *,
    taxonomy: list[str] | None = None,
    prompts_dir=None,
) -> dict:
    """Component histogram plus provenance proportions, gallery against rest.

    Every record lands in a bucket; unparseable or off-list replies count as
    ``unclassified`` rather than being dropped.
    """
    taxonomy = taxonomy if taxonomy is not None else assets.load_taxonomy()
    categories_block = "\n".join(f"- {c}" for c in taxonomy)
    histogram: dict[str, int] = {}
    gallery_labels: list[str] = []
    other_labels: list[str] = []
    for record in sorted(records, key=lambda r: r.record_id):
        category, provenance = _classify_one(
            record.motivation, gateway, taxonomy, categories_block, prompts_dir
        )
        histogram[category] = histogram.get(category, 0) + 1
        (gallery_labels if is_gallery(record) else other_labels).append(provenance)
    ordered_histogram = dict(
        sorted(histogram.items(), key=lambda item: (-item[1], item[0]))
    )
    return {
        "component_histogram": ordered_histogram,
        "provenance": {
            "gallery": _provenance_row(gallery_labels),
            "others": _provenance_row(other_labels),
            "all": _provenance_row(gallery_labels + other_labels),
        },
    }
