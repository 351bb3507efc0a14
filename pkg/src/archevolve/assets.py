"""Data-asset access: prompt templates, the component taxonomy, and the
bundled baseline fixtures.

Prompt templates are plain text files with {{slot}} placeholders so operators
can edit them without touching code. A campaign config may point
`prompts_dir` at a directory of overrides; files found there shadow the
bundled ones by filename.
"""

from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .records import MetricsReport

PROMPT_FILES = {
    "researcher": "researcher.txt",
    "summarizer": "summarizer.txt",
    "checker": "checker.txt",
    "debugger": "debugger.txt",
    "analyst": "analyst.txt",
    "judge_novelty": "judge_novelty.txt",
    "judge_quality": "judge_quality.txt",
    "classifier": "classifier.txt",
}

_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")


def _bundled(relpath: str) -> str:
    return resources.files("archevolve").joinpath("assets", relpath).read_text(encoding="utf-8")


def load_prompt(key: str, prompts_dir: str | Path | None = None) -> str:
    try:
        filename = PROMPT_FILES[key]
    except KeyError:
        raise ValidationError(f"unknown prompt template {key!r}") from None
    if prompts_dir is not None:
        override = Path(prompts_dir) / filename
        if override.exists():
            return override.read_text(encoding="utf-8")
    return _bundled(f"prompts/{filename}")


def render(template: str, **slots) -> str:
    """Fill {{slot}} placeholders; unfilled placeholders are an error so
    template drift fails loudly instead of reaching a provider."""
    out = template
    for key, value in slots.items():
        out = out.replace("{{" + key + "}}", str(value))
    leftover = _SLOT_RE.search(out)
    if leftover:
        raise ValidationError(f"template slot {leftover.group(1)!r} was not filled")
    return out


def load_taxonomy(path: str | Path | None = None) -> list[str]:
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
    else:
        raw = _bundled("taxonomy.json")
    categories = json.loads(raw)["categories"]
    if len(categories) != len(set(categories)):
        raise ValidationError("taxonomy categories must be unique")
    return list(categories)


def load_baseline(ref: str) -> tuple[str, MetricsReport]:
    """Resolve a baseline reference to (name, MetricsReport).

    `ref` is either "builtin:<name>" for a bundled fixture or a filesystem
    path to a JSON file with the same shape.
    """
    if ref.startswith("builtin:"):
        raw = _bundled(f"baselines/{ref.split(':', 1)[1]}.json")
    else:
        raw = Path(ref).read_text(encoding="utf-8")
    data = json.loads(raw)
    report = MetricsReport.build(
        [(int(s), float(l)) for s, l in data["loss_curve"]],
        data["benchmark_scores"],
    )
    return data["name"], report


def load_baseline_source() -> str:
    return _bundled("baselines/delta_net_source.py.txt")
