"""File-based wire contract between the engine and a training executor.

The engine prepares a workspace directory containing the candidate source and
a run configuration.  The executor — any process, in any language — appends
progress lines while it trains and writes a final metrics payload:

* ``candidate_source.txt`` — engine-written candidate code, verbatim.
* ``run_config.json``     — engine-written run parameters (JSON object).
* ``progress.log``        — executor-appended lines ``STEP <int> LOSS <float>``.
* ``metrics.json``        — executor-written final payload::

      {"status": "ok" | "error",
       "loss_curve": [[step, loss], ...],
       "benchmarks": {"name": score, ...},
       "wall_seconds": float,
       "error_log": str}

The executor's exit code must be 0 exactly when ``status`` is ``"ok"``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .errors import ValidationError
from .records import MetricsReport

CANDIDATE_SOURCE = "candidate_source.txt"
RUN_CONFIG = "run_config.json"
PROGRESS_LOG = "progress.log"
METRICS_JSON = "metrics.json"

_PROGRESS_PREFIX = "STEP"


def write_inputs(workspace: Path, code: str, run_config: dict) -> None:
    """Create ``workspace`` and populate the two engine-written files."""
    workspace = Path(workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    (workspace / CANDIDATE_SOURCE).write_text(code, encoding="utf-8")
    payload = json.dumps(run_config, sort_keys=True, indent=2)
    (workspace / RUN_CONFIG).write_text(payload + "\n", encoding="utf-8")


def read_inputs(workspace: Path) -> tuple[str, dict]:
    """Executor-side read of the candidate source and run configuration."""
    workspace = Path(workspace)
    source_path = workspace / CANDIDATE_SOURCE
    config_path = workspace / RUN_CONFIG
    if not source_path.exists():
        raise ValidationError(f"missing {CANDIDATE_SOURCE} in {workspace}")
    if not config_path.exists():
        raise ValidationError(f"missing {RUN_CONFIG} in {workspace}")
    code = source_path.read_text(encoding="utf-8")
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{RUN_CONFIG} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ValidationError(f"{RUN_CONFIG} must hold a JSON object")
    return code, config


def format_progress_line(step: int, loss: float) -> str:
    return f"{_PROGRESS_PREFIX} {int(step)} LOSS {float(loss):.6f}"


def parse_progress_line(line: str) -> tuple[int, float]:
    """Parse one ``STEP <int> LOSS <float>`` line or raise ValidationError."""
    parts = line.split()
    if len(parts) != 4 or parts[0] != _PROGRESS_PREFIX or parts[2] != "LOSS":
        raise ValidationError(f"malformed progress line: {line!r}")
    try:
        step = int(parts[1])
        loss = float(parts[3])
    except ValueError as exc:
        raise ValidationError(f"malformed progress line: {line!r}") from exc
    if not math.isfinite(loss):
        raise ValidationError(f"non-finite loss in progress line: {line!r}")
    return step, loss


def read_progress(path: Path) -> list[tuple[int, float]]:
    """Read all complete progress lines, tolerating a partial trailing line.

    The executor may be mid-write when we poll, so a malformed *final* line is
    skipped; a malformed interior line is a contract violation.
    """
    path = Path(path)
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines()
    steps: list[tuple[int, float]] = []
    for index, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            steps.append(parse_progress_line(line))
        except ValidationError:
            if index == len(lines) - 1:
                break  # likely still being written
            raise
    return steps


def validate_metrics_payload(payload: object) -> list[str]:
    """Return a list of contract violations (empty when the payload is valid)."""
    errors: list[str] = []
    if not isinstance(payload, dict):
        return ["payload must be a JSON object"]
    status = payload.get("status")
    if status not in ("ok", "error"):
        errors.append(f"status must be 'ok' or 'error', got {status!r}")

    curve = payload.get("loss_curve")
    if not isinstance(curve, list):
        errors.append("loss_curve must be a list of [step, loss] pairs")
        curve = []
    previous_step = None
    for i, pair in enumerate(curve):
        if (
            not isinstance(pair, (list, tuple))
            or len(pair) != 2
            or isinstance(pair[0], bool)
            or not isinstance(pair[0], int)
            or isinstance(pair[1], bool)
            or not isinstance(pair[1], (int, float))
        ):
            errors.append(f"loss_curve[{i}] must be [int step, number loss]")
            continue
        step, loss = int(pair[0]), float(pair[1])
        if previous_step is not None and step <= previous_step:
            errors.append(f"loss_curve steps must be strictly increasing at index {i}")
        previous_step = step
        if not math.isfinite(loss) or loss <= 0.0:
            errors.append(f"loss_curve[{i}] loss must be finite and positive")

    benchmarks = payload.get("benchmarks")
    if not isinstance(benchmarks, dict):
        errors.append("benchmarks must be an object of name -> score")
        benchmarks = {}
    for name, score in benchmarks.items():
        if not isinstance(name, str) or not name:
            errors.append("benchmark names must be non-empty strings")
        if (
            isinstance(score, bool)
            or not isinstance(score, (int, float))
            or not math.isfinite(float(score))
            or not 0.0 <= float(score) <= 1.0
        ):
            errors.append(f"benchmark {name!r} score must be a number in [0, 1]")

    wall = payload.get("wall_seconds")
    if (
        isinstance(wall, bool)
        or not isinstance(wall, (int, float))
        or not math.isfinite(float(wall))
        or float(wall) < 0.0
    ):
        errors.append("wall_seconds must be a finite non-negative number")

    if not isinstance(payload.get("error_log"), str):
        errors.append("error_log must be a string")

    if status == "ok":
        if not curve:
            errors.append("an ok payload must include a non-empty loss_curve")
        if not benchmarks:
            errors.append("an ok payload must include non-empty benchmarks")
    return errors


def metrics_from_payload(payload: dict) -> MetricsReport:
    """Convert a validated ``status == "ok"`` payload into a MetricsReport."""
    problems = validate_metrics_payload(payload)
    if problems:
        raise ValidationError("invalid metrics payload: " + "; ".join(problems))
    if payload["status"] != "ok":
        raise ValidationError("cannot build a metrics report from an error payload")
    curve = [(int(s), float(l)) for s, l in payload["loss_curve"]]
    scores = {str(k): float(v) for k, v in payload["benchmarks"].items()}
    return MetricsReport.build(curve, scores)


def write_metrics(workspace: Path, payload: dict) -> None:
    """Executor-side write of the final metrics payload."""
    problems = validate_metrics_payload(payload)
    if problems:
        raise ValidationError("refusing to write invalid metrics: " + "; ".join(problems))
    path = Path(workspace) / METRICS_JSON
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_metrics(workspace: Path) -> dict:
    """Engine-side read of metrics.json; raises ValidationError when unusable."""
    path = Path(workspace) / METRICS_JSON
    if not path.exists():
        raise ValidationError(f"missing {METRICS_JSON} in {workspace}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{METRICS_JSON} is not valid JSON: {exc}") from exc
    problems = validate_metrics_payload(payload)
    if problems:
        raise ValidationError("invalid metrics payload: " + "; ".join(problems))
    return payload
