"""Conformance selftest: drive three scripted scenarios through the real
engine supervisor and check each verdict.

The engine is consumed strictly through its command-line interface
(``exec-one`` with a subprocess executor pointing back at this package), so
the selftest proves the wire contract end to end: healthy training is
recorded ``ok`` with a decreasing loss curve and a schema-valid metrics file,
a crashing candidate is recorded ``error`` with the offending name in the
log, and a hung candidate is killed as ``killed_timeout``.
"""

from __future__ import annotations

import json
import logging
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from .config import ToyTrainConfig
from .model import load_baseline_source
from .runner import METRICS_JSON, run_trainer, write_run_inputs

logger = logging.getLogger(__name__)

ENGINE_ARGV = [sys.executable, "-m", "archevolve.cli"]
TRAINER_ARGV = [sys.executable, "-m", "toytrainer.cli"]

SELFTEST_SEED = 0
SELFTEST_TOKEN_BUDGET = 1_000_000
SLOW_MEDIAN_WALL = 1.0  # makes the kill threshold 2.5 s

UNDEFINED_NAME = "undefined_configuration_flag"

BUGGY_SUFFIX = f"\n\nSCALE_HINT = {UNDEFINED_NAME}\n"

SLOW_SOURCE = '''\
import time

import torch
from torch import nn


class DeltaNet(nn.Module):
    """A mixer that hangs instead of training."""

    def __init__(self, d_model: int, n_heads: int) -> None:
        super().__init__()
        self.proj = nn.Linear(d_model, d_model, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        time.sleep(3600)
        return self.proj(x)
'''


def _engine(*argv: str) -> tuple[int, dict]:
    completed = subprocess.run(
        [*ENGINE_ARGV, *argv], capture_output=True, text=True
    )
    try:
        payload = json.loads(completed.stdout)
    except json.JSONDecodeError:
        payload = {"error": f"engine produced no JSON: {completed.stdout[:500]!r}"}
    return completed.returncode, payload


def _decreasing_fraction(curve: list) -> float:
    pairs = list(zip(curve, curve[1:]))
    if not pairs:
        return 0.0
    down = sum(1 for (_, a), (_, b) in pairs if b < a)
    return down / len(pairs)


def _reference_baseline(scratch: Path) -> Path:
    """Train the bundled source directly once; its curve becomes the
    engine-side baseline at this toy scale."""
    workspace = scratch / "reference"
    write_run_inputs(
        workspace,
        load_baseline_source(),
        {
            "seed": SELFTEST_SEED,
            "token_budget": SELFTEST_TOKEN_BUDGET,
            "eval_sample_cap": 500,
            "model_scale": 1.0,
        },
    )
    if run_trainer(workspace, ToyTrainConfig()) != 0:
        raise RuntimeError("reference baseline run failed; see its metrics.json")
    payload = json.loads((workspace / METRICS_JSON).read_text(encoding="utf-8"))
    baseline_path = scratch / "toy_baseline.json"
    baseline_path.write_text(
        json.dumps(
            {
                "name": "toy_delta_net",
                "loss_curve": payload["loss_curve"],
                "benchmark_scores": payload["benchmarks"],
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return baseline_path


def _engine_config(scratch: Path, baseline_path: Path) -> Path:
    config_path = scratch / "engine_config.json"
    config_path.write_text(
        json.dumps(
            {
                "executor": "subprocess",
                "executor_cmd": TRAINER_ARGV,
                "baselines": [str(baseline_path)],
                "primary_baseline": str(baseline_path),
                "max_cycles": 1,
                "stages": {
                    "exploration": {
                        "token_budget": SELFTEST_TOKEN_BUDGET,
                        "debug_budget": 0,
                    }
                },
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return config_path


def run_selftest() -> dict:
    report: dict = {"scenarios": {}, "passed": False}
    with tempfile.TemporaryDirectory(prefix="toytrainer-selftest-") as tmp:
        scratch = Path(tmp)
        baseline_path = _reference_baseline(scratch)
        config_path = _engine_config(scratch, baseline_path)

        healthy_path = scratch / "healthy.py"
        healthy_path.write_text(load_baseline_source(), encoding="utf-8")
        buggy_path = scratch / "buggy.py"
        buggy_path.write_text(load_baseline_source() + BUGGY_SUFFIX, encoding="utf-8")
        slow_path = scratch / "slow.py"
        slow_path.write_text(SLOW_SOURCE, encoding="utf-8")

        # healthy: supervised run finishes ok, quickly, with a falling curve
        started = time.monotonic()
        code, healthy = _engine(
            "exec-one",
            "--code",
            str(healthy_path),
            "--workspace",
            str(scratch / "ws_healthy"),
            "--config",
            str(config_path),
            "--seed",
            str(SELFTEST_SEED),
        )
        healthy_wall = time.monotonic() - started
        curve = (healthy.get("metrics") or {}).get("loss_curve", [])
        metrics_file = scratch / "ws_healthy" / "attempt_0" / METRICS_JSON
        validate_code, validation = _engine("validate-metrics", str(metrics_file))
        healthy_checks = {
            "exit_code_zero": code == 0,
            "status_ok": healthy.get("status") == "ok",
            "finished_under_60s": healthy_wall < 60.0,
            "loss_mostly_decreasing": _decreasing_fraction(curve) >= 0.8,
            "metrics_schema_valid": validate_code == 0 and validation.get("valid") is True,
        }
        report["scenarios"]["healthy"] = {
            **healthy_checks,
            "wall_seconds": healthy_wall,
            "decreasing_fraction": _decreasing_fraction(curve),
            "status": healthy.get("status"),
        }

        # buggy: a crash is recorded as error with the offending name in the log
        code, buggy = _engine(
            "exec-one",
            "--code",
            str(buggy_path),
            "--workspace",
            str(scratch / "ws_buggy"),
            "--config",
            str(config_path),
        )
        buggy_checks = {
            "exit_code_nonzero": code != 0,
            "status_error": buggy.get("status") == "error",
            "log_names_the_bug": UNDEFINED_NAME in buggy.get("error_log_tail", ""),
        }
        report["scenarios"]["buggy"] = {**buggy_checks, "status": buggy.get("status")}

        # slow: a hung run is killed once it exceeds the supervisor's limit
        code, slow = _engine(
            "exec-one",
            "--code",
            str(slow_path),
            "--workspace",
            str(scratch / "ws_slow"),
            "--config",
            str(config_path),
            "--median-wall",
            str(SLOW_MEDIAN_WALL),
        )
        slow_checks = {
            "exit_code_nonzero": code != 0,
            "status_killed_timeout": slow.get("status") == "killed_timeout",
        }
        report["scenarios"]["slow"] = {
            **slow_checks,
            "status": slow.get("status"),
            "wall_seconds": slow.get("wall_seconds"),
        }

        report["passed"] = all(
            all(value for key, value in scenario.items() if isinstance(value, bool))
            for scenario in report["scenarios"].values()
        )
    return report
