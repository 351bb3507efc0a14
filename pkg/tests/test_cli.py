"""Command-line surface: every subcommand, JSON output, exit codes."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from archevolve.cli import main

HEALTHY_CODE = (
    '"""Linear-attention variant used by command-line checks."""\n\n'
    "class DeltaNet:\n"
    "    def forward(self, x):\n"
    "        return x\n"
)

CRASHING_CODE = (
    '"""Candidate that always crashes in simulation."""\n\n'
    "class DeltaNet:\n"
    '    MARKER = "SIM:FAIL"\n'
)

COGNITION_DOC = """<COGNITION>
<DESIGN_INSIGHT>
Keep the recurrent state well-conditioned under long contexts.
</DESIGN_INSIGHT>
<EXPERIMENTAL_TRIGGER_PATTERNS>
Perplexity diverges after step five hundred on long sequences.
</EXPERIMENTAL_TRIGGER_PATTERNS>
<ALGORITHMIC_INNOVATION>
Spectral clipping of the state transition.
</ALGORITHMIC_INNOVATION>
<IMPLEMENTATION_GUIDANCE>
Clip singular values above one after each chunk update.
</IMPLEMENTATION_GUIDANCE>
</COGNITION>
"""


def write_config(tmp_path: Path, **overrides) -> Path:
    settings = {
        "campaign_seed": 1,
        "workers": 2,
        "plan_stride": 4,
        "max_cycles": 8,
        "store_dir": str(tmp_path / "store"),
        "workspace_root": str(tmp_path / "ws"),
    }
    settings.update(overrides)
    path = tmp_path / "campaign.json"
    path.write_text(json.dumps(settings))
    return path


def run_cli(capsys, *argv: str) -> tuple[int, dict | str]:
    code = main(list(argv))
    out = capsys.readouterr().out
    try:
        return code, json.loads(out)
    except json.JSONDecodeError:
        return code, out


def test_run_then_reports_and_exports(tmp_path, capsys):
    config = write_config(tmp_path)
    code, summary = run_cli(capsys, "run", "--config", str(config))
    assert code == 0
    assert summary["cycles"] == 8
    assert sum(summary["status_counts"].values()) == 8

    code, scaling = run_cli(capsys, "report", "scaling", "--config", str(config))
    assert code == 0
    assert len(scaling["table"]) == 9  # baseline + eight cycles

    code, components = run_cli(capsys, "report", "components", "--config", str(config))
    assert code == 0
    assert sum(components["component_histogram"].values()) == 9

    code, provenance = run_cli(capsys, "report", "provenance", "--config", str(config))
    assert code == 0
    assert provenance["provenance"]["all"]["count"] == 9

    code, tree = run_cli(capsys, "export-tree", "--config", str(config), "--format", "json")
    assert code == 0
    assert len(tree["nodes"]) == 9
    assert len(tree["edges"]) == 8

    out_file = tmp_path / "lineage.dot"
    code, receipt = run_cli(
        capsys,
        "export-tree",
        "--config",
        str(config),
        "--format",
        "dot",
        "--output",
        str(out_file),
    )
    assert code == 0
    assert receipt["nodes"] == 9
    assert out_file.read_text().startswith("digraph lineage {")


def test_verify_subcommand_promotes_gallery(tmp_path, capsys):
    config = write_config(tmp_path, max_cycles=12)
    assert run_cli(capsys, "run", "--config", str(config))[0] == 0
    code, result = run_cli(capsys, "verify", "--config", str(config))
    assert code == 0
    assert result["promoted"] >= 1
    assert result["newly_verified"] == result["promoted"]
    code, again = run_cli(capsys, "verify", "--config", str(config))
    assert code == 0
    assert again["newly_verified"] == 0


def test_verify_on_empty_store_fails(tmp_path, capsys):
    config = write_config(tmp_path)
    code, payload = run_cli(capsys, "verify", "--config", str(config))
    assert code == 1
    assert "empty" in payload["error"]


def test_export_tree_on_empty_store_fails(tmp_path, capsys):
    config = write_config(tmp_path)
    code, payload = run_cli(
        capsys, "export-tree", "--config", str(config), "--format", "json"
    )
    assert code == 1
    assert "error" in payload


def test_export_tree_rejects_unknown_format(tmp_path, capsys):
    config = write_config(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["export-tree", "--config", str(config), "--format", "svg"])
    assert exc.value.code == 2


def test_selftest_passes(capsys):
    code, verdict = run_cli(capsys, "selftest")
    assert code == 0
    assert verdict["passed"] is True
    assert verdict["checks"]["deterministic_replay"] is True
    assert verdict["checks"]["conservation"] is True


def test_ingest_cognition_directory(tmp_path, capsys):
    config = write_config(tmp_path)
    docs = tmp_path / "docs"
    docs.mkdir()
    (docs / "linear_state.txt").write_text(COGNITION_DOC)
    code, report = run_cli(
        capsys, "ingest-cognition", str(docs), "--config", str(config)
    )
    assert code == 0
    assert report == {"files": 1, "entries_added": 1, "errors": []}

    (docs / "broken.txt").write_text("<COGNITION>unterminated")
    code, report = run_cli(
        capsys, "ingest-cognition", str(docs), "--config", str(config)
    )
    assert code == 1
    assert len(report["errors"]) == 1
    assert report["entries_added"] == 0  # the good document is already present


def test_exec_one_healthy_candidate(tmp_path, capsys):
    source = tmp_path / "candidate.py"
    source.write_text(HEALTHY_CODE)
    code, result = run_cli(
        capsys,
        "exec-one",
        "--code",
        str(source),
        "--workspace",
        str(tmp_path / "ws"),
    )
    assert code == 0
    assert result["status"] == "ok"
    assert result["revisions"] == 0
    assert result["metrics"]["final_loss"] > 0


def test_exec_one_crashing_candidate(tmp_path, capsys):
    source = tmp_path / "crash.py"
    source.write_text(CRASHING_CODE)
    code, result = run_cli(
        capsys,
        "exec-one",
        "--code",
        str(source),
        "--workspace",
        str(tmp_path / "ws"),
    )
    assert code == 1
    assert result["status"] == "error"
    assert result["revisions"] == 3
    assert "NameError" in result["error_log_tail"]


def test_validate_metrics_verdicts(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(
        json.dumps(
            {
                "status": "ok",
                "loss_curve": [[100, 4.2], [200, 3.9]],
                "benchmarks": {"piqa": 0.66},
                "wall_seconds": 120.0,
                "error_log": "",
            }
        )
    )
    code, verdict = run_cli(capsys, "validate-metrics", str(good))
    assert code == 0
    assert verdict == {"valid": True, "violations": []}

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"status": "ok", "loss_curve": [], "benchmarks": {}}))
    code, verdict = run_cli(capsys, "validate-metrics", str(bad))
    assert code == 1
    assert verdict["valid"] is False
    assert verdict["violations"]

    code, verdict = run_cli(capsys, "validate-metrics", str(tmp_path / "absent.json"))
    assert code == 1
    assert "unreadable" in verdict["violations"][0]


def test_module_entry_point_runs_in_subprocess(tmp_path):
    payload = tmp_path / "metrics.json"
    payload.write_text(
        json.dumps(
            {
                "status": "ok",
                "loss_curve": [[50, 5.0], [100, 4.5]],
                "benchmarks": {"piqa": 0.6},
                "wall_seconds": 60.0,
                "error_log": "",
            }
        )
    )
    proc = subprocess.run(
        [sys.executable, "-m", "archevolve.cli", "validate-metrics", str(payload)],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["valid"] is True
