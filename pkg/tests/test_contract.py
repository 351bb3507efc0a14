"""Wire-contract tests: workspace files, progress lines, metrics payloads."""

from __future__ import annotations

import json

import pytest

from archevolve import contract
from archevolve.errors import ValidationError


def valid_payload() -> dict:
    return {
        "status": "ok",
        "loss_curve": [[1, 10.5], [100, 8.0], [200, 6.5]],
        "benchmarks": {"recall": 0.4, "copy": 0.9},
        "wall_seconds": 12.5,
        "error_log": "",
    }


def test_write_and_read_inputs_round_trip(tmp_path):
    ws = tmp_path / "ws"
    code = "class DeltaNet:\n    pass\n"
    config = {"stage": "exploration", "seed": 7}
    contract.write_inputs(ws, code, config)
    read_code, read_config = contract.read_inputs(ws)
    assert read_code == code
    assert read_config == config


def test_read_inputs_missing_files(tmp_path):
    with pytest.raises(ValidationError):
        contract.read_inputs(tmp_path)
    (tmp_path / contract.CANDIDATE_SOURCE).write_text("x = 1")
    with pytest.raises(ValidationError):
        contract.read_inputs(tmp_path)


def test_progress_line_round_trip():
    line = contract.format_progress_line(300, 7.6759)
    step, loss = contract.parse_progress_line(line)
    assert step == 300
    assert loss == pytest.approx(7.6759, abs=1e-6)


def test_progress_line_rejects_malformed():
    for bad in ("STEP x LOSS 1.0", "LOSS 1.0 STEP 3", "STEP 3 LOSS", "STEP 3 LOSS nan", ""):
        with pytest.raises(ValidationError):
            contract.parse_progress_line(bad)


def test_read_progress_tolerates_partial_tail(tmp_path):
    path = tmp_path / contract.PROGRESS_LOG
    path.write_text("STEP 1 LOSS 10.0\nSTEP 2 LOSS 9.5\nSTEP 3 LO")
    assert contract.read_progress(path) == [(1, 10.0), (2, 9.5)]


def test_read_progress_rejects_interior_garbage(tmp_path):
    path = tmp_path / contract.PROGRESS_LOG
    path.write_text("STEP 1 LOSS 10.0\ngarbage\nSTEP 3 LOSS 9.0\n")
    with pytest.raises(ValidationError):
        contract.read_progress(path)


def test_read_progress_missing_file(tmp_path):
    assert contract.read_progress(tmp_path / "absent.log") == []


def test_validate_accepts_good_payloads():
    assert contract.validate_metrics_payload(valid_payload()) == []
    error_payload = {
        "status": "error",
        "loss_curve": [],
        "benchmarks": {},
        "wall_seconds": 3.0,
        "error_log": "Traceback ...",
    }
    assert contract.validate_metrics_payload(error_payload) == []


def test_validate_flags_each_violation():
    cases = [
        ({**valid_payload(), "status": "done"}, "status"),
        ({**valid_payload(), "loss_curve": "nope"}, "loss_curve"),
        ({**valid_payload(), "loss_curve": [[1, 10.0], [1, 9.0]]}, "strictly increasing"),
        ({**valid_payload(), "loss_curve": [[1, -2.0]]}, "positive"),
        ({**valid_payload(), "loss_curve": [[1.5, 2.0]]}, "int step"),
        ({**valid_payload(), "benchmarks": {"recall": 1.5}}, "in [0, 1]"),
        ({**valid_payload(), "benchmarks": {"recall": True}}, "in [0, 1]"),
        ({**valid_payload(), "wall_seconds": -1.0}, "wall_seconds"),
        ({**valid_payload(), "error_log": None}, "error_log"),
        ({**valid_payload(), "loss_curve": []}, "non-empty loss_curve"),
        ({**valid_payload(), "benchmarks": {}}, "non-empty benchmarks"),
        (["not", "an", "object"], "object"),
    ]
    for payload, fragment in cases:
        problems = contract.validate_metrics_payload(payload)
        assert any(fragment in p for p in problems), (payload, problems)


def test_metrics_from_payload_builds_report():
    report = contract.metrics_from_payload(valid_payload())
    assert report.final_loss == pytest.approx(6.5)
    assert report.benchmark_mean == pytest.approx(0.65)


def test_metrics_from_payload_refuses_error_status():
    payload = {
        "status": "error",
        "loss_curve": [],
        "benchmarks": {},
        "wall_seconds": 1.0,
        "error_log": "boom",
    }
    with pytest.raises(ValidationError):
        contract.metrics_from_payload(payload)


def test_write_metrics_round_trip(tmp_path):
    contract.write_metrics(tmp_path, valid_payload())
    payload = contract.read_metrics(tmp_path)
    assert payload["status"] == "ok"
    assert payload["benchmarks"]["copy"] == pytest.approx(0.9)


def test_write_metrics_refuses_invalid(tmp_path):
    with pytest.raises(ValidationError):
        contract.write_metrics(tmp_path, {"status": "ok"})


def test_read_metrics_rejects_corrupt_json(tmp_path):
    (tmp_path / contract.METRICS_JSON).write_text("{not json")
    with pytest.raises(ValidationError):
        contract.read_metrics(tmp_path)
    with pytest.raises(ValidationError):
        contract.read_metrics(tmp_path / "elsewhere")


def test_read_metrics_rejects_contract_violations(tmp_path):
    bad = valid_payload()
    bad["wall_seconds"] = float("nan")
    (tmp_path / contract.METRICS_JSON).write_text(
        json.dumps(bad).replace("NaN", '"nan"')
    )
    with pytest.raises(ValidationError):
        contract.read_metrics(tmp_path)
