"""Supervised execution of candidate training runs.

The harness owns everything between "we have candidate code" and "we have a
final executor report": workspace preparation, live monitoring of the loss
stream, wall-clock kills, in-flight anomaly kills, and the budgeted
self-revision loop that asks the debugger role to repair crashing code.
"""

from __future__ import annotations

import bisect
import difflib
import hashlib
import logging
import re
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import contract
from .assets import load_prompt, render
from .errors import ValidationError
from .gateway import LLMGateway
from .records import (
    STAGE_EXPLORATION,
    STAGE_VERIFICATION,
    MetricsReport,
    metrics_digest,
    render_baseline_table,
)
from .researcher import extract_block

logger = logging.getLogger(__name__)

EXEC_OK = "ok"
EXEC_ERROR = "error"
EXEC_KILLED_TIMEOUT = "killed_timeout"
EXEC_KILLED_ANOMALY = "killed_anomaly"

ERROR_LOG_TAIL = 4000

_SCORE_RE = re.compile(r"SCORE:\s*(-?[0-9]+(?:\.[0-9]+)?)", re.IGNORECASE)
_SIM_MARKER_RE = re.compile(r"SIM:(FAIL|SLOW|LEAK|ANOMALY)((?::[0-9.]+)*)")

JUDGE_FALLBACK_SCORE = 5.0
JUDGE_REMINDER = (
    "\n\nFORMAT REMINDER: reply with a line 'SCORE: <number between 1 and 10>' "
    "followed by 'JUSTIFICATION: <one sentence>'."
)


def _tail(text: str) -> str:
    return text[-ERROR_LOG_TAIL:]


@dataclass
class StageConfig:
    """Budget and supervision parameters for one evaluation stage."""

    stage: str = STAGE_EXPLORATION
    token_budget: int = 1_000_000
    eval_sample_cap: int = 500
    model_scale: float = 1.0
    limit_factor: float = 2.5
    loss_anomaly_threshold: float = 0.10
    debug_budget: int = 3
    median_window: int = 20

    def __post_init__(self) -> None:
        if self.stage not in (STAGE_EXPLORATION, STAGE_VERIFICATION):
            raise ValidationError(f"unknown stage {self.stage!r}")
        if self.token_budget <= 0:
            raise ValidationError("token_budget must be positive")
        if not 1 <= self.eval_sample_cap <= 500:
            raise ValidationError("eval_sample_cap must be in [1, 500]")
        if self.model_scale <= 0:
            raise ValidationError("model_scale must be positive")
        if not 2.0 <= self.limit_factor <= 3.0:
            raise ValidationError("limit_factor must lie in [2.0, 3.0]")
        if not 0.0 < self.loss_anomaly_threshold < 1.0:
            raise ValidationError("loss_anomaly_threshold must lie in (0, 1)")
        if self.debug_budget < 0:
            raise ValidationError("debug_budget must be non-negative")
        if self.median_window < 1:
            raise ValidationError("median_window must be positive")

    def run_config(self, *, seed: int, baseline_name: str) -> dict:
        return {
            "stage": self.stage,
            "token_budget": self.token_budget,
            "eval_sample_cap": self.eval_sample_cap,
            "model_scale": self.model_scale,
            "seed": seed,
            "baseline_name": baseline_name,
        }


@dataclass
class ExecutorReport:
    """Outcome of one supervised run."""

    status: str
    wall_seconds: float
    error_log: str = ""
    metrics: MetricsReport | None = None
    steps: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        valid = (EXEC_OK, EXEC_ERROR, EXEC_KILLED_TIMEOUT, EXEC_KILLED_ANOMALY)
        if self.status not in valid:
            raise ValidationError(f"unknown executor status {self.status!r}")
        if self.status == EXEC_OK and self.metrics is None:
            raise ValidationError("an ok report requires metrics")


@dataclass
class RevisionNote:
    """Audit trail entry for one self-revision attempt."""

    attempt: int
    error_digest: str
    diff_size: int

    def as_dict(self) -> dict:
        return {
            "attempt": self.attempt,
            "error_digest": self.error_digest,
            "diff_size": self.diff_size,
        }


@dataclass
class HarnessOutcome:
    """Final code, final report, and the revision trail that produced them."""

    code: str
    report: ExecutorReport
    revisions: list[RevisionNote] = field(default_factory=list)


def compute_time_limit(median_wall: float | None, limit_factor: float) -> float | None:
    """Kill threshold from the trailing median; no history means no kill."""
    if median_wall is None:
        return None
    if median_wall <= 0:
        raise ValidationError("median wall time must be positive")
    return float(median_wall) * float(limit_factor)


class RunMonitor:
    """Live verdicts over a streaming run: loss anomalies and overruns."""

    def __init__(
        self,
        baseline_curve: list[tuple[int, float]],
        *,
        loss_anomaly_threshold: float = 0.10,
        time_limit: float | None = None,
    ) -> None:
        if not baseline_curve:
            raise ValidationError("monitor requires a non-empty baseline curve")
        ordered = sorted((int(s), float(l)) for s, l in baseline_curve)
        self._steps = [s for s, _ in ordered]
        self._losses = [l for _, l in ordered]
        self.threshold = float(loss_anomaly_threshold)
        self.time_limit = time_limit

    def loss_verdict(self, step: int, loss: float) -> str | None:
        """Reason string when ``loss`` dips too far below the baseline at the
        nearest baseline step at or before ``step``; None otherwise."""
        idx = bisect.bisect_right(self._steps, int(step)) - 1
        if idx < 0:
            return None
        reference = self._losses[idx]
        if loss < (1.0 - self.threshold) * reference:
            return (
                f"loss {loss:.4f} at step {step} is more than "
                f"{self.threshold:.0%} below baseline {reference:.4f} "
                f"at step {self._steps[idx]}"
            )
        return None

    def time_verdict(self, elapsed: float) -> str | None:
        if self.time_limit is not None and elapsed > self.time_limit:
            return f"run exceeded the {self.time_limit:.1f}s wall-clock limit"
        return None


def _digest_fraction(seed: str, salt: str = "") -> float:
    """Deterministic value in [0, 1) derived from text."""
    digest = hashlib.sha256((seed + "\x1f" + salt).encode("utf-8")).hexdigest()
    return int(digest[:12], 16) / float(16**12)


class SimulatedExecutor:
    """In-process stand-in for a real training run, honouring the wire contract.

    Behaviour is a pure function of the candidate source and run config, so
    same-seed campaigns replay byte-identically.  Markers recognised anywhere
    in the candidate source override the default healthy behaviour:

    * ``SIM:FAIL``                — crashes every time.
    * ``SIM:FAIL:<n>``            — crashes until the source carries *n*
                                    revision patch lines.
    * ``SIM:SLOW:<seconds>``      — the run would take that long.
    * ``SIM:LEAK:<magnitude>``    — streams a healthy curve but the final
                                    metrics dip ``magnitude`` below the
                                    baseline's final loss.
    * ``SIM:ANOMALY:<step>:<magnitude>`` — the streamed loss dips at *step*.

    A healthy run scales the baseline curve by a factor in [0.97, 1.03] and
    jitters each benchmark score by at most ±0.04.
    """

    def __init__(self, baseline: MetricsReport, *, base_wall: float = 100.0) -> None:
        baseline.validate()
        self.baseline = baseline
        self.base_wall = float(base_wall)

    def run(self, workspace: Path, monitor: RunMonitor) -> ExecutorReport:
        workspace = Path(workspace)
        code, config = contract.read_inputs(workspace)
        identity = f"{code}\x1f{config.get('stage', '')}\x1f{config.get('seed', 0)}"
        factor = 0.97 + 0.06 * _digest_fraction(identity, "loss-factor")
        wall = (
            self.base_wall
            * float(config.get("model_scale", 1.0))
            * (0.8 + 0.45 * _digest_fraction(identity, "wall"))
        )

        marker = _SIM_MARKER_RE.search(code)
        kind = marker.group(1) if marker else ""
        args = [a for a in (marker.group(2) if marker else "").split(":") if a]

        if kind == "FAIL":
            required_patches = int(float(args[0])) if args else None
            patches = code.count("# patch ")
            if required_patches is None or patches < required_patches:
                return self._crash(workspace, factor, wall)
        if kind == "SLOW" and args:
            wall = float(args[0])

        curve = [(step, loss * factor) for step, loss in self.baseline.loss_curve]
        stream = list(curve)
        metrics_curve = list(curve)
        if kind == "ANOMALY" and len(args) >= 2:
            at_step, magnitude = int(float(args[0])), float(args[1])
            stream = [
                (step, (1.0 - magnitude) * self.baseline.loss_curve[i][1])
                if step >= at_step
                else (step, loss)
                for i, (step, loss) in enumerate(curve)
            ]
            metrics_curve = list(stream)
        elif kind == "LEAK" and args:
            magnitude = float(args[0])
            # The dip appears only in the final evaluation: the stream stops
            # one step short, so the live monitor sees nothing unusual.
            stream = curve[:-1]
            final_step = curve[-1][0]
            metrics_curve = curve[:-1] + [
                (final_step, (1.0 - magnitude) * self.baseline.final_loss)
            ]

        observed: list[tuple[int, float]] = []
        progress_path = workspace / contract.PROGRESS_LOG
        with progress_path.open("a", encoding="utf-8") as handle:
            total = max(len(stream), 1)
            for i, (step, loss) in enumerate(stream):
                elapsed = wall * (i + 1) / total
                verdict = monitor.time_verdict(elapsed)
                if verdict is not None:
                    return ExecutorReport(
                        EXEC_KILLED_TIMEOUT,
                        wall_seconds=elapsed,
                        error_log=verdict,
                        steps=tuple(observed),
                    )
                handle.write(contract.format_progress_line(step, loss) + "\n")
                observed.append((step, loss))
                verdict = monitor.loss_verdict(step, loss)
                if verdict is not None:
                    return ExecutorReport(
                        EXEC_KILLED_ANOMALY,
                        wall_seconds=elapsed,
                        error_log=verdict,
                        steps=tuple(observed),
                    )

        benchmarks = {}
        for task, score in self.baseline.benchmark_scores.items():
            offset = (2.0 * _digest_fraction(identity, f"bench:{task}") - 1.0) * 0.04
            benchmarks[task] = min(1.0, max(0.0, score + offset))
        payload = {
            "status": "ok",
            "loss_curve": [[s, l] for s, l in metrics_curve],
            "benchmarks": benchmarks,
            "wall_seconds": wall,
            "error_log": "",
        }
        contract.write_metrics(workspace, payload)
        return ExecutorReport(
            EXEC_OK,
            wall_seconds=wall,
            metrics=contract.metrics_from_payload(payload),
            steps=tuple(observed),
        )

    def _crash(self, workspace: Path, factor: float, wall: float) -> ExecutorReport:
        partial = [(s, l * factor) for s, l in self.baseline.loss_curve[:3]]
        with (workspace / contract.PROGRESS_LOG).open("a", encoding="utf-8") as handle:
            for step, loss in partial:
                handle.write(contract.format_progress_line(step, loss) + "\n")
        error_log = (
            "Traceback (most recent call last):\n"
            '  File "train.py", line 212, in chunk_scan\n'
            "NameError: name 'chunk_state' is not defined\n"
        )
        payload = {
            "status": "error",
            "loss_curve": [[s, l] for s, l in partial],
            "benchmarks": {},
            "wall_seconds": wall * 0.3,
            "error_log": error_log,
        }
        contract.write_metrics(workspace, payload)
        return ExecutorReport(
            EXEC_ERROR,
            wall_seconds=wall * 0.3,
            error_log=error_log,
            steps=tuple(partial),
        )


class SubprocessExecutor:
    """Runs a real executor command against the workspace and supervises it.

    The command is invoked as ``argv_prefix + [workspace_path]``; it must obey
    the wire contract documented in :mod:`archevolve.contract`.
    """

    def __init__(self, argv_prefix: list[str], *, poll_interval: float = 0.05) -> None:
        if not argv_prefix:
            raise ValidationError("executor command must be non-empty")
        self.argv_prefix = list(argv_prefix)
        self.poll_interval = float(poll_interval)

    def run(self, workspace: Path, monitor: RunMonitor) -> ExecutorReport:
        workspace = Path(workspace)
        stdout_path = workspace / "stdout.log"
        stderr_path = workspace / "stderr.log"
        progress_path = workspace / contract.PROGRESS_LOG
        start = time.monotonic()
        observed: list[tuple[int, float]] = []
        kill_status: str | None = None
        kill_note = ""
        with stdout_path.open("wb") as out, stderr_path.open("wb") as err:
            proc = subprocess.Popen(
                self.argv_prefix + [str(workspace)], stdout=out, stderr=err
            )
            try:
                while True:
                    exit_code = proc.poll()
                    try:
                        fresh = contract.read_progress(progress_path)[len(observed):]
                    except ValidationError as exc:
                        kill_status = EXEC_ERROR
                        kill_note = f"progress stream violated the contract: {exc}"
                        break
                    for step, loss in fresh:
                        observed.append((step, loss))
                        verdict = monitor.loss_verdict(step, loss)
                        if verdict is not None:
                            kill_status, kill_note = EXEC_KILLED_ANOMALY, verdict
                            break
                    if kill_status is None:
                        verdict = monitor.time_verdict(time.monotonic() - start)
                        if verdict is not None:
                            kill_status, kill_note = EXEC_KILLED_TIMEOUT, verdict
                    if kill_status is not None or exit_code is not None:
                        break
                    time.sleep(self.poll_interval)
            finally:
                if proc.poll() is None:
                    proc.kill()
                    proc.wait(timeout=10)
        wall = time.monotonic() - start
        stderr_tail = _tail(stderr_path.read_text(encoding="utf-8", errors="replace"))

        if kill_status is not None:
            log = kill_note if not stderr_tail else f"{kill_note}\n{stderr_tail}"
            return ExecutorReport(
                kill_status, wall_seconds=wall, error_log=_tail(log), steps=tuple(observed)
            )

        exit_code = proc.returncode
        try:
            payload = contract.read_metrics(workspace)
        except ValidationError as exc:
            log = f"executor exited {exit_code} without usable metrics: {exc}\n{stderr_tail}"
            return ExecutorReport(
                EXEC_ERROR, wall_seconds=wall, error_log=_tail(log), steps=tuple(observed)
            )
        status = payload["status"]
        if (exit_code == 0) != (status == "ok"):
            log = (
                f"contract violation: exit code {exit_code} with metrics status "
                f"{status!r}\n{stderr_tail}"
            )
            return ExecutorReport(
                EXEC_ERROR, wall_seconds=wall, error_log=_tail(log), steps=tuple(observed)
            )
        if status == "ok":
            return ExecutorReport(
                EXEC_OK,
                wall_seconds=float(payload["wall_seconds"]),
                metrics=contract.metrics_from_payload(payload),
                steps=tuple(observed),
            )
        return ExecutorReport(
            EXEC_ERROR,
            wall_seconds=wall,
            error_log=_tail(str(payload.get("error_log", "")) or stderr_tail),
            steps=tuple(observed),
        )


class EngineerHarness:
    """Prepares workspaces, supervises runs, and drives the revision loop."""

    def __init__(
        self,
        executor,
        gateway: LLMGateway | None = None,
        *,
        prompts_dir: Path | None = None,
    ) -> None:
        self.executor = executor
        self.gateway = gateway
        self.prompts_dir = prompts_dir

    def execute(
        self,
        code: str,
        stage: StageConfig,
        workspace: Path,
        *,
        baseline: MetricsReport,
        baseline_name: str = "",
        median_wall: float | None = None,
        seed: int = 0,
    ) -> ExecutorReport:
        """One supervised run of ``code`` in a fresh ``workspace``."""
        if not code or not code.strip():
            raise ValidationError("candidate code is empty; nothing to train")
        workspace = Path(workspace)
        if (workspace / contract.CANDIDATE_SOURCE).exists():
            raise ValidationError(f"workspace {workspace} was already used")
        contract.write_inputs(
            workspace, code, stage.run_config(seed=seed, baseline_name=baseline_name)
        )
        monitor = RunMonitor(
            baseline.loss_curve,
            loss_anomaly_threshold=stage.loss_anomaly_threshold,
            time_limit=compute_time_limit(median_wall, stage.limit_factor),
        )
        return self.executor.run(workspace, monitor)

    def execute_with_revision(
        self,
        code: str,
        stage: StageConfig,
        workspace_base: Path,
        *,
        baseline: MetricsReport,
        baseline_name: str = "",
        median_wall: float | None = None,
        seed: int = 0,
    ) -> HarnessOutcome:
        """Run ``code``; on crashes, ask the debugger for fixes up to the budget.

        Only ``error`` outcomes are debugged — kills are supervision verdicts,
        not code defects.  When the budget runs out the last report stands.
        """
        workspace_base = Path(workspace_base)
        report = self.execute(
            code,
            stage,
            workspace_base / "attempt_0",
            baseline=baseline,
            baseline_name=baseline_name,
            median_wall=median_wall,
            seed=seed,
        )
        revisions: list[RevisionNote] = []
        while report.status == EXEC_ERROR and len(revisions) < stage.debug_budget:
            revised = self._request_fix(code, report)
            if revised is None or revised.strip() == code.strip():
                logger.warning("debugger produced no usable revision; stopping the loop")
                break
            diff_size = sum(
                1
                for line in difflib.unified_diff(
                    code.splitlines(), revised.splitlines(), lineterm=""
                )
                if line.startswith(("+", "-"))
            )
            error_digest = hashlib.sha256(report.error_log.encode("utf-8")).hexdigest()[:12]
            revisions.append(
                RevisionNote(
                    attempt=len(revisions) + 1,
                    error_digest=error_digest,
                    diff_size=diff_size,
                )
            )
            code = revised
            report = self.execute(
                code,
                stage,
                workspace_base / f"attempt_{len(revisions)}",
                baseline=baseline,
                baseline_name=baseline_name,
                median_wall=median_wall,
                seed=seed,
            )
        return HarnessOutcome(code=code, report=report, revisions=revisions)

    def _request_fix(self, code: str, report: ExecutorReport) -> str | None:
        """One debugger call with a single re-ask on an unparseable reply."""
        if self.gateway is None:
            raise ValidationError("a gateway is required to run the revision loop")
        prompt = render(
            load_prompt("debugger", self.prompts_dir),
            status=report.status,
            code=code,
            error_log=_tail(report.error_log),
        )
        reply = self.gateway.chat("debugger", prompt)
        fixed = extract_block("CODE", reply)
        if fixed is None:
            logger.warning("debugger reply had no CODE section; re-asking once")
            reply = self.gateway.chat(
                "debugger",
                prompt + "\n\nFORMAT REMINDER: reply with the full corrected source "
                "between <CODE> and </CODE> tags.",
            )
            fixed = extract_block("CODE", reply)
        return fixed


def judge_quality(
    name: str,
    motivation: str,
    code: str,
    metrics: MetricsReport,
    baselines: dict[str, MetricsReport],
    gateway: LLMGateway,
    *,
    prompts_dir: Path | None = None,
) -> float:
    """Ask the judge role for a 1–10 quality score, with guarded parsing.

    An unparseable reply earns one re-ask, then the neutral fallback score;
    out-of-range scores are clamped with a warning.
    """
    prompt = render(
        load_prompt("judge_quality", prompts_dir),
        name=name,
        motivation=motivation,
        code=code,
        metrics_digest=metrics_digest(metrics),
        baseline_table=render_baseline_table(baselines),
    )
    reply = gateway.chat("judge", prompt)
    score = _parse_score(reply)
    if score is None:
        logger.warning("judge reply had no parseable score; re-asking once")
        reply = gateway.chat("judge", prompt + JUDGE_REMINDER)
        score = _parse_score(reply)
    if score is None:
        logger.warning(
            "judge reply unparseable after re-ask; using fallback score %.1f",
            JUDGE_FALLBACK_SCORE,
        )
        return JUDGE_FALLBACK_SCORE
    if not 1.0 <= score <= 10.0:
        clamped = min(10.0, max(1.0, score))
        logger.warning("judge score %.2f outside [1, 10]; clamped to %.2f", score, clamped)
        return clamped
    return score


def _parse_score(reply: str) -> float | None:
    match = _SCORE_RE.search(reply)
    if match is None:
        return None
    try:
        return float(match.group(1))
    except ValueError:  # pragma: no cover - regex guarantees a number
        return None
