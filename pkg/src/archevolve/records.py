"""Domain records shared by the store, the fitness engine, and the orchestrator.

Three dataclasses travel through the whole pipeline:

  MetricsReport        measured outcome of one training run
  FitnessBreakdown     the three scored components plus composite and leakage verdict
  ArchitectureRecord   one experiment: design, lineage, metrics, analysis, status

Records serialize to plain dicts with deterministic key order so the append-only
log is byte-reproducible under replay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

from .errors import ValidationError

STATUS_ACCEPTED = "accepted"
STATUS_REJECTED_LEAKAGE = "rejected_leakage"
STATUS_REJECTED_NOVELTY = "rejected_novelty"
STATUS_REJECTED_SANITY = "rejected_sanity"
STATUS_FAILED_TRAINING = "failed_training"

VALID_STATUSES = frozenset(
    {
        STATUS_ACCEPTED,
        STATUS_REJECTED_LEAKAGE,
        STATUS_REJECTED_NOVELTY,
        STATUS_REJECTED_SANITY,
        STATUS_FAILED_TRAINING,
    }
)

STAGE_EXPLORATION = "exploration"
STAGE_VERIFICATION = "verification"
VALID_STAGES = frozenset({STAGE_EXPLORATION, STAGE_VERIFICATION})


@dataclass
class MetricsReport:
    """Outcome of a completed training run.

    loss_curve holds (step, loss) pairs with strictly increasing steps;
    final_loss must equal the loss at the maximum step; benchmark_mean must
    equal the unweighted mean of benchmark_scores.
    """

    loss_curve: list[tuple[int, float]]
    final_loss: float
    benchmark_scores: dict[str, float]
    benchmark_mean: float

    @classmethod
    def build(
        cls,
        loss_curve: list[tuple[int, float]],
        benchmark_scores: dict[str, float],
    ) -> "MetricsReport":
        """Derive final_loss and benchmark_mean, then validate."""
        if not loss_curve:
            raise ValidationError("loss_curve must be non-empty")
        if not benchmark_scores:
            raise ValidationError("benchmark_scores must be non-empty")
        final_loss = loss_curve[-1][1]
        mean = sum(benchmark_scores.values()) / len(benchmark_scores)
        report = cls(
            loss_curve=[(int(s), float(l)) for s, l in loss_curve],
            final_loss=float(final_loss),
            benchmark_scores={str(k): float(v) for k, v in benchmark_scores.items()},
            benchmark_mean=mean,
        )
        report.validate()
        return report

    def validate(self) -> None:
        if not self.loss_curve:
            raise ValidationError("loss_curve must be non-empty")
        prev_step = None
        for step, loss in self.loss_curve:
            if prev_step is not None and step <= prev_step:
                raise ValidationError(
                    f"loss_curve steps must be strictly increasing (saw {prev_step} then {step})"
                )
            if not math.isfinite(loss) or loss <= 0.0:
                raise ValidationError(f"loss at step {step} must be finite and positive, got {loss}")
            prev_step = step
        if self.final_loss != self.loss_curve[-1][1]:
            raise ValidationError(
                "final_loss must equal the loss at the maximum recorded step"
            )
        if not self.benchmark_scores:
            raise ValidationError("benchmark_scores must be non-empty")
        for task, score in self.benchmark_scores.items():
            if not math.isfinite(score) or not (0.0 <= score <= 1.0):
                raise ValidationError(f"benchmark score for {task} must lie in [0, 1], got {score}")
        mean = sum(self.benchmark_scores.values()) / len(self.benchmark_scores)
        if abs(mean - self.benchmark_mean) > 1e-12:
            raise ValidationError("benchmark_mean must equal the mean of benchmark_scores")

    def to_dict(self) -> dict[str, Any]:
        return {
            "loss_curve": [[s, l] for s, l in self.loss_curve],
            "final_loss": self.final_loss,
            "benchmark_scores": dict(self.benchmark_scores),
            "benchmark_mean": self.benchmark_mean,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MetricsReport":
        return cls(
            loss_curve=[(int(s), float(l)) for s, l in data["loss_curve"]],
            final_loss=float(data["final_loss"]),
            benchmark_scores={str(k): float(v) for k, v in data["benchmark_scores"].items()},
            benchmark_mean=float(data["benchmark_mean"]),
        )


def metrics_digest(report: "MetricsReport | None") -> str:
    """One-line human summary used inside prompts; never persisted."""
    if report is None:
        return "no completed training run"
    first_step, first_loss = report.loss_curve[0]
    last_step, _ = report.loss_curve[-1]
    scores = ", ".join(f"{task}={score:.3f}" for task, score in sorted(report.benchmark_scores.items()))
    return (
        f"loss {first_loss:.4f} (step {first_step}) -> {report.final_loss:.4f} "
        f"(step {last_step}); benchmark mean {report.benchmark_mean:.5f} [{scores}]"
    )


def render_baseline_table(baselines: "dict[str, MetricsReport]") -> str:
    """Compact per-baseline reference lines used inside prompts."""
    if not baselines:
        return "(no baselines)"
    lines = [
        f"{name}: final_loss={report.final_loss:.4f}, "
        f"benchmark_mean={report.benchmark_mean:.5f}"
        for name, report in sorted(baselines.items())
    ]
    return "\n".join(lines)


@dataclass
class FitnessBreakdown:
    """Composite fitness with its three components kept inspectable."""

    r_loss: float
    r_bench: float
    sig_loss: float
    sig_bench: float
    judge10: float
    judge_norm: float
    composite: float
    leakage: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "r_loss": self.r_loss,
            "r_bench": self.r_bench,
            "sig_loss": self.sig_loss,
            "sig_bench": self.sig_bench,
            "judge10": self.judge10,
            "judge_norm": self.judge_norm,
            "composite": self.composite,
            "leakage": self.leakage,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FitnessBreakdown":
        return cls(
            r_loss=float(data["r_loss"]),
            r_bench=float(data["r_bench"]),
            sig_loss=float(data["sig_loss"]),
            sig_bench=float(data["sig_bench"]),
            judge10=float(data["judge10"]),
            judge_norm=float(data["judge_norm"]),
            composite=float(data["composite"]),
            leakage=bool(data["leakage"]),
        )


@dataclass
class ArchitectureRecord:
    """One experiment in the campaign log.

    record_id and created_seq are assigned by the store at append time; pass
    zero for both when constructing a fresh record.
    """

    name: str
    motivation: str
    code: str
    status: str
    stage: str = STAGE_EXPLORATION
    parent_id: int | None = None
    metrics: MetricsReport | None = None
    analysis: str | None = None
    cognition_refs: list[int] = field(default_factory=list)
    fitness: FitnessBreakdown | None = None
    wall_seconds: float = 0.0
    record_id: int = 0
    created_seq: int = 0

    def validate(self) -> None:
        if not self.name:
            raise ValidationError("record name must be non-empty")
        if self.status not in VALID_STATUSES:
            raise ValidationError(f"unknown status {self.status!r}")
        if self.stage not in VALID_STAGES:
            raise ValidationError(f"unknown stage {self.stage!r}")
        if not math.isfinite(self.wall_seconds) or self.wall_seconds < 0.0:
            raise ValidationError("wall_seconds must be finite and non-negative")
        if self.metrics is not None:
            self.metrics.validate()
        if self.status == STATUS_ACCEPTED:
            if self.metrics is None:
                raise ValidationError("accepted record requires a complete MetricsReport")
            if self.fitness is None:
                raise ValidationError("accepted record requires a FitnessBreakdown")
        if self.fitness is not None and self.fitness.leakage:
            if self.status != STATUS_REJECTED_LEAKAGE:
                raise ValidationError(
                    "a breakdown flagged as leakage requires status rejected_leakage"
                )

    def with_ids(self, record_id: int, created_seq: int) -> "ArchitectureRecord":
        return replace(self, record_id=record_id, created_seq=created_seq)

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "created_seq": self.created_seq,
            "name": self.name,
            "motivation": self.motivation,
            "code": self.code,
            "status": self.status,
            "stage": self.stage,
            "parent_id": self.parent_id,
            "metrics": self.metrics.to_dict() if self.metrics is not None else None,
            "analysis": self.analysis,
            "cognition_refs": list(self.cognition_refs),
            "fitness": self.fitness.to_dict() if self.fitness is not None else None,
            "wall_seconds": self.wall_seconds,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ArchitectureRecord":
        return cls(
            name=data["name"],
            motivation=data["motivation"],
            code=data["code"],
            status=data["status"],
            stage=data["stage"],
            parent_id=data["parent_id"],
            metrics=MetricsReport.from_dict(data["metrics"]) if data["metrics"] else None,
            analysis=data["analysis"],
            cognition_refs=[int(c) for c in data["cognition_refs"]],
            fitness=FitnessBreakdown.from_dict(data["fitness"]) if data["fitness"] else None,
            wall_seconds=float(data["wall_seconds"]),
            record_id=int(data["record_id"]),
            created_seq=int(data["created_seq"]),
        )
