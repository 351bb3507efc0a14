"""Composite fitness scoring.

A candidate is scored as the unweighted mean of three components in [0, 1]:
a sigmoid of the relative loss delta, a sigmoid of the relative benchmark
delta, and the judge score normalized to [0, 1]. Relative deltas are clipped
to +-CLIP before the sigmoid; the gain is chosen so that a +-10% delta maps
to exactly 0.9 / 0.1.
"""

from __future__ import annotations

import math

from .errors import ValidationError
from .records import FitnessBreakdown, MetricsReport

# clip window for relative deltas; +-CLIP maps to the 0.9 / 0.1 anchors
CLIP = 0.10
GAIN = math.log(9.0) / CLIP
SIG_HIGH = 0.9
SIG_LOW = 0.1

# training-data leakage: candidate final loss more than 10% under baseline
LEAKAGE_THRESHOLD = 0.10

JUDGE_MIN = 1.0
JUDGE_MAX = 10.0


def quantitative_component(delta: float) -> float:
    """Sigmoid of a clipped relative delta.

    The clipped region returns the anchor values directly: evaluating
    sigma(ln 9) through exp() lands one ulp under 0.9, and the anchors are
    contractual.
    """
    if not math.isfinite(delta):
        raise ValidationError(f"delta must be finite, got {delta}")
    if delta >= CLIP:
        return SIG_HIGH
    if delta <= -CLIP:
        return SIG_LOW
    return 1.0 / (1.0 + math.exp(-GAIN * delta))


def deltas(candidate: MetricsReport, baseline: MetricsReport) -> tuple[float, float]:
    """Relative improvement of candidate over baseline: (r_loss, r_bench).

    Positive r_loss means lower final loss; positive r_bench means higher
    mean benchmark score.
    """
    candidate.validate()
    baseline.validate()
    if set(candidate.benchmark_scores) != set(baseline.benchmark_scores):
        missing = set(baseline.benchmark_scores) ^ set(candidate.benchmark_scores)
        raise ValidationError(f"benchmark task sets differ: {sorted(missing)}")
    if baseline.benchmark_mean == 0.0:
        raise ValidationError("baseline benchmark mean is zero; relative delta undefined")
    r_loss = (baseline.final_loss - candidate.final_loss) / baseline.final_loss
    r_bench = (candidate.benchmark_mean - baseline.benchmark_mean) / baseline.benchmark_mean
    return r_loss, r_bench


def leakage_check(candidate: MetricsReport, baseline: MetricsReport) -> bool:
    """True when the candidate's final loss is suspiciously far below baseline.

    Implemented as candidate < (1 - threshold) * baseline, which equals
    r_loss > threshold algebraically but is float-stable at the boundary:
    a candidate at exactly 0.90 x baseline is NOT leakage.
    """
    candidate.validate()
    baseline.validate()
    return candidate.final_loss < (1.0 - LEAKAGE_THRESHOLD) * baseline.final_loss


def composite_fitness(
    sig_loss: float,
    sig_bench: float,
    judge10: float,
    *,
    r_loss: float = 0.0,
    r_bench: float = 0.0,
    leakage: bool = False,
) -> FitnessBreakdown:
    """Assemble a FitnessBreakdown from the three scored components.

    judge10 must already be clamped into [1, 10] by the caller (the harness
    clamps misbehaving provider output at parse time); values outside the
    range are a contract violation here.
    """
    for label, value in (("sig_loss", sig_loss), ("sig_bench", sig_bench)):
        if not math.isfinite(value) or not (0.0 < value < 1.0):
            raise ValidationError(f"{label} must lie strictly inside (0, 1), got {value}")
    if not math.isfinite(judge10) or not (JUDGE_MIN <= judge10 <= JUDGE_MAX):
        raise ValidationError(f"judge score must lie in [1, 10], got {judge10}")
    judge_norm = judge10 / JUDGE_MAX
    composite = (sig_loss + sig_bench + judge_norm) / 3.0
    return FitnessBreakdown(
        r_loss=r_loss,
        r_bench=r_bench,
        sig_loss=sig_loss,
        sig_bench=sig_bench,
        judge10=judge10,
        judge_norm=judge_norm,
        composite=composite,
        leakage=leakage,
    )


def score_metrics(
    candidate: MetricsReport, baseline: MetricsReport, judge10: float
) -> FitnessBreakdown:
    """Full scoring path: deltas, leakage guard, sigmoids, composite."""
    r_loss, r_bench = deltas(candidate, baseline)
    if leakage_check(candidate, baseline):
        raise ValidationError(
            "candidate flagged as leakage; score_metrics only scores clean runs"
        )
    return composite_fitness(
        quantitative_component(r_loss),
        quantitative_component(r_bench),
        judge10,
        r_loss=r_loss,
        r_bench=r_bench,
        leakage=False,
    )
