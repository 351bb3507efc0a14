"""Campaign bookkeeping: per-status counters, wall clock, and stop verdict."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EngineError
from .records import ArchitectureRecord


@dataclass
class CampaignSummary:
    """Aggregated outcome of one ``Campaign.run`` invocation.

    Counts cover only the cycles committed by that run — the seeded baseline
    and records from earlier runs against the same store are excluded.
    """

    config_hash: str = ""
    cycles: int = 0
    status_counts: dict[str, int] = field(default_factory=dict)
    rebuilds: list[dict] = field(default_factory=list)
    wall_seconds_total: float = 0.0
    accepted_total: int = 0
    stop_reason: str = ""
    cost: dict = field(default_factory=dict)

    def count(self, record: ArchitectureRecord) -> None:
        self.cycles += 1
        self.status_counts[record.status] = self.status_counts.get(record.status, 0) + 1
        self.wall_seconds_total += record.wall_seconds

    @property
    def sim_compute_hours(self) -> float:
        return self.wall_seconds_total / 3600.0

    def verify_conservation(self) -> None:
        """Every cycle must land in exactly one status bucket."""
        total = sum(self.status_counts.values())
        if total != self.cycles:
            raise EngineError(
                f"status counts sum to {total} but {self.cycles} cycles were committed"
            )

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "cycles": self.cycles,
            "status_counts": dict(sorted(self.status_counts.items())),
            "rebuilds": self.rebuilds,
            "wall_seconds_total": self.wall_seconds_total,
            "sim_compute_hours": self.sim_compute_hours,
            "accepted_total": self.accepted_total,
            "stop_reason": self.stop_reason,
            "cost": self.cost,
        }
