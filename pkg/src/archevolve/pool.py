"""Candidate pool: the top-ranked snapshot that seeds new cycles.

Policy: no snapshot exists before `cold_start_target` accepted records; the
first snapshot is built at that point, and a rebuild happens every time
`rebuild_batch` further records have been accepted since the active snapshot
was built. Between rebuilds the snapshot is immutable, so sampling is a pure
function of (snapshot, rng_seed).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import ValidationError
from .store import RecordStore


@dataclass(frozen=True)
class PoolEntry:
    record_id: int
    fitness: float


@dataclass(frozen=True)
class CandidatePoolSnapshot:
    snapshot_id: int
    built_at_count: int
    entries: tuple[PoolEntry, ...]  # rank order: fitness desc, ties by smaller id

    def table(self) -> list[dict]:
        return [
            {"rank": i + 1, "record_id": e.record_id, "fitness": e.fitness}
            for i, e in enumerate(self.entries)
        ]

    def min_fitness(self) -> float:
        return self.entries[-1].fitness


@dataclass
class SeedSample:
    parent_id: int
    reference_ids: list[int]


@dataclass
class PoolPolicy:
    cold_start_target: int = 200
    rebuild_batch: int = 50
    pool_size: int = 50
    parent_ranks: int = 10
    reference_count: int = 4

    def __post_init__(self):
        if self.cold_start_target < 1 or self.rebuild_batch < 1 or self.pool_size < 1:
            raise ValidationError("pool policy constants must be positive")
        if self.parent_ranks < 1 or self.reference_count < 0:
            raise ValidationError("parent_ranks must be positive and reference_count non-negative")


def should_rebuild(
    policy: PoolPolicy, accepted_count: int, current: CandidatePoolSnapshot | None
) -> bool:
    if current is None:
        return accepted_count >= policy.cold_start_target
    return accepted_count - current.built_at_count >= policy.rebuild_batch


def build_snapshot(
    store: RecordStore,
    accepted_count: int,
    current: CandidatePoolSnapshot | None,
    policy: PoolPolicy,
) -> CandidatePoolSnapshot:
    top = store.top_by_fitness(policy.pool_size)
    if not top:
        raise ValidationError("cannot build a pool snapshot from zero accepted records")
    entries = tuple(PoolEntry(r.record_id, r.fitness.composite) for r in top)
    return CandidatePoolSnapshot(
        snapshot_id=(current.snapshot_id + 1) if current is not None else 1,
        built_at_count=accepted_count,
        entries=entries,
    )


def maybe_rebuild(
    store: RecordStore,
    accepted_count: int,
    current: CandidatePoolSnapshot | None,
    policy: PoolPolicy,
) -> CandidatePoolSnapshot | None:
    """Apply the rebuild rule; returns the new snapshot or None (keep current)."""
    if not should_rebuild(policy, accepted_count, current):
        return None
    return build_snapshot(store, accepted_count, current, policy)


def sample_seed(
    snapshot: CandidatePoolSnapshot,
    rng_seed: int,
    policy: PoolPolicy | None = None,
) -> SeedSample:
    """Draw one parent and distinct references from a snapshot.

    Parent: uniform over ranks 1..min(parent_ranks, n). References: distinct
    uniform draws from the ranks beyond the parent tier, count capped by what
    the snapshot holds (degraded mode for small snapshots). Deterministic for
    a given rng_seed.
    """
    policy = policy or PoolPolicy()
    if not snapshot.entries:
        raise ValidationError("cannot sample from an empty snapshot")
    rng = random.Random(rng_seed)
    n = len(snapshot.entries)
    parent_tier = min(policy.parent_ranks, n)
    parent = snapshot.entries[rng.randrange(parent_tier)]
    remainder = snapshot.entries[parent_tier:]
    ref_count = min(policy.reference_count, len(remainder))
    references = rng.sample(remainder, ref_count) if ref_count else []
    return SeedSample(
        parent_id=parent.record_id,
        reference_ids=[e.record_id for e in references],
    )
