"""Campaign orchestration: the closed evolutionary loop.

A campaign alternates between *plan barriers* and *work batches*.  At a
barrier the coordinator plans the next ``plan_stride`` cycle slots from the
committed store state (pool snapshot, accepted counts, wall-time medians).
Workers then run the planned cycles in parallel — proposal, gating,
supervised training, judging, analysis — touching the store only for reads,
which all see exactly the barrier state.  Finally the coordinator commits the
finished records in slot order.

Because each slot's randomness derives from ``(campaign_seed, slot)`` and all
store reads are pinned to barriers, the committed record sequence is
byte-identical across runs and invariant to the worker count.
"""

from __future__ import annotations

import hashlib
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .analyst import CognitionBase, analyze, render_cognition
from .config import CampaignConfig
from .errors import CycleAbortError, CycleRejectionError, NotFoundError
from .fitness import leakage_check, score_metrics
from .harness import (
    EXEC_OK,
    EngineerHarness,
    judge_quality,
)
from .orchestrator_summary import CampaignSummary  # re-exported helper dataclass
from .pool import CandidatePoolSnapshot, maybe_rebuild, sample_seed
from .records import (
    STAGE_EXPLORATION,
    STAGE_VERIFICATION,
    STATUS_ACCEPTED,
    STATUS_FAILED_TRAINING,
    STATUS_REJECTED_LEAKAGE,
    ArchitectureRecord,
    render_baseline_table,
)
from .reporting import is_gallery
from .researcher import assemble_context, propose_validated
from .store import dumps_canonical

logger = logging.getLogger(__name__)

BASELINE_MOTIVATION = (
    "Seeded starting point: the plain delta-rule linear-attention layer whose "
    "training curve and benchmark scores anchor all relative improvements."
)


def slot_seed(campaign_seed: int, slot: int | str) -> int:
    """Per-slot RNG seed; a pure function of campaign seed and slot label."""
    digest = hashlib.sha256(f"{campaign_seed}:{slot}".encode("utf-8")).hexdigest()
    return int(digest[:16], 16)


@dataclass
class CyclePlan:
    """Everything a worker needs to run one cycle, fixed at the barrier."""

    slot: int
    parent_id: int
    reference_ids: list[int] = field(default_factory=list)
    seed: int = 0


class Campaign:
    """One evolutionary campaign bound to a store, gateway, and executor."""

    def __init__(
        self,
        config: CampaignConfig,
        *,
        store_root: Path | None = None,
        workspace_root: Path | None = None,
        gateway=None,
        executor=None,
    ) -> None:
        self.config = config
        self.gateway = gateway if gateway is not None else config.build_gateway()
        self.baselines = config.load_baselines()
        self.primary_baseline_name, self.primary_baseline = config.primary_baseline_pair()
        self.store = config.build_store(self.gateway, root=store_root)
        self.cognition_base = CognitionBase(
            self.store.root,
            embedder=self.gateway.embed,
            embedding_dim=config.embedding_dim,
        )
        self.policy = config.pool_policy()
        self.prompts_dir = Path(config.prompts_dir) if config.prompts_dir else None
        self.executor = executor if executor is not None else config.build_executor()
        self.harness = EngineerHarness(
            self.executor, self.gateway, prompts_dir=self.prompts_dir
        )
        self.workspace_root = Path(
            workspace_root if workspace_root is not None else config.workspace_root
        )
        self.baseline_record_id = 1

    # ------------------------------------------------------------- seeding

    def seed_baseline(self) -> int:
        """Ensure the store opens with the baseline as record 1."""
        if len(self.store) > 0:
            return self.baseline_record_id
        breakdown = score_metrics(
            self.primary_baseline, self.primary_baseline, judge10=5.0
        )
        record = ArchitectureRecord(
            name=self.primary_baseline_name,
            motivation=BASELINE_MOTIVATION,
            code=self.config.baseline_seed_source(),
            status=STATUS_ACCEPTED,
            stage=STAGE_EXPLORATION,
            parent_id=None,
            metrics=self.primary_baseline,
            fitness=breakdown,
            wall_seconds=0.0,
        )
        return self.store.append_record(record)

    # ------------------------------------------------------------ planning

    def _plan_slot(
        self, slot: int, snapshot: CandidatePoolSnapshot | None
    ) -> CyclePlan:
        seed = slot_seed(self.config.campaign_seed, slot)
        if snapshot is not None:
            sample = sample_seed(snapshot, seed, self.policy)
            return CyclePlan(slot, sample.parent_id, list(sample.reference_ids), seed)
        # Cold start: evolve from the baseline, with references drawn from
        # whatever has been accepted so far.
        candidates = [
            r.record_id
            for r in self.store.iter_records()
            if r.status == STATUS_ACCEPTED and r.record_id != self.baseline_record_id
        ]
        rng = random.Random(seed)
        count = min(self.policy.reference_count, len(candidates))
        references = rng.sample(candidates, count) if count else []
        return CyclePlan(slot, self.baseline_record_id, references, seed)

    # -------------------------------------------------------------- cycles

    def _run_slot(self, plan: CyclePlan) -> ArchitectureRecord:
        """Crash guard: any unexpected failure still yields a truthful record."""
        try:
            return self._cycle(plan)
        except Exception as exc:  # noqa: BLE001 - a worker crash must not kill the campaign
            logger.exception("cycle slot %d crashed", plan.slot)
            return ArchitectureRecord(
                name=f"delta_net_crashed_slot_{plan.slot}",
                motivation=f"cycle crashed before completion: {exc}",
                code="",
                status=STATUS_FAILED_TRAINING,
                stage=STAGE_EXPLORATION,
                parent_id=plan.parent_id,
                wall_seconds=0.0,
            )

    def _cognition_snippets(self, parent: ArchitectureRecord) -> list[str]:
        snippets = []
        for ref in parent.cognition_refs:
            try:
                snippets.append(render_cognition(self.cognition_base.get(ref)))
            except NotFoundError:
                logger.warning("parent %d references unknown cognition %d",
                               parent.record_id, ref)
        return snippets

    def _cycle(self, plan: CyclePlan) -> ArchitectureRecord:
        parent = self.store.get_record(plan.parent_id)
        references = [self.store.get_record(r) for r in plan.reference_ids]
        context = assemble_context(
            parent,
            references,
            self._cognition_snippets(parent),
            self.gateway,
            baseline_digest=render_baseline_table(self.baselines),
            prompts_dir=self.prompts_dir,
        )

        try:
            proposal = propose_validated(
                context,
                self.store,
                self.gateway,
                budget=self.config.rewrite_budget,
                novelty_k=self.config.novelty_neighbors,
                prompts_dir=self.prompts_dir,
            )
        except CycleRejectionError as exc:
            last = exc.proposal
            return ArchitectureRecord(
                name=last.name,
                motivation=last.motivation,
                code=last.code,
                status=exc.status,
                stage=STAGE_EXPLORATION,
                parent_id=plan.parent_id,
                wall_seconds=0.0,
            )
        except CycleAbortError as exc:
            return ArchitectureRecord(
                name=f"delta_net_aborted_slot_{plan.slot}",
                motivation=f"no well-formed proposal obtained: {exc}",
                code="",
                status=STATUS_FAILED_TRAINING,
                stage=STAGE_EXPLORATION,
                parent_id=plan.parent_id,
                wall_seconds=0.0,
            )

        stage_cfg = self.config.stage_config(STAGE_EXPLORATION)
        outcome = self.harness.execute_with_revision(
            proposal.code,
            stage_cfg,
            self.workspace_root / f"slot_{plan.slot:06d}",
            baseline=self.primary_baseline,
            baseline_name=self.primary_baseline_name,
            median_wall=self.store.recent_wall_median(
                STAGE_EXPLORATION, stage_cfg.median_window
            ),
            seed=plan.seed,
        )
        report = outcome.report

        if report.status != EXEC_OK:
            return ArchitectureRecord(
                name=proposal.name,
                motivation=proposal.motivation,
                code=outcome.code,
                status=STATUS_FAILED_TRAINING,
                stage=STAGE_EXPLORATION,
                parent_id=plan.parent_id,
                analysis=f"run ended with status {report.status}: "
                f"{report.error_log[:500]}" if report.error_log else None,
                wall_seconds=report.wall_seconds,
            )

        metrics = report.metrics
        if leakage_check(metrics, self.primary_baseline):
            return ArchitectureRecord(
                name=proposal.name,
                motivation=proposal.motivation,
                code=outcome.code,
                status=STATUS_REJECTED_LEAKAGE,
                stage=STAGE_EXPLORATION,
                parent_id=plan.parent_id,
                metrics=metrics,
                wall_seconds=report.wall_seconds,
            )

        judge10 = judge_quality(
            proposal.name,
            proposal.motivation,
            outcome.code,
            metrics,
            self.baselines,
            self.gateway,
            prompts_dir=self.prompts_dir,
        )
        breakdown = score_metrics(metrics, self.primary_baseline, judge10)
        record = ArchitectureRecord(
            name=proposal.name,
            motivation=proposal.motivation,
            code=outcome.code,
            status=STATUS_ACCEPTED,
            stage=STAGE_EXPLORATION,
            parent_id=plan.parent_id,
            metrics=metrics,
            fitness=breakdown,
            wall_seconds=report.wall_seconds,
        )

        siblings = [
            r
            for r in self.store.iter_records()
            if r.parent_id == plan.parent_id and r.status == STATUS_ACCEPTED
        ]
        result = analyze(
            record,
            parent,
            siblings,
            self.baselines,
            self.gateway,
            prompts_dir=self.prompts_dir,
        )
        if result is not None:
            record.analysis = result.analysis_text
            if len(self.cognition_base) > 0:
                retrieved = self.cognition_base.retrieve(result.shortcomings_query, k=3)
                record.cognition_refs = [entry.cognition_id for entry, _ in retrieved]
        return record

    # ------------------------------------------------------------ campaign

    def run(self) -> CampaignSummary:
        config = self.config
        self.seed_baseline()
        accepted_cycles = max(self.store.accepted_count - 1, 0)
        snapshot: CandidatePoolSnapshot | None = None
        rebuilt = maybe_rebuild(self.store, accepted_cycles, None, self.policy)
        if rebuilt is not None:
            snapshot = rebuilt

        summary = CampaignSummary(config_hash=config.config_hash())
        next_slot = sum(
            1 for r in self.store.iter_records() if r.stage == STAGE_EXPLORATION
        )
        stop_reason: str | None = None

        with ThreadPoolExecutor(max_workers=config.workers) as workers:
            while stop_reason is None:
                batch = config.plan_stride
                if config.max_cycles is not None:
                    batch = min(batch, config.max_cycles - summary.cycles)
                if batch <= 0:
                    stop_reason = "max_cycles"
                    break
                plans = [
                    self._plan_slot(slot, snapshot)
                    for slot in range(next_slot, next_slot + batch)
                ]
                next_slot += batch
                records = list(workers.map(self._run_slot, plans))

                for record in records:
                    committed_id = self.store.append_record(record)
                    summary.count(record)
                    if record.status == STATUS_ACCEPTED:
                        accepted_cycles += 1
                        rebuilt = maybe_rebuild(
                            self.store, accepted_cycles, snapshot, self.policy
                        )
                        if rebuilt is not None:
                            snapshot = rebuilt
                            summary.rebuilds.append(
                                {
                                    "at_accepted": accepted_cycles,
                                    "at_record_id": committed_id,
                                    "snapshot_id": snapshot.snapshot_id,
                                    "size": len(snapshot.entries),
                                    "min_fitness": snapshot.min_fitness(),
                                    "entries": [
                                        e.record_id for e in snapshot.entries
                                    ],
                                }
                            )
                    if (
                        config.max_accepted is not None
                        and accepted_cycles >= config.max_accepted
                    ):
                        stop_reason = "max_accepted"
                        break
                    if (
                        config.max_wall_hours is not None
                        and summary.wall_seconds_total / 3600.0 >= config.max_wall_hours
                    ):
                        stop_reason = "max_wall_hours"
                        break
                    if config.max_cycles is not None and summary.cycles >= config.max_cycles:
                        stop_reason = "max_cycles"
                        break

        summary.stop_reason = stop_reason or "exhausted"
        summary.accepted_total = accepted_cycles
        summary.cost = self.gateway.cost.snapshot()
        summary.verify_conservation()
        self._persist_summary(summary)
        return summary

    def _persist_summary(self, summary: CampaignSummary) -> None:
        path = self.store.root / "campaign_summary.json"
        path.write_text(dumps_canonical(summary.to_dict()) + "\n", encoding="utf-8")

    # ---------------------------------------------------------- promotion

    def promote_to_verification(self) -> list[ArchitectureRecord]:
        """Accepted exploration records that beat the baseline on both axes."""
        return [
            r
            for r in self.store.iter_records()
            if r.stage == STAGE_EXPLORATION and is_gallery(r)
        ]

    def run_verification(self) -> dict:
        """Re-train every promoted candidate at the verification stage.

        Each promoted exploration record gains one verification-stage child
        carrying the larger-scale outcome; already-verified records are
        skipped, so the operation is idempotent.
        """
        promoted = sorted(self.promote_to_verification(), key=lambda r: r.record_id)
        already = {
            r.parent_id
            for r in self.store.iter_records()
            if r.stage == STAGE_VERIFICATION
        }
        stage_cfg = self.config.stage_config(STAGE_VERIFICATION)
        outcome_counts: dict[str, int] = {}
        verified_ids: list[int] = []
        for record in promoted:
            if record.record_id in already:
                continue
            seed = slot_seed(self.config.campaign_seed, f"verify:{record.record_id}")
            outcome = self.harness.execute_with_revision(
                record.code,
                stage_cfg,
                self.workspace_root / f"verify_{record.record_id:06d}",
                baseline=self.primary_baseline,
                baseline_name=self.primary_baseline_name,
                median_wall=self.store.recent_wall_median(
                    STAGE_VERIFICATION, stage_cfg.median_window
                ),
                seed=seed,
            )
            report = outcome.report
            if report.status != EXEC_OK:
                child = ArchitectureRecord(
                    name=record.name,
                    motivation=record.motivation,
                    code=outcome.code,
                    status=STATUS_FAILED_TRAINING,
                    stage=STAGE_VERIFICATION,
                    parent_id=record.record_id,
                    wall_seconds=report.wall_seconds,
                )
            elif leakage_check(report.metrics, self.primary_baseline):
                child = ArchitectureRecord(
                    name=record.name,
                    motivation=record.motivation,
                    code=outcome.code,
                    status=STATUS_REJECTED_LEAKAGE,
                    stage=STAGE_VERIFICATION,
                    parent_id=record.record_id,
                    metrics=report.metrics,
                    wall_seconds=report.wall_seconds,
                )
            else:
                judge10 = judge_quality(
                    record.name,
                    record.motivation,
                    outcome.code,
                    report.metrics,
                    self.baselines,
                    self.gateway,
                    prompts_dir=self.prompts_dir,
                )
                child = ArchitectureRecord(
                    name=record.name,
                    motivation=record.motivation,
                    code=outcome.code,
                    status=STATUS_ACCEPTED,
                    stage=STAGE_VERIFICATION,
                    parent_id=record.record_id,
                    metrics=report.metrics,
                    fitness=score_metrics(report.metrics, self.primary_baseline, judge10),
                    wall_seconds=report.wall_seconds,
                )
            child_id = self.store.append_record(child)
            outcome_counts[child.status] = outcome_counts.get(child.status, 0) + 1
            if child.status == STATUS_ACCEPTED:
                verified_ids.append(child_id)
        return {
            "promoted": len(promoted),
            "newly_verified": sum(outcome_counts.values()),
            "outcomes": outcome_counts,
            "verified_record_ids": verified_ids,
        }
