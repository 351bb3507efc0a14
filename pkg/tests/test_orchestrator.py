"""The closed loop: planning barriers, cycle outcomes, determinism, stops."""

from __future__ import annotations

import hashlib
import json
import re
import threading
from pathlib import Path

import pytest

from archevolve.config import CampaignConfig
from archevolve.gateway import LLMGateway, MockProvider, ScriptedProvider
from archevolve.orchestrator import Campaign, slot_seed
from archevolve.records import (
    STAGE_EXPLORATION,
    STAGE_VERIFICATION,
    STATUS_ACCEPTED,
    STATUS_FAILED_TRAINING,
    STATUS_REJECTED_LEAKAGE,
    STATUS_REJECTED_SANITY,
)

LEAKY_CODE = (
    '"""Candidate whose training quietly sees evaluation data."""\n\n'
    "class DeltaNet:\n"
    '    MARKER = "SIM:LEAK:0.2"\n\n'
    "    def forward(self, x):\n"
    "        return x\n"
)

CRASHING_CODE = (
    '"""Candidate with a latent crash."""\n\n'
    "class DeltaNet:\n"
    '    MARKER = "SIM:FAIL"\n\n'
    "    def forward(self, x):\n"
    "        return x\n"
)


def proposal_reply(name: str, motivation: str, code: str) -> str:
    return (
        f"<NAME>\n{name}\n</NAME>\n"
        f"<MOTIVATION>\n{motivation}\n</MOTIVATION>\n"
        f"<CODE>\n{code}\n</CODE>\n"
    )


class RecordingProvider(MockProvider):
    """Mock provider that keeps every (role, prompt) it answered."""

    def __init__(self) -> None:
        super().__init__()
        self.calls: list[tuple[str, str]] = []
        self._record_lock = threading.Lock()

    def chat(self, profile, messages):
        reply = super().chat(profile, messages)
        prompt = "\n".join(m["content"] for m in messages)
        with self._record_lock:
            self.calls.append((profile.role, prompt))
        return reply


class FaultyThirdProvider(MockProvider):
    """Swaps in crashing candidate code as a pure function of the prompt.

    Roughly a third of proposals crash, decided by the prompt digest alone,
    so the injection is deterministic under any worker count.
    """

    def chat(self, profile, messages):
        reply = super().chat(profile, messages)
        if profile.role == "researcher" and "<CODE>" in reply:
            prompt = "\n".join(m["content"] for m in messages)
            digest = int(hashlib.sha256(prompt.encode("utf-8")).hexdigest(), 16)
            if digest % 3 == 0:
                reply = re.sub(
                    r"<CODE>.*</CODE>",
                    f"<CODE>\n{CRASHING_CODE}\n</CODE>",
                    reply,
                    flags=re.S,
                )
        return reply


def make_campaign(tmp_path: Path, *, provider=None, tag: str = "c", **overrides):
    defaults = dict(campaign_seed=0, workers=1, plan_stride=4, max_cycles=4)
    defaults.update(overrides)
    cfg = CampaignConfig(
        store_dir=str(tmp_path / tag / "store"),
        workspace_root=str(tmp_path / tag / "ws"),
        **defaults,
    )
    gateway = None
    if provider is not None:
        gateway = LLMGateway(
            cfg.build_profiles(),
            provider,
            embedding_dim=cfg.embedding_dim,
            alt_seed=cfg.campaign_seed,
        )
    return Campaign(cfg, gateway=gateway)


def test_slot_seed_is_deterministic_and_spread():
    assert slot_seed(0, 1) == slot_seed(0, 1)
    assert slot_seed(0, 1) != slot_seed(0, 2)
    assert slot_seed(0, 1) != slot_seed(1, 1)
    assert slot_seed(0, 7) != slot_seed(0, "verify:7")


def test_seed_baseline_creates_neutral_record_once(tmp_path):
    camp = make_campaign(tmp_path)
    assert camp.seed_baseline() == 1
    assert camp.seed_baseline() == 1
    assert len(camp.store) == 1
    baseline = camp.store.get_record(1)
    assert baseline.name == "delta_net"
    assert baseline.status == STATUS_ACCEPTED
    assert baseline.stage == STAGE_EXPLORATION
    assert baseline.parent_id is None
    assert baseline.wall_seconds == 0.0
    assert "DeltaNet" in baseline.code
    assert baseline.fitness.composite == 0.5
    assert baseline.fitness.r_loss == 0.0
    assert baseline.fitness.r_bench == 0.0


def test_single_cycle_produces_complete_accepted_record(tmp_path):
    camp = make_campaign(tmp_path, max_cycles=1, plan_stride=1)
    summary = camp.run()
    assert summary.cycles == 1
    assert summary.status_counts == {STATUS_ACCEPTED: 1}
    assert summary.stop_reason == "max_cycles"
    assert len(camp.store) == 2
    record = camp.store.get_record(2)
    assert record.parent_id == 1
    assert record.stage == STAGE_EXPLORATION
    assert record.status == STATUS_ACCEPTED
    assert record.metrics is not None
    assert record.wall_seconds > 0.0
    fit = record.fitness
    assert 0.0 < fit.sig_loss < 1.0
    assert 0.0 < fit.sig_bench < 1.0
    assert 1.0 <= fit.judge10 <= 10.0
    assert fit.composite == pytest.approx(
        (fit.sig_loss + fit.sig_bench + fit.judge10 / 10.0) / 3.0
    )
    assert record.analysis
    assert record.name.startswith("delta_net_")


def test_leaky_candidate_is_rejected_and_stays_out_of_pool(tmp_path):
    provider = ScriptedProvider(
        {
            "researcher": [
                proposal_reply(
                    "delta_net_leaky",
                    "Blend evaluation statistics into the training stream.",
                    LEAKY_CODE,
                )
            ]
        }
    )
    camp = make_campaign(tmp_path, provider=provider, max_cycles=1, plan_stride=1)
    summary = camp.run()
    assert summary.status_counts == {STATUS_REJECTED_LEAKAGE: 1}
    record = camp.store.get_record(2)
    assert record.status == STATUS_REJECTED_LEAKAGE
    assert record.metrics is not None
    assert record.metrics.final_loss < 0.9 * camp.primary_baseline.final_loss
    assert record.fitness is None
    pool_ids = [r.record_id for r in camp.store.top_by_fitness(50)]
    assert record.record_id not in pool_ids
    assert pool_ids == [1]


def test_sanity_rejection_exhausts_rewrite_budget(tmp_path):
    provider = ScriptedProvider(
        {
            "checker": [
                "VERDICT: FAIL\nREASON: attention is quadratic in sequence length."
            ]
            * 3
        }
    )
    camp = make_campaign(tmp_path, provider=provider, max_cycles=1, plan_stride=1)
    summary = camp.run()
    assert summary.status_counts == {STATUS_REJECTED_SANITY: 1}
    record = camp.store.get_record(2)
    assert record.status == STATUS_REJECTED_SANITY
    assert record.metrics is None
    assert record.fitness is None
    assert record.wall_seconds == 0.0
    assert record.code  # the last proposal is preserved for the log


def test_unparseable_proposals_abort_the_cycle(tmp_path):
    provider = ScriptedProvider(
        {"researcher": ["no blocks here", "still no blocks"]}
    )
    camp = make_campaign(tmp_path, provider=provider, max_cycles=1, plan_stride=1)
    summary = camp.run()
    assert summary.status_counts == {STATUS_FAILED_TRAINING: 1}
    record = camp.store.get_record(2)
    assert record.name == "delta_net_aborted_slot_1"
    assert record.code == ""
    assert record.parent_id == 1


def test_crashing_cycle_is_guarded(tmp_path, monkeypatch):
    camp = make_campaign(tmp_path, max_cycles=1, plan_stride=1)

    def explode(plan):
        raise RuntimeError("wires crossed")

    monkeypatch.setattr(camp, "_cycle", explode)
    summary = camp.run()
    assert summary.status_counts == {STATUS_FAILED_TRAINING: 1}
    record = camp.store.get_record(2)
    assert record.name == "delta_net_crashed_slot_1"
    assert "wires crossed" in record.motivation
    assert record.parent_id == 1


def test_crashing_candidate_exhausts_debug_budget(tmp_path):
    provider = ScriptedProvider(
        {
            "researcher": [
                proposal_reply(
                    "delta_net_crashy",
                    "Restructure the recurrence around an uninitialized buffer.",
                    CRASHING_CODE,
                )
            ]
        }
    )
    camp = make_campaign(tmp_path, provider=provider, max_cycles=1, plan_stride=1)
    summary = camp.run()
    assert summary.status_counts == {STATUS_FAILED_TRAINING: 1}
    record = camp.store.get_record(2)
    assert record.status == STATUS_FAILED_TRAINING
    assert record.code.count("# patch ") == 3
    assert record.wall_seconds > 0.0
    assert "error" in (record.analysis or "")


def test_rebuilds_follow_the_accepted_schedule(tmp_path):
    camp = make_campaign(
        tmp_path,
        workers=2,
        plan_stride=4,
        max_cycles=60,
        max_accepted=12,
        cold_start_target=6,
        rebuild_batch=3,
        pool_size=5,
        parent_ranks=2,
        reference_count=2,
    )
    summary = camp.run()
    assert summary.stop_reason == "max_accepted"
    assert [r["at_accepted"] for r in summary.rebuilds] == [6, 9, 12]
    assert [r["snapshot_id"] for r in summary.rebuilds] == [1, 2, 3]
    assert all(r["size"] <= 5 for r in summary.rebuilds)


def test_cold_start_below_target_never_rebuilds(tmp_path):
    camp = make_campaign(tmp_path, max_cycles=40, max_accepted=8, plan_stride=4)
    summary = camp.run()
    assert summary.stop_reason == "max_accepted"
    assert summary.rebuilds == []
    children = [r for r in camp.store.iter_records() if r.record_id != 1]
    assert children
    assert all(r.parent_id == 1 for r in children)


def test_worker_count_invariance_with_mixed_outcomes(tmp_path):
    def run(workers: int, tag: str):
        camp = make_campaign(
            tmp_path,
            provider=FaultyThirdProvider(),
            tag=tag,
            campaign_seed=5,
            workers=workers,
            plan_stride=4,
            max_cycles=12,
        )
        summary = camp.run()
        return camp.store.dump_bytes(), summary

    solo_bytes, solo = run(1, "solo")
    quad_bytes, quad = run(4, "quad")
    assert solo_bytes == quad_bytes
    assert solo.status_counts == quad.status_counts
    assert set(solo.status_counts) == {STATUS_ACCEPTED, STATUS_FAILED_TRAINING}
    assert sum(solo.status_counts.values()) == solo.cycles == 12


def test_same_seed_twin_runs_are_byte_identical(tmp_path):
    first = make_campaign(tmp_path, tag="a", campaign_seed=21, max_cycles=10)
    second = make_campaign(tmp_path, tag="b", campaign_seed=21, max_cycles=10)
    other = make_campaign(tmp_path, tag="c", campaign_seed=22, max_cycles=10)
    s1, s2, s3 = first.run(), second.run(), other.run()
    assert first.store.dump_bytes() == second.store.dump_bytes()
    assert first.store.dump_bytes() != other.store.dump_bytes()
    assert s1.status_counts == s2.status_counts
    assert s1.wall_seconds_total == pytest.approx(s2.wall_seconds_total)


def test_resume_matches_single_uninterrupted_run(tmp_path):
    # Two 4-cycle runs against one store share every barrier with one
    # 8-cycle run, so the record logs must match byte for byte.
    part = make_campaign(tmp_path, tag="parts", campaign_seed=13, max_cycles=4)
    part.run()
    resumed = make_campaign(tmp_path, tag="parts", campaign_seed=13, max_cycles=4)
    assert len(resumed.store) == 5  # baseline + first four cycles
    resumed.run()
    whole = make_campaign(tmp_path, tag="whole", campaign_seed=13, max_cycles=8)
    whole.run()
    assert resumed.store.dump_bytes() == whole.store.dump_bytes()


def test_stop_on_wall_budget_discards_unreached_slots(tmp_path):
    camp = make_campaign(
        tmp_path, plan_stride=6, max_cycles=600, max_wall_hours=0.08
    )
    summary = camp.run()
    assert summary.stop_reason == "max_wall_hours"
    assert summary.wall_seconds_total >= 0.08 * 3600.0
    assert summary.cycles < 6
    assert len(camp.store) == summary.cycles + 1


def test_summary_is_persisted_and_conserves_cycles(tmp_path):
    camp = make_campaign(tmp_path, max_cycles=6, plan_stride=3)
    summary = camp.run()
    path = camp.store.root / "campaign_summary.json"
    data = json.loads(path.read_text())
    assert data["cycles"] == summary.cycles == 6
    assert data["config_hash"] == camp.config.config_hash()
    assert sum(data["status_counts"].values()) == data["cycles"]
    assert data["stop_reason"] == "max_cycles"
    assert data["cost"]["researcher"]["calls"] >= 6


def test_promotion_requires_wins_on_both_axes(tmp_path):
    camp = make_campaign(tmp_path, campaign_seed=2, max_cycles=16, plan_stride=4)
    camp.run()
    promoted = camp.promote_to_verification()
    accepted = [
        r
        for r in camp.store.iter_records()
        if r.status == STATUS_ACCEPTED and r.record_id != 1
    ]
    assert promoted
    assert len(promoted) < len(accepted)
    for record in promoted:
        assert record.fitness.r_loss > 0.0
        assert record.fitness.r_bench > 0.0
    assert all(r.record_id != 1 for r in promoted)


def test_verification_creates_one_child_per_promoted(tmp_path):
    camp = make_campaign(tmp_path, campaign_seed=2, max_cycles=16, plan_stride=4)
    camp.run()
    promoted = camp.promote_to_verification()
    result = camp.run_verification()
    assert result["promoted"] == len(promoted)
    assert result["newly_verified"] == len(promoted)
    children = [
        r for r in camp.store.iter_records() if r.stage == STAGE_VERIFICATION
    ]
    assert {c.parent_id for c in children} == {r.record_id for r in promoted}
    for child in children:
        parent = camp.store.get_record(child.parent_id)
        assert child.name == parent.name
        assert child.analysis is None
        assert child.cognition_refs == []
    # idempotent: a second pass finds nothing left to verify
    again = camp.run_verification()
    assert again["newly_verified"] == 0
    assert (
        len([r for r in camp.store.iter_records() if r.stage == STAGE_VERIFICATION])
        == len(children)
    )


COGNITION_DOC = """<COGNITION>
<DESIGN_INSIGHT>
Decay gates must saturate slowly or long-range memories collapse early.
</DESIGN_INSIGHT>
<EXPERIMENTAL_TRIGGER_PATTERNS>
Loss plateaus after the warmup phase while short-context benchmarks stay flat.
</EXPERIMENTAL_TRIGGER_PATTERNS>
<ALGORITHMIC_INNOVATION>
Temperature-scaled gating on the delta-rule write strength.
</ALGORITHMIC_INNOVATION>
<IMPLEMENTATION_GUIDANCE>
Initialize gate bias so the sigmoid outputs start near one.
</IMPLEMENTATION_GUIDANCE>
</COGNITION>
"""


def test_cognition_refs_flow_from_analysis_to_children(tmp_path):
    provider = RecordingProvider()
    camp = make_campaign(
        tmp_path,
        provider=provider,
        max_cycles=10,
        plan_stride=2,
        cold_start_target=3,
        rebuild_batch=3,
        pool_size=5,
        parent_ranks=3,
        reference_count=1,
    )
    camp.cognition_base.ingest_document(COGNITION_DOC, source="test")
    camp.run()
    accepted = [
        r
        for r in camp.store.iter_records()
        if r.status == STATUS_ACCEPTED and r.record_id != 1
    ]
    with_refs = [r for r in accepted if r.cognition_refs]
    assert with_refs, "analysis should retrieve cognitions once the base is non-empty"
    for record in with_refs:
        for ref in record.cognition_refs:
            assert camp.cognition_base.get(ref).cognition_id == ref
    researcher_prompts = [p for role, p in provider.calls if role == "researcher"]
    assert any(
        "Decay gates must saturate slowly" in prompt for prompt in researcher_prompts
    ), "children of a record with refs should see the rendered insight"
