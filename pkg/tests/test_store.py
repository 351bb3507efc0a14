"""Record store tests: identity assignment, round trips, indexes, lineage,
ranking, and single-writer linearizability. Oracles here are independent
brute-force recomputations inside the tests."""

from __future__ import annotations

import hashlib
import json
import random
import threading

import numpy as np
import pytest

from archevolve.errors import NotFoundError, StoreError, ValidationError
from archevolve.records import (
    STATUS_ACCEPTED,
    STATUS_REJECTED_NOVELTY,
    ArchitectureRecord,
    FitnessBreakdown,
    MetricsReport,
)
from archevolve.store import RecordStore

DIM = 64


def embed(text: str) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")
    vec = np.random.default_rng(seed).standard_normal(DIM)
    return vec / np.linalg.norm(vec)


def metrics(final_loss: float = 5.0) -> MetricsReport:
    return MetricsReport.build([(1, final_loss + 1.0), (100, final_loss)], {"probe": 0.5})


def breakdown(composite: float) -> FitnessBreakdown:
    return FitnessBreakdown(
        r_loss=0.0,
        r_bench=0.0,
        sig_loss=0.5,
        sig_bench=0.5,
        judge10=composite * 10,
        judge_norm=composite,
        composite=composite,
        leakage=False,
    )


def accepted(name: str, motivation: str, composite: float = 0.5, parent=None) -> ArchitectureRecord:
    return ArchitectureRecord(
        name=name,
        motivation=motivation,
        code=f"class DeltaNet: pass  # {name}",
        status=STATUS_ACCEPTED,
        parent_id=parent,
        metrics=metrics(),
        fitness=breakdown(composite),
        wall_seconds=10.0,
    )


def open_store(tmp_path, **kw) -> RecordStore:
    defaults = dict(embedder=embed, embedding_dim=DIM, baselines=["delta_net"])
    defaults.update(kw)
    return RecordStore(tmp_path / "store", **defaults)


def test_first_append_gets_id_one(tmp_path):
    store = open_store(tmp_path)
    rid = store.append_record(accepted("delta_net_a", "gate the delta rule"))
    assert rid == 1
    assert store.get_record(1).created_seq == 1


def test_ids_are_dense_and_monotone(tmp_path):
    store = open_store(tmp_path)
    for i in range(25):
        rid = store.append_record(accepted(f"delta_net_{i}", f"variant {i}"))
        assert rid == i + 1
    assert [r.record_id for r in store.iter_records()] == list(range(1, 26))


def test_round_trip_identity_across_reopen(tmp_path):
    store = open_store(tmp_path)
    rec = accepted("delta_net_rt", "round trip target", composite=0.71)
    rec.analysis = "did well on recall\n\nweak long-context mixing"
    rec.cognition_refs = [3, 9]
    store.append_record(rec)
    store.close()

    reopened = open_store(tmp_path)
    got = reopened.get_record(1)
    assert got.to_dict() == store.get_record(1).to_dict()
    assert got.metrics.benchmark_scores == {"probe": 0.5}
    assert got.fitness.composite == 0.71
    assert got.cognition_refs == [3, 9]


def test_dangling_parent_rejected_and_nothing_persisted(tmp_path):
    store = open_store(tmp_path)
    store.append_record(accepted("delta_net_root", "root"))
    bad = accepted("delta_net_bad", "dangling", parent=99)
    with pytest.raises(ValidationError):
        store.append_record(bad)
    assert len(store) == 1
    lines = [l for l in store.log_path.read_text().splitlines() if l.strip()]
    assert len(lines) == 1


def test_invariant_violation_rejected(tmp_path):
    store = open_store(tmp_path)
    rec = accepted("delta_net_x", "m")
    rec.fitness = None  # accepted requires a breakdown
    with pytest.raises(ValidationError):
        store.append_record(rec)
    assert len(store) == 0


def test_get_missing_record(tmp_path):
    store = open_store(tmp_path)
    with pytest.raises(NotFoundError):
        store.get_record(7)


def test_every_line_is_self_describing(tmp_path):
    store = open_store(tmp_path)
    for i in range(3):
        store.append_record(accepted(f"delta_net_{i}", f"m{i}"))
    for line in store.log_path.read_text().splitlines():
        payload = json.loads(line)
        assert payload["schema_version"] == 1
        assert "record_id" in payload and "status" in payload


def test_nearest_motivations_exact_match_tops(tmp_path):
    store = open_store(tmp_path)
    store.append_record(accepted("delta_net_a", "hierarchical gating with decay"))
    store.append_record(accepted("delta_net_b", "chunkwise state passing"))
    store.append_record(accepted("delta_net_c", "local convolution before the mixer"))
    hits = store.nearest_motivations(embed("chunkwise state passing"), 2)
    assert hits[0][0] == 2
    assert hits[0][1] == pytest.approx(1.0, abs=1e-9)
    assert len(hits) == 2


def test_nearest_motivations_truncates_to_population(tmp_path):
    store = open_store(tmp_path)
    store.append_record(accepted("delta_net_a", "one motivation"))
    hits = store.nearest_motivations(embed("anything"), 5)
    assert len(hits) == 1


def test_nearest_motivations_empty_store(tmp_path):
    store = open_store(tmp_path)
    assert store.nearest_motivations(embed("query"), 5) == []


def test_nearest_motivations_rejects_bad_queries(tmp_path):
    store = open_store(tmp_path)
    store.append_record(accepted("delta_net_a", "m"))
    with pytest.raises(ValidationError):
        store.nearest_motivations(np.zeros(DIM), 3)
    with pytest.raises(ValidationError):
        store.nearest_motivations(np.ones(DIM + 1), 3)


def test_rejected_motivations_indexed_with_status_flag(tmp_path):
    store = open_store(tmp_path)
    store.append_record(accepted("delta_net_a", "accepted idea"))
    rejected = ArchitectureRecord(
        name="delta_net_b",
        motivation="rejected idea",
        code="class DeltaNet: pass",
        status=STATUS_REJECTED_NOVELTY,
    )
    store.append_record(rejected)
    all_hits = store.nearest_motivations(embed("rejected idea"), 5)
    assert all_hits[0][0] == 2
    only_accepted = store.nearest_motivations(
        embed("rejected idea"), 5, statuses=[STATUS_ACCEPTED]
    )
    assert [rid for rid, _ in only_accepted] == [1]


def test_index_rejected_switch_off(tmp_path):
    store = open_store(tmp_path, index_rejected_motivations=False)
    store.append_record(
        ArchitectureRecord(
            name="delta_net_r",
            motivation="will not be indexed",
            code="class DeltaNet: pass",
            status=STATUS_REJECTED_NOVELTY,
        )
    )
    assert store.nearest_motivations(embed("will not be indexed"), 5) == []


def test_lineage_chain_and_siblings(tmp_path):
    store = open_store(tmp_path)
    store.append_record(accepted("delta_net_1", "m1"))                 # 1
    store.append_record(accepted("delta_net_2", "m2", parent=1))       # 2
    store.append_record(accepted("delta_net_3", "m3", parent=1))       # 3
    store.append_record(accepted("delta_net_4", "m4", parent=2))       # 4
    store.append_record(accepted("delta_net_5", "m5", parent=2))       # 5
    lin = store.lineage(4)
    assert lin.ancestors == [1, 2]
    assert lin.siblings == [5]


def test_lineage_of_root(tmp_path):
    store = open_store(tmp_path)
    store.append_record(accepted("delta_net_root", "root"))
    store.append_record(accepted("delta_net_other_root", "other root"))
    lin = store.lineage(1)
    assert lin.ancestors == []
    assert lin.siblings == []


def test_lineage_is_a_forest(tmp_path):
    # parent_id always references an existing (hence smaller) id, so every
    # walk must terminate at a root; verify on a random forest
    store = open_store(tmp_path)
    rng = random.Random(3)
    store.append_record(accepted("delta_net_0", "m0"))
    for i in range(1, 120):
        parent = rng.randint(1, i) if rng.random() < 0.9 else None
        store.append_record(accepted(f"delta_net_{i}", f"m{i}", parent=parent))
    for rid in range(1, 121):
        lin = store.lineage(rid)
        if lin.ancestors:
            assert store.get_record(lin.ancestors[0]).parent_id is None
        for a, b in zip(lin.ancestors, lin.ancestors[1:]):
            assert store.get_record(b).parent_id == a


def test_top_by_fitness_matches_brute_force(tmp_path):
    store = open_store(tmp_path)
    rng = random.Random(17)
    composites = {}
    for i in range(300):
        c = round(rng.uniform(0.1, 0.93), 3)  # rounding forces some ties
        rid = store.append_record(accepted(f"delta_net_{i}", f"m{i}", composite=c))
        composites[rid] = c
    # plus some non-accepted noise that must never rank
    for i in range(20):
        store.append_record(
            ArchitectureRecord(
                name=f"delta_net_rej{i}",
                motivation=f"rejected {i}",
                code="class DeltaNet: pass",
                status=STATUS_REJECTED_NOVELTY,
            )
        )
    oracle = sorted(composites.items(), key=lambda kv: (-kv[1], kv[0]))[:50]
    got = [(r.record_id, r.fitness.composite) for r in store.top_by_fitness(50)]
    assert got == oracle


def test_top_by_fitness_tie_prefers_smaller_id(tmp_path):
    store = open_store(tmp_path)
    store.append_record(accepted("delta_net_a", "a", composite=0.8))
    store.append_record(accepted("delta_net_b", "b", composite=0.8))
    top = store.top_by_fitness(2)
    assert [r.record_id for r in top] == [1, 2]


def test_concurrent_appends_are_linearized(tmp_path):
    store = open_store(tmp_path, embedder=None)
    errors = []

    def writer(tag: int):
        try:
            for i in range(50):
                store.append_record(accepted(f"delta_net_{tag}_{i}", f"m {tag} {i}"))
        except Exception as exc:  # pragma: no cover - failure reporting
            errors.append(exc)

    threads = [threading.Thread(target=writer, args=(t,)) for t in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(store) == 400
    ids = [r.record_id for r in store.iter_records()]
    assert ids == list(range(1, 401))
    seqs = sorted(r.created_seq for r in store.iter_records())
    assert seqs == list(range(1, 401))


def test_large_sequential_append_run(tmp_path):
    # campaign-scale identity check: last created_seq equals append count
    store = open_store(tmp_path, embedder=None)
    last = 0
    for i in range(1773):
        last = store.append_record(accepted(f"delta_net_{i}", f"m{i}"))
    assert last == 1773
    assert store.get_record(1773).created_seq == 1773


def test_embedding_dim_mismatch_on_reopen(tmp_path):
    store = open_store(tmp_path)
    store.append_record(accepted("delta_net_a", "m"))
    store.close()
    with pytest.raises(StoreError):
        RecordStore(tmp_path / "store", embedder=embed, embedding_dim=DIM * 2)


def test_recent_wall_median(tmp_path):
    store = open_store(tmp_path)
    assert store.recent_wall_median("exploration") is None
    for i in range(25):
        rec = accepted(f"delta_net_{i}", f"m{i}")
        rec.wall_seconds = 100.0 + i
        store.append_record(rec)
    # last 20 records have walls 105..124 -> median 114.5
    assert store.recent_wall_median("exploration") == pytest.approx(114.5)
