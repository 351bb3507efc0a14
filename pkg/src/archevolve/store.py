"""Append-only record store.

Layout under the store root:

  header.json      campaign header: schema version, embedding dimension,
                   baseline identifiers, config hash
  records.jsonl    one self-describing JSON object per record, append-only

Derived state (id map, children map, motivation-embedding index, accepted
ranking) is rebuilt from the log on open and maintained incrementally on
append. Appends are serialized by a lock (single logical writer); readers
see fully constructed records only.
"""

from __future__ import annotations

import json
import logging
import os
import statistics
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import NotFoundError, StoreError, ValidationError
from .records import STATUS_ACCEPTED, ArchitectureRecord

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HEADER_FILENAME = "header.json"
LOG_FILENAME = "records.jsonl"

Embedder = Callable[[str], np.ndarray]


def dumps_canonical(obj) -> str:
    # deterministic serialization: replayed campaigns must be byte-identical
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass
class Lineage:
    ancestors: list[int]
    siblings: list[int]


@dataclass
class MotivationEmbedding:
    record_id: int
    status: str
    vector: np.ndarray


class RecordStore:
    """Campaign record log with derived in-memory indexes."""

    def __init__(
        self,
        root: str | Path,
        *,
        embedder: Embedder | None = None,
        embedding_dim: int = 256,
        baselines: Sequence[str] = (),
        config_hash: str = "",
        durable: bool = False,
        index_rejected_motivations: bool = True,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._embedder = embedder
        self._durable = durable
        self._index_rejected = index_rejected_motivations
        self._lock = threading.Lock()

        self._by_id: dict[int, ArchitectureRecord] = {}
        self._children: dict[int, list[int]] = {}
        self._embeddings: list[MotivationEmbedding] = []
        self._matrix_cache: np.ndarray | None = None
        self._matrix_ids: list[int] = []

        header_path = self.root / HEADER_FILENAME
        if header_path.exists():
            header = json.loads(header_path.read_text())
            if header.get("schema_version") != SCHEMA_VERSION:
                raise StoreError(
                    f"header schema_version {header.get('schema_version')} unsupported"
                )
            if header["embedding_dim"] != embedding_dim:
                raise StoreError(
                    f"embedding dimension mismatch: store has {header['embedding_dim']}, "
                    f"campaign wants {embedding_dim}"
                )
            self.header = header
        else:
            self.header = {
                "schema_version": SCHEMA_VERSION,
                "embedding_dim": embedding_dim,
                "baselines": list(baselines),
                "config_hash": config_hash,
            }
            header_path.write_text(dumps_canonical(self.header) + "\n")

        self.embedding_dim = self.header["embedding_dim"]
        self._replay_log()
        self._log_file = open(self.log_path, "a", encoding="utf-8")

    # ------------------------------------------------------------------ io

    @property
    def log_path(self) -> Path:
        return self.root / LOG_FILENAME

    def _replay_log(self) -> None:
        if not self.log_path.exists():
            return
        with open(self.log_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    payload = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise StoreError(f"corrupt record log at line {lineno}: {exc}") from exc
                if payload.get("schema_version") != SCHEMA_VERSION:
                    raise StoreError(
                        f"record at line {lineno} has unsupported schema_version"
                    )
                record = ArchitectureRecord.from_dict(payload)
                embedding = payload.get("embedding")
                self._index_record(
                    record,
                    np.asarray(embedding, dtype=np.float64) if embedding else None,
                )

    def _index_record(self, record: ArchitectureRecord, vector: np.ndarray | None) -> None:
        self._by_id[record.record_id] = record
        if record.parent_id is not None:
            self._children.setdefault(record.parent_id, []).append(record.record_id)
        if vector is not None:
            self._embeddings.append(
                MotivationEmbedding(record.record_id, record.status, vector)
            )
            self._matrix_cache = None

    # -------------------------------------------------------------- writes

    def append_record(self, record: ArchitectureRecord) -> int:
        """Validate, assign ids, embed the motivation, persist one line.

        Returns the assigned record_id. Nothing is persisted when
        validation fails.
        """
        record.validate()
        with self._lock:
            if record.parent_id is not None and record.parent_id not in self._by_id:
                raise ValidationError(f"parent_id {record.parent_id} does not exist")
            record_id = len(self._by_id) + 1
            stored = record.with_ids(record_id=record_id, created_seq=record_id)

            vector = None
            if self._embedder is not None and stored.motivation:
                if stored.status == STATUS_ACCEPTED or self._index_rejected:
                    vector = np.asarray(self._embedder(stored.motivation), dtype=np.float64)
                    if vector.shape != (self.embedding_dim,):
                        raise ValidationError(
                            f"embedder returned shape {vector.shape}, "
                            f"store expects ({self.embedding_dim},)"
                        )

            payload = stored.to_dict()
            payload["schema_version"] = SCHEMA_VERSION
            payload["embedding"] = vector.tolist() if vector is not None else None
            self._log_file.write(dumps_canonical(payload) + "\n")
            self._log_file.flush()
            if self._durable:
                os.fsync(self._log_file.fileno())
            self._index_record(stored, vector)
            return record_id

    def close(self) -> None:
        self._log_file.close()

    # --------------------------------------------------------------- reads

    def get_record(self, record_id: int) -> ArchitectureRecord:
        try:
            return self._by_id[record_id]
        except KeyError:
            raise NotFoundError(f"record {record_id} does not exist") from None

    def __len__(self) -> int:
        return len(self._by_id)

    def iter_records(self) -> list[ArchitectureRecord]:
        """Snapshot of all records in id order (safe against concurrent appends)."""
        with self._lock:
            return [self._by_id[rid] for rid in sorted(self._by_id)]

    @property
    def accepted_count(self) -> int:
        with self._lock:
            return sum(1 for r in self._by_id.values() if r.status == STATUS_ACCEPTED)

    def nearest_motivations(
        self,
        query_vec: np.ndarray,
        k: int,
        statuses: Sequence[str] | None = None,
    ) -> list[tuple[int, float]]:
        """Cosine top-k over indexed motivation embeddings.

        Returns (record_id, similarity) sorted by similarity descending,
        ties broken by smaller record_id. Fewer than k indexed rows returns
        them all.
        """
        if k < 0:
            raise ValidationError("k must be non-negative")
        query = np.asarray(query_vec, dtype=np.float64)
        if query.shape != (self.embedding_dim,):
            raise ValidationError(
                f"query has shape {query.shape}, store expects ({self.embedding_dim},)"
            )
        norm = float(np.linalg.norm(query))
        if norm == 0.0:
            raise ValidationError("query vector must be non-zero")
        query = query / norm

        with self._lock:
            rows = list(self._embeddings)
        if statuses is not None:
            allowed = set(statuses)
            rows = [e for e in rows if e.status in allowed]
        if not rows or k == 0:
            return []

        matrix = np.stack([e.vector for e in rows])
        norms = np.linalg.norm(matrix, axis=1)
        sims = (matrix @ query) / norms
        order = sorted(range(len(rows)), key=lambda i: (-sims[i], rows[i].record_id))
        return [(rows[i].record_id, float(sims[i])) for i in order[:k]]

    def lineage(self, record_id: int) -> Lineage:
        """Ancestor chain (root first) and same-parent siblings of a record.

        Roots have no siblings: records without a parent are not treated as
        one sibling set.
        """
        record = self.get_record(record_id)
        ancestors: list[int] = []
        cursor = record.parent_id
        seen = {record_id}
        while cursor is not None:
            if cursor in seen:
                raise StoreError(f"lineage cycle detected at record {cursor}")
            seen.add(cursor)
            ancestors.append(cursor)
            cursor = self.get_record(cursor).parent_id
        ancestors.reverse()

        siblings: list[int] = []
        if record.parent_id is not None:
            siblings = [
                rid
                for rid in sorted(self._children.get(record.parent_id, []))
                if rid != record_id
            ]
        return Lineage(ancestors=ancestors, siblings=siblings)

    def top_by_fitness(self, n: int) -> list[ArchitectureRecord]:
        """Accepted records ranked by composite fitness desc, ties by id."""
        if n < 0:
            raise ValidationError("n must be non-negative")
        with self._lock:
            accepted = [r for r in self._by_id.values() if r.status == STATUS_ACCEPTED]
        accepted.sort(key=lambda r: (-r.fitness.composite, r.record_id))
        return accepted[:n]

    def recent_wall_median(self, stage: str, window: int = 20) -> float | None:
        """Median wall_seconds of the last `window` same-stage runs that
        produced metrics (training completed, wall recorded). None when no
        such run exists."""
        walls = [
            r.wall_seconds
            for r in self.iter_records()
            if r.stage == stage and r.metrics is not None and r.wall_seconds > 0.0
        ]
        if not walls:
            return None
        return float(statistics.median(walls[-window:]))

    def dump_bytes(self) -> bytes:
        self._log_file.flush()
        return self.log_path.read_bytes()
