"""Post-experiment analysis and the literature cognition base.

Two responsibilities live here:

* **Cognition base** — a persistent collection of structured insights
  distilled from published architecture research.  Documents arrive as
  plain-text files in a tagged block grammar (see :func:`parse_cognition_document`);
  each contributes 1–3 entries of (scenario, algorithm, historical context).
  Retrieval embeds a shortcomings query and ranks scenarios by cosine
  similarity.

* **Result analysis** — after an experiment, the analyst role receives the
  candidate's metrics alongside its parent and sibling records (an
  ablation-style comparison) plus the fixed baselines, and returns an
  analysis text and a condensed shortcomings query used for retrieval.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .assets import load_prompt, render
from .errors import GatewayError, NotFoundError, StoreError, ValidationError
from .gateway import LLMGateway
from .records import (
    ArchitectureRecord,
    metrics_digest,
    render_baseline_table,
)
from .researcher import extract_block

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COGNITIONS_FILENAME = "cognitions.jsonl"
MAX_BLOCKS_PER_DOCUMENT = 3
MAX_COGNITION_REFS = 3

BACKGROUND_TAG = "PAPER_BACKGROUND"
CONTEXT_TAG = "HISTORICAL_TECHNICAL_CONTEXT"
BLOCK_TAG = "COGNITION"
SECTION_TAGS = (
    "DESIGN_INSIGHT",
    "EXPERIMENTAL_TRIGGER_PATTERNS",
    "ALGORITHMIC_INNOVATION",
    "IMPLEMENTATION_GUIDANCE",
)


def _line_of(text: str, offset: int) -> int:
    return text.count("\n", 0, offset) + 1


def _spans(tag: str, text: str) -> list[tuple[int, int, str]]:
    """All ``<TAG>...</TAG>`` regions as (start_offset, end_offset, body)."""
    pattern = re.compile(rf"<{tag}>\s*\n?(.*?)\n?\s*</{tag}>", re.DOTALL)
    return [(m.start(), m.end(), m.group(1)) for m in pattern.finditer(text)]


@dataclass
class CognitionEntry:
    """One distilled insight: when to apply it, what it is, where it came from."""

    cognition_id: int
    scenario: str
    algorithm: str
    historical_context: str
    source: str
    scenario_embedding: np.ndarray

    def validate(self) -> None:
        for label, value in (
            ("scenario", self.scenario),
            ("algorithm", self.algorithm),
            ("historical_context", self.historical_context),
        ):
            if not value or not value.strip():
                raise ValidationError(f"cognition {label} must be non-empty")
        norm = float(np.linalg.norm(self.scenario_embedding))
        if not 0.999999 <= norm <= 1.000001:
            raise ValidationError("scenario embedding must be unit-normalized")

    def to_dict(self) -> dict:
        return {
            "cognition_id": self.cognition_id,
            "scenario": self.scenario,
            "algorithm": self.algorithm,
            "historical_context": self.historical_context,
            "source": self.source,
            "scenario_embedding": [float(x) for x in self.scenario_embedding],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CognitionEntry":
        return cls(
            cognition_id=int(data["cognition_id"]),
            scenario=str(data["scenario"]),
            algorithm=str(data["algorithm"]),
            historical_context=str(data["historical_context"]),
            source=str(data["source"]),
            scenario_embedding=np.asarray(data["scenario_embedding"], dtype=np.float64),
        )


@dataclass
class AnalysisResult:
    """Analyst output: narrative analysis plus a retrieval-ready weakness query."""

    analysis_text: str
    shortcomings_query: str
    cognition_refs: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.cognition_refs) > MAX_COGNITION_REFS:
            raise ValidationError(
                f"at most {MAX_COGNITION_REFS} cognition refs may be attached"
            )


def parse_cognition_document(text: str) -> list[dict]:
    """Parse one tagged document into 1–3 raw entries.

    Grammar: an optional ``<PAPER_BACKGROUND>`` block whose
    ``<HISTORICAL_TECHNICAL_CONTEXT>`` section supplies the shared historical
    context, followed by 1–3 ``<COGNITION>`` blocks, each carrying all four
    sections: DESIGN_INSIGHT, EXPERIMENTAL_TRIGGER_PATTERNS,
    ALGORITHMIC_INNOVATION, IMPLEMENTATION_GUIDANCE.

    Field mapping: scenario ← trigger patterns, algorithm ← algorithmic
    innovation, historical context ← background (falling back to the block's
    design insight when no background is present).

    Malformed documents are rejected with line-numbered diagnostics.
    """
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("empty cognition document")

    background_context = ""
    backgrounds = _spans(BACKGROUND_TAG, text)
    if len(backgrounds) > 1:
        lines = ", ".join(str(_line_of(text, s)) for s, _, _ in backgrounds)
        raise ValidationError(f"multiple <{BACKGROUND_TAG}> blocks (lines {lines})")
    if backgrounds:
        start, _, body = backgrounds[0]
        contexts = _spans(CONTEXT_TAG, body)
        if not contexts:
            raise ValidationError(
                f"<{BACKGROUND_TAG}> at line {_line_of(text, start)} lacks a "
                f"<{CONTEXT_TAG}> section"
            )
        background_context = contexts[0][2].strip()
        if not background_context:
            raise ValidationError(
                f"<{CONTEXT_TAG}> at line {_line_of(text, start)} is empty"
            )

    blocks = _spans(BLOCK_TAG, text)
    if not blocks:
        opens = text.count(f"<{BLOCK_TAG}>")
        if opens:
            raise ValidationError(f"unterminated <{BLOCK_TAG}> block")
        raise ValidationError(f"no <{BLOCK_TAG}> blocks found")
    if len(blocks) > MAX_BLOCKS_PER_DOCUMENT:
        lines = ", ".join(str(_line_of(text, s)) for s, _, _ in blocks)
        raise ValidationError(
            f"{len(blocks)} <{BLOCK_TAG}> blocks (lines {lines}); a document "
            f"carries 1-{MAX_BLOCKS_PER_DOCUMENT}"
        )

    entries: list[dict] = []
    for start, _, body in blocks:
        block_line = _line_of(text, start)
        sections: dict[str, str] = {}
        for tag in SECTION_TAGS:
            spans = _spans(tag, body)
            if not spans:
                raise ValidationError(
                    f"<{BLOCK_TAG}> block at line {block_line} is missing <{tag}>"
                )
            value = spans[0][2].strip()
            if not value:
                raise ValidationError(
                    f"<{tag}> in the <{BLOCK_TAG}> block at line {block_line} is empty"
                )
            sections[tag] = value
        entries.append(
            {
                "scenario": sections["EXPERIMENTAL_TRIGGER_PATTERNS"],
                "algorithm": sections["ALGORITHMIC_INNOVATION"],
                "historical_context": background_context or sections["DESIGN_INSIGHT"],
            }
        )
    return entries


class CognitionBase:
    """Persistent, embedding-indexed collection of cognition entries.

    Entries live in ``cognitions.jsonl`` under ``root``: a header line first,
    then one self-describing JSON object per entry.  Ingestion is serialized
    under a lock; retrieval takes an immutable snapshot, so concurrent reads
    are safe.
    """

    def __init__(
        self,
        root: Path,
        *,
        embedder: Callable[[str], np.ndarray],
        embedding_dim: int = 256,
    ) -> None:
        if embedding_dim < 1:
            raise ValidationError("embedding_dim must be positive")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.embedder = embedder
        self.embedding_dim = int(embedding_dim)
        self._path = self.root / COGNITIONS_FILENAME
        self._lock = threading.Lock()
        self._entries: list[CognitionEntry] = []
        self._scenarios: set[str] = set()
        if self._path.exists():
            self._load()
        else:
            header = {"schema_version": SCHEMA_VERSION, "embedding_dim": self.embedding_dim}
            self._path.write_text(
                json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n",
                encoding="utf-8",
            )

    def _load(self) -> None:
        with self._path.open("r", encoding="utf-8") as handle:
            header_line = handle.readline()
            try:
                header = json.loads(header_line)
            except json.JSONDecodeError as exc:
                raise StoreError(f"corrupt cognition header: {exc}") from exc
            if header.get("schema_version") != SCHEMA_VERSION:
                raise StoreError(
                    f"unsupported cognition schema {header.get('schema_version')!r}"
                )
            if header.get("embedding_dim") != self.embedding_dim:
                raise StoreError(
                    f"cognition base was built with embedding_dim="
                    f"{header.get('embedding_dim')}, not {self.embedding_dim}"
                )
            for number, line in enumerate(handle, start=2):
                if not line.strip():
                    continue
                try:
                    entry = CognitionEntry.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise StoreError(f"corrupt cognition line {number}: {exc}") from exc
                if entry.cognition_id != len(self._entries) + 1:
                    raise StoreError(
                        f"cognition ids must be dense; line {number} holds "
                        f"id {entry.cognition_id}"
                    )
                self._entries.append(entry)
                self._scenarios.add(entry.scenario)

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, cognition_id: int) -> CognitionEntry:
        if not 1 <= cognition_id <= len(self._entries):
            raise NotFoundError(f"no cognition with id {cognition_id}")
        return self._entries[cognition_id - 1]

    def entries(self) -> list[CognitionEntry]:
        return list(self._entries)

    def ingest_document(self, text: str, source: str) -> list[CognitionEntry]:
        """Parse and add one document; entries with an already-stored scenario
        are skipped, making re-ingestion idempotent."""
        parsed = parse_cognition_document(text)
        added: list[CognitionEntry] = []
        with self._lock:
            with self._path.open("a", encoding="utf-8") as handle:
                for raw in parsed:
                    if raw["scenario"] in self._scenarios:
                        logger.info(
                            "skipping duplicate cognition scenario from %s", source
                        )
                        continue
                    vector = np.asarray(self.embedder(raw["scenario"]), dtype=np.float64)
                    if vector.shape != (self.embedding_dim,):
                        raise ValidationError(
                            f"embedder returned shape {vector.shape}, expected "
                            f"({self.embedding_dim},)"
                        )
                    entry = CognitionEntry(
                        cognition_id=len(self._entries) + 1,
                        scenario=raw["scenario"],
                        algorithm=raw["algorithm"],
                        historical_context=raw["historical_context"],
                        source=source,
                        scenario_embedding=vector,
                    )
                    entry.validate()
                    handle.write(
                        json.dumps(entry.to_dict(), sort_keys=True, separators=(",", ":"))
                        + "\n"
                    )
                    self._entries.append(entry)
                    self._scenarios.add(entry.scenario)
                    added.append(entry)
                handle.flush()
        return added

    def ingest_file(self, path: Path) -> list[CognitionEntry]:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read cognition file {path}: {exc}") from exc
        try:
            return self.ingest_document(text, source=path.name)
        except ValidationError as exc:
            raise ValidationError(f"{path.name}: {exc}") from exc

    def ingest_dir(self, directory: Path) -> dict:
        """Ingest every ``*.txt``/``*.md`` file in ``directory`` (sorted by name)."""
        directory = Path(directory)
        if not directory.is_dir():
            raise ValidationError(f"{directory} is not a directory")
        files = sorted(
            p for p in directory.iterdir() if p.suffix in (".txt", ".md") and p.is_file()
        )
        report = {"files": 0, "entries_added": 0, "errors": []}
        for path in files:
            try:
                added = self.ingest_file(path)
            except ValidationError as exc:
                report["errors"].append(str(exc))
                continue
            report["files"] += 1
            report["entries_added"] += len(added)
        return report

    def retrieve(self, query_text: str, k: int = 3) -> list[tuple[CognitionEntry, float]]:
        """Top-``k`` entries whose scenarios are most similar to the query.

        Cosine similarity over unit embeddings, descending; ties break toward
        the smaller cognition id.  An empty base yields an empty list.
        """
        if k < 1:
            raise ValidationError("k must be positive")
        if not query_text or not query_text.strip():
            raise ValidationError("query text must be non-empty")
        with self._lock:
            entries = list(self._entries)
        if not entries:
            return []
        query = np.asarray(self.embedder(query_text), dtype=np.float64)
        if query.shape != (self.embedding_dim,):
            raise ValidationError(
                f"query embedding has shape {query.shape}, expected "
                f"({self.embedding_dim},)"
            )
        norm = float(np.linalg.norm(query))
        if norm == 0.0:
            raise ValidationError("query embedding has zero norm")
        query = query / norm
        matrix = np.stack([e.scenario_embedding for e in entries])
        similarities = matrix @ query
        order = sorted(
            range(len(entries)), key=lambda i: (-similarities[i], entries[i].cognition_id)
        )
        return [(entries[i], float(similarities[i])) for i in order[:k]]


def render_cognition(entry: CognitionEntry) -> str:
    """Prompt-ready rendering of one retrieved cognition."""
    return (
        f"applicable scenario: {entry.scenario}\n"
        f"core approach: {entry.algorithm}\n"
        f"historical context: {entry.historical_context}"
    )


def _record_digest(record: ArchitectureRecord) -> str:
    fitness = (
        f"{record.fitness.composite:.4f}" if record.fitness is not None else "n/a"
    )
    motivation = record.motivation.strip().replace("\n", " ")
    if len(motivation) > 240:
        motivation = motivation[:240] + "..."
    return (
        f"{record.name} [status={record.status}, fitness={fitness}] :: "
        f"{metrics_digest(record.metrics)} :: motivation: {motivation}"
    )


def analyze(
    record: ArchitectureRecord,
    parent: ArchitectureRecord | None,
    siblings: Iterable[ArchitectureRecord],
    baselines: dict,
    gateway: LLMGateway,
    *,
    prompts_dir: Path | None = None,
) -> AnalysisResult | None:
    """Ask the analyst role to contrast ``record`` with its parent, its most
    recent siblings (at most 3 — an ablation-style comparison), and the fixed
    baselines.

    Returns None on gateway failure so the caller can persist the record
    without analysis and flag it for re-analysis; metrics are never mutated.
    """
    ordered = sorted(siblings, key=lambda r: r.record_id, reverse=True)[:3]
    parent_digest = (
        _record_digest(parent) if parent is not None else "(root node: no parent)"
    )
    sibling_digests = (
        "\n".join(f"- {_record_digest(s)}" for s in ordered)
        if ordered
        else "(no sibling experiments)"
    )
    prompt = render(
        load_prompt("analyst", prompts_dir),
        candidate_digest=_record_digest(record),
        parent_digest=parent_digest,
        sibling_digests=sibling_digests,
        baseline_table=render_baseline_table(baselines),
    )
    try:
        reply = gateway.chat("analyst", prompt)
    except GatewayError as exc:
        logger.warning("analyst call failed (%s); record flagged for re-analysis", exc)
        return None

    analysis_text = extract_block("ANALYSIS", reply)
    if analysis_text is None:
        analysis_text = reply.strip()
    shortcomings = extract_block("SHORTCOMINGS", reply)
    if shortcomings is None or not shortcomings.strip():
        paragraphs = [p.strip() for p in analysis_text.split("\n\n") if p.strip()]
        shortcomings = paragraphs[-1] if paragraphs else analysis_text.strip()
        logger.warning(
            "analyst reply lacked a SHORTCOMINGS section; using the final paragraph"
        )
    return AnalysisResult(
        analysis_text=analysis_text.strip(), shortcomings_query=shortcomings.strip()
    )
