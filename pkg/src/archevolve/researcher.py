"""Researcher stage: turn archived experience into one validated proposal.

Wire format for researcher replies (documented contract, parsed here):

  <NAME>      one line, the experiment name, prefix "delta_net_"
  <MOTIVATION> free text, the testable hypothesis
  <CODE>       complete Python source, entry-point class DeltaNet

The three fenced sections must appear in that order, every tag alone on its
own line. Code is recovered verbatim between the tag lines, so the source may
not contain a line consisting solely of "</CODE>". A reply that fails to
parse gets exactly one re-ask with a format reminder; a second failure aborts
the cycle.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import assets
from .errors import (
    CycleAbortError,
    CycleRejectionError,
    ProposalParseError,
    ValidationError,
)
from .gateway import LLMGateway
from .records import (
    STATUS_REJECTED_NOVELTY,
    STATUS_REJECTED_SANITY,
    ArchitectureRecord,
    metrics_digest,
)
from .store import RecordStore

logger = logging.getLogger(__name__)

NAME_PREFIX = "delta_net_"
ENTRY_POINT = "DeltaNet"
NOVELTY_NEIGHBORS = 5

FORMAT_REMINDER = (
    "\n\nFORMAT REMINDER: your previous reply could not be parsed. Respond "
    "again with exactly three fenced sections in this order and nothing "
    "else:\n<NAME>\n...\n</NAME>\n<MOTIVATION>\n...\n</MOTIVATION>\n"
    "<CODE>\n...\n</CODE>"
)


@dataclass
class Proposal:
    name: str
    motivation: str
    code: str
    attempt: int = 1


@dataclass
class EvolutionContext:
    parent_id: int
    parent_summary: str
    reference_summaries: list[str]
    cognition_snippets: list[str]
    baseline_digest: str
    feedback_history: list[str] = field(default_factory=list)


@dataclass
class GateResult:
    passed: bool
    status: str = ""
    feedback: str = ""


def _find_block(tag: str, text: str) -> re.Match | None:
    pattern = re.compile(
        rf"^[ \t]*<{tag}>[ \t]*\n(.*?)\n?[ \t]*</{tag}>[ \t]*$",
        re.DOTALL | re.MULTILINE,
    )
    return pattern.search(text)


def extract_block(tag: str, text: str) -> str | None:
    """Return the body of a single ``<TAG>...</TAG>`` section, if present."""
    match = _find_block(tag, text)
    return match.group(1) if match else None


def parse_proposal(text: str) -> Proposal:
    """Decode the three-section wire format; diagnostics name what is wrong."""
    if not isinstance(text, str) or not text.strip():
        raise ProposalParseError("empty reply")
    blocks = {}
    missing = []
    for tag in ("NAME", "MOTIVATION", "CODE"):
        match = _find_block(tag, text)
        if match is None:
            missing.append(tag)
        else:
            blocks[tag] = match
    if missing:
        raise ProposalParseError(f"missing sections: {', '.join(missing)}")
    if not (blocks["NAME"].start() < blocks["MOTIVATION"].start() < blocks["CODE"].start()):
        raise ProposalParseError("sections out of order; expected NAME, MOTIVATION, CODE")

    name_lines = [l.strip() for l in blocks["NAME"].group(1).splitlines() if l.strip()]
    if len(name_lines) != 1:
        raise ProposalParseError(
            f"NAME section must hold exactly one non-empty line, got {len(name_lines)}"
        )
    name = name_lines[0]
    if not re.fullmatch(r"[A-Za-z0-9_]+", name):
        raise ProposalParseError(f"name {name!r} is not a plain identifier")

    motivation = blocks["MOTIVATION"].group(1).strip()
    if not motivation:
        raise ProposalParseError("MOTIVATION section is empty")

    code = blocks["CODE"].group(1)
    if not code.strip():
        raise ProposalParseError("CODE section is empty")
    return Proposal(name=name, motivation=motivation, code=code)


def normalize_name(name: str) -> str:
    if name.startswith(NAME_PREFIX):
        return name
    logger.warning("proposal name %r missing %r prefix; prepending", name, NAME_PREFIX)
    return NAME_PREFIX + name


def _parent_digest(parent: ArchitectureRecord) -> str:
    fitness = (
        f"composite fitness {parent.fitness.composite:.4f}"
        if parent.fitness is not None
        else "no fitness recorded"
    )
    analysis = ""
    if parent.analysis:
        excerpt = parent.analysis.strip().replace("\n", " ")
        analysis = f"\nanalyst notes: {excerpt[:400]}"
    return (
        f"{parent.name} [{parent.status}] {fitness}\n"
        f"motivation: {parent.motivation}\n"
        f"results: {metrics_digest(parent.metrics)}{analysis}"
    )


def assemble_context(
    parent: ArchitectureRecord,
    references: list[ArchitectureRecord],
    cognition_snippets: list[str],
    gateway: LLMGateway,
    baseline_digest: str,
    prompts_dir=None,
) -> EvolutionContext:
    """Build the researcher's working context.

    The parent is rendered directly; each reference costs one summarizer
    call. Summaries live only in this context object and are never persisted.
    """
    template = assets.load_prompt("summarizer", prompts_dir)
    summaries = []
    for ref in references:
        prompt = assets.render(
            template,
            reference_name=ref.name,
            reference_motivation=ref.motivation,
            reference_metrics=metrics_digest(ref.metrics),
        )
        summaries.append(gateway.chat("summarizer", prompt))
    return EvolutionContext(
        parent_id=parent.record_id,
        parent_summary=_parent_digest(parent),
        reference_summaries=summaries,
        cognition_snippets=list(cognition_snippets),
        baseline_digest=baseline_digest,
    )


def _render_researcher_prompt(context: EvolutionContext, prompts_dir=None) -> str:
    refs = (
        "\n\n".join(f"[{i + 1}] {s}" for i, s in enumerate(context.reference_summaries))
        or "(none this cycle)"
    )
    cogs = "\n\n".join(context.cognition_snippets) or "(none this cycle)"
    feedback = (
        "\n".join(f"{i + 1}. {f}" for i, f in enumerate(context.feedback_history))
        or "(none yet)"
    )
    return assets.render(
        assets.load_prompt("researcher", prompts_dir),
        baseline_digest=context.baseline_digest,
        parent_summary=context.parent_summary,
        reference_summaries=refs,
        cognitions=cogs,
        feedback=feedback,
    )


def propose(context: EvolutionContext, gateway: LLMGateway, prompts_dir=None) -> Proposal:
    """One researcher call; one re-ask on a malformed reply, then abort."""
    prompt = _render_researcher_prompt(context, prompts_dir)
    reply = gateway.chat("researcher", prompt)
    try:
        proposal = parse_proposal(reply)
    except ProposalParseError as first_exc:
        logger.warning("proposal parse failed (%s); re-asking once", first_exc)
        reply = gateway.chat("researcher", prompt + FORMAT_REMINDER)
        try:
            proposal = parse_proposal(reply)
        except ProposalParseError as exc:
            raise CycleAbortError(f"proposal unparseable after re-ask: {exc}") from exc
    proposal.name = normalize_name(proposal.name)
    return proposal


_VERDICT_RE = re.compile(r"^\s*VERDICT:\s*([A-Z]+)\b", re.MULTILINE | re.IGNORECASE)
_REASON_RE = re.compile(r"^\s*REASON:\s*(.+)$", re.MULTILINE)


def _parse_verdict(reply: str, positive: str, negative: str) -> tuple[bool | None, str]:
    match = _VERDICT_RE.search(reply)
    reason_match = _REASON_RE.search(reply)
    reason = reason_match.group(1).strip() if reason_match else reply.strip()[:300]
    if match is None:
        return None, reason
    verdict = match.group(1).upper()
    if verdict == positive:
        return True, reason
    if verdict == negative:
        return False, reason
    return None, reason


def novelty_gate(
    proposal: Proposal,
    store: RecordStore,
    gateway: LLMGateway,
    k: int = NOVELTY_NEIGHBORS,
    prompts_dir=None,
) -> GateResult:
    """Embedding recall of the k nearest archived motivations, then a judge
    verdict over them. An empty archive passes trivially; an unparseable
    verdict passes with a warning (documented fallback)."""
    vec = gateway.embed(proposal.motivation)
    hits = store.nearest_motivations(vec, k)
    if not hits:
        return GateResult(passed=True)
    neighbor_lines = "\n".join(
        f"- similarity={sim:.4f} :: {store.get_record(rid).motivation}" for rid, sim in hits
    )
    prompt = assets.render(
        assets.load_prompt("judge_novelty", prompts_dir),
        candidate_motivation=proposal.motivation,
        neighbors=neighbor_lines,
    )
    reply = gateway.chat("judge", prompt)
    verdict, reason = _parse_verdict(reply, positive="NOVEL", negative="DUPLICATE")
    if verdict is None:
        logger.warning("novelty verdict unparseable; passing by fallback: %r", reply[:120])
        return GateResult(passed=True)
    if verdict:
        return GateResult(passed=True)
    return GateResult(passed=False, status=STATUS_REJECTED_NOVELTY, feedback=reason)


def sanity_gate(proposal: Proposal, gateway: LLMGateway, prompts_dir=None) -> GateResult:
    """Structural lint first (no model call), then the checker role."""
    if not proposal.code.strip():
        return GateResult(
            passed=False, status=STATUS_REJECTED_SANITY, feedback="code section is empty"
        )
    if not re.search(rf"\b{ENTRY_POINT}\b", proposal.code):
        return GateResult(
            passed=False,
            status=STATUS_REJECTED_SANITY,
            feedback=f"code must define the {ENTRY_POINT} entry point",
        )
    prompt = assets.render(
        assets.load_prompt("checker", prompts_dir),
        name=proposal.name,
        code=proposal.code,
    )
    reply = gateway.chat("checker", prompt)
    verdict, reason = _parse_verdict(reply, positive="PASS", negative="FAIL")
    if verdict is None:
        logger.warning("checker verdict unparseable; passing by fallback: %r", reply[:120])
        return GateResult(passed=True)
    if verdict:
        return GateResult(passed=True)
    return GateResult(passed=False, status=STATUS_REJECTED_SANITY, feedback=reason)


def propose_validated(
    context: EvolutionContext,
    store: RecordStore,
    gateway: LLMGateway,
    budget: int,
    novelty_k: int = NOVELTY_NEIGHBORS,
    prompts_dir=None,
) -> Proposal:
    """Propose/gate loop with gate feedback folded into the next attempt.

    Raises CycleRejectionError carrying the last gate's status once the
    budget is spent.
    """
    if budget < 1:
        raise ValidationError("proposal budget must be at least 1")
    last_status = STATUS_REJECTED_SANITY
    last_proposal: Proposal | None = None
    for attempt in range(1, budget + 1):
        proposal = propose(context, gateway, prompts_dir)
        proposal.attempt = attempt
        last_proposal = proposal
        gate = novelty_gate(proposal, store, gateway, novelty_k, prompts_dir)
        if not gate.passed:
            last_status = gate.status
            context.feedback_history.append(f"novelty reviewer: {gate.feedback}")
            continue
        gate = sanity_gate(proposal, gateway, prompts_dir)
        if not gate.passed:
            last_status = gate.status
            context.feedback_history.append(f"code reviewer: {gate.feedback}")
            continue
        return proposal
    raise CycleRejectionError(last_status, last_proposal, context.feedback_history)
