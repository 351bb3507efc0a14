"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(EngineError):
    """Input violates a documented contract; nothing was persisted."""


class NotFoundError(EngineError):
    """Lookup of a record, snapshot, or cognition entry that does not exist."""


class StoreError(EngineError):
    """Record log is unreadable, corrupt, or incompatible with the campaign header."""


class GatewayError(EngineError):
    """A provider call failed after exhausting its retry budget."""


class GatewayTransportError(GatewayError):
    """Transient transport failure; eligible for retry inside the gateway."""


class ProposalParseError(ValidationError):
    """Researcher reply did not contain the required fenced sections."""


class CycleAbortError(EngineError):
    """The cycle cannot continue (for example a proposal that never parsed)."""


class CycleRejectionError(EngineError):
    """Proposal budget exhausted; carries the terminal gate verdict."""

    def __init__(self, status: str, proposal, feedback_history: list[str]):
        super().__init__(f"proposal budget exhausted with status {status}")
        self.status = status
        self.proposal = proposal
        self.feedback_history = list(feedback_history)
