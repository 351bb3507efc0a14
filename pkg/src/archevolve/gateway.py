"""Provider gateway: every model call in the engine goes through here.

Role profiles are the single place where model names, temperatures, retry
budgets, and endpoints live; engine modules address the gateway by role only.
Three providers are included:

  MockProvider      deterministic, offline; replies are derived from a
                    sha256 digest of (role, messages) so hermetic campaigns
                    replay byte-for-byte
  ScriptedProvider  per-role reply queues for tests, falling back to the mock
  HttpProvider      chat-completions-compatible HTTP endpoint plus an
                    embeddings endpoint; credentials come from env vars only

Transport retries with exponential backoff live in the gateway, not at call
sites. Every call is metered into a per-role cost ledger.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from .errors import GatewayError, GatewayTransportError, ValidationError

logger = logging.getLogger(__name__)

ROLES = (
    "researcher",
    "summarizer",
    "checker",
    "debugger",
    "analyst",
    "judge",
    "classifier",
)

SUMMARIZER_MAX_TEMPERATURE = 0.3


@dataclass
class RoleProfile:
    role: str
    model: str
    temperature: float
    max_retries: int = 2
    timeout: float = 60.0
    base_url: str = ""
    api_key_env: str = "ARCHEVOLVE_API_KEY"
    embed_model: str = ""
    alt_model: str | None = None
    alt_probability: float = 0.0
    max_concurrency: int = 4


def default_profiles(base_url: str = "", model: str = "mock-model") -> dict[str, RoleProfile]:
    temps = {
        "researcher": 0.8,
        "summarizer": 0.2,
        "checker": 0.1,
        "debugger": 0.3,
        "analyst": 0.4,
        "judge": 0.6,
        "classifier": 0.1,
    }
    return {
        role: RoleProfile(role=role, model=model, temperature=temps[role], base_url=base_url)
        for role in ROLES
    }


def validate_profiles(profiles: dict[str, RoleProfile]) -> None:
    missing = [r for r in ROLES if r not in profiles]
    if missing:
        raise ValidationError(f"missing role profiles: {missing}")
    unknown = [r for r in profiles if r not in ROLES]
    if unknown:
        raise ValidationError(f"unknown roles in profile set: {unknown}")
    for profile in profiles.values():
        if profile.max_retries < 0:
            raise ValidationError(f"{profile.role}: max_retries must be non-negative")
        if profile.timeout <= 0:
            raise ValidationError(f"{profile.role}: timeout must be positive")
        if not (0.0 <= profile.temperature <= 2.0):
            raise ValidationError(f"{profile.role}: temperature must lie in [0, 2]")
        if not (0.0 <= profile.alt_probability <= 1.0):
            raise ValidationError(f"{profile.role}: alt_probability must lie in [0, 1]")
        if profile.max_concurrency < 1:
            raise ValidationError(f"{profile.role}: max_concurrency must be positive")
    if profiles["summarizer"].temperature > SUMMARIZER_MAX_TEMPERATURE:
        raise ValidationError(
            f"summarizer temperature must be <= {SUMMARIZER_MAX_TEMPERATURE}"
        )
    if profiles["judge"].temperature <= profiles["summarizer"].temperature:
        raise ValidationError("judge temperature must exceed the summarizer's")


# ------------------------------------------------------------------ costs


@dataclass
class CostLine:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_seconds: float = 0.0


def estimate_tokens(text: str) -> int:
    return (len(text) + 3) // 4


class CostLedger:
    def __init__(self):
        self._lines: dict[str, CostLine] = {}
        self._lock = threading.Lock()

    def record(self, role: str, prompt: str, reply: str, latency: float) -> None:
        with self._lock:
            line = self._lines.setdefault(role, CostLine())
            line.calls += 1
            line.prompt_tokens += estimate_tokens(prompt)
            line.completion_tokens += estimate_tokens(reply)
            line.latency_seconds += latency

    def snapshot(self) -> dict[str, dict]:
        with self._lock:
            return {
                role: {
                    "calls": line.calls,
                    "prompt_tokens": line.prompt_tokens,
                    "completion_tokens": line.completion_tokens,
                    "latency_seconds": round(line.latency_seconds, 6),
                }
                for role, line in sorted(self._lines.items())
            }


# -------------------------------------------------------------- providers


class Provider(Protocol):
    def chat(self, profile: RoleProfile, messages: list[dict]) -> str: ...

    def embed_text(self, text: str, dim: int) -> np.ndarray: ...


def _digest(role: str, messages: list[dict]) -> str:
    payload = role + "\x00" + json.dumps(messages, sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def hash_embedding(text: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")
    vec = np.random.default_rng(seed).standard_normal(dim)
    return vec / np.linalg.norm(vec)


_THEMES = (
    "adaptive forgetting",
    "hierarchical memory pooling",
    "chunkwise delta corrections",
    "gated state expansion",
    "two-timescale decay",
    "selective write masking",
    "low-rank state transitions",
    "content-aware head routing",
    "cross-head state sharing",
    "surprise-modulated updates",
    "convolutional query priming",
    "normalized key geometry",
    "output gate recalibration",
    "state eviction scoring",
    "parallel scan restructuring",
    "per-head decay schedules",
)

_ANGLES = (
    "with per-head learned gains",
    "under a strict causal chunk mask",
    "with linear-time state reuse",
    "using rank-1 corrections",
    "with learned interpolation between read paths",
    "behind a silu-normalized query path",
    "with cumulative trace compaction",
    "via residual state mixing",
)

_TARGETS = (
    "long-range recall",
    "length generalization",
    "state capacity limits",
    "gradient stability",
    "throughput at long context",
    "retrieval precision",
)


class MockProvider:
    """Deterministic offline provider.

    Replies are pure functions of (role, messages): templates keyed by the
    prompt's task marker, filled from a sha256 digest. Test hooks: prompts
    containing FORCE_* markers steer the reply into documented failure
    shapes.
    """

    name = "mock"

    def chat(self, profile: RoleProfile, messages: list[dict]) -> str:
        digest = _digest(profile.role, messages)
        prompt = messages[-1]["content"] if messages else ""
        handler = getattr(self, f"_{profile.role}", None)
        if handler is None:
            raise GatewayError(f"mock provider has no handler for role {profile.role!r}")
        return handler(prompt, digest)

    def embed_text(self, text: str, dim: int) -> np.ndarray:
        return hash_embedding(text, dim)

    # role handlers ----------------------------------------------------

    def _summarizer(self, prompt: str, digest: str) -> str:
        return f"[REFSUM] {digest[:12]} condensed reference summary."

    def _researcher(self, prompt: str, digest: str) -> str:
        if "FORCE_BAD_PROPOSAL" in prompt:
            return "I believe a gated variant would work well, but I cannot share code."
        n = int(digest[:16], 16)
        theme = _THEMES[n % len(_THEMES)]
        angle = _ANGLES[(n // 16) % len(_ANGLES)]
        target = _TARGETS[(n // 256) % len(_TARGETS)]
        slug = theme.split()[0].replace("-", "_")
        name = f"delta_net_{slug}_{digest[:8]}"
        if "FORCE_UNPREFIXED_NAME" in prompt:
            name = f"{slug}_{digest[:8]}"
        motivation = (
            f"Explore {theme} {angle} to improve {target}; "
            f"the parent plateaus where its state stops adapting (probe {digest[:8]})."
        )
        code = (
            f'"""Mock candidate {digest[:8]}."""\n\n\n'
            "class DeltaNet:\n"
            f'    VARIANT = "{digest[:16]}"\n\n'
            "    def __init__(self, d_model, num_heads=8):\n"
            "        self.d_model = d_model\n"
            "        self.num_heads = num_heads\n\n"
            "    def forward(self, x):\n"
            f"        # {theme} {angle}\n"
            "        return x\n"
        )
        return (
            f"<NAME>\n{name}\n</NAME>\n"
            f"<MOTIVATION>\n{motivation}\n</MOTIVATION>\n"
            f"<CODE>\n{code}</CODE>\n"
        )

    def _checker(self, prompt: str, digest: str) -> str:
        if "FORCE_CHECK_FAIL" in prompt:
            return "VERDICT: FAIL\nREASON: materializes a full attention map, quadratic in sequence length."
        if "FORCE_CHECK_GARBAGE" in prompt:
            return f"review notes {digest[:8]} (no verdict line)"
        return f"VERDICT: PASS\nREASON: linear-time scan with intact causal masking ({digest[:8]})."

    def _debugger(self, prompt: str, digest: str) -> str:
        if "FORCE_BAD_DEBUG" in prompt:
            return "The bug is a shape mismatch; transpose the state tensor."
        marker_start = prompt.find("<CODE>")
        marker_end = prompt.find("</CODE>")
        if marker_start != -1 and marker_end > marker_start:
            code = prompt[marker_start + len("<CODE>") : marker_end].strip("\n")
        else:
            code = "class DeltaNet:\n    pass"
        return f"<CODE>\n{code}\n# patch {digest[:8]}\n</CODE>"

    def _analyst(self, prompt: str, digest: str) -> str:
        return (
            "<ANALYSIS>\n"
            f"Mock comparative analysis {digest[:12]}: the candidate shifts loss "
            "against its parent while benchmark movement stays within noise; the "
            "mechanism named in the motivation is the plausible driver.\n"
            "</ANALYSIS>\n"
            "<SHORTCOMINGS>\n"
            f"state capacity under long-context retrieval ({digest[:8]})\n"
            "</SHORTCOMINGS>"
        )

    def _judge(self, prompt: str, digest: str) -> str:
        if "[NOVELTY-REVIEW]" in prompt:
            if "similarity=1.0000" in prompt:
                return (
                    "VERDICT: DUPLICATE\n"
                    "REASON: byte-identical to an archived motivation; nothing distinct remains."
                )
            return f"VERDICT: NOVEL\nREASON: no archived neighbor matches the mechanism ({digest[:8]})."
        # quality scoring
        if "FORCE_JUDGE_OUT_OF_RANGE" in prompt:
            return "SCORE: 12\nJUSTIFICATION: runaway enthusiasm."
        if "FORCE_JUDGE_GARBAGE" in prompt:
            return "A commendable effort all around."
        score = 4.0 + (int(digest[:8], 16) % 50) / 10.0
        return f"SCORE: {score:.1f}\nJUSTIFICATION: mock rubric application ({digest[:8]})."

    def _classifier(self, prompt: str, digest: str) -> str:
        import re as _re

        categories = _re.findall(r"^- ([a-z0-9-]+)\s*$", prompt, _re.M)
        category = categories[int(digest[:8], 16) % len(categories)] if categories else "unclassified"
        provenance = ("analysis", "cognition", "original")[int(digest[8:16], 16) % 3]
        return f"CATEGORY: {category}\nPROVENANCE: {provenance}"


class ScriptedProvider:
    """Pops canned replies per role; unscripted roles fall through to a mock."""

    name = "scripted"

    def __init__(self, replies: dict[str, list[str]] | None = None, *, strict: bool = False):
        self.replies = {role: list(queue) for role, queue in (replies or {}).items()}
        self.strict = strict
        self._fallback = MockProvider()

    def chat(self, profile: RoleProfile, messages: list[dict]) -> str:
        queue = self.replies.get(profile.role)
        if queue:
            return queue.pop(0)
        if self.strict:
            raise GatewayError(f"scripted provider has no reply left for {profile.role}")
        return self._fallback.chat(profile, messages)

    def embed_text(self, text: str, dim: int) -> np.ndarray:
        return hash_embedding(text, dim)


class HttpProvider:
    """Chat-completions-compatible endpoint plus an embeddings endpoint."""

    name = "http"

    def __init__(self, embed_model: str = "", embed_base_url: str = "", api_key_env: str = "ARCHEVOLVE_API_KEY"):
        import requests

        self._requests = requests
        self._session = requests.Session()
        self.embed_model = embed_model
        self.embed_base_url = embed_base_url
        self.api_key_env = api_key_env

    def _headers(self, api_key_env: str) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, profile: RoleProfile, messages: list[dict]) -> str:
        if not profile.base_url:
            raise ValidationError(f"role {profile.role} has no base_url configured")
        url = profile.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": profile.model,
            "messages": messages,
            "temperature": profile.temperature,
        }
        try:
            resp = self._session.post(
                url,
                json=payload,
                headers=self._headers(profile.api_key_env),
                timeout=profile.timeout,
            )
        except self._requests.RequestException as exc:
            raise GatewayTransportError(f"chat transport failure: {exc}") from exc
        if resp.status_code >= 500:
            raise GatewayTransportError(f"chat endpoint returned {resp.status_code}")
        if resp.status_code != 200:
            raise GatewayError(f"chat endpoint returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"malformed chat response: {exc}") from exc

    def embed_text(self, text: str, dim: int) -> np.ndarray:
        if not self.embed_base_url:
            raise ValidationError("embeddings endpoint not configured")
        url = self.embed_base_url.rstrip("/") + "/embeddings"
        try:
            resp = self._session.post(
                url,
                json={"model": self.embed_model, "input": text},
                headers=self._headers(self.api_key_env),
                timeout=60.0,
            )
        except self._requests.RequestException as exc:
            raise GatewayTransportError(f"embeddings transport failure: {exc}") from exc
        if resp.status_code >= 500:
            raise GatewayTransportError(f"embeddings endpoint returned {resp.status_code}")
        if resp.status_code != 200:
            raise GatewayError(f"embeddings endpoint returned {resp.status_code}")
        vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        if vec.shape != (dim,):
            raise GatewayError(f"embeddings endpoint returned dim {vec.shape}, wanted ({dim},)")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise GatewayError("embeddings endpoint returned a zero vector")
        return vec / norm


# ---------------------------------------------------------------- gateway


class LLMGateway:
    """Role-addressed access to one provider, with retries and metering."""

    def __init__(
        self,
        profiles: dict[str, RoleProfile],
        provider: Provider,
        *,
        embedding_dim: int = 256,
        backoff_base: float = 0.5,
        alt_seed: int = 0,
    ):
        validate_profiles(profiles)
        self.profiles = profiles
        self.provider = provider
        self.embedding_dim = embedding_dim
        self.backoff_base = backoff_base
        self.cost = CostLedger()
        self._alt_rng = np.random.default_rng(alt_seed)
        self._sems = {
            role: threading.Semaphore(profile.max_concurrency)
            for role, profile in profiles.items()
        }

    def _resolve_profile(self, role: str) -> RoleProfile:
        try:
            profile = self.profiles[role]
        except KeyError:
            raise ValidationError(f"unknown gateway role {role!r}") from None
        if profile.alt_model and profile.alt_probability > 0.0:
            if float(self._alt_rng.random()) < profile.alt_probability:
                return replace(profile, model=profile.alt_model)
        return profile

    def chat(self, role: str, prompt: str) -> str:
        profile = self._resolve_profile(role)
        messages = [{"role": "user", "content": prompt}]
        attempts = profile.max_retries + 1
        last_exc: Exception | None = None
        with self._sems[role]:
            for attempt in range(attempts):
                start = time.perf_counter()
                try:
                    reply = self.provider.chat(profile, messages)
                except GatewayTransportError as exc:
                    last_exc = exc
                    logger.warning(
                        "role %s transport failure (attempt %d/%d): %s",
                        role,
                        attempt + 1,
                        attempts,
                        exc,
                    )
                    if attempt + 1 < attempts and self.backoff_base > 0:
                        time.sleep(self.backoff_base * (2**attempt))
                    continue
                self.cost.record(role, prompt, reply, time.perf_counter() - start)
                return reply
        raise GatewayError(f"role {role} failed after {attempts} attempts: {last_exc}")

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValidationError("cannot embed empty text")
        vec = np.asarray(self.provider.embed_text(text, self.embedding_dim), dtype=np.float64)
        if vec.shape != (self.embedding_dim,):
            raise GatewayError(
                f"provider returned embedding of shape {vec.shape}, "
                f"campaign dimension is {self.embedding_dim}"
            )
        return vec
