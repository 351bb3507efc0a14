"""Declarative campaign configuration.

One JSON file describes an entire campaign: seeds, worker parallelism, pool
policy, stage budgets, provider selection, and baseline references.  The
configuration is pure data — constructing the live objects (gateway, store,
executor) happens in the factory helpers at the bottom so the orchestrator
and CLI share one wiring path.

Environment variables are used only for provider credentials; everything
else lives in the file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .assets import load_baseline, load_baseline_source
from .errors import ValidationError
from .gateway import (
    LLMGateway,
    HttpProvider,
    MockProvider,
    RoleProfile,
    default_profiles,
    validate_profiles,
)
from .harness import SimulatedExecutor, StageConfig, SubprocessExecutor
from .pool import PoolPolicy
from .records import STAGE_EXPLORATION, STAGE_VERIFICATION
from .store import RecordStore, dumps_canonical


@dataclass
class CampaignConfig:
    """Everything a campaign run needs, as plain data."""

    campaign_seed: int = 0
    workers: int = 1
    plan_stride: int = 4
    embedding_dim: int = 256

    store_dir: str = "store"
    workspace_root: str = "workspaces"
    prompts_dir: str | None = None

    provider: str = "mock"  # "mock" | "http"
    roles: dict = field(default_factory=dict)  # role -> profile overrides

    executor: str = "simulated"  # "simulated" | "subprocess"
    executor_cmd: list = field(default_factory=list)
    sim_base_wall: float = 100.0

    baselines: list = field(
        default_factory=lambda: ["builtin:delta_net", "builtin:gated_delta_net"]
    )
    primary_baseline: str = "builtin:delta_net"

    cold_start_target: int = 200
    rebuild_batch: int = 50
    pool_size: int = 50
    parent_ranks: int = 10
    reference_count: int = 4

    novelty_neighbors: int = 5
    rewrite_budget: int = 3
    index_rejected_motivations: bool = True

    max_cycles: int | None = None
    max_accepted: int | None = None
    max_wall_hours: float | None = None

    stages: dict = field(default_factory=dict)  # stage name -> StageConfig overrides

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")
        if self.plan_stride < 1:
            raise ValidationError("plan_stride must be at least 1")
        if self.embedding_dim < 1:
            raise ValidationError("embedding_dim must be positive")
        if self.provider not in ("mock", "http"):
            raise ValidationError(f"unknown provider {self.provider!r}")
        if self.executor not in ("simulated", "subprocess"):
            raise ValidationError(f"unknown executor {self.executor!r}")
        if self.executor == "subprocess" and not self.executor_cmd:
            raise ValidationError("subprocess executor requires executor_cmd")
        if self.cold_start_target < self.rebuild_batch:
            raise ValidationError("cold_start_target must be >= rebuild_batch")
        if self.novelty_neighbors < 1:
            raise ValidationError("novelty_neighbors must be positive")
        if self.rewrite_budget < 1:
            raise ValidationError("rewrite_budget must be positive")
        if self.primary_baseline not in self.baselines:
            raise ValidationError("primary_baseline must appear in baselines")
        if (
            self.max_cycles is None
            and self.max_accepted is None
            and self.max_wall_hours is None
        ):
            raise ValidationError(
                "at least one stop condition is required "
                "(max_cycles, max_accepted, or max_wall_hours)"
            )
        for name, value in (
            ("max_cycles", self.max_cycles),
            ("max_accepted", self.max_accepted),
        ):
            if value is not None and value < 1:
                raise ValidationError(f"{name} must be positive when set")
        if self.max_wall_hours is not None and self.max_wall_hours <= 0:
            raise ValidationError("max_wall_hours must be positive when set")
        for stage_name in self.stages:
            if stage_name not in (STAGE_EXPLORATION, STAGE_VERIFICATION):
                raise ValidationError(f"unknown stage {stage_name!r} in stages")

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        if not isinstance(data, dict):
            raise ValidationError("campaign config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "CampaignConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(dumps_canonical(self.to_dict()).encode("utf-8")).hexdigest()

    # ------------------------------------------------------------- factories

    def pool_policy(self) -> PoolPolicy:
        return PoolPolicy(
            cold_start_target=self.cold_start_target,
            rebuild_batch=self.rebuild_batch,
            pool_size=self.pool_size,
            parent_ranks=self.parent_ranks,
            reference_count=self.reference_count,
        )

    def stage_config(self, stage: str) -> StageConfig:
        overrides = dict(self.stages.get(stage, {}))
        return StageConfig(stage=stage, **overrides)

    def build_profiles(self) -> dict[str, RoleProfile]:
        profiles = default_profiles()
        for role, overrides in self.roles.items():
            if role not in profiles:
                raise ValidationError(f"unknown role {role!r} in roles config")
            base = profiles[role]
            allowed = {f.name for f in fields(RoleProfile)} - {"role"}
            bad = sorted(set(overrides) - allowed)
            if bad:
                raise ValidationError(
                    f"unknown profile keys for role {role!r}: {', '.join(bad)}"
                )
            merged = {**asdict(base), **overrides, "role": role}
            profiles[role] = RoleProfile(**merged)
        validate_profiles(profiles)
        return profiles

    def build_gateway(self) -> LLMGateway:
        provider = MockProvider() if self.provider == "mock" else HttpProvider()
        return LLMGateway(
            self.build_profiles(),
            provider,
            embedding_dim=self.embedding_dim,
            alt_seed=self.campaign_seed,
        )

    def load_baselines(self) -> dict[str, "object"]:
        loaded = {}
        for ref in self.baselines:
            name, report = load_baseline(ref)
            if name in loaded:
                raise ValidationError(f"duplicate baseline name {name!r}")
            loaded[name] = report
        return loaded

    def primary_baseline_pair(self) -> tuple[str, "object"]:
        return load_baseline(self.primary_baseline)

    def baseline_seed_source(self) -> str:
        return load_baseline_source()

    def build_store(self, gateway: LLMGateway, root: Path | None = None) -> RecordStore:
        return RecordStore(
            root if root is not None else Path(self.store_dir),
            embedder=gateway.embed,
            embedding_dim=self.embedding_dim,
            baselines=list(self.baselines),
            config_hash=self.config_hash(),
            index_rejected_motivations=self.index_rejected_motivations,
        )

    def build_executor(self):
        if self.executor == "simulated":
            _, baseline = self.primary_baseline_pair()
            return SimulatedExecutor(baseline, base_wall=self.sim_base_wall)
        return SubprocessExecutor(list(self.executor_cmd))
