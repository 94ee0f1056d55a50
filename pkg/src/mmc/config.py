"""Scenario configuration: a YAML (or JSON) document validated with pydantic."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator


class ConfigError(ValueError):
    """Validation failure; ``errors`` holds ``field.path: message`` strings."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid scenario config:\n  " + "\n  ".join(errors))


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RegionCfg(_Model):
    region_id: str = Field(min_length=1)
    center: tuple[float, float]
    radius_m: float = Field(gt=0)


class SynthCfg(_Model):
    region: str
    arrival_rate_per_s: float = Field(ge=0)
    dwell_mean_s: float = Field(gt=0)
    approach_m: float = Field(default=0.0, ge=0)
    storage_bytes: Optional[int] = Field(default=None, ge=0)
    bandwidth_bps: Optional[int] = Field(default=None, ge=0)
    id_prefix: Optional[str] = None


class RotatingCfg(_Model):
    region: str
    cohort_size: int = Field(default=3, ge=1)
    period_s: float = Field(default=60.0, gt=0)
    overlap_s: float = Field(default=10.0)
    storage_bytes: Optional[int] = Field(default=None, ge=0)
    id_prefix: str = "r"


class StationaryCfg(_Model):
    vehicle_id: str = Field(min_length=1)
    x: float
    y: float
    start_s: float = Field(default=0.0, ge=0)
    end_s: Optional[float] = None
    storage_bytes: int = Field(default=0, ge=0)
    bandwidth_bps: int = Field(default=0, ge=0)


class TraceCfg(_Model):
    file: Optional[str] = None
    synth: list[SynthCfg] = []
    rotating: list[RotatingCfg] = []
    stationary: list[StationaryCfg] = []


class RadioCfg(_Model):
    v2v_range_m: float = Field(default=300.0, gt=0)
    hop_latency_us: int = Field(default=2_000, gt=0)
    loss_prob: float = Field(default=0.0, ge=0, le=1)


class MembershipCfg(_Model):
    heartbeat_period_s: float = Field(default=1.0, gt=0)
    timeout_multiplier: int = Field(default=3, ge=2)
    handoff_neighbor_search_hops: int = Field(default=3, ge=0)
    lookahead_s: float = Field(default=2.0, ge=0)
    membership_floor: int = Field(default=1, ge=1)


class StorageCfg(_Model):
    epsilon_us: int = Field(default=0, ge=0)
    replication_factor: int = Field(default=3, ge=1)
    ttl_hops: int = Field(default=4, ge=0)
    op_timeout_s: float = Field(default=2.0, gt=0)
    max_attempts: int = Field(default=3, ge=1)
    default_storage_bytes: int = Field(default=64 * 1024 * 1024, ge=0)
    default_bandwidth_bps: int = Field(default=6_000_000, ge=0)


class DiscoveryCfg(_Model):
    mode: Literal["mmc", "baseline"] = "mmc"
    ttl_hops: int = Field(default=4, ge=0)


class ServiceCfg(_Model):
    service_id: str = Field(min_length=1)
    region: str


class OpCfg(_Model):
    at_s: float = Field(ge=0)
    client: str
    op: Literal["write", "read", "session"]
    key: Optional[str] = None
    region: Optional[str] = None
    value: Optional[str] = None
    size_bytes: Optional[int] = Field(default=None, ge=0)
    service: Optional[str] = None
    exchanges: int = Field(default=10, ge=1)
    interval_s: float = Field(default=5.0, gt=0)
    payload_bytes: int = Field(default=1024, ge=0)

    @model_validator(mode="after")
    def _fields_for_op(self):
        if self.op in ("write", "read") and (self.key is None or self.region is None):
            raise ValueError(f"{self.op} needs key and region")
        if self.op == "write" and self.value is None:
            raise ValueError("write needs a value")
        if self.op == "session" and self.service is None:
            raise ValueError("session needs a service")
        return self


class StorageGenCfg(_Model):
    region: str
    clients: list[str]
    keys: int = Field(default=4, ge=1)
    start_s: float = Field(default=0.0, ge=0)
    end_s: float = Field(gt=0)
    writes_per_s: float = Field(default=1.0, ge=0)
    reads_per_s: float = Field(default=1.0, ge=0)
    value_bytes: int = Field(default=1024, ge=0)
    final_reads_at_s: Optional[float] = None


class SessionGenCfg(_Model):
    clients: list[str]
    service: str
    sessions_per_client: int = Field(default=1, ge=1)
    start_s: float = Field(default=0.0, ge=0)
    end_s: float = Field(gt=0)
    exchanges: int = Field(default=10, ge=1)
    interval_s: float = Field(default=5.0, gt=0)
    payload_bytes: int = Field(default=1024, ge=0)


class WorkloadGenCfg(_Model):
    storage: list[StorageGenCfg] = []
    sessions: list[SessionGenCfg] = []


class MetricsCfg(_Model):
    census_period_s: float = Field(default=10.0, gt=0)


class ScenarioConfig(_Model):
    name: str = "scenario"
    seed: int = 0
    duration_s: float = Field(ge=0)
    trace: TraceCfg = TraceCfg()
    regions: list[RegionCfg] = []
    radio: RadioCfg = RadioCfg()
    membership: MembershipCfg = MembershipCfg()
    storage: StorageCfg = StorageCfg()
    discovery: DiscoveryCfg = DiscoveryCfg()
    services: list[ServiceCfg] = []
    workload: list[OpCfg] = []
    workload_gen: WorkloadGenCfg = WorkloadGenCfg()
    metrics: MetricsCfg = MetricsCfg()

    _base_dir: Optional[Path] = PrivateAttr(default=None)

    def trace_path(self) -> Path | None:
        if self.trace.file is None:
            return None
        p = Path(self.trace.file)
        if not p.is_absolute() and self._base_dir is not None:
            p = self._base_dir / p
        return p

    @model_validator(mode="after")
    def _cross_refs(self):
        ids = [r.region_id for r in self.regions]
        if len(set(ids)) != len(ids):
            raise ValueError("region ids must be unique")
        known = set(ids)
        refs = [("trace.synth", s.region) for s in self.trace.synth]
        refs += [("trace.rotating", s.region) for s in self.trace.rotating]
        refs += [("services", s.region) for s in self.services]
        refs += [("workload", o.region) for o in self.workload if o.region is not None]
        refs += [("workload_gen.storage", g.region) for g in self.workload_gen.storage]
        for where, rid in refs:
            if rid not in known:
                raise ValueError(f"{where} references unknown region {rid!r}")
        return self

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def parse_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        errors = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            errors.append(f"{loc}: {err['msg']}")
        raise ConfigError(errors) from None


def loads_config(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<root>: not valid YAML/JSON ({exc})"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["<root>: expected a mapping"])
    return parse_config(data)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"<file>: cannot read {path}: {exc.strerror}"]) from None
    cfg = loads_config(text)
    cfg._base_dir = path.parent
    trace = cfg.trace_path()
    if trace is not None and not trace.exists():
        raise ConfigError([f"trace.file: file not found: {trace}"])
    return cfg
