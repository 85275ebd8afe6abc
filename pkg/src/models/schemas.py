"""
Pydantic models for scenario configuration and emitted reports
"""

import uuid
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..core.errors import ConfigInvalid
from ..services.cti_core import (
    Audience,
    CtiRecord,
    FieldAction,
    IndicatorKind,
    Sensitivity,
    default_policy,
    validate,
)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PrivacyParams(StrictModel):
    clip_norm: float = Field(6.0, gt=0)
    noise_multiplier: float = Field(1.0, ge=0)
    sample_rate: float = Field(1.5e-4, ge=0, le=1)
    delta: float = Field(1e-5, gt=0, lt=1)
    # when set, noise_multiplier is calibrated to this epsilon before training
    target_epsilon: Optional[float] = Field(None, gt=0)


class DataConfig(StrictModel):
    n_train: int = Field(20000, gt=0)
    n_test: int = Field(5000, gt=0)
    dim: int = Field(16, ge=2)
    class_sep: float = Field(6.0, ge=0)
    label_noise: float = Field(0.01, ge=0, lt=0.5)
    # 0 shards IID; towards 1 each client sees mostly one class
    label_skew: float = Field(0.0, ge=0, le=1)


class TrainConfig(StrictModel):
    learning_rate: float = Field(0.5, gt=0)
    local_steps: int = Field(30, ge=0)
    batch_size: int = Field(32, ge=1)
    rounds: int = Field(3, ge=1)
    dp: Optional[PrivacyParams] = None
    seed: int = 0
    clients: int = Field(3, ge=1)
    secure_aggregation: bool = False
    data: DataConfig = Field(default_factory=DataConfig)
    # scenario timing: first FL barrier tick and spacing between rounds
    start_tick: int = Field(100, ge=0)
    round_interval: int = Field(100, ge=1)


class NetworkConfig(StrictModel):
    drop_prob: float = Field(0.05, ge=0, le=1)
    dup_prob: float = Field(0.02, ge=0, le=1)
    delay_min: int = Field(1, ge=1)
    delay_max: int = Field(20, ge=1)
    gst: int = Field(500, ge=0)
    delta_bound: int = Field(10, ge=1)
    # mixed with the scenario seed to pick the network's random stream
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _delay_order(self) -> "NetworkConfig":
        if self.delay_min > self.delay_max:
            raise ValueError("delay_min must not exceed delay_max")
        return self


class BehaviorConfig(StrictModel):
    kind: Literal["Honest", "SemiHonest", "Malicious"] = "Honest"
    poison_scale: float = Field(1.0, ge=0)
    false_intel_rate: float = Field(0.0, ge=0, le=1)


RoleName = Literal["Provider", "Processor", "Consumer"]
ALL_ROLE_NAMES: List[RoleName] = ["Provider", "Processor", "Consumer"]


class OrgConfig(StrictModel):
    its_count: int = Field(2, ge=1)
    inventory: List[str] = Field(default_factory=list)
    subscriptions: List[IndicatorKind] = Field(default_factory=lambda: list(IndicatorKind))
    # one role list per ITS; omitted means every ITS holds all three roles
    roles: Optional[List[List[RoleName]]] = None

    def roles_of(self, its: int) -> List[RoleName]:
        if self.roles is None:
            return list(ALL_ROLE_NAMES)
        return list(self.roles[its])


class PolicyConfig(StrictModel):
    """Per-audience overrides on top of the default rule sets"""

    intra_org: Dict[str, FieldAction] = Field(default_factory=dict)
    inter_org: Dict[str, FieldAction] = Field(default_factory=dict)
    public: Dict[str, FieldAction] = Field(default_factory=dict)

    def overrides_for(self, audience: Audience) -> Dict[str, FieldAction]:
        return {
            Audience.INTRA_ORG: self.intra_org,
            Audience.INTER_ORG: self.inter_org,
            Audience.PUBLIC: self.public,
        }[audience]

    @model_validator(mode="after")
    def _policies_usable(self) -> "PolicyConfig":
        for audience in Audience:
            default_policy(audience, bytes(32), self.overrides_for(audience))
        return self


class ZeroDayDetected(StrictModel):
    type: Literal["ZeroDayDetected"] = "ZeroDayDetected"
    tick: int = Field(ge=0)
    org: int = Field(ge=0)
    its: int = Field(0, ge=0)
    vulnerability_id: str


class IndicatorObserved(StrictModel):
    type: Literal["IndicatorObserved"] = "IndicatorObserved"
    tick: int = Field(ge=0)
    org: int = Field(ge=0)
    its: int = Field(0, ge=0)
    kind: IndicatorKind
    value: str
    sensitivity: Sensitivity = Sensitivity.COMMUNITY
    context: Optional[str] = None


class NodeCompromised(StrictModel):
    type: Literal["NodeCompromised"] = "NodeCompromised"
    tick: int = Field(ge=0)
    node: str
    behavior: BehaviorConfig


class PoisonDetected(StrictModel):
    type: Literal["PoisonDetected"] = "PoisonDetected"
    tick: int = Field(ge=0)
    org: int = Field(ge=0)
    suspect: str


class ExposureCheck(StrictModel):
    type: Literal["ExposureCheck"] = "ExposureCheck"
    tick: int = Field(ge=0)
    org: int = Field(ge=0)
    item: str


InjectedEvent = Annotated[
    Union[ZeroDayDetected, IndicatorObserved, NodeCompromised, PoisonDetected, ExposureCheck],
    Field(discriminator="type"),
]


class ScenarioConfig(StrictModel):
    name: str = "scenario"
    seed: int = 0
    duration: int = Field(1500, ge=0)
    orgs: List[OrgConfig] = Field(default_factory=lambda: [OrgConfig(), OrgConfig()])
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    sharing_enabled: bool = True
    policies: PolicyConfig = Field(default_factory=PolicyConfig)
    fl: Optional[TrainConfig] = None
    injected_events: List[InjectedEvent] = Field(default_factory=list)
    local_mitigation_delay: int = Field(120, ge=1)
    remote_mitigation_delay: int = Field(15, ge=0)
    sync_interval: int = Field(50, ge=1)
    advisory_delay: Optional[int] = Field(400, ge=1)
    public_verifier: bool = True

    @model_validator(mode="after")
    def _remote_faster(self) -> "ScenarioConfig":
        if self.remote_mitigation_delay >= self.local_mitigation_delay:
            raise ValueError("remote_mitigation_delay must be below local_mitigation_delay")
        return self


def node_ids(config: ScenarioConfig) -> List[str]:
    return [
        f"org{o}/its{i}" for o, org in enumerate(config.orgs) for i in range(org.its_count)
    ]


def _indicator_errors(
    kind: IndicatorKind, value: str, tick: int, context: Optional[str] = None
) -> List[str]:
    record = CtiRecord(
        record_id=uuid.UUID(int=0),
        kind=kind,
        value=value,
        sensitivity=Sensitivity.COMMUNITY,
        source=None,
        confidence=1.0,
        observed_at=tick,
        context=context,
    )
    return validate(record)


def check_references(config: ScenarioConfig) -> ScenarioConfig:
    """Cross-field checks that need a field path in the error"""
    nodes = set(node_ids(config))
    for o, org in enumerate(config.orgs):
        if org.roles is None:
            continue
        if len(org.roles) != org.its_count:
            raise ConfigInvalid(f"orgs.{o}.roles", "needs one role list per ITS", len(org.roles))
        for i, roles in enumerate(org.roles):
            if not roles:
                raise ConfigInvalid(f"orgs.{o}.roles.{i}", "at least one role", roles)
    for index, event in enumerate(config.injected_events):
        path = f"injected_events.{index}"
        if event.tick >= config.duration:
            raise ConfigInvalid(f"{path}.tick", "must be below duration", event.tick)
        org = getattr(event, "org", None)
        if org is not None and org >= len(config.orgs):
            raise ConfigInvalid(f"{path}.org", "no such organization", org)
        its = getattr(event, "its", None)
        if its is not None and org is not None and org < len(config.orgs):
            if its >= config.orgs[org].its_count:
                raise ConfigInvalid(f"{path}.its", "no such ITS in organization", its)
            if isinstance(event, (ZeroDayDetected, IndicatorObserved)):
                if "Provider" not in config.orgs[org].roles_of(its):
                    raise ConfigInvalid(f"{path}.its", "ITS lacks the Provider role", its)
        for name in ("node", "suspect"):
            node = getattr(event, name, None)
            if node is not None and node not in nodes:
                raise ConfigInvalid(f"{path}.{name}", "unknown node id", node)
        if isinstance(event, ZeroDayDetected):
            errors = _indicator_errors(
                IndicatorKind.VULNERABILITY_ID, event.vulnerability_id, event.tick
            )
            if errors:
                raise ConfigInvalid(
                    f"{path}.vulnerability_id", "; ".join(errors), event.vulnerability_id
                )
        elif isinstance(event, IndicatorObserved):
            errors = _indicator_errors(event.kind, event.value, event.tick, event.context)
            if "malformed context" in errors:
                raise ConfigInvalid(f"{path}.context", "malformed context", event.context)
            if errors:
                raise ConfigInvalid(f"{path}.value", "; ".join(errors), event.value)
    return config


def parse_scenario(data: Dict[str, Any]) -> ScenarioConfig:
    """Validate a decoded config mapping, raising ConfigInvalid with a field path"""
    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        path = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigInvalid(path, first["msg"], first.get("input")) from e
    return check_references(config)


class MitigationRecord(BaseModel):
    org: int
    vulnerability_id: str
    detected_at: int
    mitigated_at: Optional[int]
    time_to_mitigation: int
    detected_locally: bool = False


class NodeMitigation(BaseModel):
    node: str
    vulnerability_id: str
    mitigated_at: int


class AlertRecord(BaseModel):
    node: str
    kind: str
    tick: int
    latency: int


class TimePoint(BaseModel):
    tick: int
    poisoned_active: int
    active_intel_total: int
    ledger_length: int


class RoundMetrics(BaseModel):
    round: int
    setting: str
    accuracy: float
    f1: float
    recall: float
    precision: float
    epsilon: Optional[float] = None


class TraceSummary(BaseModel):
    counts: Dict[str, int]
    max_post_gst_delay: int
    in_flight: int


class ExposureCheckResult(BaseModel):
    org: int
    item: str
    tick: int
    verified: bool


class ScenarioReport(BaseModel):
    scenario: str
    seed: int
    duration: int
    sharing_enabled: bool
    events_processed: int = 0
    node_mitigations: List[NodeMitigation] = Field(default_factory=list)
    mitigations: List[MitigationRecord] = Field(default_factory=list)
    alerts: List[AlertRecord] = Field(default_factory=list)
    poisoned_series: List[TimePoint] = Field(default_factory=list)
    final_poisoned_count: int = 0
    quarantined: int = 0
    ledger_length: int = 0
    ledger_head_root: str = ""
    ledger_chain_ok: bool = True
    public_feed: List[str] = Field(default_factory=list)
    fl_rounds: List[RoundMetrics] = Field(default_factory=list)
    secure_agg_transcripts: List[Dict[str, Any]] = Field(default_factory=list)
    exposure_checks: List[ExposureCheckResult] = Field(default_factory=list)
    segmentation_ok: bool = True
    segmentation_violations: List[str] = Field(default_factory=list)
    trace_summary: Optional[TraceSummary] = None

    def mean_time_to_mitigation(self, exclude_detecting: bool = True) -> Optional[float]:
        """Mean over orgs; by default only orgs that did not detect themselves"""
        rows = [
            m for m in self.mitigations if not (exclude_detecting and m.detected_locally)
        ]
        if not rows:
            return None
        return sum(m.time_to_mitigation for m in rows) / len(rows)

