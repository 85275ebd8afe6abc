"""
Federation of ITS nodes: detection, sanitized sharing, ingestion, alerting,
mitigation and revocation over the simulated network
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from ..core.errors import ItemAbsent, MalformedInput, RoleViolation, UnknownNode
from ..models.schemas import (
    AlertRecord,
    BehaviorConfig,
    ExposureCheck,
    ExposureCheckResult,
    IndicatorObserved,
    MitigationRecord,
    NodeCompromised,
    NodeMitigation,
    PoisonDetected,
    RoundMetrics,
    ScenarioConfig,
    ScenarioReport,
    TimePoint,
    ZeroDayDetected,
    check_references,
)
from . import exposure_proof, stix_lite
from .cti_core import (
    Audience,
    CtiRecord,
    IndicatorKind,
    SanitizationPolicy,
    Sensitivity,
    default_policy,
    new_record_id,
    record_from_dict,
    record_to_dict,
    sanitize,
    validate,
)
from .exposure_proof import InventoryCommitment
from .fl_engine import FederatedTrainer, build_datasets
from .ledger import EntryKind, Ledger
from .netsim import EventKind, NetworkSimulator, SimEvent, trace_summary

logger = logging.getLogger(__name__)

VERIFIER_ID = "public/verifier"
COORDINATOR_ID = "federation/coordinator"
PSEUDONYM_DOMAIN = b"legion-pseudonym"
DETECTION_CONFIDENCE = 0.9


class Role(str, Enum):
    PROVIDER = "Provider"
    PROCESSOR = "Processor"
    CONSUMER = "Consumer"


class BehaviorKind(str, Enum):
    HONEST = "Honest"
    SEMI_HONEST = "SemiHonest"
    MALICIOUS = "Malicious"


@dataclass(frozen=True)
class Behavior:
    kind: BehaviorKind = BehaviorKind.HONEST
    poison_scale: float = 1.0
    false_intel_rate: float = 0.0

    @classmethod
    def from_config(cls, cfg: BehaviorConfig) -> "Behavior":
        return cls(
            kind=BehaviorKind(cfg.kind),
            poison_scale=cfg.poison_scale,
            false_intel_rate=cfg.false_intel_rate,
        )

    @property
    def is_malicious(self) -> bool:
        return self.kind == BehaviorKind.MALICIOUS


ALL_ROLES = frozenset(Role)


@dataclass
class NodeState:
    node_id: str
    org_id: Optional[int]
    roles: frozenset = ALL_ROLES
    behavior: Behavior = field(default_factory=Behavior)
    subscriptions: frozenset = frozenset(IndicatorKind)
    local_records: List[CtiRecord] = field(default_factory=list)
    active_intel: Set[bytes] = field(default_factory=set)
    # vulnerability id -> tick the mitigation took effect
    mitigated: Dict[str, int] = field(default_factory=dict)
    seen: Set[bytes] = field(default_factory=set)
    revoked: Set[bytes] = field(default_factory=set)
    ledger_cursor: int = 0
    # everything a semi-honest node kept from what it received
    observed: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def author(self) -> bytes:
        return author_digest(self.node_id)

    def has_role(self, role: Role) -> bool:
        return role in self.roles

    @property
    def takes_intel(self) -> bool:
        return self.has_role(Role.CONSUMER) or self.has_role(Role.PROCESSOR)


def author_digest(name: str) -> bytes:
    return hashlib.sha256(name.encode("utf-8")).digest()


def org_name(org: int) -> str:
    return f"org{org}"


def encode_message(message: Mapping[str, Any]) -> bytes:
    return json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_message(payload: bytes) -> Dict[str, Any]:
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedInput(f"undecodable message: {e}") from e
    if not isinstance(message, dict) or "type" not in message:
        raise MalformedInput("message without a type")
    return message


def fabricate_value(kind: IndicatorKind, rng: np.random.Generator) -> str:
    """Plausible but false indicator value of the given kind"""
    n = int(rng.integers(0, 10_000))
    if kind == IndicatorKind.IP_INDICATOR:
        return f"203.0.113.{n % 256}"
    if kind == IndicatorKind.FILE_HASH_INDICATOR:
        return bytes(rng.bytes(32)).hex()
    if kind == IndicatorKind.TECHNIQUE_ID:
        return f"T{1000 + n % 9000}"
    if kind == IndicatorKind.VULNERABILITY_ID:
        return f"CVE-2099-{10000 + n}"
    return f"fabricated-{n:04d}"


def audit_segmentation(
    trace: Sequence[SimEvent],
    payload_of: Callable[[int], bytes],
    org_of: Mapping[str, Optional[int]],
) -> List[str]:
    """Every cross-org intel message must carry neither an Internal record
    nor a source that was not pseudonymized or redacted"""
    violations = []
    for event in trace:
        if event.kind != EventKind.SEND:
            continue
        if org_of.get(event.src) == org_of.get(event.dst):
            continue
        try:
            message = decode_message(payload_of(event.msg_id))
        except MalformedInput:
            continue
        if message["type"] != "intel":
            continue
        record = message["record"]
        where = f"msg {event.msg_id} {event.src}->{event.dst}"
        if record.get("sensitivity") == Sensitivity.INTERNAL.value:
            violations.append(f"{where}: internal record crossed org boundary")
        sanitized = record.get("sanitized_fields", [])
        if record.get("source") is not None and "source" not in sanitized:
            violations.append(f"{where}: raw source token crossed org boundary")
    return violations


@dataclass
class _Detection:
    tick: int
    orgs: Set[int] = field(default_factory=set)


@dataclass
class _PendingCheck:
    org: int
    item: str
    tick: int
    nonce: bytes
    verified: bool = False


class Federation:
    """Nodes, shared ledger and network for one scenario run"""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.sim = NetworkSimulator(config.network, seed=config.seed)
        self.ledger = Ledger()
        self.pseudonym_key = hashlib.sha256(
            PSEUDONYM_DOMAIN + struct.pack("<q", config.seed)
        ).digest()
        self.policies: Dict[Audience, SanitizationPolicy] = {
            audience: default_policy(
                audience, self.pseudonym_key, config.policies.overrides_for(audience)
            )
            for audience in Audience
        }
        self.nodes: Dict[str, NodeState] = {}
        self._rngs: Dict[str, np.random.Generator] = {}
        self.alerts: List[AlertRecord] = []
        self.quarantined = 0
        self.poisoned: Set[bytes] = set()
        # published digest -> unsanitized record, for the public feed
        self.published_records: Dict[bytes, CtiRecord] = {}
        self.authored: Dict[str, List[bytes]] = {}
        # Internal records never reach the ledger; their digests are withdrawn inside the org
        self.intra_authored: Dict[str, List[bytes]] = {}
        self.detections: Dict[str, _Detection] = {}
        self.series: List[TimePoint] = []
        self.fl_rounds: List[RoundMetrics] = []
        self.transcripts: List[Dict[str, Any]] = []
        self.checks: List[_PendingCheck] = []
        # org -> (items, salts, commitment)
        self.commitments: Dict[int, Tuple[List[bytes], List[bytes], InventoryCommitment]] = {}
        self.trainer: Optional[FederatedTrainer] = None
        self._build_nodes()

    # setup

    def _build_nodes(self) -> None:
        for o, org in enumerate(self.config.orgs):
            for i in range(org.its_count):
                self._add_node(
                    NodeState(
                        node_id=f"org{o}/its{i}",
                        org_id=o,
                        roles=frozenset(Role(name) for name in org.roles_of(i)),
                        subscriptions=frozenset(org.subscriptions),
                    )
                )
        if self.config.public_verifier:
            self._add_node(
                NodeState(node_id=VERIFIER_ID, org_id=None, roles=frozenset({Role.CONSUMER}))
            )
        self.sim.register(COORDINATOR_ID, self._on_event)

    def _add_node(self, node: NodeState) -> None:
        index = len(self.nodes)
        self.nodes[node.node_id] = node
        self._rngs[node.node_id] = np.random.default_rng(
            np.random.SeedSequence([self.config.seed, 1, index])
        )
        self.sim.register(node.node_id, self._on_event)

    @property
    def org_of(self) -> Dict[str, Optional[int]]:
        mapping = {node_id: node.org_id for node_id, node in self.nodes.items()}
        mapping[COORDINATOR_ID] = None
        return mapping

    def node(self, node_id: str) -> NodeState:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"node {node_id} is not part of the federation") from None

    def org_nodes(self, org: int) -> List[NodeState]:
        return [n for n in self.nodes.values() if n.org_id == org]

    def honest_nodes(self) -> List[NodeState]:
        return [
            n
            for n in self.nodes.values()
            if n.org_id is not None and not n.behavior.is_malicious
        ]

    def setup(self) -> None:
        """Anchor inventory commitments and schedule every timer"""
        cfg = self.config
        for o, org in enumerate(cfg.orgs):
            if org.inventory:
                self._commit_inventory(o, [item.encode("utf-8") for item in org.inventory])
        for index, event in enumerate(cfg.injected_events):
            self._schedule_injected(index, event)
        for node_id, node in self.nodes.items():
            if node.org_id is not None and cfg.sync_interval < cfg.duration:
                self.sim.schedule_timer(node_id, cfg.sync_interval, "sync")
        self.sim.schedule_timer(COORDINATOR_ID, 0, "sample")
        if cfg.fl is not None:
            fl_cfg = cfg.fl.model_copy(update={"seed": cfg.seed})
            train, test = build_datasets(fl_cfg.data, fl_cfg.seed)
            self.trainer = FederatedTrainer(train, test, fl_cfg)
            for r in range(fl_cfg.rounds):
                tick = fl_cfg.start_tick + r * fl_cfg.round_interval
                if tick < cfg.duration:
                    self.sim.schedule_timer(COORDINATOR_ID, tick, "fl_round")

    def _commit_inventory(self, org: int, items: List[bytes]) -> None:
        salts = exposure_proof.generate_salts(
            len(items), np.random.SeedSequence([self.config.seed, 2, org])
        )
        owner = author_digest(org_name(org))
        commitment = exposure_proof.commit(items, salts, owner)
        exposure_proof.anchor(commitment, self.ledger, 0)
        self.commitments[org] = (items, salts, commitment)
        logger.info(f"🔒 Anchored inventory commitment for {org_name(org)} ({len(items)} items)")

    def _schedule_injected(self, index: int, event: Any) -> None:
        if isinstance(event, (ZeroDayDetected, IndicatorObserved)):
            target = f"org{event.org}/its{event.its}"
        elif isinstance(event, NodeCompromised):
            target = event.node
        elif isinstance(event, PoisonDetected):
            target = f"org{event.org}/its0"
        elif isinstance(event, ExposureCheck):
            if not self.config.public_verifier:
                logger.warning(f"⚠️ Exposure check {index} skipped, no public verifier")
                return
            target = VERIFIER_ID
        else:
            raise TypeError(f"unsupported injected event {type(event).__name__}")
        self.sim.schedule_timer(target, event.tick, event.type, index)

    # dispatch

    def _on_event(self, sim: NetworkSimulator, event: SimEvent, payload: Any) -> None:
        if event.kind == EventKind.TIMER_FIRE:
            self._on_timer(event.dst, event.tag, event.tick, payload)
        elif event.kind == EventKind.DELIVER:
            self._on_message(event.dst, event.src, event.tick, payload)

    def _on_timer(self, node_id: str, tag: str, tick: int, data: Any) -> None:
        if node_id == COORDINATOR_ID:
            if tag == "sample":
                self._sample(tick)
            elif tag == "fl_round":
                self._run_fl_round(tick)
            return
        node = self.nodes[node_id]
        if tag == "mitigate":
            self._mitigate(node, data, tick)
        elif tag == "sync":
            self.sync(node_id)
            next_tick = tick + self.config.sync_interval
            if next_tick < self.config.duration:
                self.sim.schedule_timer(node_id, next_tick, "sync")
        elif tag == "ZeroDayDetected":
            event = self.config.injected_events[data]
            self.on_detect(node_id, event.vulnerability_id, tick)
        elif tag == "IndicatorObserved":
            self._observe(node, self.config.injected_events[data], tick)
        elif tag == "NodeCompromised":
            event = self.config.injected_events[data]
            node.behavior = Behavior.from_config(event.behavior)
            logger.info(f"⚠️ {node_id} now behaves {node.behavior.kind.value} at tick {tick}")
        elif tag == "PoisonDetected":
            event = self.config.injected_events[data]
            self.on_poison_suspect(event.org, event.suspect, tick)
        elif tag == "ExposureCheck":
            self._start_exposure_check(data, tick)

    def _on_message(self, node_id: str, src: str, tick: int, payload: bytes) -> None:
        node = self.nodes[node_id]
        try:
            message = decode_message(payload)
        except MalformedInput as e:
            self.quarantined += 1
            logger.warning(f"⚠️ {node_id} quarantined undecodable message from {src}: {e}")
            return
        kind = message["type"]
        if kind == "intel":
            try:
                record = record_from_dict(message["record"])
                digest = bytes.fromhex(message["digest"])
                origin_tick = int(message["origin_tick"])
                audience = Audience(message.get("audience", Audience.INTER_ORG.value))
            except (KeyError, TypeError, ValueError) as e:
                self.quarantined += 1
                logger.warning(f"⚠️ {node_id} quarantined malformed intel from {src}: {e}")
                return
            self.on_ingest(
                node_id,
                record,
                digest,
                origin_tick=origin_tick,
                tick=tick,
                origin=message.get("origin", src),
                audience=audience,
                payload=payload,
            )
        elif kind == "retract":
            self._apply_retraction(node, bytes.fromhex(message["digest"]))
        elif kind == "withdraw":
            self._apply_withdrawal(node, src, bytes.fromhex(message["digest"]))
        elif kind == "challenge":
            self._answer_challenge(node, src, message, tick)
        elif kind in ("proof", "absent"):
            self._finish_exposure_check(message)

    # sharing

    def _send(self, src: str, dst: str, message: Mapping[str, Any], tick: int) -> None:
        self.sim.send(src, dst, encode_message(message), now=tick)

    def _record_for(
        self,
        node: NodeState,
        kind: IndicatorKind,
        value: str,
        tick: int,
        sensitivity: Sensitivity = Sensitivity.COMMUNITY,
        context: Optional[str] = None,
    ) -> CtiRecord:
        return CtiRecord(
            record_id=new_record_id(self._rngs[node.node_id]),
            kind=kind,
            value=value,
            sensitivity=sensitivity,
            source=node.node_id.encode("utf-8"),
            confidence=DETECTION_CONFIDENCE,
            observed_at=tick,
            context=context,
        )

    def on_detect(self, node_id: str, vulnerability_id: str, tick: int) -> int:
        """Local zero-day detection; returns the number of messages sent"""
        node = self.node(node_id)
        if not node.has_role(Role.PROVIDER):
            raise RoleViolation(f"{node_id} is not a provider")
        detection = self.detections.setdefault(vulnerability_id, _Detection(tick=tick))
        first_detection = not detection.orgs
        detection.orgs.add(node.org_id)
        logger.info(f"🚀 {node_id} detected {vulnerability_id} at tick {tick}")

        self.sim.schedule_timer(
            node_id, tick + self.config.local_mitigation_delay, "mitigate", vulnerability_id
        )
        if first_detection and self.config.advisory_delay is not None:
            at = tick + self.config.advisory_delay + self.config.remote_mitigation_delay
            for other_id, other in self.nodes.items():
                if other.org_id is not None:
                    self.sim.schedule_timer(other_id, at, "mitigate", vulnerability_id)

        record = self._record_for(
            node,
            IndicatorKind.VULNERABILITY_ID,
            vulnerability_id,
            tick,
            context=f"detected on {node_id}",
        )
        return self.share(node, record, tick)

    def _observe(self, node: NodeState, event: IndicatorObserved, tick: int) -> None:
        record = self._record_for(
            node, event.kind, event.value, tick, event.sensitivity, event.context
        )
        errors = validate(record)
        if errors:
            logger.warning(f"⚠️ {node.node_id} refused to emit invalid record: {errors}")
            return
        self.share(node, record, tick)

    def share(self, node: NodeState, record: CtiRecord, tick: int) -> int:
        """Sanitize per audience, publish, and send to peers. Honest and
        semi-honest nodes only emit records that pass validation."""
        if not node.has_role(Role.PROVIDER):
            raise RoleViolation(f"{node.node_id} is not a provider")
        behavior = node.behavior
        rng = self._rngs[node.node_id]
        if behavior.is_malicious and rng.random() < behavior.false_intel_rate:
            fake = fabricate_value(record.kind, rng)
            logger.debug(f"{node.node_id} fabricates {fake} in place of {record.value}")
            record = replace(record, value=fake)
        node.local_records.append(record)

        internal = record.sensitivity == Sensitivity.INTERNAL
        intra = sanitize(record, self.policies[Audience.INTRA_ORG])
        if internal:
            digest = intra.digest()
            inter = None
        else:
            inter = sanitize(record, self.policies[Audience.INTER_ORG])
            digest = inter.digest()
        node.seen.add(digest)
        node.active_intel.add(digest)
        if behavior.is_malicious:
            self.poisoned.add(digest)

        if not self.config.sharing_enabled:
            return 0
        if inter is not None:
            self.ledger.publish(digest, node.author, tick)
            self.published_records[digest] = record
            self.authored.setdefault(node.node_id, []).append(digest)
        else:
            self.intra_authored.setdefault(node.node_id, []).append(digest)

        sent = 0
        for peer_id, peer in self.nodes.items():
            if peer_id == node.node_id or peer.org_id is None or not peer.takes_intel:
                continue
            if peer.org_id == node.org_id:
                shared, audience = intra, Audience.INTRA_ORG
            elif inter is not None:
                shared, audience = inter, Audience.INTER_ORG
            else:
                continue
            message = {
                "type": "intel",
                "record": record_to_dict(shared),
                "digest": digest.hex(),
                "origin": node.node_id,
                "origin_tick": tick,
                "audience": audience.value,
            }
            self._send(node.node_id, peer_id, message, tick)
            sent += 1
        logger.debug(f"{node.node_id} shared {record.kind.value} with {sent} peers")
        return sent

    def on_ingest(
        self,
        node_id: str,
        record: CtiRecord,
        digest: bytes,
        origin_tick: int,
        tick: int,
        origin: Optional[str] = None,
        audience: Audience = Audience.INTER_ORG,
        payload: Optional[bytes] = None,
    ) -> bool:
        """Validate and absorb a delivered record; True when it entered active_intel.

        Only consumers alert, schedule mitigation and keep the record;
        a processor-only node validates and relays.
        """
        node = self.node(node_id)
        if not node.takes_intel:
            raise RoleViolation(f"{node_id} neither consumes nor processes intel")
        if digest in node.seen:
            return False
        node.seen.add(digest)
        if node.behavior.kind == BehaviorKind.SEMI_HONEST:
            node.observed.append(record_to_dict(record))

        errors = validate(record, relaxed=True)
        if audience == Audience.INTER_ORG:
            if record.digest() != digest:
                errors.append("digest mismatch")
            elif not self.ledger.is_published(digest):
                errors.append("digest not published")
        if errors:
            self.quarantined += 1
            logger.warning(f"⚠️ {node_id} quarantined record {record.record_id}: {errors}")
            return False

        self.sync(node_id)
        accepted = node.has_role(Role.CONSUMER) and digest not in node.revoked
        if accepted:
            self._absorb(node, record, digest, origin_tick, tick)

        origin_node = self.nodes.get(origin) if origin else None
        origin_org = origin_node.org_id if origin_node is not None else None
        if (
            payload is not None
            and origin_org != node.org_id
            and node.has_role(Role.PROCESSOR)
        ):
            for peer in self.org_nodes(node.org_id):
                if peer.node_id != node_id and peer.takes_intel:
                    self.sim.send(node_id, peer.node_id, payload, now=tick)
        return accepted

    def _absorb(
        self, node: NodeState, record: CtiRecord, digest: bytes, origin_tick: int, tick: int
    ) -> None:
        node_id = node.node_id
        node.active_intel.add(digest)
        if record.kind in node.subscriptions:
            self.alerts.append(
                AlertRecord(
                    node=node_id, kind=record.kind.value, tick=tick, latency=tick - origin_tick
                )
            )
        if (
            record.kind == IndicatorKind.VULNERABILITY_ID
            and record.value
            and record.value not in node.mitigated
        ):
            self.sim.schedule_timer(
                node_id, tick + self.config.remote_mitigation_delay, "mitigate", record.value
            )

    def _mitigate(self, node: NodeState, vulnerability_id: str, tick: int) -> None:
        if vulnerability_id in node.mitigated:
            return
        node.mitigated[vulnerability_id] = tick
        logger.debug(f"{node.node_id} mitigated {vulnerability_id} at tick {tick}")

    # revocation

    def sync(self, node_id: str) -> None:
        """Catch the node's ledger replica up and drop revoked intel"""
        node = self.nodes[node_id]
        for entry in self.ledger.entries[node.ledger_cursor :]:
            if entry.entry_kind == EntryKind.REVOKE:
                node.revoked.add(entry.payload_digest)
                node.active_intel.discard(entry.payload_digest)
        node.ledger_cursor = len(self.ledger)

    def _apply_retraction(self, node: NodeState, digest: bytes) -> None:
        if not self.ledger.is_revoked(digest):
            logger.warning(f"⚠️ {node.node_id} ignored retraction not backed by the ledger")
            return
        node.revoked.add(digest)
        node.active_intel.discard(digest)

    def on_poison_detected(self, org: int, payload_digest: bytes, tick: int) -> None:
        """Revoke a published digest and broadcast the retraction notice"""
        actor = self.org_nodes(org)[0]
        self.ledger.revoke(payload_digest, actor.author, tick)
        logger.info(f"🔒 {org_name(org)} revoked {payload_digest.hex()[:16]} at tick {tick}")
        self._apply_retraction(actor, payload_digest)
        message = {"type": "retract", "digest": payload_digest.hex()}
        for peer_id, peer in self.nodes.items():
            if peer_id != actor.node_id and peer.org_id is not None:
                self._send(actor.node_id, peer_id, message, tick)

    def _apply_withdrawal(self, node: NodeState, src: str, digest: bytes) -> None:
        if self.org_of.get(src) != node.org_id:
            logger.warning(f"⚠️ {node.node_id} ignored withdrawal from outside its org")
            return
        node.revoked.add(digest)
        node.active_intel.discard(digest)

    def withdraw_internal(self, suspect: str, tick: int) -> int:
        """Drop the suspect's Internal records from its org-mates.

        They never reach the ledger, so an honest org-mate of the suspect
        removes them and tells the rest of the org.
        """
        pending = self.intra_authored.pop(suspect, [])
        if not pending:
            return 0
        origin = self.node(suspect)
        mates = [
            n
            for n in self.org_nodes(origin.org_id)
            if n.node_id != suspect and not n.behavior.is_malicious
        ]
        if not mates:
            logger.warning(
                f"⚠️ No honest node left in {org_name(origin.org_id)} to withdraw intel"
            )
            return 0
        actor = mates[0]
        for digest in pending:
            actor.revoked.add(digest)
            actor.active_intel.discard(digest)
            message = {"type": "withdraw", "digest": digest.hex()}
            for peer in self.org_nodes(origin.org_id):
                if peer.node_id != actor.node_id:
                    self._send(actor.node_id, peer.node_id, message, tick)
        logger.info(f"🔒 {actor.node_id} withdrew {len(pending)} internal records of {suspect}")
        return len(pending)

    def on_poison_suspect(self, org: int, suspect: str, tick: int) -> int:
        """Revoke every still-active digest the suspect published and
        withdraw its Internal records inside its own org"""
        targets = [
            digest
            for digest in self.authored.get(suspect, [])
            if not self.ledger.is_revoked(digest)
        ]
        for digest in targets:
            self.on_poison_detected(org, digest, tick)
        withdrawn = self.withdraw_internal(suspect, tick)
        if not targets and not withdrawn:
            logger.warning(f"⚠️ Nothing shared by {suspect} to revoke")
        return len(targets) + withdrawn

    # public access

    def _start_exposure_check(self, index: int, tick: int) -> None:
        event = self.config.injected_events[index]
        nonce = exposure_proof.challenge(np.random.SeedSequence([self.config.seed, 3, index]))
        self.checks.append(_PendingCheck(org=event.org, item=event.item, tick=tick, nonce=nonce))
        message = {
            "type": "challenge",
            "check": len(self.checks) - 1,
            "item": event.item,
            "nonce": nonce.hex(),
        }
        self._send(VERIFIER_ID, f"org{event.org}/its0", message, tick)

    def _answer_challenge(
        self, node: NodeState, src: str, message: Dict[str, Any], tick: int
    ) -> None:
        committed = self.commitments.get(node.org_id)
        reply: Dict[str, Any] = {"type": "absent", "check": message["check"]}
        if committed is not None:
            items, salts, commitment = committed
            try:
                proof = exposure_proof.prove_exposure(
                    items,
                    salts,
                    message["item"].encode("utf-8"),
                    commitment,
                    bytes.fromhex(message["nonce"]),
                )
                reply = {
                    "type": "proof",
                    "check": message["check"],
                    "commitment": exposure_proof.commitment_to_hex(commitment),
                    "proof": exposure_proof.serialize_proof(proof).hex(),
                }
            except ItemAbsent:
                pass
        self._send(node.node_id, src, reply, tick)

    def _finish_exposure_check(self, message: Dict[str, Any]) -> None:
        check = self.checks[int(message["check"])]
        if message["type"] != "proof":
            return
        try:
            commitment = exposure_proof.commitment_from_hex(message["commitment"])
            proof = exposure_proof.deserialize_proof(bytes.fromhex(message["proof"]))
        except (MalformedInput, ValueError) as e:
            logger.warning(f"⚠️ Verifier rejected undecodable proof: {e}")
            return
        owner = author_digest(org_name(check.org))
        anchored = any(
            entry.entry_kind == EntryKind.COMMITMENT_ANCHOR
            and entry.payload_digest == commitment.root
            and entry.author == owner
            for entry in self.ledger
        )
        check.verified = anchored and exposure_proof.verify_exposure(
            commitment, check.item.encode("utf-8"), proof, check.nonce
        )
        logger.info(f"✅ Exposure check {check.item} for {org_name(check.org)}: {check.verified}")

    # federated learning

    def _run_fl_round(self, tick: int) -> None:
        trainer = self.trainer
        if trainer is None or trainer.round >= trainer.cfg.rounds:
            return
        trainer.malicious = {
            node.org_id: node.behavior.poison_scale
            for node in self.nodes.values()
            if node.org_id is not None
            and node.org_id < trainer.cfg.clients
            and node.behavior.is_malicious
        }
        result = trainer.run_round()
        m = result.metrics
        self.fl_rounds.append(
            RoundMetrics(
                round=result.round,
                setting="dp" if trainer.cfg.dp is not None else "nodp",
                accuracy=m.accuracy,
                f1=m.f1,
                recall=m.recall,
                precision=m.precision,
                epsilon=result.epsilon,
            )
        )
        if result.transcript is not None:
            self.transcripts.append(result.transcript.to_dict())

    # reporting

    def poisoned_active(self) -> int:
        return sum(len(n.active_intel & self.poisoned) for n in self.honest_nodes())

    def _sample(self, tick: int) -> None:
        self.series.append(
            TimePoint(
                tick=tick,
                poisoned_active=self.poisoned_active(),
                active_intel_total=sum(len(n.active_intel) for n in self.nodes.values()),
                ledger_length=len(self.ledger),
            )
        )
        next_tick = tick + self.config.sync_interval
        if next_tick <= self.config.duration:
            self.sim.schedule_timer(COORDINATOR_ID, next_tick, "sample")

    def public_feed(self) -> List[str]:
        """STIX-lite lines of active published records, sanitized for the public"""
        lines = []
        policy = self.policies[Audience.PUBLIC]
        for digest in self.ledger.active_digests():
            record = self.published_records.get(digest)
            if record is None or record.sensitivity not in (Sensitivity.PUBLIC, Sensitivity.COMMUNITY):
                continue
            lines.append(stix_lite.format_record(sanitize(record, policy)))
        return lines

    def mitigation_records(self) -> List[MitigationRecord]:
        duration = self.config.duration
        rows = []
        for vulnerability_id in sorted(self.detections):
            detection = self.detections[vulnerability_id]
            for o in range(len(self.config.orgs)):
                ticks = [n.mitigated.get(vulnerability_id) for n in self.org_nodes(o)]
                done = all(t is not None for t in ticks)
                mitigated_at = max(ticks) if done else None
                rows.append(
                    MitigationRecord(
                        org=o,
                        vulnerability_id=vulnerability_id,
                        detected_at=detection.tick,
                        mitigated_at=mitigated_at,
                        time_to_mitigation=(
                            mitigated_at - detection.tick if done else duration
                        ),
                        detected_locally=o in detection.orgs,
                    )
                )
        return rows

    def report(self) -> ScenarioReport:
        cfg = self.config
        trace = self.sim.trace
        violations = audit_segmentation(trace, self.sim.payload_of, self.org_of)
        node_mitigations = [
            NodeMitigation(node=node_id, vulnerability_id=vuln, mitigated_at=at)
            for node_id, node in sorted(self.nodes.items())
            for vuln, at in sorted(node.mitigated.items())
        ]
        return ScenarioReport(
            scenario=cfg.name,
            seed=cfg.seed,
            duration=cfg.duration,
            sharing_enabled=cfg.sharing_enabled,
            events_processed=len(trace),
            node_mitigations=node_mitigations,
            mitigations=self.mitigation_records(),
            alerts=self.alerts,
            poisoned_series=self.series,
            final_poisoned_count=self.poisoned_active(),
            quarantined=self.quarantined,
            ledger_length=len(self.ledger),
            ledger_head_root=self.ledger.head_root().hex(),
            ledger_chain_ok=self.ledger.verify_chain(),
            public_feed=self.public_feed(),
            fl_rounds=self.fl_rounds,
            secure_agg_transcripts=self.transcripts,
            exposure_checks=[
                ExposureCheckResult(org=c.org, item=c.item, tick=c.tick, verified=c.verified)
                for c in self.checks
            ],
            segmentation_ok=not violations,
            segmentation_violations=violations,
            trace_summary=trace_summary(trace, cfg.network.gst),
        )

    def run(self) -> ScenarioReport:
        self.setup()
        self.sim.run_until(self.config.duration)
        return self.report()


def simulate(config: ScenarioConfig) -> Tuple[ScenarioReport, List[SimEvent]]:
    """Run a scenario and keep the network trace alongside the report"""
    check_references(config)
    if config.duration == 0:
        empty = ScenarioReport(
            scenario=config.name,
            seed=config.seed,
            duration=0,
            sharing_enabled=config.sharing_enabled,
        )
        return empty, []
    logger.info(f"🚀 Running scenario {config.name} seed={config.seed}")
    federation = Federation(config)
    report = federation.run()
    logger.info(
        f"✅ Scenario {config.name} finished: {report.events_processed} events, "
        f"ledger {report.ledger_length} entries"
    )
    return report, list(federation.sim.trace)


def run_scenario(config: ScenarioConfig) -> ScenarioReport:
    """Replay a scenario to its duration; deterministic in config.seed"""
    return simulate(config)[0]
