"""
Canonical CTI records, their byte encoding, and the sanitization pipeline
applied before a record leaves its origin.
"""

import hashlib
import hmac
import ipaddress
import logging
import math
import re
import struct
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Mapping, Optional

from ..core.errors import PolicyMismatch

logger = logging.getLogger(__name__)


class IndicatorKind(str, Enum):
    IP_INDICATOR = "IpIndicator"
    FILE_HASH_INDICATOR = "FileHashIndicator"
    MALWARE_SIGNATURE = "MalwareSignature"
    TECHNIQUE_ID = "TechniqueId"
    VULNERABILITY_ID = "VulnerabilityId"


class Sensitivity(str, Enum):
    PUBLIC = "Public"
    COMMUNITY = "Community"
    RESTRICTED = "Restricted"
    INTERNAL = "Internal"


class Audience(str, Enum):
    INTRA_ORG = "IntraOrg"
    INTER_ORG = "InterOrg"
    PUBLIC = "Public"


class FieldAction(str, Enum):
    KEEP = "Keep"
    REDACT = "Redact"
    PSEUDONYMIZE = "Pseudonymize"
    GENERALIZE_IP_TO_24 = "GeneralizeIpTo24"


# Fields a sanitization policy must cover, with the actions each accepts.
POLICY_FIELDS: Dict[str, FrozenSet[FieldAction]] = {
    "record_id": frozenset({FieldAction.KEEP}),
    "kind": frozenset({FieldAction.KEEP}),
    "value": frozenset(FieldAction),
    "sensitivity": frozenset({FieldAction.KEEP}),
    "source": frozenset(
        {FieldAction.KEEP, FieldAction.REDACT, FieldAction.PSEUDONYMIZE}
    ),
    "confidence": frozenset({FieldAction.KEEP}),
    "observed_at": frozenset({FieldAction.KEEP}),
    "context": frozenset(
        {FieldAction.KEEP, FieldAction.REDACT, FieldAction.PSEUDONYMIZE}
    ),
}

IDENTIFYING_FIELDS = ("source", "context")

TOKEN_BYTES = 32

_FILE_HASH_RE = re.compile(r"^(?:[0-9a-f]{32}|[0-9a-f]{40}|[0-9a-f]{64})$")
_TECHNIQUE_RE = re.compile(r"^T\d{4}(?:\.\d{3})?$")
_CVE_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")
_TOKEN_HEX_RE = re.compile(r"^[0-9a-f]{64}$")
_FORBIDDEN_CHARS = ("|", "\n", "\r")


@dataclass(frozen=True)
class CtiRecord:
    """One unit of threat intelligence.

    ``sanitized_fields`` names the fields already transformed by a policy;
    sanitize leaves those untouched, which keeps it idempotent.
    """

    record_id: uuid.UUID
    kind: IndicatorKind
    value: str
    sensitivity: Sensitivity
    source: Optional[bytes]
    confidence: float
    observed_at: int
    context: Optional[str] = None
    sanitized_fields: FrozenSet[str] = field(default_factory=frozenset)

    def digest(self) -> bytes:
        """SHA-256 over the canonical encoding"""
        return hashlib.sha256(canonical_encode(self)).digest()


@dataclass(frozen=True)
class SanitizationPolicy:
    audience: Audience
    field_rules: Mapping[str, FieldAction]
    pseudonym_key: bytes

    def __post_init__(self) -> None:
        check_policy(self)

    def action_for(self, field_name: str) -> FieldAction:
        return self.field_rules[field_name]


def is_identifying(field_name: str) -> bool:
    return field_name in IDENTIFYING_FIELDS


def new_record_id(rng) -> uuid.UUID:
    """128-bit identifier drawn from a seeded numpy Generator"""
    return uuid.UUID(bytes=bytes(rng.bytes(16)))


def check_policy(policy: SanitizationPolicy) -> None:
    """Raise PolicyMismatch unless every schema field has exactly one usable rule"""
    rules = dict(policy.field_rules)
    unknown = sorted(set(rules) - set(POLICY_FIELDS))
    if unknown:
        raise PolicyMismatch(f"rules reference fields absent from the schema: {unknown}")
    missing = sorted(set(POLICY_FIELDS) - set(rules))
    if missing:
        raise PolicyMismatch(f"no rule for fields: {missing}")
    for name, action in rules.items():
        if FieldAction(action) not in POLICY_FIELDS[name]:
            raise PolicyMismatch(f"action {FieldAction(action).value} not applicable to {name}")
    if policy.audience == Audience.PUBLIC and rules["source"] == FieldAction.KEEP:
        raise PolicyMismatch("public audience must not keep source")
    if len(policy.pseudonym_key) != TOKEN_BYTES:
        raise PolicyMismatch("pseudonym key must be 32 bytes")


def default_policy(
    audience: Audience,
    pseudonym_key: bytes,
    overrides: Optional[Mapping[str, FieldAction]] = None,
) -> SanitizationPolicy:
    """Standard rule set per audience, optionally overridden per field"""
    rules = {name: FieldAction.KEEP for name in POLICY_FIELDS}
    if audience == Audience.INTER_ORG:
        rules["source"] = FieldAction.PSEUDONYMIZE
        rules["context"] = FieldAction.REDACT
    elif audience == Audience.PUBLIC:
        rules["source"] = FieldAction.REDACT
        rules["context"] = FieldAction.REDACT
        rules["value"] = FieldAction.GENERALIZE_IP_TO_24
    if overrides:
        rules.update({name: FieldAction(action) for name, action in overrides.items()})
    return SanitizationPolicy(
        audience=audience, field_rules=rules, pseudonym_key=pseudonym_key
    )


def _length_prefixed(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def _optional(data: Optional[bytes]) -> bytes:
    return b"\x00" if data is None else b"\x01" + data


def canonical_encode(record: CtiRecord) -> bytes:
    """Deterministic bytes: fields in lexicographic name order, each
    name and value length-prefixed, text as UTF-8."""
    encoded_fields = {
        "confidence": struct.pack(">d", record.confidence + 0.0),
        "context": _optional(
            record.context.encode("utf-8") if record.context is not None else None
        ),
        "kind": record.kind.value.encode("utf-8"),
        "observed_at": struct.pack(">q", record.observed_at),
        "record_id": record.record_id.bytes,
        "sanitized_fields": ",".join(sorted(record.sanitized_fields)).encode("utf-8"),
        "sensitivity": record.sensitivity.value.encode("utf-8"),
        "source": _optional(record.source),
        "value": record.value.encode("utf-8"),
    }
    out = bytearray()
    for name in sorted(encoded_fields):
        out += _length_prefixed(name.encode("ascii"))
        out += _length_prefixed(encoded_fields[name])
    return bytes(out)


def _value_errors(record: CtiRecord, relaxed: bool) -> List[str]:
    value = record.value
    if relaxed and "value" in record.sanitized_fields:
        if value == "" or _TOKEN_HEX_RE.match(value):
            return []
        if record.kind == IndicatorKind.IP_INDICATOR:
            try:
                ipaddress.IPv4Network(value, strict=True)
                return []
            except ValueError:
                pass
        elif _well_formed(record.kind, value):
            return []
        return ["malformed value"]
    if not _well_formed(record.kind, value):
        return ["malformed value"]
    return []


def _well_formed(kind: IndicatorKind, value: str) -> bool:
    if kind == IndicatorKind.IP_INDICATOR:
        try:
            ipaddress.IPv4Address(value)
        except ValueError:
            return False
        return True
    if kind == IndicatorKind.FILE_HASH_INDICATOR:
        return bool(_FILE_HASH_RE.match(value))
    if kind == IndicatorKind.TECHNIQUE_ID:
        return bool(_TECHNIQUE_RE.match(value))
    if kind == IndicatorKind.VULNERABILITY_ID:
        return bool(_CVE_RE.match(value))
    return value.isprintable()


def validate(record: CtiRecord, relaxed: bool = False) -> List[str]:
    """Return every violation; an empty list means the record is ok.

    ``relaxed`` accepts the shapes sanitize produces (redacted value,
    pseudonym tokens, /24 networks) for fields listed in sanitized_fields.
    """
    errors: List[str] = []
    value_redacted = relaxed and "value" in record.sanitized_fields
    if not record.value and not value_redacted:
        errors.append("empty value")
    elif any(ch in record.value for ch in _FORBIDDEN_CHARS):
        errors.append("malformed value")
    elif record.value:
        errors.extend(_value_errors(record, relaxed))
    if (
        isinstance(record.confidence, bool)
        or not math.isfinite(record.confidence)
        or not 0.0 <= record.confidence <= 1.0
    ):
        errors.append("confidence out of range")
    if record.observed_at < 0:
        errors.append("observed_at negative")
    if record.source is not None and len(record.source) == 0:
        errors.append("empty source")
    if record.context is not None and any(ch in record.context for ch in _FORBIDDEN_CHARS):
        errors.append("malformed context")
    unknown = record.sanitized_fields - set(POLICY_FIELDS)
    if unknown:
        errors.append(f"unknown sanitized fields {sorted(unknown)}")
    return errors


def pseudonymize(value: bytes, key: bytes) -> bytes:
    """HMAC-SHA-256 token: deterministic per (value, key), reveals no value bytes"""
    return hmac.new(key, value, hashlib.sha256).digest()


def _generalize_ip(value: str) -> str:
    network = ipaddress.IPv4Network(f"{value}/24", strict=False)
    return str(network)


def sanitize(record: CtiRecord, policy: SanitizationPolicy) -> CtiRecord:
    """Apply the policy's field rules; fields already sanitized are left alone"""
    check_policy(policy)
    if record.sensitivity == Sensitivity.INTERNAL and policy.audience != Audience.INTRA_ORG:
        kept = [
            name
            for name in POLICY_FIELDS
            if is_identifying(name)
            and policy.action_for(name) == FieldAction.KEEP
            and name not in record.sanitized_fields
        ]
        if kept:
            raise PolicyMismatch(
                f"internal record cannot leave the organization with {kept} kept"
            )

    changes: Dict[str, Any] = {}
    touched = set(record.sanitized_fields)
    for name in sorted(POLICY_FIELDS):
        action = policy.action_for(name)
        if action == FieldAction.KEEP or name in record.sanitized_fields:
            continue
        current = getattr(record, name)
        if action == FieldAction.REDACT:
            changes[name] = "" if name == "value" else None
        elif action == FieldAction.PSEUDONYMIZE:
            if current is not None:
                raw = current if isinstance(current, bytes) else current.encode("utf-8")
                token = pseudonymize(raw, policy.pseudonym_key)
                changes[name] = token if name == "source" else token.hex()
        elif action == FieldAction.GENERALIZE_IP_TO_24:
            if record.kind == IndicatorKind.IP_INDICATOR:
                changes[name] = _generalize_ip(current)
        touched.add(name)

    sanitized = replace(record, sanitized_fields=frozenset(touched), **changes)
    errors = validate(sanitized, relaxed=True)
    if errors:
        raise PolicyMismatch(f"sanitized record fails validation: {errors}")
    return sanitized


def record_to_dict(record: CtiRecord) -> Dict[str, Any]:
    """JSON-ready view used on the simulated wire and in reports"""
    return {
        "record_id": record.record_id.hex,
        "kind": record.kind.value,
        "value": record.value,
        "sensitivity": record.sensitivity.value,
        "source": record.source.hex() if record.source is not None else None,
        "confidence": record.confidence,
        "observed_at": record.observed_at,
        "context": record.context,
        "sanitized_fields": sorted(record.sanitized_fields),
    }


def record_from_dict(data: Mapping[str, Any]) -> CtiRecord:
    return CtiRecord(
        record_id=uuid.UUID(hex=data["record_id"]),
        kind=IndicatorKind(data["kind"]),
        value=data["value"],
        sensitivity=Sensitivity(data["sensitivity"]),
        source=bytes.fromhex(data["source"]) if data.get("source") is not None else None,
        confidence=float(data["confidence"]),
        observed_at=int(data["observed_at"]),
        context=data.get("context"),
        sanitized_fields=frozenset(data.get("sanitized_fields", ())),
    )
