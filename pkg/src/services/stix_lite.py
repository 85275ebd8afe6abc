"""
STIX-lite line format for exporting and importing CTI records
"""

import hashlib
import logging
import uuid
from pathlib import Path
from typing import Iterable, List, Union

from ..core.errors import MalformedInput
from .cti_core import CtiRecord, IndicatorKind, Sensitivity, validate

logger = logging.getLogger(__name__)

SEPARATOR = "|"
FIELD_COUNT = 6
RELAXED_FIELDS = frozenset({"value", "source", "context"})


def format_record(record: CtiRecord) -> str:
    """kind|value|sensitivity|confidence|observed_at|source_token_hex"""
    source_hex = record.source.hex() if record.source is not None else ""
    return SEPARATOR.join(
        [
            record.kind.value,
            record.value,
            record.sensitivity.value,
            repr(float(record.confidence)),
            str(record.observed_at),
            source_hex,
        ]
    )


def export_records(records: Iterable[CtiRecord]) -> str:
    lines = [format_record(record) for record in records]
    return "".join(f"{line}\n" for line in lines)


def parse_line(line: str, line_no: int = 1, strict: bool = True) -> CtiRecord:
    """Parse one line. With strict=False the value, source and context are
    treated as already sanitized, so generalized networks and tokens pass."""
    parts = line.split(SEPARATOR)
    if len(parts) != FIELD_COUNT:
        raise MalformedInput(
            f"line {line_no}: expected {FIELD_COUNT} fields, got {len(parts)}"
        )
    kind, value, sensitivity, confidence, observed_at, source_hex = parts
    try:
        record = CtiRecord(
            # Stable identifier: same line always imports to the same record.
            record_id=uuid.UUID(bytes=hashlib.sha256(line.encode("utf-8")).digest()[:16]),
            kind=IndicatorKind(kind),
            value=value,
            sensitivity=Sensitivity(sensitivity),
            source=bytes.fromhex(source_hex) if source_hex else None,
            confidence=float(confidence),
            observed_at=int(observed_at),
            sanitized_fields=frozenset() if strict else RELAXED_FIELDS,
        )
    except ValueError as e:
        raise MalformedInput(f"line {line_no}: {e}") from e
    errors = validate(record, relaxed=not strict)
    if errors:
        raise MalformedInput(f"line {line_no}: {', '.join(errors)}")
    return record


def import_records(text: str, strict: bool = True) -> List[CtiRecord]:
    """Parse LF-terminated lines; blank lines are skipped"""
    records = []
    for line_no, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        records.append(parse_line(line, line_no, strict))
    logger.debug(f"Imported {len(records)} STIX-lite records")
    return records


def write_feed(records: Iterable[CtiRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(export_records(records).encode("utf-8"))
    return path


def read_feed(path: Union[str, Path], strict: bool = True) -> List[CtiRecord]:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedInput(f"{path}: not UTF-8") from e
    return import_records(text, strict)
