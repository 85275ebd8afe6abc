"""
Tamper-evident append-only ledger: hash chain, Merkle inclusion proofs,
tombstone revocation and the on-disk codec.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

from ..core.errors import EmptyInput, IndexOutOfRange, MalformedInput, UnknownTarget

logger = logging.getLogger(__name__)

GENESIS_TAG = b"legion-ledger-v1"
GENESIS_DIGEST = hashlib.sha256(GENESIS_TAG).digest()
DIGEST_SIZE = 32

# Domain separation for leaf vs internal nodes
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

# seq u64 | prev 32 | payload 32 | kind u8 | author 32 | tick i64, little-endian
_HEADER = struct.Struct("<Q32s32sB32sq")
ENTRY_BODY_SIZE = _HEADER.size + DIGEST_SIZE
_LENGTH = struct.Struct("<I")


class EntryKind(int, Enum):
    PUBLISH = 0
    REVOKE = 1
    COMMITMENT_ANCHOR = 2


class Side(str, Enum):
    """Position of the sibling relative to the running digest"""

    LEFT = "L"
    RIGHT = "R"
    # lone node promoted unchanged at this level
    CARRY = "C"


def hash_leaf(data: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + data).digest()


def hash_children(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def _check_digest(name: str, value: bytes) -> None:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ValueError(f"{name} must be {DIGEST_SIZE} bytes")


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    prev_digest: bytes
    payload_digest: bytes
    entry_kind: EntryKind
    author: bytes
    tick: int
    entry_digest: bytes

    def header_bytes(self) -> bytes:
        return _HEADER.pack(
            self.seq,
            self.prev_digest,
            self.payload_digest,
            int(self.entry_kind),
            self.author,
            self.tick,
        )

    def compute_digest(self) -> bytes:
        return hashlib.sha256(self.header_bytes()).digest()

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.entry_digest

    @classmethod
    def from_bytes(cls, body: bytes) -> "LedgerEntry":
        if len(body) != ENTRY_BODY_SIZE:
            raise MalformedInput(
                f"entry body is {len(body)} bytes, expected {ENTRY_BODY_SIZE}"
            )
        seq, prev, payload, kind, author, tick = _HEADER.unpack(body[: _HEADER.size])
        try:
            entry_kind = EntryKind(kind)
        except ValueError as e:
            raise MalformedInput(f"unknown entry kind {kind}") from e
        return cls(
            seq=seq,
            prev_digest=prev,
            payload_digest=payload,
            entry_kind=entry_kind,
            author=author,
            tick=tick,
            entry_digest=body[_HEADER.size :],
        )


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    leaf_count: int
    path: Tuple[Tuple[bytes, Side], ...]
    root: bytes


def _next_level(level: Sequence[bytes]) -> List[bytes]:
    paired = [
        hash_children(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)
    ]
    if len(level) % 2:
        paired.append(level[-1])
    return paired


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    """Root over tagged leaf digests; an odd node is carried up unchanged"""
    if not leaves:
        raise EmptyInput("merkle_root needs at least one leaf")
    level = [hash_leaf(leaf) for leaf in leaves]
    while len(level) > 1:
        level = _next_level(level)
    return level[0]


def _expected_sides(index: int, count: int) -> List[Side]:
    sides = []
    while count > 1:
        if index % 2 == 1:
            sides.append(Side.LEFT)
        elif index == count - 1:
            sides.append(Side.CARRY)
        else:
            sides.append(Side.RIGHT)
        index //= 2
        count = (count + 1) // 2
    return sides


def prove_inclusion(leaves: Sequence[bytes], index: int) -> MerkleProof:
    if not leaves:
        raise EmptyInput("cannot prove inclusion in an empty tree")
    if not 0 <= index < len(leaves):
        raise IndexOutOfRange(f"index {index} outside 0..{len(leaves) - 1}")

    level = [hash_leaf(leaf) for leaf in leaves]
    path: List[Tuple[bytes, Side]] = []
    position = index
    while len(level) > 1:
        if position % 2 == 1:
            path.append((level[position - 1], Side.LEFT))
        elif position == len(level) - 1:
            path.append((bytes(DIGEST_SIZE), Side.CARRY))
        else:
            path.append((level[position + 1], Side.RIGHT))
        level = _next_level(level)
        position //= 2
    return MerkleProof(
        leaf_index=index, leaf_count=len(leaves), path=tuple(path), root=level[0]
    )


def verify_inclusion(proof: MerkleProof, leaf: bytes) -> bool:
    """Pure fold of the path; never raises"""
    try:
        if proof.leaf_count < 1 or not 0 <= proof.leaf_index < proof.leaf_count:
            return False
        expected = _expected_sides(proof.leaf_index, proof.leaf_count)
        if len(proof.path) != len(expected):
            return False
        running = hash_leaf(bytes(leaf))
        for (sibling, side), want in zip(proof.path, expected):
            if side != want or len(sibling) != DIGEST_SIZE:
                return False
            if side == Side.LEFT:
                running = hash_children(sibling, running)
            elif side == Side.RIGHT:
                running = hash_children(running, sibling)
            elif sibling != bytes(DIGEST_SIZE):
                return False
        return running == proof.root
    except (TypeError, ValueError):
        return False


def verify_entries(entries: Sequence[LedgerEntry]) -> bool:
    prev = GENESIS_DIGEST
    for index, entry in enumerate(entries):
        if entry.seq != index or entry.prev_digest != prev:
            return False
        if entry.compute_digest() != entry.entry_digest:
            return False
        prev = entry.entry_digest
    return True


class Ledger:
    """Single-writer hash chain of Publish, Revoke and CommitmentAnchor entries"""

    def __init__(self, entries: Optional[Iterable[LedgerEntry]] = None):
        self._entries: List[LedgerEntry] = []
        self._published: Set[bytes] = set()
        self._active: Dict[bytes, None] = {}
        self._revoked: Set[bytes] = set()
        for entry in entries or ():
            self._entries.append(entry)
            self._track(entry)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, index: int) -> LedgerEntry:
        return self._entries[index]

    @property
    def entries(self) -> Tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    @property
    def head_digest(self) -> bytes:
        return self._entries[-1].entry_digest if self._entries else GENESIS_DIGEST

    def _track(self, entry: LedgerEntry) -> None:
        if entry.entry_kind == EntryKind.PUBLISH:
            self._published.add(entry.payload_digest)
            self._active[entry.payload_digest] = None
            self._revoked.discard(entry.payload_digest)
        elif entry.entry_kind == EntryKind.REVOKE:
            self._active.pop(entry.payload_digest, None)
            self._revoked.add(entry.payload_digest)

    def append(
        self, entry_kind: EntryKind, payload_digest: bytes, author: bytes, tick: int
    ) -> LedgerEntry:
        _check_digest("payload_digest", payload_digest)
        _check_digest("author", author)
        partial = LedgerEntry(
            seq=len(self._entries),
            prev_digest=self.head_digest,
            payload_digest=bytes(payload_digest),
            entry_kind=EntryKind(entry_kind),
            author=bytes(author),
            tick=tick,
            entry_digest=b"",
        )
        entry = replace(partial, entry_digest=partial.compute_digest())
        self._entries.append(entry)
        self._track(entry)
        logger.debug(f"Ledger append seq={entry.seq} kind={entry.entry_kind.name}")
        return entry

    def publish(self, payload_digest: bytes, author: bytes, tick: int) -> LedgerEntry:
        return self.append(EntryKind.PUBLISH, payload_digest, author, tick)

    def revoke(self, target_digest: bytes, author: bytes, tick: int) -> LedgerEntry:
        if target_digest not in self._published:
            raise UnknownTarget(f"digest {bytes(target_digest).hex()} was never published")
        return self.append(EntryKind.REVOKE, target_digest, author, tick)

    def anchor_commitment(self, root: bytes, author: bytes, tick: int) -> LedgerEntry:
        return self.append(EntryKind.COMMITMENT_ANCHOR, root, author, tick)

    def verify_chain(self) -> bool:
        ok = verify_entries(self._entries)
        if not ok:
            logger.warning("❌ Ledger chain failed verification")
        return ok

    def active_view(self) -> FrozenSet[bytes]:
        """Publish digests not named by a later Revoke"""
        return frozenset(self._active)

    def is_published(self, digest: bytes) -> bool:
        return digest in self._published

    def is_revoked(self, digest: bytes) -> bool:
        return digest in self._revoked

    def head_root(self) -> bytes:
        """Merkle root over all entry digests; the genesis digest when empty"""
        if not self._entries:
            return GENESIS_DIGEST
        return merkle_root([entry.entry_digest for entry in self._entries])

    def prove_entry(self, seq: int) -> MerkleProof:
        return prove_inclusion([entry.entry_digest for entry in self._entries], seq)

    def active_digests(self) -> List[bytes]:
        """Active Publish digests in publication order"""
        return list(self._active)

    def export_public_view(self) -> List[str]:
        return [digest.hex() for digest in self._active]

    def to_bytes(self) -> bytes:
        out = bytearray()
        for entry in self._entries:
            body = entry.to_bytes()
            out += _LENGTH.pack(len(body)) + body
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ledger":
        """Decode the on-disk format. Structure is checked here; chain
        integrity is left to verify_chain."""
        entries = []
        offset = 0
        while offset < len(data):
            if offset + _LENGTH.size > len(data):
                raise MalformedInput(f"truncated length prefix at byte {offset}")
            (length,) = _LENGTH.unpack_from(data, offset)
            offset += _LENGTH.size
            if length != ENTRY_BODY_SIZE:
                raise MalformedInput(f"entry length {length} at byte {offset - 4}")
            if offset + length > len(data):
                raise MalformedInput(f"truncated entry at byte {offset}")
            entries.append(LedgerEntry.from_bytes(data[offset : offset + length]))
            offset += length
        return cls(entries)

    @classmethod
    def from_entries(cls, entries: Iterable[LedgerEntry]) -> "Ledger":
        return cls(entries)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        logger.info(f"💾 Ledger saved to {path} ({len(self)} entries)")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Ledger":
        return cls.from_bytes(Path(path).read_bytes())
