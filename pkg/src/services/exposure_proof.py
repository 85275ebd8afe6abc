"""
Salted-Merkle inventory commitments and nonce-bound exposure proofs.

An organization commits to its component inventory once, then opens a
single item against a verifier's challenge without revealing the rest.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import (
    DuplicateItem,
    EmptyInput,
    ItemAbsent,
    MalformedInput,
    SaltCountMismatch,
)
from .ledger import (
    DIGEST_SIZE,
    Ledger,
    LedgerEntry,
    MerkleProof,
    Side,
    merkle_root,
    prove_inclusion,
    verify_inclusion,
)

logger = logging.getLogger(__name__)

SALT_BYTES = 16
NONCE_BYTES = 16
OWNER_BYTES = 32

_SIDE_CODES = {Side.LEFT: 0, Side.RIGHT: 1, Side.CARRY: 2}
_CODE_SIDES = {code: side for side, code in _SIDE_CODES.items()}


@dataclass(frozen=True)
class InventoryCommitment:
    root: bytes
    leaf_count: int
    owner: bytes


@dataclass(frozen=True)
class ExposureProof:
    item: bytes
    salt: bytes
    merkle_proof: MerkleProof
    nonce: bytes
    binding: bytes


def salted_leaf(salt: bytes, item: bytes) -> bytes:
    return hashlib.sha256(salt + item).digest()


def compute_binding(root: bytes, item: bytes, salt: bytes, nonce: bytes) -> bytes:
    return hashlib.sha256(root + item + salt + nonce).digest()


def generate_salts(count: int, seed) -> List[bytes]:
    rng = np.random.default_rng(seed)
    return [bytes(rng.bytes(SALT_BYTES)) for _ in range(count)]


def _check_inventory(inventory: Sequence[bytes], salts: Sequence[bytes]) -> None:
    if len(salts) != len(inventory):
        raise SaltCountMismatch(f"{len(salts)} salts for {len(inventory)} items")
    if len(set(inventory)) != len(inventory):
        raise DuplicateItem("inventory items must be distinct")
    for salt in salts:
        if len(salt) != SALT_BYTES:
            raise ValueError(f"salts must be {SALT_BYTES} bytes")


def commit(
    inventory: Sequence[bytes], salts: Sequence[bytes], owner: bytes
) -> InventoryCommitment:
    _check_inventory(inventory, salts)
    if not inventory:
        raise EmptyInput("cannot commit to an empty inventory")
    leaves = [salted_leaf(salt, item) for salt, item in zip(salts, inventory)]
    return InventoryCommitment(root=merkle_root(leaves), leaf_count=len(leaves), owner=owner)


def challenge(seed) -> bytes:
    """Fresh 16-byte nonce, deterministic in the seed"""
    return bytes(np.random.default_rng(seed).bytes(NONCE_BYTES))


def prove_exposure(
    inventory: Sequence[bytes],
    salts: Sequence[bytes],
    item: bytes,
    commitment: InventoryCommitment,
    nonce: bytes,
) -> ExposureProof:
    _check_inventory(inventory, salts)
    try:
        index = list(inventory).index(item)
    except ValueError:
        raise ItemAbsent(f"item {item!r} is not in the inventory") from None
    leaves = [salted_leaf(salt, held) for salt, held in zip(salts, inventory)]
    merkle_proof = prove_inclusion(leaves, index)
    salt = salts[index]
    return ExposureProof(
        item=item,
        salt=salt,
        merkle_proof=merkle_proof,
        nonce=nonce,
        binding=compute_binding(commitment.root, item, salt, nonce),
    )


def verify_exposure(
    commitment: InventoryCommitment, item: bytes, proof: ExposureProof, nonce: bytes
) -> bool:
    """True iff the proof opens item against the commitment under this nonce"""
    try:
        if proof.item != item or proof.nonce != nonce:
            return False
        if len(proof.salt) != SALT_BYTES or len(nonce) != NONCE_BYTES:
            return False
        if proof.binding != compute_binding(commitment.root, item, proof.salt, nonce):
            return False
        mp = proof.merkle_proof
        if mp.root != commitment.root or mp.leaf_count != commitment.leaf_count:
            return False
        return verify_inclusion(mp, salted_leaf(proof.salt, item))
    except (AttributeError, TypeError):
        return False


def anchor(commitment: InventoryCommitment, ledger: Ledger, tick: int) -> LedgerEntry:
    """Place the commitment root on the ledger as a CommitmentAnchor"""
    return ledger.anchor_commitment(commitment.root, commitment.owner, tick)


def _blob(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def serialize_proof(proof: ExposureProof) -> bytes:
    """Length-prefixed little-endian: item, salt, nonce, path, binding"""
    mp = proof.merkle_proof
    out = bytearray()
    out += _blob(proof.item)
    out += _blob(proof.salt)
    out += _blob(proof.nonce)
    out += struct.pack("<QQ", mp.leaf_index, mp.leaf_count)
    out += _blob(mp.root)
    out += struct.pack("<I", len(mp.path))
    for digest, side in mp.path:
        out += struct.pack("<B", _SIDE_CODES[side]) + digest
    out += _blob(proof.binding)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise MalformedInput(f"truncated proof at byte {self.offset}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (size,) = self.unpack("<I")
        return self.take(size)


def deserialize_proof(data: bytes) -> ExposureProof:
    reader = _Reader(bytes(data))
    item = reader.blob()
    salt = reader.blob()
    nonce = reader.blob()
    leaf_index, leaf_count = reader.unpack("<QQ")
    root = reader.blob()
    (path_len,) = reader.unpack("<I")
    path = []
    for _ in range(path_len):
        (code,) = reader.unpack("<B")
        if code not in _CODE_SIDES:
            raise MalformedInput(f"unknown path side code {code}")
        path.append((reader.take(DIGEST_SIZE), _CODE_SIDES[code]))
    binding = reader.blob()
    if reader.offset != len(reader.data):
        raise MalformedInput("trailing bytes after proof")
    return ExposureProof(
        item=item,
        salt=salt,
        merkle_proof=MerkleProof(
            leaf_index=leaf_index, leaf_count=leaf_count, path=tuple(path), root=root
        ),
        nonce=nonce,
        binding=binding,
    )


def commitment_to_hex(commitment: InventoryCommitment) -> str:
    """root || leaf_count (u64 LE) || owner, hex encoded"""
    return (commitment.root + struct.pack("<Q", commitment.leaf_count) + commitment.owner).hex()


def commitment_from_hex(text: str) -> InventoryCommitment:
    try:
        raw = bytes.fromhex(text.strip())
    except ValueError as e:
        raise MalformedInput(f"commitment is not hex: {e}") from e
    if len(raw) != DIGEST_SIZE + 8 + OWNER_BYTES:
        raise MalformedInput(f"commitment is {len(raw)} bytes")
    (leaf_count,) = struct.unpack("<Q", raw[DIGEST_SIZE : DIGEST_SIZE + 8])
    return InventoryCommitment(
        root=raw[:DIGEST_SIZE], leaf_count=leaf_count, owner=raw[DIGEST_SIZE + 8 :]
    )


def item_bytes(name: str, version: Optional[str] = None) -> bytes:
    """Canonical component identifier, e.g. nvidia-container-toolkit:1.14.2"""
    return (name if version is None else f"{name}:{version}").encode("utf-8")
