"""
Secure aggregation by pairwise additive masking over the 64-bit ring.

Updates are quantized to fixed point and blinded with antisymmetric
pairwise masks, so the aggregator only learns the sum.
"""

import hashlib
import hmac
import logging
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import (
    DimensionMismatch,
    EmptyInput,
    QuantizationOverflow,
    RosterIncomplete,
)

logger = logging.getLogger(__name__)

DEFAULT_SCALE = 2**16
QUANT_LIMIT = 2.0**62
MASK_DOMAIN = b"legion-mask"
PAIR_DOMAIN = b"legion-pair"
SEED_BYTES = 32
_WORDS_PER_BLOCK = 4


@dataclass(eq=False)
class QuantizedUpdate:
    client_id: int
    round: int
    coords: np.ndarray
    scale: int = DEFAULT_SCALE
    # peers whose masks are folded into coords; empty when unmasked
    peer_ids: Tuple[int, ...] = ()

    @property
    def dim(self) -> int:
        return int(self.coords.shape[0])


@dataclass(frozen=True, eq=False)
class PairwiseMask:
    """Mask shared by clients i < j; i adds the vector, j subtracts it"""

    pair: Tuple[int, int]
    round: int
    seed: bytes
    vector: np.ndarray

    @classmethod
    def derive(cls, a: int, b: int, seed: bytes, round_no: int, dim: int) -> "PairwiseMask":
        if a == b:
            raise ValueError("a client cannot share a mask with itself")
        pair = (min(a, b), max(a, b))
        return cls(pair=pair, round=round_no, seed=seed, vector=derive_mask(seed, round_no, dim))

    def applied_by(self, client_id: int) -> np.ndarray:
        low, high = self.pair
        if client_id == low:
            return self.vector.copy()
        if client_id == high:
            return np.zeros_like(self.vector) - self.vector
        raise ValueError(f"client {client_id} is not part of pair {self.pair}")


def _check_scale(scale: int) -> None:
    if scale < 1 or scale & (scale - 1):
        raise ValueError(f"scale must be a power of two, got {scale}")


def quantize(v, scale: int = DEFAULT_SCALE) -> np.ndarray:
    """Round-half-even fixed point, two's complement in uint64"""
    _check_scale(scale)
    values = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise QuantizationOverflow("cannot quantize non-finite values")
    scaled = values * scale
    if np.any(np.abs(scaled) >= QUANT_LIMIT):
        raise QuantizationOverflow(f"|v * scale| must stay below 2^62 (scale={scale})")
    return np.rint(scaled).astype(np.int64).view(np.uint64)


def dequantize(coords, scale: int = DEFAULT_SCALE) -> np.ndarray:
    _check_scale(scale)
    signed = np.ascontiguousarray(coords, dtype=np.uint64).view(np.int64)
    return signed.astype(np.float64) / scale


def quantize_update(
    client_id: int, round_no: int, v, scale: int = DEFAULT_SCALE
) -> QuantizedUpdate:
    return QuantizedUpdate(
        client_id=client_id, round=round_no, coords=quantize(v, scale), scale=scale
    )


def derive_mask(seed: bytes, round_no: int, dim: int) -> np.ndarray:
    """HMAC-SHA-256 in counter mode expanded to dim little-endian 64-bit words"""
    if dim < 0:
        raise ValueError("dim must be non-negative")
    blocks = -(-dim // _WORDS_PER_BLOCK)
    prefix = MASK_DOMAIN + struct.pack("<Q", round_no)
    stream = b"".join(
        hmac.new(seed, prefix + struct.pack("<Q", counter), hashlib.sha256).digest()
        for counter in range(blocks)
    )
    return np.frombuffer(stream, dtype="<u8")[:dim].astype(np.uint64)


def mask_update(
    update: QuantizedUpdate, peers: Iterable[Tuple[int, bytes]]
) -> QuantizedUpdate:
    """Fold every pairwise mask into the update, wrapping mod 2^64"""
    coords = update.coords.copy()
    peer_ids = list(update.peer_ids)
    for peer_id, seed in peers:
        if peer_id == update.client_id:
            raise ValueError("peers must exclude the client itself")
        mask = PairwiseMask.derive(update.client_id, peer_id, seed, update.round, update.dim)
        coords = coords + mask.applied_by(update.client_id)
        peer_ids.append(peer_id)
    return QuantizedUpdate(
        client_id=update.client_id,
        round=update.round,
        coords=coords,
        scale=update.scale,
        peer_ids=tuple(sorted(peer_ids)),
    )


def _expected_roster(updates: Sequence[QuantizedUpdate]) -> set:
    roster = {u.client_id for u in updates}
    for u in updates:
        roster.update(u.peer_ids)
    return roster


def ring_sum(
    updates: Sequence[QuantizedUpdate], roster: Optional[Iterable[int]] = None
) -> np.ndarray:
    """Coordinate-wise uint64 sum after roster and shape checks"""
    if not updates:
        raise EmptyInput("no updates to aggregate")
    ids = [u.client_id for u in updates]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client update in round")
    expected = set(roster) if roster is not None else _expected_roster(updates)
    missing = sorted(expected - set(ids))
    if missing:
        logger.warning(f"⚠️ Refusing aggregation, missing clients {missing}")
        raise RosterIncomplete(f"missing updates from clients {missing}")
    unexpected = sorted(set(ids) - expected)
    if unexpected:
        raise ValueError(f"updates from clients outside the roster: {unexpected}")

    first = updates[0]
    for u in updates[1:]:
        if u.round != first.round:
            raise ValueError(f"round mismatch: {u.round} != {first.round}")
        if u.scale != first.scale:
            raise ValueError(f"scale mismatch: {u.scale} != {first.scale}")
        if u.dim != first.dim:
            raise DimensionMismatch(f"dimension mismatch: {u.dim} != {first.dim}")
    return np.sum(np.stack([u.coords for u in updates]), axis=0, dtype=np.uint64)


def aggregate(
    updates: Sequence[QuantizedUpdate], roster: Optional[Iterable[int]] = None
) -> np.ndarray:
    """Dequantized sum. Without an explicit roster, every client named as a
    peer in a masked update is expected to be present."""
    total = ring_sum(updates, roster)
    return dequantize(total, updates[0].scale)


def provision_pair_seeds(
    roster: Iterable[int], master_seed: bytes
) -> Dict[Tuple[int, int], bytes]:
    """Out-of-band pairwise seeds, one per unordered pair"""
    clients = sorted(set(roster))
    seeds = {}
    for index, a in enumerate(clients):
        for b in clients[index + 1 :]:
            material = PAIR_DOMAIN + master_seed + struct.pack("<QQ", a, b)
            seeds[(a, b)] = hashlib.sha256(material).digest()
    return seeds


def peers_for(
    client_id: int, seeds: Dict[Tuple[int, int], bytes]
) -> List[Tuple[int, bytes]]:
    peers = []
    for (a, b), seed in sorted(seeds.items()):
        if a == client_id:
            peers.append((b, seed))
        elif b == client_id:
            peers.append((a, seed))
    return peers


@dataclass
class RoundTranscript:
    """What the aggregator saw in one round"""

    round: int
    client_ids: List[int] = field(default_factory=list)
    masked_coords: List[List[int]] = field(default_factory=list)

    @classmethod
    def from_updates(cls, round_no: int, updates: Sequence[QuantizedUpdate]) -> "RoundTranscript":
        ordered = sorted(updates, key=lambda u: u.client_id)
        return cls(
            round=round_no,
            client_ids=[u.client_id for u in ordered],
            masked_coords=[[int(x) for x in u.coords] for u in ordered],
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "round": self.round,
            "client_ids": self.client_ids,
            "masked_coords": self.masked_coords,
        }
