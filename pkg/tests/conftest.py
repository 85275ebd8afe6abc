"""
Shared fixtures for the test suite
"""

import uuid

import numpy as np
import pytest

from src.services.cti_core import (
    Audience,
    CtiRecord,
    IndicatorKind,
    Sensitivity,
    default_policy,
)

PSEUDONYM_KEY = bytes(range(32))
OTHER_KEY = bytes(range(1, 33))


def make_record(**overrides) -> CtiRecord:
    fields = dict(
        record_id=uuid.UUID(int=7),
        kind=IndicatorKind.IP_INDICATOR,
        value="203.0.113.77",
        sensitivity=Sensitivity.COMMUNITY,
        source=b"org-A",
        confidence=0.8,
        observed_at=42,
        context="seen on edge gateway",
    )
    fields.update(overrides)
    return CtiRecord(**fields)


@pytest.fixture
def record() -> CtiRecord:
    return make_record()


@pytest.fixture
def key() -> bytes:
    return PSEUDONYM_KEY


@pytest.fixture
def policies():
    return {audience: default_policy(audience, PSEUDONYM_KEY) for audience in Audience}


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def digests(count: int, seed: int = 0):
    gen = np.random.default_rng(seed)
    return [bytes(gen.bytes(32)) for _ in range(count)]
