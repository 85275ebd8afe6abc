"""Tests for CTI records, canonical encoding and sanitization."""

import hashlib
import hmac
import string
import uuid
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from src.core.errors import PolicyMismatch
from src.services.cti_core import (
    POLICY_FIELDS,
    Audience,
    CtiRecord,
    FieldAction,
    IndicatorKind,
    SanitizationPolicy,
    Sensitivity,
    canonical_encode,
    default_policy,
    is_identifying,
    new_record_id,
    pseudonymize,
    record_from_dict,
    record_to_dict,
    sanitize,
    validate,
)
from tests.conftest import OTHER_KEY, PSEUDONYM_KEY, make_record

SAFE_TEXT = string.ascii_letters + string.digits + "-_. :"

ip_values = st.tuples(*[st.integers(0, 255)] * 4).map(lambda t: ".".join(map(str, t)))
values_by_kind = {
    IndicatorKind.IP_INDICATOR: ip_values,
    IndicatorKind.FILE_HASH_INDICATOR: st.binary(min_size=32, max_size=32).map(bytes.hex),
    IndicatorKind.MALWARE_SIGNATURE: st.text(alphabet=SAFE_TEXT, min_size=1, max_size=24),
    IndicatorKind.TECHNIQUE_ID: st.integers(1000, 9999).map(lambda n: f"T{n}"),
    IndicatorKind.VULNERABILITY_ID: st.tuples(
        st.integers(1999, 2030), st.integers(1000, 99999)
    ).map(lambda t: f"CVE-{t[0]}-{t[1]:04d}"),
}


@st.composite
def records(draw, sensitivity=st.sampled_from(list(Sensitivity))):
    kind = draw(st.sampled_from(list(IndicatorKind)))
    return CtiRecord(
        record_id=uuid.UUID(int=draw(st.integers(0, 2**128 - 1))),
        kind=kind,
        value=draw(values_by_kind[kind]),
        sensitivity=draw(sensitivity),
        source=draw(st.none() | st.binary(min_size=1, max_size=32)),
        confidence=draw(st.floats(0.0, 1.0)),
        observed_at=draw(st.integers(0, 2**40)),
        context=draw(st.none() | st.text(alphabet=SAFE_TEXT, max_size=30)),
    )


@st.composite
def policies(draw):
    audience = draw(st.sampled_from(list(Audience)))
    overrides = {
        name: draw(st.sampled_from(sorted(POLICY_FIELDS[name], key=lambda a: a.value)))
        for name in ("value", "source", "context")
    }
    assume(not (audience == Audience.PUBLIC and overrides["source"] == FieldAction.KEEP))
    return default_policy(audience, PSEUDONYM_KEY, overrides)


class TestValidate:
    def test_valid_ip(self):
        assert validate(make_record(value="203.0.113.77")) == []

    def test_confidence_out_of_range(self):
        assert "confidence out of range" in validate(make_record(confidence=1.5))

    def test_malformed_ip(self):
        assert "malformed value" in validate(make_record(value="not-an-ip"))

    def test_empty_value(self):
        assert "empty value" in validate(make_record(value=""))

    def test_reports_every_violation(self):
        errors = validate(make_record(value="", confidence=-0.1, observed_at=-1))
        assert errors == ["empty value", "confidence out of range", "observed_at negative"]

    @pytest.mark.parametrize(
        "kind,value",
        [
            (IndicatorKind.FILE_HASH_INDICATOR, "d41d8cd98f00b204e9800998ecf8427e"),
            (IndicatorKind.TECHNIQUE_ID, "T1059.001"),
            (IndicatorKind.VULNERABILITY_ID, "CVE-2024-0132"),
            (IndicatorKind.MALWARE_SIGNATURE, "Trojan.GenericKD.4711"),
        ],
    )
    def test_well_formed_kinds(self, kind, value):
        assert validate(make_record(kind=kind, value=value)) == []

    @pytest.mark.parametrize(
        "kind,value",
        [
            (IndicatorKind.FILE_HASH_INDICATOR, "xyz"),
            (IndicatorKind.TECHNIQUE_ID, "1059"),
            (IndicatorKind.VULNERABILITY_ID, "CVE-24-1"),
            (IndicatorKind.MALWARE_SIGNATURE, "a|b"),
        ],
    )
    def test_malformed_kinds(self, kind, value):
        assert "malformed value" in validate(make_record(kind=kind, value=value))

    def test_generalized_network_only_valid_when_relaxed(self):
        generalized = make_record(value="203.0.113.0/24", sanitized_fields=frozenset({"value"}))
        assert validate(generalized, relaxed=True) == []
        assert "malformed value" in validate(generalized)


class TestCanonicalEncoding:
    def test_deterministic(self, record):
        assert canonical_encode(record) == canonical_encode(record)

    def test_confidence_change_changes_bytes(self):
        assert canonical_encode(make_record(confidence=0.5)) != canonical_encode(
            make_record(confidence=0.6)
        )

    def test_digest_matches_reference_sha256(self, record):
        expected = hashlib.sha256(canonical_encode(record)).digest()
        assert record.digest() == expected
        assert len(record.digest()) == 32

    @pytest.mark.parametrize(
        "change",
        [
            {"record_id": uuid.UUID(int=8)},
            {"value": "203.0.113.78"},
            {"sensitivity": Sensitivity.RESTRICTED},
            {"source": None},
            {"source": b"org-B"},
            {"observed_at": 43},
            {"context": None},
            {"context": ""},
            {"sanitized_fields": frozenset({"source"})},
        ],
    )
    def test_any_field_change_changes_bytes(self, record, change):
        assert canonical_encode(replace(record, **change)) != canonical_encode(record)

    def test_no_collisions_on_random_corpus(self):
        gen = np.random.default_rng(99)
        seen = {}
        for _ in range(5000):
            rec = make_record(
                record_id=new_record_id(gen),
                value=".".join(str(int(x)) for x in gen.integers(0, 256, 4)),
                confidence=float(gen.random()),
                observed_at=int(gen.integers(0, 10**6)),
            )
            seen[canonical_encode(rec)] = rec
        assert len(seen) == 5000


class TestPseudonymize:
    def test_deterministic(self, key):
        assert pseudonymize(b"org-A", key) == pseudonymize(b"org-A", key)

    def test_distinct_keys_give_distinct_tokens(self):
        assert pseudonymize(b"org-A", PSEUDONYM_KEY) != pseudonymize(b"org-A", OTHER_KEY)

    def test_rfc4231_case_1(self):
        token = pseudonymize(b"Hi There", b"\x0b" * 20)
        assert token.hex() == "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"

    def test_rfc4231_case_2(self):
        token = pseudonymize(b"what do ya want for nothing?", b"Jefe")
        assert token.hex() == "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"

    def test_no_cross_key_collisions(self):
        gen = np.random.default_rng(3)
        for _ in range(2000):
            value = bytes(gen.bytes(12))
            k1, k2 = bytes(gen.bytes(32)), bytes(gen.bytes(32))
            assert pseudonymize(value, k1) != pseudonymize(value, k2)


class TestPolicy:
    def test_default_policies_cover_every_field(self, policies):
        for policy in policies.values():
            assert set(policy.field_rules) == set(POLICY_FIELDS)

    def test_missing_rule_rejected(self, key):
        rules = {name: FieldAction.KEEP for name in POLICY_FIELDS if name != "context"}
        with pytest.raises(PolicyMismatch):
            SanitizationPolicy(audience=Audience.INTRA_ORG, field_rules=rules, pseudonym_key=key)

    def test_unknown_field_rejected(self, key):
        rules = {name: FieldAction.KEEP for name in POLICY_FIELDS}
        rules["hostname"] = FieldAction.REDACT
        with pytest.raises(PolicyMismatch):
            SanitizationPolicy(audience=Audience.INTRA_ORG, field_rules=rules, pseudonym_key=key)

    def test_public_cannot_keep_source(self, key):
        with pytest.raises(PolicyMismatch):
            default_policy(Audience.PUBLIC, key, {"source": FieldAction.KEEP})

    def test_inapplicable_action_rejected(self, key):
        with pytest.raises(PolicyMismatch):
            default_policy(Audience.INTRA_ORG, key, {"confidence": FieldAction.REDACT})

    def test_short_key_rejected(self):
        with pytest.raises(PolicyMismatch):
            default_policy(Audience.INTER_ORG, b"short")

    def test_identifying_fields(self):
        assert is_identifying("source")
        assert is_identifying("context")
        assert not is_identifying("value")


class TestSanitize:
    def test_redact_source(self, record, policies):
        assert sanitize(record, policies[Audience.PUBLIC]).source is None

    def test_generalize_ip(self, record, policies):
        assert sanitize(record, policies[Audience.PUBLIC]).value == "203.0.113.0/24"

    def test_pseudonymize_source(self, record, policies, key):
        out = sanitize(record, policies[Audience.INTER_ORG])
        assert out.source == hmac.new(key, b"org-A", hashlib.sha256).digest()
        assert out.context is None
        assert out.sanitized_fields == frozenset({"source", "context"})

    def test_intra_org_keeps_everything(self, record, policies):
        assert sanitize(record, policies[Audience.INTRA_ORG]) == record

    def test_generalize_ignores_non_ip(self, policies):
        cve = make_record(kind=IndicatorKind.VULNERABILITY_ID, value="CVE-2024-0132")
        assert sanitize(cve, policies[Audience.PUBLIC]).value == "CVE-2024-0132"

    def test_internal_record_with_kept_source_cannot_leave(self, key):
        policy = default_policy(Audience.INTER_ORG, key, {"source": FieldAction.KEEP})
        with pytest.raises(PolicyMismatch):
            sanitize(make_record(sensitivity=Sensitivity.INTERNAL), policy)

    def test_internal_record_leaves_when_identifiers_hidden(self, policies):
        internal = make_record(sensitivity=Sensitivity.INTERNAL)
        out = sanitize(internal, policies[Audience.INTER_ORG])
        assert out.source != internal.source and out.context is None

    def test_output_passes_relaxed_validation(self, record, policies):
        for policy in policies.values():
            assert validate(sanitize(record, policy), relaxed=True) == []

    @settings(max_examples=200, deadline=None)
    @given(
        rec=records(sensitivity=st.sampled_from([s for s in Sensitivity if s != Sensitivity.INTERNAL])),
        policy=policies(),
    )
    def test_idempotent(self, rec, policy):
        once = sanitize(rec, policy)
        assert sanitize(once, policy) == once

    @settings(max_examples=100, deadline=None)
    @given(rec=records(sensitivity=st.just(Sensitivity.INTERNAL)), policy=policies())
    def test_internal_never_leaves_with_identifiers(self, rec, policy):
        keeps = any(
            policy.action_for(name) == FieldAction.KEEP
            for name in POLICY_FIELDS
            if is_identifying(name)
        )
        if policy.audience != Audience.INTRA_ORG and keeps:
            with pytest.raises(PolicyMismatch):
                sanitize(rec, policy)
        else:
            out = sanitize(rec, policy)
            if policy.audience != Audience.INTRA_ORG:
                assert {"source", "context"} <= out.sanitized_fields

    @settings(max_examples=100, deadline=None)
    @given(value=st.binary(min_size=1, max_size=40))
    def test_pseudonym_linkable_within_key(self, value):
        policy = default_policy(Audience.INTER_ORG, PSEUDONYM_KEY)
        a = sanitize(make_record(source=value, record_id=uuid.UUID(int=1)), policy)
        b = sanitize(make_record(source=value, record_id=uuid.UUID(int=2)), policy)
        assert a.source == b.source


class TestRecordIds:
    def test_seeded_ids_repeat(self):
        assert new_record_id(np.random.default_rng(5)) == new_record_id(np.random.default_rng(5))

    def test_dict_view_round_trips(self, record, policies):
        sanitized = sanitize(record, policies[Audience.INTER_ORG])
        assert record_from_dict(record_to_dict(sanitized)) == sanitized
