import base64
import dataclasses
import hashlib
import ssl

import pytest

from fabacl.contract import (
    AccessDecision,
    Reason,
    SatisfiedBy,
    authenticate,
    register_parent,
    validate_access,
)
from fabacl.identity import (
    PARENT_HASH_ATTR,
    PARENT_SIGNATURE_ATTR,
    CertificateRecord,
    KeyPair,
    UnknownIssuerError,
    ca_init,
    hash_certificate,
    issue_certificate,
    make_parent_link,
)
from fabacl.ledger import Ledger
from fabacl.policy import And, Equals, PolicyDocument

import scenarios
from scenarios import NOT_SATISFYING, RESOURCE_POLICY, SATISFYING, decision_tuple


@pytest.fixture
def fig():
    return scenarios.four_certificates(ca_init("four-ca"))


@pytest.fixture(scope="module")
def matrix():
    return scenarios.link_matrix(ca_init("matrix-ca"))


def test_four_certificates(fig):
    got = [decision_tuple(validate_access(fig.ledger, c, "ResourcePolicy")) for c in fig.certs]
    assert got == fig.expected


def test_register_parent_returns_certificate_hash(ledger, issue):
    cert, _ = issue(SATISFYING)
    digest = register_parent(ledger, cert)
    assert digest == hash_certificate(cert).hex()
    assert register_parent(ledger, cert) == digest


def test_policy_not_found(ledger, issue):
    cert, _ = issue(SATISFYING)
    d = validate_access(ledger, cert, "Missing")
    assert (d.allowed, d.reason, d.satisfied_by) == (False, Reason.POLICY_NOT_FOUND, SatisfiedBy.NONE)


@pytest.mark.parametrize("key", list(scenarios.MATRIX_ORACLE))
def test_link_matrix(matrix, key):
    m = matrix
    d = validate_access(m.ledger, m.clients[key], "ResourcePolicy")
    assert decision_tuple(d) == scenarios.MATRIX_ORACLE[key]
    assert d.policy_name == "ResourcePolicy" and d.policy_version == 1


def test_forged_link_on_authorised_certificate_is_ignored(ledger):
    ledger.register_policy(RESOURCE_POLICY)
    forged = {PARENT_HASH_ATTR: "f" * 64, PARENT_SIGNATURE_ATTR: "bm90IGEgc2ln"}
    ca = ca_init("forge")
    ledger.add_trust_root(ca.root)
    cert = issue_certificate(ca, "c", KeyPair.generate().public_key, {**SATISFYING, **forged})
    d = validate_access(ledger, cert, "ResourcePolicy")
    assert d.satisfied_by is SatisfiedBy.OWN


def test_no_attribute_merging(ledger, issue):
    # role only on the child, groups only on the parent: never satisfied
    ledger.register_policy(RESOURCE_POLICY)
    parent, pkey = issue({"groups": "iot"})
    ledger.store_certificate(parent)
    child, _ = issue({"role": "owner"}, parent=make_parent_link(parent, pkey))
    d = validate_access(ledger, child, "ResourcePolicy")
    assert decision_tuple(d) == (False, SatisfiedBy.NONE, Reason.POLICY_UNSATISFIED)


def test_list_like_link_is_malformed(ledger, ca, issue):
    ledger.register_policy(RESOURCE_POLICY)
    parent, pkey = issue(SATISFYING)
    ledger.store_certificate(parent)
    link = make_parent_link(parent, pkey)
    attrs = {
        **NOT_SATISFYING,
        PARENT_HASH_ATTR: f"{link.parent_hash},{link.parent_hash}",
        PARENT_SIGNATURE_ATTR: f"{link.parent_signature},{link.parent_signature}",
    }
    cert = issue_certificate(ca, "multi", KeyPair.generate().public_key, attrs)
    assert validate_access(ledger, cert, "ResourcePolicy").reason is Reason.MALFORMED_LINK


@pytest.mark.parametrize(
    "hash_value,sig_value",
    [("xyz", "AAAA"), ("0" * 64, "%%%"), ("0" * 64, base64.b64encode(b"junk").decode())],
)
def test_undecodable_link_is_malformed(ledger, ca, hash_value, sig_value):
    ledger.register_policy(RESOURCE_POLICY)
    attrs = {**NOT_SATISFYING, PARENT_HASH_ATTR: hash_value, PARENT_SIGNATURE_ATTR: sig_value}
    cert = issue_certificate(ca, "bad-link", KeyPair.generate().public_key, attrs)
    d = validate_access(ledger, cert, "ResourcePolicy")
    assert decision_tuple(d) == (False, SatisfiedBy.NONE, Reason.MALFORMED_LINK)


def test_half_a_link_is_just_unsatisfied(ledger, ca):
    ledger.register_policy(RESOURCE_POLICY)
    cert = issue_certificate(ca, "half", KeyPair.generate().public_key, {**NOT_SATISFYING, PARENT_HASH_ATTR: "0" * 64})
    assert validate_access(ledger, cert, "ResourcePolicy").reason is Reason.POLICY_UNSATISFIED


def _tampered_ders(der: bytes, positions):
    for pos in positions:
        b = bytearray(der)
        b[pos] ^= 0x01
        yield pos, bytes(b)


def test_tampered_parent_on_ledger_denies(fig):
    """Replace the stored parent with a one-byte-different copy at every position."""
    cert1, cert2 = fig.certs[0], fig.certs[1]
    assert validate_access(fig.ledger, cert2, "ResourcePolicy").allowed
    good = cert1.digest_hex
    base = fig.ledger.state
    for pos, der in _tampered_ders(cert1.der, range(len(cert1.der))):
        digest = hashlib.sha256(der).hexdigest()
        assert digest != good
        pem = ssl.DER_cert_to_PEM_cert(der)
        certs = {k: v for k, v in base.certificates.items() if k != good}
        certs[digest] = pem
        tampered = Ledger(dataclasses.replace(base, certificates=certs))
        d = validate_access(tampered, cert2, "ResourcePolicy")
        assert decision_tuple(d) == (False, SatisfiedBy.NONE, Reason.PARENT_NOT_ON_LEDGER), pos


def test_corrupted_value_under_original_key_is_hash_mismatch(fig):
    cert1, cert2 = fig.certs[0], fig.certs[1]
    # last byte sits in the signature, so the copy still parses
    der = bytearray(cert1.der)
    der[-1] ^= 0x01
    state = fig.ledger.state
    certs = {**state.certificates, cert1.digest_hex: ssl.DER_cert_to_PEM_cert(bytes(der))}
    corrupted = Ledger(dataclasses.replace(state, certificates=certs))
    d = validate_access(corrupted, cert2, "ResourcePolicy")
    assert d.reason is Reason.PARENT_HASH_MISMATCH and not d.allowed


def test_decisions_are_deterministic(fig):
    for cert in fig.certs:
        runs = {validate_access(fig.ledger, cert, "ResourcePolicy") for _ in range(5)}
        assert len(runs) == 1


def test_decision_invariants():
    with pytest.raises(ValueError):
        AccessDecision(True, SatisfiedBy.OWN, Reason.POLICY_UNSATISFIED, "P", 1)
    with pytest.raises(ValueError):
        AccessDecision(False, SatisfiedBy.PARENT, Reason.PARENT_NOT_ON_LEDGER, "P", 1)
    d = AccessDecision(True, SatisfiedBy.PARENT, Reason.POLICY_SATISFIED_VIA_PARENT, "P", 2)
    assert d.to_obj() == {
        "allowed": True, "satisfied_by": "parent", "reason": "policy-satisfied-via-parent",
        "policy_name": "P", "policy_version": 2,
    }


def test_latest_policy_version_is_used(ledger, issue):
    cert, _ = issue({"role": "v2"})
    ledger.register_policy(PolicyDocument("P", Equals("role", "v1"), 1))
    assert not validate_access(ledger, cert, "P").allowed
    ledger.register_policy(PolicyDocument("P", Equals("role", "v2"), 2))
    d = validate_access(ledger, cert, "P")
    assert d.allowed and d.policy_version == 2


def test_authenticate(ledger, issue):
    cert, _ = issue({})
    assert authenticate(ledger, cert.pem) == cert
    rogue = ca_init("rogue")
    rcert, _ = scenarios.issue(rogue, "x", {})
    with pytest.raises(UnknownIssuerError):
        authenticate(ledger, rcert.pem)


def test_ledger_never_holds_private_keys(fig):
    assert b"PRIVATE KEY" not in fig.ledger.snapshot()
