"""Security contract: parent-certificate registry and policy validation."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .identity import (
    CertificateRecord,
    LinkStatus,
    MalformedExtensionError,
    MalformedLinkError,
    UnknownIssuerError,
    check_parent_link,
    read_parent_link,
)
from .ledger import Ledger
from .policy import evaluate


class Reason(str, enum.Enum):
    POLICY_SATISFIED = "policy-satisfied"
    POLICY_SATISFIED_VIA_PARENT = "policy-satisfied-via-parent"
    POLICY_UNSATISFIED = "policy-unsatisfied"
    PARENT_NOT_ON_LEDGER = "parent-not-on-ledger"
    PARENT_SIGNATURE_INVALID = "parent-signature-invalid"
    PARENT_HASH_MISMATCH = "parent-hash-mismatch"
    POLICY_NOT_FOUND = "policy-not-found"
    MALFORMED_LINK = "malformed-link"


class SatisfiedBy(str, enum.Enum):
    OWN = "own"
    PARENT = "parent"
    NONE = "none"


_ALLOWING = {Reason.POLICY_SATISFIED, Reason.POLICY_SATISFIED_VIA_PARENT}


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    satisfied_by: SatisfiedBy
    reason: Reason
    policy_name: str
    policy_version: int = 0

    def __post_init__(self):
        if self.allowed != (self.reason in _ALLOWING):
            raise ValueError(f"allowed={self.allowed} contradicts reason {self.reason.value}")
        if self.satisfied_by is not SatisfiedBy.NONE and not self.allowed:
            raise ValueError("a denial cannot be satisfied by an identity")

    def to_obj(self) -> dict:
        return {
            "allowed": self.allowed,
            "satisfied_by": self.satisfied_by.value,
            "reason": self.reason.value,
            "policy_name": self.policy_name,
            "policy_version": self.policy_version,
        }


def _deny(reason: Reason, name: str, version: int = 0) -> AccessDecision:
    return AccessDecision(False, SatisfiedBy.NONE, reason, name, version)


_LINK_DENIALS = {
    LinkStatus.HASH_MISMATCH: Reason.PARENT_HASH_MISMATCH,
    LinkStatus.SIGNATURE_INVALID: Reason.PARENT_SIGNATURE_INVALID,
}


def register_parent(ledger: Ledger, invoker_cert: CertificateRecord) -> str:
    """Store the invoker's certificate; the returned hex digest goes into ``hfa.ParentHash``."""
    return ledger.store_certificate(invoker_cert)


def validate_access(ledger: Ledger, client_cert: CertificateRecord, policy_name: str) -> AccessDecision:
    policy = ledger.get_policy(policy_name)
    if policy is None:
        return _deny(Reason.POLICY_NOT_FOUND, policy_name)
    name, version = policy.name, policy.version

    try:
        attrs = client_cert.attributes
    except MalformedExtensionError:
        # unreadable attributes satisfy nothing
        return _deny(Reason.POLICY_UNSATISFIED, name, version)
    if evaluate(policy.expr, attrs):
        return AccessDecision(True, SatisfiedBy.OWN, Reason.POLICY_SATISFIED, name, version)

    try:
        link = read_parent_link(attrs)
    except MalformedLinkError:
        return _deny(Reason.MALFORMED_LINK, name, version)
    if link is None:
        return _deny(Reason.POLICY_UNSATISFIED, name, version)

    parent = ledger.get_certificate(link.parent_hash)
    if parent is None:
        return _deny(Reason.PARENT_NOT_ON_LEDGER, name, version)
    status = check_parent_link(attrs, parent)
    if status is not LinkStatus.VALID:
        return _deny(_LINK_DENIALS[status], name, version)

    try:
        parent_attrs = parent.attributes
    except MalformedExtensionError:
        return _deny(Reason.POLICY_UNSATISFIED, name, version)
    # the parent is judged on its own attributes only, never merged with the child's
    if evaluate(policy.expr, parent_attrs):
        return AccessDecision(True, SatisfiedBy.PARENT, Reason.POLICY_SATISFIED_VIA_PARENT, name, version)
    return _deny(Reason.POLICY_UNSATISFIED, name, version)


def authenticate(ledger: Ledger, pem: str | bytes) -> CertificateRecord:
    """Parse a presented PEM certificate and check it chains to a trusted CA.

    This is the membership check a peer performs before any contract runs;
    failures are transport-level rejections, not access decisions.
    """
    cert = CertificateRecord.from_pem(pem)
    if ledger.trusted_issuer(cert) is None:
        raise UnknownIssuerError(f"certificate {cert.subject!r} is not issued by a trusted CA")
    return cert


def base_case(ledger: Ledger, client_cert: CertificateRecord, policy_name: str) -> bool:
    """No-op contract method used to measure the cost of the surrounding pipeline."""
    return True
