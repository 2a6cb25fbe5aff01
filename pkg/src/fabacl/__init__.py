"""Attribute-based access control over X.509 certificates with parent-identity links."""

from .contract import AccessDecision, Reason, SatisfiedBy, register_parent, validate_access
from .identity import (
    CaState,
    CertificateRecord,
    KeyPair,
    ParentLink,
    ca_init,
    enroll,
    extract_attributes,
    hash_certificate,
    make_parent_link,
    register,
    verify_parent_link,
)
from .ledger import AssetRecord, Ledger, LedgerState
from .policy import (
    And,
    Equals,
    Includes,
    Not,
    Or,
    PolicyDocument,
    count_attribute_checks,
    evaluate,
    parse_policy,
    serialize_policy,
)

__version__ = "0.1.0"
