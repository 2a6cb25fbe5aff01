"""Minimal certificate authority and parent-link primitives.

Certificates carry their attributes in a single non-critical extension
(OID 1.2.3.4.5.6.7.8.1) whose value is the UTF-8 JSON ``{"attrs": {...}}``,
the same convention Fabric CA uses. A child certificate proves its holder
controls a parent identity through two attributes: ``hfa.ParentHash`` (hex
SHA-256 of the parent's DER) and ``hfa.ParentSignature`` (base64 DER ECDSA
signature over those 32 digest bytes, made with the parent's key).
"""

from __future__ import annotations

import base64
import binascii
import datetime as dt
import enum
import hashlib
import hmac
import json
import os
import re
import secrets
import threading
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Optional

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    Prehashed,
    decode_dss_signature,
)
from cryptography.x509.oid import NameOID

from .policy import PolicyError, check_attributes

ATTRIBUTE_OID = x509.ObjectIdentifier("1.2.3.4.5.6.7.8.1")
PARENT_HASH_ATTR = "hfa.ParentHash"
PARENT_SIGNATURE_ATTR = "hfa.ParentSignature"
RESERVED_PREFIX = "hfa."
DEFAULT_VALIDITY = dt.timedelta(days=365)
CA_FORMAT_VERSION = 1

_HEX64 = re.compile(r"[0-9a-f]{64}")
_PREHASHED = ec.ECDSA(Prehashed(hashes.SHA256()))


class IdentityError(Exception):
    """Base class for CA and certificate failures."""


class DuplicateIdentityError(IdentityError):
    pass


class UnknownIdentityError(IdentityError):
    pass


class EnrollmentError(IdentityError):
    pass


class MalformedCertificateError(IdentityError):
    pass


class MalformedExtensionError(IdentityError):
    pass


class MalformedLinkError(IdentityError):
    pass


class KeyMismatchError(IdentityError):
    pass


class UnknownIssuerError(IdentityError):
    pass


def _utcnow() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


@dataclass(frozen=True)
class KeyPair:
    private_key: ec.EllipticCurvePrivateKey = field(repr=False)

    @classmethod
    def generate(cls) -> KeyPair:
        return cls(ec.generate_private_key(ec.SECP256R1()))

    @classmethod
    def from_pem(cls, data: bytes) -> KeyPair:
        key = serialization.load_pem_private_key(data, password=None)
        if not isinstance(key, ec.EllipticCurvePrivateKey) or key.curve.name != "secp256r1":
            raise IdentityError("private key is not an ECDSA P-256 key")
        return cls(key)

    @property
    def public_key(self) -> ec.EllipticCurvePublicKey:
        return self.private_key.public_key()

    def private_pem(self) -> bytes:
        return self.private_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    def public_pem(self) -> bytes:
        return self.public_key.public_bytes(
            serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
        )

    def __repr__(self) -> str:
        return "KeyPair(<P-256 private key>)"


def _common_name(name: x509.Name) -> str:
    attrs = name.get_attributes_for_oid(NameOID.COMMON_NAME)
    return str(attrs[0].value) if attrs else ""


class CertificateRecord:
    """An issued X.509 certificate; everything is derived from the DER bytes."""

    def __init__(self, der: bytes):
        if not der:
            raise MalformedCertificateError("empty certificate")
        self.der = bytes(der)
        try:
            self.certificate
        except ValueError as e:
            raise MalformedCertificateError(f"not an X.509 certificate: {e}") from None

    @classmethod
    def from_pem(cls, pem: bytes | str) -> CertificateRecord:
        if isinstance(pem, str):
            pem = pem.encode("ascii", "replace")
        try:
            cert = x509.load_pem_x509_certificate(pem)
        except ValueError as e:
            raise MalformedCertificateError(f"not a PEM certificate: {e}") from None
        return cls(cert.public_bytes(serialization.Encoding.DER))

    @cached_property
    def certificate(self) -> x509.Certificate:
        return x509.load_der_x509_certificate(self.der)

    @cached_property
    def pem(self) -> str:
        return self.certificate.public_bytes(serialization.Encoding.PEM).decode("ascii")

    @property
    def subject(self) -> str:
        return _common_name(self.certificate.subject)

    @property
    def issuer(self) -> str:
        return _common_name(self.certificate.issuer)

    @property
    def serial(self) -> int:
        return self.certificate.serial_number

    @property
    def not_before(self) -> dt.datetime:
        return self.certificate.not_valid_before_utc

    @property
    def not_after(self) -> dt.datetime:
        return self.certificate.not_valid_after_utc

    @property
    def public_key(self) -> ec.EllipticCurvePublicKey:
        return self.certificate.public_key()

    @cached_property
    def attributes(self) -> dict[str, str]:
        return extract_attributes(self)

    @cached_property
    def digest_hex(self) -> str:
        return hash_certificate(self).hex()

    def __eq__(self, other):
        return isinstance(other, CertificateRecord) and self.der == other.der

    def __hash__(self):
        return hash(self.der)

    def __repr__(self):
        return f"CertificateRecord(subject={self.subject!r}, serial={self.serial})"


def encode_attributes(attrs: Mapping[str, str]) -> bytes:
    return json.dumps({"attrs": dict(attrs)}, separators=(",", ":"), ensure_ascii=False).encode()


def extract_attributes(cert: CertificateRecord) -> dict[str, str]:
    try:
        ext = cert.certificate.extensions.get_extension_for_oid(ATTRIBUTE_OID)
    except x509.ExtensionNotFound:
        return {}
    raw = ext.value.value
    try:
        payload = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedExtensionError(f"attribute extension is not UTF-8 JSON: {e}") from None
    if not isinstance(payload, dict) or not isinstance(payload.get("attrs"), dict):
        raise MalformedExtensionError('attribute extension lacks an "attrs" object')
    try:
        return check_attributes(payload["attrs"])
    except PolicyError as e:
        raise MalformedExtensionError(str(e)) from None


def hash_certificate(cert: CertificateRecord) -> bytes:
    return hashlib.sha256(cert.der).digest()


def verify_issued_by(cert: CertificateRecord, issuer: CertificateRecord) -> bool:
    try:
        cert.certificate.verify_directly_issued_by(issuer.certificate)
    except (ValueError, TypeError, InvalidSignature):
        return False
    return True


@dataclass(frozen=True)
class ParentLink:
    parent_hash: str
    parent_signature: str

    def __post_init__(self):
        if not isinstance(self.parent_hash, str) or not _HEX64.fullmatch(self.parent_hash):
            raise MalformedLinkError("parent hash must be 64 lowercase hex characters")
        _decode_signature(self.parent_signature)

    def as_attributes(self) -> dict[str, str]:
        return {PARENT_HASH_ATTR: self.parent_hash, PARENT_SIGNATURE_ATTR: self.parent_signature}


def _decode_signature(text: str) -> bytes:
    if not isinstance(text, str):
        raise MalformedLinkError("parent signature must be a string")
    try:
        sig = base64.b64decode(text, validate=True)
        decode_dss_signature(sig)
    except (binascii.Error, ValueError):
        raise MalformedLinkError("parent signature is not a base64 DER ECDSA signature") from None
    return sig


def make_parent_link(parent_cert: CertificateRecord, parent_key: KeyPair) -> ParentLink:
    digest = hash_certificate(parent_cert)
    sig = parent_key.private_key.sign(digest, _PREHASHED)
    try:
        parent_cert.public_key.verify(sig, digest, _PREHASHED)
    except (InvalidSignature, TypeError):
        raise KeyMismatchError("key does not belong to the parent certificate") from None
    return ParentLink(digest.hex(), base64.b64encode(sig).decode("ascii"))


class LinkStatus(enum.Enum):
    VALID = "valid"
    HASH_MISMATCH = "hash-mismatch"
    SIGNATURE_INVALID = "signature-invalid"


def read_parent_link(attrs: Mapping[str, str]) -> Optional[ParentLink]:
    """Return the link carried by ``attrs``, or None if either attribute is absent.

    Raises MalformedLinkError for undecodable values, including list-like
    values: only one parent is supported.
    """
    h = attrs.get(PARENT_HASH_ATTR)
    s = attrs.get(PARENT_SIGNATURE_ATTR)
    if h is None or s is None:
        return None
    if "," in h or "," in s:
        raise MalformedLinkError("multiple parent certificates are not supported")
    return ParentLink(h, s)


def check_parent_link(child_attrs: Mapping[str, str], parent_cert: CertificateRecord) -> LinkStatus:
    link = read_parent_link(child_attrs)
    if link is None:
        raise MalformedLinkError("child carries no complete parent link")
    digest = hash_certificate(parent_cert)
    if not hmac.compare_digest(digest, bytes.fromhex(link.parent_hash)):
        return LinkStatus.HASH_MISMATCH
    sig = base64.b64decode(link.parent_signature)
    try:
        parent_cert.public_key.verify(sig, digest, _PREHASHED)
    except (InvalidSignature, TypeError):
        return LinkStatus.SIGNATURE_INVALID
    return LinkStatus.VALID


def verify_parent_link(child_attrs: Mapping[str, str], parent_cert: CertificateRecord) -> bool:
    return check_parent_link(child_attrs, parent_cert) is LinkStatus.VALID


@dataclass
class Registration:
    secret_sha256: str
    attrs: dict[str, str]
    enrolled: bool = False


@dataclass
class CaState:
    root: CertificateRecord
    key: KeyPair
    next_serial: int = 2
    registry: dict[str, Registration] = field(default_factory=dict)
    validity: dt.timedelta = DEFAULT_VALIDITY
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    @property
    def subject(self) -> str:
        return self.root.subject

    def _take_serial(self) -> int:
        serial = self.next_serial
        self.next_serial += 1
        return serial

    def to_json(self) -> bytes:
        obj = {
            "format_version": CA_FORMAT_VERSION,
            "root_certificate": self.root.pem,
            "root_key": self.key.private_pem().decode("ascii"),
            "next_serial": self.next_serial,
            "validity_days": self.validity.days,
            "identities": {
                name: {"secret_sha256": r.secret_sha256, "attrs": r.attrs, "enrolled": r.enrolled}
                for name, r in sorted(self.registry.items())
            },
        }
        return json.dumps(obj, indent=2).encode() + b"\n"

    @classmethod
    def from_json(cls, data: bytes) -> CaState:
        try:
            obj = json.loads(data)
            if obj.get("format_version") != CA_FORMAT_VERSION:
                raise IdentityError(f"unsupported CA file version {obj.get('format_version')!r}")
            return cls(
                root=CertificateRecord.from_pem(obj["root_certificate"]),
                key=KeyPair.from_pem(obj["root_key"].encode()),
                next_serial=int(obj["next_serial"]),
                validity=dt.timedelta(days=int(obj.get("validity_days", DEFAULT_VALIDITY.days))),
                registry={
                    name: Registration(r["secret_sha256"], dict(r["attrs"]), bool(r["enrolled"]))
                    for name, r in obj["identities"].items()
                },
            )
        except (ValueError, KeyError, TypeError, AttributeError) as e:
            raise IdentityError(f"corrupt CA file: {e}") from None

    def save(self, path: str | os.PathLike) -> None:
        from .ledger import atomic_write

        atomic_write(Path(path), self.to_json(), mode=0o600)

    @classmethod
    def load(cls, path: str | os.PathLike) -> CaState:
        try:
            data = Path(path).read_bytes()
        except OSError as e:
            raise IdentityError(f"cannot read CA file {path}: {e.strerror}") from None
        return cls.from_json(data)


def _name(cn: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, cn)])


def ca_init(subject: str, validity: dt.timedelta = dt.timedelta(days=3650)) -> CaState:
    if not subject:
        raise IdentityError("CA subject must be non-empty")
    key = KeyPair.generate()
    now = _utcnow()
    ski = x509.SubjectKeyIdentifier.from_public_key(key.public_key)
    cert = (
        x509.CertificateBuilder()
        .subject_name(_name(subject))
        .issuer_name(_name(subject))
        .public_key(key.public_key)
        .serial_number(1)
        .not_valid_before(now - dt.timedelta(minutes=5))
        .not_valid_after(now + validity)
        .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
        .add_extension(
            x509.KeyUsage(
                digital_signature=True, content_commitment=False, key_encipherment=False,
                data_encipherment=False, key_agreement=False, key_cert_sign=True,
                crl_sign=True, encipher_only=False, decipher_only=False,
            ),
            critical=True,
        )
        .add_extension(ski, critical=False)
        .sign(key.private_key, hashes.SHA256())
    )
    return CaState(root=CertificateRecord(cert.public_bytes(serialization.Encoding.DER)), key=key)


def _hash_secret(secret: str) -> str:
    return hashlib.sha256(secret.encode("utf-8")).hexdigest()


def register(ca: CaState, name: str, attrs: Mapping[str, str]) -> str:
    """Record a pending identity and return its one-time enrollment secret."""
    if not name or "\x00" in name:
        raise IdentityError("identity name must be non-empty")
    attrs = check_attributes(attrs)
    reserved = sorted(k for k in attrs if k.startswith(RESERVED_PREFIX))
    if reserved:
        raise IdentityError(f"attribute names {reserved} are reserved for parent links")
    secret = secrets.token_urlsafe(24)
    with ca.lock:
        if name in ca.registry:
            raise DuplicateIdentityError(f"identity {name!r} is already registered")
        ca.registry[name] = Registration(_hash_secret(secret), attrs)
    return secret


def issue_certificate(
    ca: CaState,
    subject: str,
    public_key: ec.EllipticCurvePublicKey,
    attrs: Mapping[str, str],
) -> CertificateRecord:
    """Sign a leaf certificate carrying ``attrs`` verbatim (no reserved-name checks)."""
    with ca.lock:
        serial = ca._take_serial()
    now = _utcnow()
    builder = (
        x509.CertificateBuilder()
        .subject_name(_name(subject))
        .issuer_name(ca.root.certificate.subject)
        .public_key(public_key)
        .serial_number(serial)
        .not_valid_before(now - dt.timedelta(minutes=5))
        .not_valid_after(now + ca.validity)
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
        .add_extension(
            x509.AuthorityKeyIdentifier.from_issuer_public_key(ca.key.public_key), critical=False
        )
        .add_extension(
            x509.UnrecognizedExtension(ATTRIBUTE_OID, encode_attributes(attrs)), critical=False
        )
    )
    cert = builder.sign(ca.key.private_key, hashes.SHA256())
    return CertificateRecord(cert.public_bytes(serialization.Encoding.DER))


def enroll(
    ca: CaState, name: str, secret: str, parent: Optional[ParentLink] = None
) -> tuple[CertificateRecord, KeyPair]:
    with ca.lock:
        reg = ca.registry.get(name)
        if reg is None:
            raise UnknownIdentityError(f"identity {name!r} is not registered")
        if not hmac.compare_digest(reg.secret_sha256, _hash_secret(secret)):
            raise EnrollmentError(f"wrong enrollment secret for {name!r}")
        if reg.enrolled:
            raise EnrollmentError(f"identity {name!r} is already enrolled")
        attrs = dict(reg.attrs)
        if parent is not None:
            attrs.update(parent.as_attributes())
        key = KeyPair.generate()
        cert = issue_certificate(ca, name, key.public_key, attrs)
        reg.enrolled = True
    return cert, key
