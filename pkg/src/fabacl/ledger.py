"""Persisted world state: certificate hashmap, policy registry, asset table.

Mutations go through a single writer lock and replace the whole
``LedgerState`` (copy-on-write), so a reader holding a state object sees a
consistent view for as long as it likes.
"""

from __future__ import annotations

import binascii
import dataclasses
import hashlib
import json
import os
import re
import ssl
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .identity import CertificateRecord, MalformedCertificateError, UnknownIssuerError, verify_issued_by
from .policy import PolicyDocument, PolicyError, document_from_obj, document_to_obj

FORMAT_VERSION = 1
LEDGER_ENV = "ACL_LEDGER_PATH"

_DIGEST_RE = re.compile(r"[0-9a-f]{64}")


class LedgerError(Exception):
    pass


class CorruptSnapshotError(LedgerError):
    pass


class SnapshotVersionError(LedgerError):
    pass


class StaleVersionError(LedgerError):
    pass


class AssetExistsError(LedgerError):
    pass


class AssetNotFoundError(LedgerError):
    pass


def check_digest(digest: str) -> str:
    if not isinstance(digest, str) or not _DIGEST_RE.fullmatch(digest):
        raise ValueError(f"malformed certificate digest {digest!r}: need 64 lowercase hex chars")
    return digest


def pem_to_der(pem: str) -> bytes:
    try:
        return ssl.PEM_cert_to_DER_cert(pem)
    except (ValueError, binascii.Error) as e:
        raise ValueError(f"not a PEM certificate: {e}") from None


def atomic_write(path: Path, data: bytes, mode: int = 0o644) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp, mode)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


@dataclass(frozen=True)
class AssetRecord:
    id: str
    file_name: str
    ipfs_hash: str
    owner: str
    created_at: str
    updated_at: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("asset id must be non-empty")
        if not self.ipfs_hash:
            raise ValueError("asset ipfs_hash must be non-empty")

    def to_obj(self) -> dict[str, str]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class LedgerState:
    certificates: Mapping[str, str] = field(default_factory=dict)
    policies: Mapping[str, PolicyDocument] = field(default_factory=dict)
    assets: Mapping[str, AssetRecord] = field(default_factory=dict)
    trust_roots: Mapping[str, str] = field(default_factory=dict)
    revision: int = 0

    def to_obj(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "revision": self.revision,
            "certificates": {k: self.certificates[k] for k in sorted(self.certificates)},
            "policies": {k: document_to_obj(self.policies[k]) for k in sorted(self.policies)},
            "assets": {k: self.assets[k].to_obj() for k in sorted(self.assets)},
            "trust_roots": [self.trust_roots[k] for k in sorted(self.trust_roots)],
        }


def _state_from_obj(obj: Any) -> LedgerState:
    if not isinstance(obj, dict):
        raise CorruptSnapshotError("snapshot is not a JSON object")
    if obj.get("format_version") != FORMAT_VERSION:
        raise SnapshotVersionError(f"unsupported ledger format_version {obj.get('format_version')!r}")
    missing = {"revision", "certificates", "policies", "assets"} - set(obj)
    if missing:
        raise CorruptSnapshotError(f"snapshot is missing {sorted(missing)}")
    revision = obj["revision"]
    if isinstance(revision, bool) or not isinstance(revision, int) or revision < 0:
        raise CorruptSnapshotError(f"bad revision {revision!r}")
    try:
        certs = {}
        for digest, pem in obj["certificates"].items():
            check_digest(digest)
            if hashlib.sha256(pem_to_der(pem)).hexdigest() != digest:
                raise CorruptSnapshotError(f"certificate {digest[:12]}… does not hash to its key")
            certs[digest] = pem
        policies = {}
        for name, doc_obj in obj["policies"].items():
            doc = document_from_obj(doc_obj)
            if doc.name != name:
                raise CorruptSnapshotError(f"policy stored under {name!r} is named {doc.name!r}")
            policies[name] = doc
        assets = {}
        for asset_id, rec in obj["assets"].items():
            a = AssetRecord(**rec)
            if a.id != asset_id:
                raise CorruptSnapshotError(f"asset stored under {asset_id!r} has id {a.id!r}")
            assets[asset_id] = a
        roots = {}
        for pem in obj.get("trust_roots", []):
            roots[hashlib.sha256(pem_to_der(pem)).hexdigest()] = pem
    except CorruptSnapshotError:
        raise
    except (ValueError, TypeError, AttributeError, PolicyError) as e:
        raise CorruptSnapshotError(f"invalid snapshot content: {e}") from None
    return LedgerState(certs, policies, assets, roots, revision)


class Ledger:
    """Single-writer, multi-reader stand-in for the distributed ledger.

    If ``path`` is set, every mutation is persisted atomically before the
    mutating call returns.
    """

    def __init__(self, state: Optional[LedgerState] = None, path: str | os.PathLike | None = None):
        self._state = state or LedgerState()
        self._lock = threading.RLock()
        self.path = Path(path) if path is not None else None
        self._cert_cache: dict[str, CertificateRecord] = {}
        self._readonly = False

    def view(self) -> Ledger:
        """A read-only ledger pinned to the current revision."""
        v = Ledger(self._state)
        v._cert_cache = self._cert_cache
        v._readonly = True
        return v

    @property
    def state(self) -> LedgerState:
        return self._state

    @property
    def revision(self) -> int:
        return self._state.revision

    def _commit(self, **changes) -> None:
        if self._readonly:
            raise LedgerError("ledger view is read-only")
        new = dataclasses.replace(self._state, revision=self._state.revision + 1, **changes)
        if self.path is not None:
            atomic_write(self.path, _encode(new))
        self._state = new

    # trust anchors

    def add_trust_root(self, cert: CertificateRecord) -> str:
        if not verify_issued_by(cert, cert):
            raise UnknownIssuerError(f"{cert.subject!r} is not a self-signed root")
        with self._lock:
            digest = cert.digest_hex
            if digest not in self._state.trust_roots:
                self._commit(trust_roots={**self._state.trust_roots, digest: cert.pem})
        return digest

    def trusted_issuer(self, cert: CertificateRecord) -> Optional[CertificateRecord]:
        for digest, pem in self._state.trust_roots.items():
            root = self._cached(digest, pem)
            if root.certificate.subject == cert.certificate.issuer and verify_issued_by(cert, root):
                return root
        return None

    def _cached(self, digest: str, pem: str) -> CertificateRecord:
        rec = self._cert_cache.get(digest)
        if rec is None or rec.pem != pem:
            rec = CertificateRecord.from_pem(pem)
            self._cert_cache[digest] = rec
        return rec

    # certificate hashmap

    def store_certificate(self, cert: CertificateRecord) -> str:
        if self.trusted_issuer(cert) is None:
            raise UnknownIssuerError(f"certificate {cert.subject!r} is not issued by a trusted CA")
        digest = cert.digest_hex
        with self._lock:
            if digest not in self._state.certificates:
                self._commit(certificates={**self._state.certificates, digest: cert.pem})
        return digest

    def get_certificate(self, digest: str) -> Optional[CertificateRecord]:
        check_digest(digest)
        pem = self._state.certificates.get(digest)
        if pem is None:
            return None
        try:
            return self._cached(digest, pem)
        except MalformedCertificateError as e:
            raise LedgerError(f"stored certificate {digest[:12]}… is unreadable: {e}") from None

    # policy registry

    def register_policy(self, doc: PolicyDocument) -> None:
        if not isinstance(doc, PolicyDocument):
            raise PolicyError("register_policy needs a PolicyDocument")
        with self._lock:
            current = self._state.policies.get(doc.name)
            if current is not None and doc.version <= current.version:
                raise StaleVersionError(
                    f"policy {doc.name!r} is at version {current.version}; got {doc.version}"
                )
            self._commit(policies={**self._state.policies, doc.name: doc})

    def get_policy(self, name: str) -> Optional[PolicyDocument]:
        return self._state.policies.get(name)

    # asset table

    def get_asset(self, asset_id: str) -> Optional[AssetRecord]:
        return self._state.assets.get(asset_id)

    def create_asset(self, record: AssetRecord) -> AssetRecord:
        with self._lock:
            if record.id in self._state.assets:
                raise AssetExistsError(f"asset {record.id!r} already exists")
            self._commit(assets={**self._state.assets, record.id: record})
        return record

    def replace_asset(self, record: AssetRecord) -> AssetRecord:
        with self._lock:
            if record.id not in self._state.assets:
                raise AssetNotFoundError(f"asset {record.id!r} not found")
            self._commit(assets={**self._state.assets, record.id: record})
        return record

    def delete_asset(self, asset_id: str) -> None:
        with self._lock:
            if asset_id not in self._state.assets:
                raise AssetNotFoundError(f"asset {asset_id!r} not found")
            assets = dict(self._state.assets)
            del assets[asset_id]
            self._commit(assets=assets)

    # persistence

    def snapshot(self) -> bytes:
        return _encode(self._state)

    @classmethod
    def load(cls, data: bytes, path: str | os.PathLike | None = None) -> Ledger:
        try:
            obj = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise CorruptSnapshotError(f"snapshot is not valid JSON: {e}") from None
        return cls(_state_from_obj(obj), path=path)

    @classmethod
    def open(cls, path: str | os.PathLike) -> Ledger:
        """Load the ledger at ``path`` (empty if missing) and persist to it from now on."""
        path = Path(path)
        if not path.exists():
            return cls(path=path)
        return cls.load(path.read_bytes(), path=path)

    def save(self, path: str | os.PathLike | None = None) -> None:
        target = Path(path) if path is not None else self.path
        if target is None:
            raise LedgerError("no ledger path configured")
        with self._lock:
            atomic_write(target, _encode(self._state))


def _encode(state: LedgerState) -> bytes:
    return json.dumps(state.to_obj(), indent=2, ensure_ascii=False).encode("utf-8") + b"\n"
