"""File-system wallet: ``<wallet>/<name>/{cert.pem,key.pem,meta.json}``."""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .identity import CertificateRecord, KeyPair, ParentLink, read_parent_link

CERT_FILE = "cert.pem"
KEY_FILE = "key.pem"
META_FILE = "meta.json"


class WalletError(Exception):
    pass


@dataclass
class WalletEntry:
    path: Path
    cert: CertificateRecord
    key: Optional[KeyPair]
    meta: dict

    @property
    def name(self) -> str:
        return self.path.name


def entry_meta(cert: CertificateRecord) -> dict:
    attrs = cert.attributes
    link = read_parent_link(attrs)
    return {
        "name": cert.subject,
        "issuer": cert.issuer,
        "serial": cert.serial,
        "digest": cert.digest_hex,
        "not_before": cert.not_before.isoformat(),
        "not_after": cert.not_after.isoformat(),
        "attributes": attrs,
        "parent": None if link is None else {"hash": link.parent_hash, "signature": link.parent_signature},
    }


def write_entry(wallet: Path, name: str, cert: CertificateRecord, key: KeyPair, force: bool = False) -> Path:
    """Write one identity all-or-nothing; refuses to overwrite unless ``force``."""
    if not name or name in (".", "..") or "/" in name or os.sep in name:
        raise WalletError(f"invalid wallet entry name {name!r}")
    wallet = Path(wallet)
    wallet.mkdir(parents=True, exist_ok=True)
    final = wallet / name
    if final.exists() and not force:
        raise WalletError(f"wallet entry {final} exists; use --force to replace it")
    tmp = Path(tempfile.mkdtemp(prefix=f".{name}.", dir=wallet))
    try:
        (tmp / CERT_FILE).write_text(cert.pem)
        key_path = tmp / KEY_FILE
        fd = os.open(key_path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        with os.fdopen(fd, "wb") as fh:
            fh.write(key.private_pem())
        (tmp / META_FILE).write_text(json.dumps(entry_meta(cert), indent=2) + "\n")
        os.chmod(tmp, 0o700)
        if final.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{name}.old.", dir=wallet))
            os.replace(final, old / name)
            os.replace(tmp, final)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return final


def resolve_entry(wallet: Path, ref: str) -> Path:
    """``ref`` is either an entry directory or a name inside ``wallet``."""
    p = Path(ref)
    if (p / CERT_FILE).exists():
        return p
    return Path(wallet) / ref


def read_entry(path: Path, need_key: bool = False) -> WalletEntry:
    path = Path(path)
    cert_path, key_path = path / CERT_FILE, path / KEY_FILE
    if not cert_path.exists():
        raise WalletError(f"no {CERT_FILE} in wallet entry {path}")
    if need_key and not key_path.exists():
        raise WalletError(f"no {KEY_FILE} in wallet entry {path}")
    cert = CertificateRecord.from_pem(cert_path.read_bytes())
    key = KeyPair.from_pem(key_path.read_bytes()) if key_path.exists() else None
    meta_path = path / META_FILE
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return WalletEntry(path, cert, key, meta)


def list_entries(wallet: Path) -> list[WalletEntry]:
    wallet = Path(wallet)
    if not wallet.is_dir():
        return []
    return [
        read_entry(p)
        for p in sorted(wallet.iterdir())
        if p.is_dir() and not p.name.startswith(".") and (p / CERT_FILE).exists()
    ]


def link_from_args(parent_hash: Optional[str], parent_signature: Optional[str]) -> Optional[ParentLink]:
    if parent_hash is None and parent_signature is None:
        return None
    if parent_hash is None or parent_signature is None:
        raise WalletError("--parent-hash and --parent-signature must be given together")
    return ParentLink(parent_hash, parent_signature)
