"""Client contract over an asset table of IPFS document hashes.

Each method is guarded by its own named policy, resolved through the
security contract before any state is read or written.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .contract import AccessDecision, validate_access
from .identity import CertificateRecord
from .ledger import AssetNotFoundError, AssetRecord, Ledger

METHODS = ("create", "read", "update", "delete")


class AccessDenied(PermissionError):
    def __init__(self, method: str, decision: AccessDecision):
        super().__init__(f"{method} denied: {decision.reason.value} ({decision.policy_name})")
        self.method = method
        self.decision = decision


@dataclass(frozen=True)
class MethodPolicyBinding:
    create: str = "CreatePolicy"
    read: str = "ReadPolicy"
    update: str = "UpdatePolicy"
    delete: str = "DeletePolicy"

    @classmethod
    def from_obj(cls, obj: dict) -> MethodPolicyBinding:
        missing = set(METHODS) - set(obj)
        unknown = set(obj) - set(METHODS)
        if missing or unknown:
            raise ValueError(f"bindings must map exactly {list(METHODS)}")
        if not all(isinstance(v, str) and v for v in obj.values()):
            raise ValueError("binding targets must be non-empty policy names")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | os.PathLike) -> MethodPolicyBinding:
        return cls.from_obj(json.loads(Path(path).read_text()))

    def to_obj(self) -> dict[str, str]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="microseconds")


class AssetContract:
    def __init__(self, ledger: Ledger, bindings: Optional[MethodPolicyBinding] = None):
        self.ledger = ledger
        self.bindings = bindings or MethodPolicyBinding()

    def _guard(self, method: str, caller: CertificateRecord) -> AccessDecision:
        decision = validate_access(self.ledger, caller, getattr(self.bindings, method))
        if not decision.allowed:
            raise AccessDenied(method, decision)
        return decision

    def create_asset(self, caller: CertificateRecord, asset_id: str, file_name: str, ipfs_hash: str) -> AssetRecord:
        self._guard("create", caller)
        now = _now()
        # owner is the presenting certificate even when access came through its parent
        record = AssetRecord(asset_id, file_name, ipfs_hash, caller.digest_hex, now, now)
        return self.ledger.create_asset(record)

    def read_asset(self, caller: CertificateRecord, asset_id: str) -> AssetRecord:
        self._guard("read", caller)
        record = self.ledger.get_asset(asset_id)
        if record is None:
            raise AssetNotFoundError(f"asset {asset_id!r} not found")
        return record

    def update_asset(
        self,
        caller: CertificateRecord,
        asset_id: str,
        file_name: Optional[str] = None,
        ipfs_hash: Optional[str] = None,
    ) -> AssetRecord:
        self._guard("update", caller)
        current = self.ledger.get_asset(asset_id)
        if current is None:
            raise AssetNotFoundError(f"asset {asset_id!r} not found")
        record = AssetRecord(
            id=current.id,
            file_name=current.file_name if file_name is None else file_name,
            ipfs_hash=current.ipfs_hash if ipfs_hash is None else ipfs_hash,
            owner=current.owner,
            created_at=current.created_at,
            updated_at=_now(),
        )
        return self.ledger.replace_asset(record)

    def delete_asset(self, caller: CertificateRecord, asset_id: str) -> None:
        self._guard("delete", caller)
        self.ledger.delete_asset(asset_id)
