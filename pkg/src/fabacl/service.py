"""HTTP/JSON front end for the security contract and the asset contract.

Every JSON response carries ``revision``: the ledger revision the answer was
computed against. Access decisions, including denials, are 200 responses;
only malformed requests and infrastructure faults use error statuses.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Optional
from urllib.parse import unquote

from .assets import AccessDenied, AssetContract, MethodPolicyBinding
from .contract import authenticate, register_parent, validate_access
from .identity import IdentityError, MalformedCertificateError, UnknownIssuerError
from .ledger import AssetExistsError, AssetNotFoundError, Ledger, LedgerError, StaleVersionError, check_digest
from .policy import PolicyError, document_from_obj, document_to_obj

log = logging.getLogger(__name__)

MAX_BODY = 1 << 20


class HttpError(Exception):
    def __init__(self, status: int, code: str, message: str, **extra):
        super().__init__(message)
        self.status = status
        self.code = code
        self.extra = extra


def parse_listen(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address must look like host:port, got {addr!r}")
    return host.strip("[]") or "127.0.0.1", int(port)


@dataclass
class AclService:
    ledger: Ledger
    bindings: MethodPolicyBinding = MethodPolicyBinding()

    # -- handlers return (status, body-without-revision, revision)

    def post_certificate(self, body: bytes, content_type: str):
        if content_type.startswith("application/json"):
            pem = _field(_json(body), "certificate_pem")
        else:
            pem = body.decode("utf-8", "replace")
        cert = _parse_cert(pem)
        try:
            digest = register_parent(self.ledger, cert)
        except UnknownIssuerError as e:
            raise HttpError(403, "unknown-issuer", str(e))
        return 200, {"digest": digest}, self.ledger.revision

    def get_certificate(self, digest: str):
        view = self.ledger.view()
        try:
            check_digest(digest)
        except ValueError as e:
            raise HttpError(400, "malformed-digest", str(e))
        cert = view.get_certificate(digest)
        if cert is None:
            raise HttpError(404, "not-found", f"no certificate {digest}", revision=view.revision)
        return 200, {"digest": digest, "certificate_pem": cert.pem}, view.revision

    def post_policy(self, body: bytes, content_type: str):
        try:
            doc = document_from_obj(_json(body))
        except PolicyError as e:
            raise HttpError(400, "invalid-policy", str(e))
        try:
            self.ledger.register_policy(doc)
        except StaleVersionError as e:
            raise HttpError(409, "stale-version", str(e))
        return 201, {"name": doc.name, "version": doc.version}, self.ledger.revision

    def get_policy(self, name: str):
        view = self.ledger.view()
        doc = view.get_policy(name)
        if doc is None:
            raise HttpError(404, "policy-not-found", f"no policy {name!r}", revision=view.revision)
        return 200, {"policy": document_to_obj(doc)}, view.revision

    def validate(self, body: bytes, content_type: str):
        obj = _json(body)
        view = self.ledger.view()
        cert = self._caller(view, obj)
        decision = validate_access(view, cert, _field(obj, "policy_name"))
        return 200, decision.to_obj(), view.revision

    def noop(self, body: bytes, content_type: str):
        view = self.ledger.view()
        self._caller(view, _json(body))
        return 200, {"allowed": True}, view.revision

    def _caller(self, view: Ledger, obj: dict):
        pem = _field(obj, "certificate_pem")
        try:
            return authenticate(view, pem)
        except MalformedCertificateError as e:
            raise HttpError(400, "malformed-certificate", str(e))
        except UnknownIssuerError as e:
            raise HttpError(403, "unknown-issuer", str(e))

    def _asset_call(self, fn: Callable, *args):
        try:
            return fn(*args)
        except AccessDenied as e:
            raise HttpError(403, "access-denied", str(e), decision=e.decision.to_obj())
        except AssetNotFoundError as e:
            raise HttpError(404, "asset-not-found", str(e))
        except AssetExistsError as e:
            raise HttpError(409, "duplicate-asset", str(e))
        except ValueError as e:
            raise HttpError(400, "invalid-asset", str(e))

    def asset(self, method: str, asset_id: Optional[str], body: bytes):
        obj = _json(body)
        contract = AssetContract(self.ledger, self.bindings)
        caller = self._caller(self.ledger.view(), obj)
        if method == "POST":
            rec = self._asset_call(
                contract.create_asset, caller, _field(obj, "id"), _field(obj, "file_name"), _field(obj, "ipfs_hash")
            )
            return 201, {"asset": rec.to_obj()}, self.ledger.revision
        if method == "GET":
            rec = self._asset_call(contract.read_asset, caller, asset_id)
            return 200, {"asset": rec.to_obj()}, self.ledger.revision
        if method == "PUT":
            rec = self._asset_call(
                contract.update_asset, caller, asset_id, obj.get("file_name"), obj.get("ipfs_hash")
            )
            return 200, {"asset": rec.to_obj()}, self.ledger.revision
        self._asset_call(contract.delete_asset, caller, asset_id)
        return 200, {"deleted": asset_id}, self.ledger.revision

    def route(self, method: str, path: str, body: bytes, content_type: str):
        parts = [unquote(p) for p in path.split("?", 1)[0].strip("/").split("/")]
        match method, parts:
            case "POST", ["certificates"]:
                return self.post_certificate(body, content_type)
            case "GET", ["certificates", digest]:
                return self.get_certificate(digest)
            case "POST", ["policies"]:
                return self.post_policy(body, content_type)
            case "GET", ["policies", name]:
                return self.get_policy(name)
            case "POST", ["validate"]:
                return self.validate(body, content_type)
            case "POST", ["noop"]:
                return self.noop(body, content_type)
            case "POST", ["assets"]:
                return self.asset("POST", None, body)
            case ("GET" | "PUT" | "DELETE"), ["assets", asset_id]:
                return self.asset(method, asset_id, body)
        raise HttpError(404, "no-route", f"no route for {method} {path}")


def _json(body: bytes) -> dict:
    try:
        obj = json.loads(body or b"{}")
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise HttpError(400, "malformed-json", str(e))
    if not isinstance(obj, dict):
        raise HttpError(400, "malformed-json", "request body must be a JSON object")
    return obj


def _field(obj: dict, key: str) -> Any:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise HttpError(400, "missing-field", f"request needs a non-empty string {key!r}")
    return value


def _parse_cert(pem: str):
    from .identity import CertificateRecord

    try:
        return CertificateRecord.from_pem(pem)
    except MalformedCertificateError as e:
        raise HttpError(400, "malformed-certificate", str(e))


def _make_handler(service: AclService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "aclctl"
        # headers and body go out in separate writes; without this they stall on delayed ACKs
        disable_nagle_algorithm = True

        def _dispatch(self):
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY:
                self._send(413, {"error": "too-large", "message": "request body too large"})
                return
            body = self.rfile.read(length) if length else b""
            ctype = self.headers.get("Content-Type", "")
            try:
                status, payload, revision = service.route(self.command, self.path, body, ctype)
                payload = {**payload, "revision": revision}
            except HttpError as e:
                payload = {"error": e.code, "message": str(e), **e.extra}
                payload.setdefault("revision", service.ledger.revision)
                status = e.status
            except (LedgerError, IdentityError, OSError) as e:
                log.exception("request failed")
                status, payload = 500, {"error": "internal", "message": str(e), "revision": service.ledger.revision}
            self._send(status, payload)

        def _send(self, status: int, payload: dict):
            data = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        do_GET = do_POST = do_PUT = do_DELETE = _dispatch

        def log_message(self, fmt, *args):
            log.debug("%s %s", self.address_string(), fmt % args)

    return Handler


def make_server(service: AclService, listen: str = "127.0.0.1:0") -> ThreadingHTTPServer:
    server = ThreadingHTTPServer(parse_listen(listen), _make_handler(service))
    server.daemon_threads = True
    return server


def serve_in_thread(service: AclService, listen: str = "127.0.0.1:0") -> tuple[ThreadingHTTPServer, str]:
    """Start a server on a background thread; returns it and its base URL."""
    server = make_server(service, listen)
    threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True).start()
    host, port = server.server_address[:2]
    return server, f"http://{host}:{port}"
