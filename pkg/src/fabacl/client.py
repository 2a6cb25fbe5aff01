"""Thin HTTP client for the access-control service (one keep-alive connection)."""

from __future__ import annotations

import http.client
import json
from typing import Any, Optional
from urllib.parse import quote, urlsplit


class ServiceError(Exception):
    def __init__(self, status: int, payload: dict):
        super().__init__(f"{status} {payload.get('error', '')}: {payload.get('message', '')}".strip())
        self.status = status
        self.payload = payload


class ServiceUnreachable(ServiceError):
    def __init__(self, url: str, err: Exception):
        Exception.__init__(self, f"service at {url} is unreachable: {err}")
        self.status = 0
        self.payload = {}


class AclClient:
    def __init__(self, base_url: str, timeout: float = 10.0):
        parts = urlsplit(base_url)
        if parts.scheme != "http" or not parts.hostname:
            raise ValueError(f"service URL must be http://host:port, got {base_url!r}")
        self.base_url = base_url
        self._host = parts.hostname
        self._port = parts.port or 80
        self._timeout = timeout
        self._conn: Optional[http.client.HTTPConnection] = None

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, method: str, path: str, body: Any = None, content_type: str = "application/json") -> tuple[int, dict]:
        if body is None:
            data = b""
        elif isinstance(body, (bytes, str)):
            data = body.encode() if isinstance(body, str) else body
        else:
            data = json.dumps(body).encode()
        headers = {"Content-Type": content_type, "Content-Length": str(len(data))}
        for attempt in (0, 1):
            if self._conn is None:
                self._conn = http.client.HTTPConnection(self._host, self._port, timeout=self._timeout)
            try:
                self._conn.request(method, path, body=data, headers=headers)
                resp = self._conn.getresponse()
                raw = resp.read()
                break
            except (ConnectionError, http.client.HTTPException, OSError) as e:
                self.close()
                # a stale keep-alive connection gets one retry
                if attempt or isinstance(e, ConnectionRefusedError):
                    raise ServiceUnreachable(self.base_url, e) from None
        try:
            payload = json.loads(raw) if raw else {}
        except json.JSONDecodeError:
            payload = {"error": "bad-response", "message": raw[:200].decode("latin-1")}
        return resp.status, payload

    def _ok(self, method: str, path: str, body: Any = None, **kw) -> dict:
        status, payload = self.request(method, path, body, **kw)
        if status >= 300:
            raise ServiceError(status, payload)
        return payload

    def register_parent(self, pem: str) -> dict:
        return self._ok("POST", "/certificates", pem, content_type="application/x-pem-file")

    def get_certificate(self, digest: str) -> dict:
        return self._ok("GET", f"/certificates/{quote(digest)}")

    def add_policy(self, doc_obj: dict) -> dict:
        return self._ok("POST", "/policies", doc_obj)

    def get_policy(self, name: str) -> dict:
        return self._ok("GET", f"/policies/{quote(name)}")

    def validate(self, pem: str, policy_name: str) -> dict:
        return self._ok("POST", "/validate", {"certificate_pem": pem, "policy_name": policy_name})

    def noop(self, pem: str) -> dict:
        return self._ok("POST", "/noop", {"certificate_pem": pem})
