"""Request/response API for the coordinator, plus a small HTTP binding.

:class:`CoordinatorService` is transport-agnostic: ``handle(method, target,
body)`` returns ``(status, content_type, body)``. The HTTP server and
:class:`HttpCoordinatorClient` are thin wrappers around it.
"""
from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .coordinator import Coordinator, RootBundle
from .errors import DuplicateError, NotFoundError, PersistenceError
from .merkle import InclusionProof
from .smt import SmtProof

log = logging.getLogger(__name__)

JSON = "application/json"
NDJSON = "application/x-ndjson"


def _json(status: int, payload: dict) -> tuple[int, str, bytes]:
    return status, JSON, json.dumps(payload, sort_keys=True).encode("utf-8")


class CoordinatorService:
    def __init__(self, coordinator: Coordinator):
        self.coordinator = coordinator

    def handle(self, method: str, target: str, body: bytes = b"") -> tuple[int, str, bytes]:
        url = urllib.parse.urlsplit(target)
        query = {k: v[-1] for k, v in urllib.parse.parse_qs(url.query).items()}
        route = (method.upper(), url.path.rstrip("/") or "/")
        try:
            if route == ("POST", "/register"):
                return _json(200, self.coordinator.register_commitment(_commitment(json.loads(body or b"{}"))))
            if route == ("POST", "/revoke"):
                return _json(200, self.coordinator.revoke_commitment(_commitment(json.loads(body or b"{}"))))
            if route == ("GET", "/bundle"):
                epoch = int(query["epoch"]) if "epoch" in query else None
                return _json(200, self.coordinator.fetch_bundle(epoch).to_json())
            if route == ("GET", "/witness"):
                epoch = int(query["epoch"]) if "epoch" in query else None
                allow_proof, block_proof = self.coordinator.membership_witness(_commitment(query), epoch)
                return _json(200, {"allow_proof": allow_proof.hex(), "block_proof": block_proof.hex()})
            if route == ("GET", "/audit"):
                return 200, NDJSON, "".join(line + "\n" for line in self.coordinator.audit_export()).encode()
        except NotFoundError as exc:
            return _json(404, {"error": "not_found", "detail": str(exc)})
        except DuplicateError as exc:
            return _json(409, {"error": "duplicate", "detail": str(exc)})
        except PersistenceError as exc:
            return _json(503, {"error": "persistence", "detail": str(exc)})
        except (ValueError, KeyError, TypeError) as exc:
            return _json(400, {"error": "bad_request", "detail": str(exc)})
        return _json(404, {"error": "no_route", "detail": f"{route[0]} {route[1]}"})


def _commitment(params: dict) -> bytes:
    value = bytes.fromhex(params["commitment"])
    if len(value) != 32:
        raise ValueError("commitment must be 32 bytes of hex")
    return value


def make_server(service: CoordinatorService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def _dispatch(self, method: str) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            status, ctype, payload = service.handle(method, self.path, body)
            self.send_response(status)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def do_GET(self) -> None:
            self._dispatch("GET")

        def do_POST(self) -> None:
            self._dispatch("POST")

        def log_message(self, fmt: str, *args) -> None:
            log.debug("%s " + fmt, self.address_string(), *args)

    return ThreadingHTTPServer((host, port), Handler)


def serve_in_thread(service: CoordinatorService, host: str = "127.0.0.1", port: int = 0):
    server = make_server(service, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread


class HttpCoordinatorClient:
    """Same method names as :class:`Coordinator`, over HTTP."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _call(self, method: str, path: str, payload: Optional[dict] = None) -> bytes:
        data = json.dumps(payload).encode() if payload is not None else None
        req = urllib.request.Request(self.base_url + path, data=data, method=method,
                                     headers={"Content-Type": JSON} if data else {})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            detail = json.loads(exc.read() or b"{}")
            if exc.code == 404:
                raise NotFoundError(detail.get("detail", "not found")) from None
            if exc.code == 409:
                raise DuplicateError(detail.get("detail", "duplicate")) from None
            if exc.code == 400:
                raise ValueError(detail.get("detail", "bad request")) from None
            raise

    def register_commitment(self, commitment: bytes) -> dict:
        return json.loads(self._call("POST", "/register", {"commitment": commitment.hex()}))

    def revoke_commitment(self, commitment: bytes) -> dict:
        return json.loads(self._call("POST", "/revoke", {"commitment": commitment.hex()}))

    def fetch_bundle(self, epoch: Optional[int] = None) -> RootBundle:
        path = "/bundle" if epoch is None else f"/bundle?epoch={epoch}"
        return RootBundle.from_bytes(bytes.fromhex(json.loads(self._call("GET", path))["encoding"]))

    def membership_witness(self, commitment: bytes, epoch: Optional[int] = None) -> tuple[InclusionProof, SmtProof]:
        path = f"/witness?commitment={commitment.hex()}"
        if epoch is not None:
            path += f"&epoch={epoch}"
        body = json.loads(self._call("GET", path))
        return InclusionProof.fromhex(body["allow_proof"]), SmtProof.fromhex(body["block_proof"])

    def audit_export(self) -> list[str]:
        return [line for line in self._call("GET", "/audit").decode().split("\n") if line]
