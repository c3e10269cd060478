"""HTTP gating service.

POST /v1/judge judges one comment against its diff; GET /healthz reports
whether the configured provider can be reached.  The server is stateless per
request apart from the append-only audit log.
"""
from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .diff import MalformedDiff, ReviewComment, parse_unified_diff
from .gate import GateConfig, gate, parse_strategy_set
from .judgment import check_threshold
from .pipeline import Judge, Unjudgeable
from .provider import AuditLog, ContextOverflow, ProviderError

logger = logging.getLogger(__name__)

MAX_BODY_BYTES = 8 * 1024 * 1024
_ALLOWED_FIELDS = {"diff", "comment", "strategy", "threshold", "comment_id"}


class RequestError(Exception):
    def __init__(self, fields: dict[str, str]):
        self.fields = fields
        super().__init__(", ".join(fields))


def validate_request(body: Any) -> dict:
    """Check a /v1/judge body, collecting every field problem before failing."""
    if not isinstance(body, dict):
        raise RequestError({"body": "must be a JSON object"})
    problems: dict[str, str] = {}
    for name in ("diff", "comment"):
        value = body.get(name)
        if value is None:
            problems[name] = "required"
        elif not isinstance(value, str) or not value.strip():
            problems[name] = "must be a non-empty string"
    out: dict = {}
    if "diff" not in problems:
        try:
            out["diff"] = parse_unified_diff(body["diff"])
        except MalformedDiff as exc:
            problems["diff"] = f"malformed diff: {exc}"
    if body.get("strategy") is not None:
        try:
            out["strategy_set"] = parse_strategy_set(str(body["strategy"]))
        except ValueError as exc:
            problems["strategy"] = str(exc)
    if body.get("threshold") is not None:
        try:
            out["threshold"] = check_threshold(body["threshold"])
        except ValueError as exc:
            problems["threshold"] = str(exc)
    for name in sorted(set(body) - _ALLOWED_FIELDS):
        problems[name] = "unknown field"
    if problems:
        raise RequestError(problems)
    out["comment"] = ReviewComment(str(body.get("comment_id") or "request"), body["comment"])
    return out


class GateServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, judge: Judge, config: GateConfig, audit: AuditLog | None = None):
        super().__init__(address, GateHandler)
        self.judge = judge
        self.config = config
        self.audit = audit

    def handle_judge(self, body: Any) -> tuple[int, dict]:
        try:
            req = validate_request(body)
        except RequestError as exc:
            return HTTPStatus.BAD_REQUEST, {"error": "invalid request", "fields": exc.fields}
        try:
            decision = gate(
                self.judge,
                self.config,
                req["diff"],
                req["comment"],
                req.get("strategy_set"),
                req.get("threshold"),
            )
        except ContextOverflow as exc:
            return HTTPStatus.REQUEST_ENTITY_TOO_LARGE, {"error": "context window exceeded", "detail": str(exc)}
        except Unjudgeable as exc:
            return HTTPStatus.BAD_GATEWAY, {"error": "unjudgeable", "detail": exc.reason}
        except ProviderError as exc:
            return HTTPStatus.BAD_GATEWAY, {"error": "provider failure", "detail": f"{type(exc).__name__}: {exc}"}
        payload = decision.to_dict()
        if self.audit is not None:
            self.audit.write(
                {
                    "time": time.time(),
                    "diff_sha256": hashlib.sha256(req["diff"].raw_text.encode("utf-8")).hexdigest(),
                    "comment": req["comment"].text,
                    "decision": payload,
                }
            )
        return HTTPStatus.OK, payload


class GateHandler(BaseHTTPRequestHandler):
    server: GateServer
    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args) -> None:
        logger.debug("%s - %s", self.address_string(), format % args)

    def _send(self, status: int, payload: dict) -> None:
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self) -> None:
        if self.path != "/healthz":
            self._send(HTTPStatus.NOT_FOUND, {"error": "not found"})
            return
        model = self.server.config.model
        if self.server.judge.gateway.healthy(model):
            self._send(HTTPStatus.OK, {"status": "ok", "provider": model.provider_id})
        else:
            self._send(HTTPStatus.SERVICE_UNAVAILABLE, {"status": "unavailable", "provider": model.provider_id})

    def do_POST(self) -> None:
        if self.path != "/v1/judge":
            self._send(HTTPStatus.NOT_FOUND, {"error": "not found"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            self._send(HTTPStatus.BAD_REQUEST, {"error": "invalid request", "fields": {"body": "bad Content-Length"}})
            return
        if length > MAX_BODY_BYTES:
            self.close_connection = True
            self._send(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, {"error": "request body too large"})
            return
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            self._send(HTTPStatus.BAD_REQUEST, {"error": "invalid request", "fields": {"body": f"invalid JSON: {exc}"}})
            return
        try:
            status, payload = self.server.handle_judge(body)
        except Exception:  # the service must survive any single bad request
            logger.exception("unhandled error while judging")
            status, payload = HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "internal error"}
        self._send(status, payload)


def make_server(host: str, port: int, judge: Judge, config: GateConfig, audit: AuditLog | None = None) -> GateServer:
    return GateServer((host, port), judge, config, audit)


def serve_in_thread(server: GateServer, poll_interval: float = 0.05) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, args=(poll_interval,), daemon=True)
    thread.start()
    return thread
