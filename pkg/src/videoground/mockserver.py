"""Tiny HTTP server exposing the mock backend suite.

Serves the same POST /v1/{kind} protocol the real services speak, so
the HTTP transport path can be exercised end to end without any model
weights. Run standalone with ``python -m videoground.mockserver``.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .backends import KINDS
from .errors import BackendSchemaError
from .mocks import MockBackendSuite

logger = logging.getLogger(__name__)


class _Handler(BaseHTTPRequestHandler):
    suite: MockBackendSuite

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        parts = self.path.strip("/").split("/")
        if len(parts) != 2 or parts[0] != "v1" or parts[1] not in KINDS:
            self._reply(404, {"error": f"unknown path {self.path}"})
            return
        kind = parts[1]
        try:
            length = int(self.headers.get("Content-Length", "0"))
            request = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            self._reply(400, {"error": "request body is not JSON"})
            return
        try:
            response = self.suite.handle(kind, request)
        except BackendSchemaError as exc:
            self._reply(400, {"error": str(exc)})
            return
        self._reply(200, response)

    def log_message(self, fmt, *args):
        logger.debug("%s - %s", self.address_string(), fmt % args)


def make_server(
    suite: MockBackendSuite, host: str = "127.0.0.1", port: int = 0
) -> ThreadingHTTPServer:
    handler = type("SuiteHandler", (_Handler,), {"suite": suite})
    return ThreadingHTTPServer((host, port), handler)


class ServerThread:
    """Context manager running the mock server on a background thread."""

    def __init__(self, suite: MockBackendSuite | None = None, port: int = 0):
        self.server = make_server(suite or MockBackendSuite(), port=port)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "ServerThread":
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Serve deterministic mock backends.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8099)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    server = make_server(MockBackendSuite(seed=args.seed), host=args.host, port=args.port)
    logger.info("mock backends listening on %s:%d", args.host, args.port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
