""" A local stand-in for the multimodal model endpoint, used by tests and offline demos. """

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Dict, List, Literal, Optional

import fire  # type: ignore

MockMode = Literal["ok", "fail", "garbage"]


def reply(body: Dict[str, Any]) -> str:
    """ A plausible free-text answer built from the request's metadata sidecar. """
    role = body.get("role")
    meta = body.get("metadata", {})
    if role == "select_region":
        return "All labels are readable, none."
    elif role == "predict_target":
        frontiers = meta.get("frontiers", [])
        if frontiers:
            x, y = max(frontiers, key=lambda f: f["size"])["midpoint"]
        else:
            x, y = meta.get("agent", {}).get("position", [0.0, 0.0])
        return f"The target is most likely around ({x:.2f}, {y:.2f})."
    elif role == "score_markers":
        labels = sorted(meta.get("markers", {}), key=lambda label: int(label[1:]))
        return "\n".join(f"{label}: 0.5" for label in labels) or "no markers"
    raise ValueError(f"Unknown role {role}")


class MockHandler(BaseHTTPRequestHandler):
    server: "MockServer"

    def do_POST(self) -> None:
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        self.server.requests.append(body)
        if self.server.mode == "fail":
            self._send(503, {"error": "unavailable"})
        elif self.server.mode == "garbage":
            self._send(200, {"text": "I am not sure."})
        else:
            try:
                self._send(200, {"text": reply(body)})
            except ValueError as e:
                self._send(400, {"error": str(e)})

    def _send(self, status: int, payload: Dict[str, Any]) -> None:
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, format: str, *args: Any) -> None:
        logging.debug(f"mock server: {format % args}")


class MockServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, host: str = "127.0.0.1", port: int = 0, mode: MockMode = "ok") -> None:
        super().__init__((host, port), MockHandler)
        self.mode = mode
        self.requests: List[Dict[str, Any]] = []
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}/"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc: Any) -> None:
        self.stop()


def serve(port: int = 8765, mode: MockMode = "ok") -> None:
    logging.basicConfig(level="INFO")
    server = MockServer("127.0.0.1", port, mode)
    logging.info(f"Serving mock reasoner at {server.url} in {mode} mode")
    try:
        server.serve_forever()
    finally:
        server.server_close()


if __name__ == "__main__":
    fire.Fire(serve)
