"""Deterministic stand-in for an embedding service.

``POST /`` with ``{"texts": [...]}`` returns ``{"embeddings": [...]}`` where
each vector is drawn from a generator seeded by the SHA-256 of its text, so
equal texts map to equal vectors. Failure modes exist for exercising the
client: ``short`` drops the last vector, ``nan`` poisons the first one, and
``fail_first`` answers that many requests with HTTP 503 before succeeding.
"""

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

MODES = ("ok", "short", "nan")


def hash_embedding(text, dim=16):
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).tolist()


class _Handler(BaseHTTPRequestHandler):
    server_version = "MockEmbed/1.0"

    def log_message(self, format, *args):
        pass

    def _reply(self, status, payload):
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        srv = self.server
        with srv.lock:
            srv.requests += 1
            failing = srv.requests <= srv.fail_first
        length = int(self.headers.get("Content-Length", 0))
        try:
            texts = json.loads(self.rfile.read(length))["texts"]
        except (ValueError, KeyError):
            self._reply(400, {"error": "expected {\"texts\": [...]}"})
            return
        if failing:
            self._reply(503, {"error": "temporarily unavailable"})
            return
        vectors = [hash_embedding(str(t), srv.dim) for t in texts]
        if srv.mode == "short" and vectors:
            vectors = vectors[:-1]
        elif srv.mode == "nan" and vectors:
            vectors[0][0] = float("nan")
        # json.dumps writes NaN as a bare literal, which the client parses
        self._reply(200, {"embeddings": vectors})


class MockEmbeddingServer:
    """Threaded mock service; use as a context manager, read ``.url``."""

    def __init__(self, host="127.0.0.1", port=0, dim=16, mode="ok", fail_first=0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.dim = dim
        self.httpd.mode = mode
        self.httpd.fail_first = fail_first
        self.httpd.requests = 0
        self.httpd.lock = threading.Lock()
        self._thread = None

    @property
    def url(self):
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/"

    @property
    def request_count(self):
        return self.httpd.requests

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def serve_forever(self):
        self.httpd.serve_forever()
