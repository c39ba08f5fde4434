"""Minimal JSON-over-HTTP search service.

Read-only: `POST /search` with ``{"text": <sentence>, "k": <count>}``
returns the same payload as offline retrieval; `GET /healthz` reports 503
until the artifacts are loaded, then 200.  The index and model are
immutable, so concurrent requests need no locking.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .corpus import Sentence, Vocabulary, tokenize
from .encoder import PhraseEncoder
from .index import PhraseIndex
from .pipeline import result_to_json, retrieve
from .segmenter import SegmentConfig


class SearchService:
    """Bundles the loaded artifacts behind a ready flag."""

    def __init__(
        self,
        model: PhraseEncoder,
        vocab: Vocabulary,
        index: PhraseIndex,
        seg_cfg: SegmentConfig = SegmentConfig(),
        language: str = "und",
        lowercase: bool = False,
    ) -> None:
        if index.dim and index.dim != model.config.o:
            raise ValueError(
                f"index dimension {index.dim} does not match encoder "
                f"output {model.config.o}"
            )
        self.model = model
        self.vocab = vocab
        self.index = index
        self.seg_cfg = seg_cfg
        self.language = language
        self.lowercase = lowercase

    def search(self, text: str, k: int) -> dict:
        tokens = tokenize(text, self.lowercase)
        if not tokens:
            return {"results": []}
        sentence = Sentence(tuple(tokens), self.language, 0)
        results = retrieve(
            sentence, self.model, self.vocab, self.index, self.seg_cfg, k
        )
        return {"results": [result_to_json(r) for r in results]}


class _Handler(BaseHTTPRequestHandler):
    server: "SearchServer"

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self) -> None:
        if self.path == "/healthz":
            if self.server.service is None:
                self._reply(503, {"status": "warming up"})
            else:
                self._reply(200, {"status": "ok"})
        else:
            self._reply(404, {"error": "not found"})

    def do_POST(self) -> None:
        if self.path != "/search":
            self._reply(404, {"error": "not found"})
            return
        service = self.server.service
        if service is None:
            self._reply(503, {"error": "warming up"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            text = payload["text"]
            k = int(payload.get("k", 8))
            if not isinstance(text, str) or k < 1:
                raise ValueError("bad request fields")
        except (ValueError, KeyError, json.JSONDecodeError, UnicodeDecodeError):
            self._reply(400, {"error": "malformed request"})
            return
        self._reply(200, service.search(text, k))

    def log_message(self, fmt: str, *args) -> None:  # quiet by default
        pass


class SearchServer(ThreadingHTTPServer):
    """HTTP façade; ``service`` may be attached after startup (warmup)."""

    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: SearchService | None):
        super().__init__(address, _Handler)
        self.service = service

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve_forever(
    service: SearchService, host: str = "127.0.0.1", port: int = 8080
) -> None:
    server = SearchServer((host, port), service)
    print(f"serving on http://{host}:{server.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def start_background(
    service: SearchService | None, host: str = "127.0.0.1", port: int = 0
) -> SearchServer:
    """Start a server on a background thread (tests, warmup flows)."""
    server = SearchServer((host, port), service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
