"""Black-box prediction service and the matching HTTP provider.

POST /predict takes a graph payload (the graph file schema without
labels) and returns exactly {"model": name, "probabilities": rows}; the
service never exposes parameters, pre-softmax logits, or intermediate
embeddings. GET /health returns ok. Floats travel as JSON shortest
round-trip decimals, so a remote verification sees bit-identical numbers
to an in-process one.
"""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests

from .errors import ParseError, ProtocolError, TransportError
from .graphs import Graph, graph_from_dict, graph_to_dict
from .models import GnnModel, forward, load_model

BIND_ENV = "EDGEMARK_BIND"
DEFAULT_BIND = "127.0.0.1:8750"


def _make_handler(model: GnnModel, model_name: str):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # keep the server quiet
            pass

        def _send(self, code: int, payload: dict):
            body = json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/health":
                self._send(200, {"status": "ok"})
            else:
                self._send(404, {"error": f"no such path {self.path}"})

        def do_POST(self):
            if self.path != "/predict":
                self._send(404, {"error": f"no such path {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                doc = json.loads(self.rfile.read(length))
                if not isinstance(doc, dict):
                    raise ParseError("request: top level must be an object")
                doc.pop("labels", None)  # predictions never see labels
                g = graph_from_dict(doc, where="request")
            except (ParseError, json.JSONDecodeError, ValueError) as exc:
                self._send(400, {"error": str(exc)})
                return
            try:
                if g.feature_dim != model.in_dim:
                    raise ParseError(
                        f"request: field 'feature_dim' is {g.feature_dim}, "
                        f"model expects {model.in_dim}")
            except ParseError as exc:
                self._send(400, {"error": str(exc)})
                return
            try:
                _, probs = forward(model, g)
            except Exception as exc:  # inference failure
                self._send(500, {"error": f"inference failed: {exc}"})
                return
            self._send(200, {"model": model_name,
                             "probabilities": probs.tolist()})

    return Handler


def make_server(model: GnnModel, model_name: str,
                bind: str | None = None) -> ThreadingHTTPServer:
    bind = bind or os.environ.get(BIND_ENV, DEFAULT_BIND)
    host, _, port = bind.partition(":")
    server = ThreadingHTTPServer((host, int(port or 0)),
                                 _make_handler(model, model_name))
    return server


def serve(checkpoint_path, bind: str | None = None) -> None:
    """Load a checkpoint and answer requests until interrupted."""
    model = load_model(checkpoint_path)
    server = make_server(model, str(checkpoint_path), bind)
    host, port = server.server_address
    print(f"serving {checkpoint_path} on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


class ServerThread:
    """Run a prediction service on a background thread (tests, local use)."""

    def __init__(self, model: GnnModel, model_name: str = "model",
                 bind: str = "127.0.0.1:0"):
        self.server = make_server(model, model_name, bind)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


class HttpProvider:
    """PredictionProvider backed by a remote /predict endpoint."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.queries = 0

    def predict(self, g: Graph) -> np.ndarray:
        payload = graph_to_dict(g, include_labels=False)
        self.queries += 1
        try:
            resp = requests.post(f"{self.url}/predict", json=payload,
                                 timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"POST {self.url}/predict failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(
                f"POST {self.url}/predict returned {resp.status_code}: {resp.text[:200]}")
        try:
            doc = resp.json()
            rows = doc["probabilities"]
        except (ValueError, KeyError) as exc:
            raise ProtocolError(f"malformed response: {exc}") from exc
        probs = np.asarray(rows, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] != g.num_nodes:
            raise ProtocolError(f"expected {g.num_nodes} rows, got {probs.shape}")
        return probs
