"""Newline-delimited JSON client for out-of-process scorers and detectors.

Wire format (one request and one reply per line, UTF-8, ``\\n`` terminated,
keys sorted, no insignificant whitespace) is documented in docs/protocol.md.
"""
from __future__ import annotations

import base64
import json
import logging
import os
import socket
import threading
import time

import numpy as np

from .base import BackendUnavailable, Detection, FrontierScores, GoalQuery, ScoreRequest

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
TIMEOUT_S = 2.0
ENV_ADDR = "GOALNAV_SCORER_ADDR"
MAX_LINE = 1 << 24


class ProtocolError(BackendUnavailable):
    def __init__(self, msg: str, raw: bytes = b""):
        super().__init__(msg)
        self.raw = raw


def encode(msg: dict) -> bytes:
    return json.dumps(msg, separators=(",", ":"), sort_keys=True).encode("utf-8") + b"\n"


def encode_image(rgb) -> dict | None:
    if rgb is None:
        return None
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    return {"encoding": "rgb8", "h": int(h), "w": int(w), "data": base64.b64encode(rgb.tobytes()).decode("ascii")}


def decode_image(img: dict | None) -> np.ndarray | None:
    if img is None:
        return None
    raw = base64.b64decode(img["data"])
    return np.frombuffer(raw, dtype=np.uint8).reshape(img["h"], img["w"], 3)


def score_message(req: ScoreRequest, send_image: bool = False) -> dict:
    return {
        "type": "score_frontiers",
        "v": PROTOCOL_VERSION,
        "query": req.query.text,
        "query_id": req.query.query_id,
        "frontiers": [[round(float(x), 4), round(float(y), 4)] for x, y in req.frontiers_xy],
        "pose": [round(float(v), 6) for v in req.pose],
        "history": req.history,
        "stages": list(req.stages),
        "image": encode_image(req.rgb) if send_image else None,
    }


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {addr!r}")
    return host, int(port)


class LineClient:
    """One persistent connection, one request in flight at a time."""

    def __init__(self, address: tuple[str, int] | str | None = None, timeout: float = TIMEOUT_S):
        if address is None:
            address = os.environ.get(ENV_ADDR)
            if not address:
                raise ValueError(f"no endpoint given and ${ENV_ADDR} is unset")
        self.address = parse_address(address) if isinstance(address, str) else tuple(address)
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._buf = b""
        self._lock = threading.Lock()

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock = None
        self._buf = b""

    def _readline(self, deadline: float) -> bytes:
        while b"\n" not in self._buf:
            left = deadline - time.monotonic()
            if left <= 0:
                raise socket.timeout("reply deadline passed")
            self._sock.settimeout(left)
            chunk = self._sock.recv(65536)
            if not chunk:
                raise ConnectionError("peer closed the connection")
            self._buf += chunk
            if len(self._buf) > MAX_LINE:
                raise ProtocolError("reply line too long", self._buf[:256])
        line, _, self._buf = self._buf.partition(b"\n")
        return line

    def request(self, msg: dict) -> dict:
        with self._lock:
            deadline = time.monotonic() + self.timeout
            try:
                if self._sock is None:
                    self._sock = socket.create_connection(self.address, timeout=self.timeout)
                self._sock.settimeout(max(deadline - time.monotonic(), 1e-3))
                self._sock.sendall(encode(msg))
                raw = self._readline(deadline)
            except (OSError, ConnectionError) as e:
                # socket.timeout is an OSError; a late reply must not be read as the next one
                self.close()
                raise BackendUnavailable(f"{type(e).__name__}: {e}") from e
            except ProtocolError:
                self.close()
                raise
        try:
            reply = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            log.error("malformed reply %r", raw[:512])
            raise ProtocolError(f"malformed reply: {e}", raw) from e
        if not isinstance(reply, dict):
            log.error("malformed reply %r", raw[:512])
            raise ProtocolError("reply is not an object", raw)
        return reply


class ExternalScorer:
    def __init__(self, address=None, timeout: float = TIMEOUT_S, send_image: bool = False):
        self.client = LineClient(address, timeout)
        self.send_image = send_image

    def score_frontiers(self, request: ScoreRequest) -> FrontierScores:
        reply = self.client.request(score_message(request, self.send_image))
        scores = reply.get("scores")
        n = len(request.frontiers_xy)
        raw = encode(reply)
        if not isinstance(scores, list) or len(scores) != n:
            log.error("scorer reply has wrong shape for %d frontiers: %r", n, raw[:512])
            raise ProtocolError(f"expected {n} scores", raw)
        try:
            return FrontierScores([float(s) for s in scores])
        except (TypeError, ValueError) as e:
            log.error("scorer reply out of range: %r", raw[:512])
            raise ProtocolError(str(e), raw) from e

    def close(self):
        self.client.close()


class ExternalDetector:
    def __init__(self, address=None, timeout: float = TIMEOUT_S):
        self.client = LineClient(address, timeout)

    def detect(self, obs, query: GoalQuery) -> list[Detection]:
        msg = {"type": "detect", "v": PROTOCOL_VERSION, "query": query.text, "query_id": query.query_id, "image": encode_image(obs.rgb)}
        reply = self.client.request(msg)
        items = reply.get("detections")
        if not isinstance(items, list):
            raise ProtocolError("missing detections", encode(reply))
        h, w = obs.rgb.shape[:2]
        out = []
        try:
            for d in items:
                x1, y1, x2, y2 = (int(v) for v in d["bbox"])
                mask = np.zeros((h, w), dtype=bool)
                mask[max(y1, 0):y2, max(x1, 0):x2] = True
                out.append(Detection((x1, y1, x2, y2), float(d["confidence"]), mask))
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"bad detection entry: {e}", encode(reply)) from e
        return sorted(out, key=lambda d: -d.confidence)

    def close(self):
        self.client.close()
