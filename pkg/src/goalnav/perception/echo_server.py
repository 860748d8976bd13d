"""Bundled test server for the scorer wire protocol, with fault injection.

Modes:
  echo          0.5 for every frontier, no detections
  malformed     a line that is not JSON
  wrong-length  one score too many
  delay         sleeps ``delay_s`` before a normal reply
  drop          writes half a reply and closes the connection

Run standalone with ``python -m goalnav.perception.echo_server --port 7070``.
"""
from __future__ import annotations

import argparse
import json
import socketserver
import threading
import time

MODES = ("echo", "malformed", "wrong-length", "delay", "drop")


def reply_for(msg: dict, mode: str) -> bytes:
    if msg.get("type") == "detect":
        body = {"detections": []}
    else:
        n = len(msg.get("frontiers", []))
        body = {"scores": [0.5] * (n + (1 if mode == "wrong-length" else 0))}
    return json.dumps(body, separators=(",", ":"), sort_keys=True).encode() + b"\n"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        srv = self.server
        for line in self.rfile:
            with srv.lock:
                srv.requests.append(line)
            mode = srv.mode
            if mode == "malformed":
                self.wfile.write(b"{scores: nope\n")
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                self.wfile.write(b'{"error":"bad request"}\n')
                continue
            out = reply_for(msg, mode)
            if mode == "delay":
                time.sleep(srv.delay_s)
            if mode == "drop":
                self.wfile.write(out[: len(out) // 2])
                self.wfile.flush()
                return
            self.wfile.write(out)


class EchoServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, mode: str = "echo", host: str = "127.0.0.1", port: int = 0, delay_s: float = 3.0):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        super().__init__((host, port), _Handler)
        self.mode = mode
        self.delay_s = delay_s
        self.requests: list[bytes] = []
        self.lock = threading.Lock()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "EchoServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=7070)
    ap.add_argument("--mode", choices=MODES, default="echo")
    ap.add_argument("--delay", type=float, default=3.0)
    args = ap.parse_args(argv)
    srv = EchoServer(args.mode, args.host, args.port, args.delay)
    print(f"listening on {srv.address} ({args.mode})", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
