"""Edge decision service: answers observation -> action queries over TCP.

Wire format: one JSON object per LF-terminated UTF-8 line.

Request::

    {"v":1,"id":7,"obs":[0.8],"mode":"greedy"}
    {"v":1,"id":8,"obs":[0.8],"mode":"boltzmann","tau":0.5}

Response::

    {"v":1,"id":7,"action":3,"q":[...12 values...],"t_us":41}

Error::

    {"v":1,"id":7,"error":{"code":422,"msg":"..."}}

A line ``{"v":1,"seed":S}`` reseeds the connection's sampler used by
Boltzmann requests (each connection starts from the server seed).
Responses come back in request order on each connection.
"""

from __future__ import annotations

import json
import random
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from os import PathLike
from typing import Optional, Union

import numpy as np

from .agent import boltzmann_probs
from .neural import Weights, forward, load_weights

PROTOCOL_VERSION = 1
BAD_REQUEST = 400
WIDTH_MISMATCH = 422
VERSION_MISMATCH = 426
INTERNAL = 500

Address = Union[str, tuple[str, int]]


class DecisionError(Exception):
    """Error reply from the server, or a broken exchange on the client side."""

    def __init__(self, code: int, msg: str, request_id: Optional[int] = None):
        super().__init__(f"[{code}] {msg}")
        self.code = code
        self.msg = msg
        self.request_id = request_id


@dataclass
class DecisionRequest:
    id: int
    obs: list[float]
    mode: str = "greedy"
    tau: float = 1.0
    v: int = PROTOCOL_VERSION

    def to_line(self) -> bytes:
        msg = {"v": self.v, "id": self.id, "obs": [float(x) for x in self.obs], "mode": self.mode}
        if self.mode == "boltzmann":
            msg["tau"] = self.tau
        return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


@dataclass
class DecisionResponse:
    id: int
    action: int
    q: list[float]
    t_us: int
    v: int = PROTOCOL_VERSION


def parse_address(address: Address) -> tuple[str, int]:
    if isinstance(address, tuple):
        return address
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {address!r}")
    return host or "127.0.0.1", int(port)


def _encode(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


def _error(request_id, code: int, msg: str) -> dict:
    return {"v": PROTOCOL_VERSION, "id": request_id, "error": {"code": code, "msg": msg}}


@dataclass
class _Connection:
    rng: np.random.Generator
    jitter: random.Random = field(default_factory=random.Random)


class DecisionServer(socketserver.ThreadingTCPServer):
    """Threaded server over one immutable weight set."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: Address, weights: Weights, seed: int = 0,
                 delay_ms: float = 0.0, jitter_ms: float = 0.0):
        self.weights = weights
        self.weights.params.setflags(write=False)
        self.seed = seed
        self.delay_ms = delay_ms
        self.jitter_ms = jitter_ms
        self._lock = threading.Lock()
        self.served = 0
        self.errors = 0
        super().__init__(parse_address(address), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def _count(self, ok: bool) -> None:
        with self._lock:
            if ok:
                self.served += 1
            else:
                self.errors += 1

    def answer(self, line: bytes, conn: _Connection) -> dict:
        try:
            msg = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            return _error(None, BAD_REQUEST, f"malformed request line: {exc}")
        if not isinstance(msg, dict):
            return _error(None, BAD_REQUEST, "request must be a JSON object")
        request_id = msg.get("id")
        if msg.get("v") != PROTOCOL_VERSION:
            return _error(request_id, VERSION_MISMATCH,
                          f"protocol version {msg.get('v')!r} not supported, expected {PROTOCOL_VERSION}")
        if "seed" in msg and "obs" not in msg:
            if not isinstance(msg["seed"], int) or isinstance(msg["seed"], bool):
                return _error(request_id, BAD_REQUEST, "seed must be an integer")
            conn.rng = np.random.default_rng(msg["seed"] & ((1 << 64) - 1))
            conn.jitter.seed(msg["seed"])
            return {"v": PROTOCOL_VERSION, "seed": msg["seed"]}
        if not isinstance(request_id, int) or isinstance(request_id, bool):
            return _error(request_id, BAD_REQUEST, "id must be an integer")
        obs = msg.get("obs")
        if not isinstance(obs, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in obs
        ):
            return _error(request_id, BAD_REQUEST, "obs must be a list of numbers")
        width = self.weights.n_inputs
        if len(obs) != width:
            return _error(request_id, WIDTH_MISMATCH,
                          f"observation width {len(obs)} does not match expected width {width}")
        x = np.array(obs, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            return _error(request_id, BAD_REQUEST, "obs must be finite")
        mode = msg.get("mode", "greedy")
        if mode not in ("greedy", "boltzmann"):
            return _error(request_id, BAD_REQUEST, f"unknown mode {mode!r}")
        tau = msg.get("tau", 1.0)
        if mode == "boltzmann" and not (isinstance(tau, (int, float)) and tau > 0):
            return _error(request_id, BAD_REQUEST, "tau must be a positive number")

        t0 = time.perf_counter()
        q = forward(self.weights, x)
        if mode == "greedy":
            action = int(np.argmax(q))
        else:
            cdf = np.cumsum(boltzmann_probs(q, float(tau)))
            action = int(min(np.searchsorted(cdf, conn.rng.random() * cdf[-1], side="right"), q.size - 1))
        t_us = int(round((time.perf_counter() - t0) * 1e6))
        if self.delay_ms or self.jitter_ms:
            time.sleep((self.delay_ms + self.jitter_ms * conn.jitter.random()) / 1e3)
        return {"v": PROTOCOL_VERSION, "id": request_id, "action": action,
                "q": [float(v) for v in q], "t_us": t_us}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: DecisionServer = self.server
        conn = _Connection(np.random.default_rng(server.seed))
        conn.jitter.seed(server.seed)
        for line in self.rfile:
            if not line.strip():
                continue
            try:
                reply = server.answer(line, conn)
            except Exception as exc:  # keep the connection usable
                reply = _error(None, INTERNAL, f"internal error: {exc}")
            server._count("error" not in reply)
            self.wfile.write(_encode(reply))
            self.wfile.flush()


def serve(weights: Union[str, PathLike, Weights], address: Address = "127.0.0.1:0",
          background: bool = True, **kwargs) -> DecisionServer:
    """Start a decision server.

    With ``background=True`` the server runs in a daemon thread and is
    returned immediately; call ``shutdown()`` and ``server_close()`` to stop
    it. Otherwise this blocks in ``serve_forever``.
    """
    w = weights if isinstance(weights, Weights) else load_weights(weights)
    server = DecisionServer(address, w, **kwargs)
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    else:
        try:
            server.serve_forever()
        finally:
            server.server_close()
    return server


def _parse_response(line: bytes) -> DecisionResponse:
    if not line:
        raise DecisionError(BAD_REQUEST, "connection closed by server")
    msg = json.loads(line.decode("utf-8"))
    if msg.get("v") != PROTOCOL_VERSION:
        raise DecisionError(VERSION_MISMATCH, f"server replied with protocol version {msg.get('v')!r}")
    if "error" in msg:
        raise DecisionError(msg["error"]["code"], msg["error"]["msg"], msg.get("id"))
    return DecisionResponse(msg["id"], msg["action"], msg["q"], msg["t_us"], msg["v"])


class DecisionClient:
    """Persistent connection to a :class:`DecisionServer`."""

    def __init__(self, address: Address, timeout: float = 1.0, seed: Optional[int] = None):
        self.sock = socket.create_connection(parse_address(address), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.reader = self.sock.makefile("rb")
        if seed is not None:
            self.sock.sendall(_encode({"v": PROTOCOL_VERSION, "seed": seed}))
            ack = json.loads(self.reader.readline())
            if "error" in ack:
                raise DecisionError(ack["error"]["code"], ack["error"]["msg"])

    def send_raw(self, line: bytes) -> dict:
        self.sock.sendall(line)
        return json.loads(self.reader.readline())

    def request(self, req: DecisionRequest) -> tuple[DecisionResponse, int]:
        """Send one request; return the response and the round trip in microseconds."""
        t0 = time.perf_counter()
        self.sock.sendall(req.to_line())
        line = self.reader.readline()
        rtt_us = int(round((time.perf_counter() - t0) * 1e6))
        resp = _parse_response(line)
        if resp.id != req.id:
            raise DecisionError(BAD_REQUEST, f"response id {resp.id} does not match request id {req.id}")
        return resp, rtt_us

    def close(self) -> None:
        self.reader.close()
        self.sock.close()

    def __enter__(self) -> "DecisionClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def request_decision(address: Address, req: DecisionRequest,
                     timeout: float = 1.0) -> tuple[DecisionResponse, int]:
    """One-shot request over a fresh connection.

    Raises ``TimeoutError`` / ``ConnectionRefusedError`` for transport
    failures and :class:`DecisionError` for error replies.
    """
    with DecisionClient(address, timeout) as client:
        return client.request(req)
