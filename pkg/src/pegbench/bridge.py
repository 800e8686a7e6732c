"""Console bridge: a WebSocket endpoint streaming runtime state to the
browser console and accepting operator input back.

Message protocol (JSON text frames, one object per frame):

  runtime -> console
    {"type": "hello", "protocol": 1, "role": "runtime"}
    {"type": "state", "tick", "episode", "primitive", "pose", "velocity",
     "wrench", "image", "intervened", "metrics": {...}}
    {"type": "episode_end", "episode", "outcome", "cycle_steps", ...}
    {"type": "error", "message"}

  console -> runtime
    {"type": "hello", "protocol": 1, "role": "console"}
    {"type": "input", "axes": [..], "override": bool, "stop_button": bool}
    {"type": "control", "command": "start" | "pause" | "reset"}

The server implements the minimal RFC 6455 subset needed for browser
clients: the upgrade handshake, unfragmented masked text frames in,
unmasked text frames out, and close/ping handling.  At most one session
holds override authority; input from stale sessions is dropped.  On a
reconnect the override always starts released.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

PROTOCOL_VERSION = 1
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class ProtocolError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# frame codec
# ---------------------------------------------------------------------------


def encode_text_frame(payload: str) -> bytes:
    data = payload.encode("utf-8")
    n = len(data)
    if n < 126:
        header = struct.pack("!BB", 0x81, n)
    elif n < 1 << 16:
        header = struct.pack("!BBH", 0x81, 126, n)
    else:
        header = struct.pack("!BBQ", 0x81, 127, n)
    return header + data


def encode_close_frame(code: int = 1000) -> bytes:
    return struct.pack("!BBH", 0x88, 2, code)


class FrameReader:
    """Buffered frame reader; keeps bytes that arrived glued to the
    handshake so they are not lost."""

    def __init__(self, sock: socket.socket, initial: bytes = b""):
        self.sock = sock
        self._buf = bytearray(initial)

    def _read_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError("socket closed mid-frame")
            self._buf += chunk
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def read_frame(self) -> tuple[int, bytes]:
        """Returns (opcode, payload); raises ConnectionError on close."""
        head = self._read_exact(2)
        fin_op, len1 = head
        opcode = fin_op & 0x0F
        masked = bool(len1 & 0x80)
        length = len1 & 0x7F
        if length == 126:
            (length,) = struct.unpack("!H", self._read_exact(2))
        elif length == 127:
            (length,) = struct.unpack("!Q", self._read_exact(8))
        mask = self._read_exact(4) if masked else b"\x00" * 4
        payload = bytearray(self._read_exact(length))
        if masked:
            for i in range(length):
                payload[i] ^= mask[i % 4]
        return opcode, bytes(payload)


def perform_handshake(sock: socket.socket) -> bytes:
    """Server side of the HTTP upgrade; returns leftover bytes beyond the
    request head (the client may pipeline its first frame)."""
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise ProtocolError("client vanished during handshake")
        data += chunk
        if len(data) > 65536:
            raise ProtocolError("handshake too large")
    head, _, leftover = data.partition(b"\r\n\r\n")
    headers = {}
    for line in head.split(b"\r\n")[1:]:
        if b":" in line:
            k, v = line.split(b":", 1)
            headers[k.strip().lower().decode()] = v.strip().decode()
    key = headers.get("sec-websocket-key")
    if not key or headers.get("upgrade", "").lower() != "websocket":
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        raise ProtocolError("not a websocket upgrade")
    accept = base64.b64encode(
        hashlib.sha1((key + _WS_GUID).encode()).digest()
    ).decode()
    sock.sendall(
        (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
        ).encode()
    )
    return leftover


# ---------------------------------------------------------------------------
# server
# ---------------------------------------------------------------------------


@dataclass
class OperatorState:
    """Latest console input, last-writer-wins, read once per control tick."""

    axes: tuple[float, ...] = (0.0, 0.0)
    override: bool = False
    stop_button: bool = False
    tick_received: int = 0
    session_id: int = -1


class ConsoleBridge:
    """Accepts one authoritative console session and fans out state frames.

    The runtime pushes frames via `publish`; the control loop polls
    `operator_input()` once per tick.  Thread-safe; frames to slow
    clients are dropped rather than blocking the control thread.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 8787):
        self.host = host
        self.port = port
        self._server: socket.socket | None = None
        self._clients: dict[int, socket.socket] = {}
        self._authority: int | None = None
        self._next_id = 0
        self._lock = threading.Lock()
        self._input = OperatorState()
        self._threads: list[threading.Thread] = []
        self._stopping = threading.Event()
        self.tick = 0
        self.on_control = None   # optional callback for start/pause/reset

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((self.host, self.port))
        self.port = self._server.getsockname()[1]
        self._server.listen(4)
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        self._stopping.set()
        with self._lock:
            clients = list(self._clients.values())
            self._clients.clear()
        for c in clients:
            try:
                c.sendall(encode_close_frame())
                c.close()
            except OSError:
                pass
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2.0)

    def _accept_loop(self) -> None:
        assert self._server is not None
        while not self._stopping.is_set():
            try:
                sock, _ = self._server.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_client, args=(sock,), daemon=True)
            t.start()
            self._threads.append(t)

    # -- per-client ----------------------------------------------------------

    def _serve_client(self, sock: socket.socket) -> None:
        try:
            leftover = perform_handshake(sock)
        except ProtocolError:
            sock.close()
            return
        reader = FrameReader(sock, leftover)
        with self._lock:
            sid = self._next_id
            self._next_id += 1
            self._clients[sid] = sock
            if self._authority is None:
                self._authority = sid
        try:
            sock.sendall(
                encode_text_frame(
                    json.dumps(
                        {
                            "type": "hello",
                            "protocol": PROTOCOL_VERSION,
                            "role": "runtime",
                            "authority": self._authority == sid,
                        }
                    )
                )
            )
            while not self._stopping.is_set():
                opcode, payload = reader.read_frame()
                if opcode == 0x8:       # close
                    break
                if opcode == 0x9:       # ping -> pong
                    sock.sendall(struct.pack("!BB", 0x8A, len(payload)) + payload)
                    continue
                if opcode != 0x1:
                    continue
                self._handle_message(sid, payload.decode("utf-8"))
        except (ConnectionError, OSError):
            pass
        finally:
            self._drop_client(sid)

    def _drop_client(self, sid: int) -> None:
        with self._lock:
            sock = self._clients.pop(sid, None)
            if self._authority == sid:
                self._authority = min(self._clients) if self._clients else None
                # safety default: override released when authority changes
                self._input = OperatorState(session_id=-1)
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass

    def _handle_message(self, sid: int, text: str) -> None:
        try:
            msg = json.loads(text)
        except json.JSONDecodeError:
            self._send_to(sid, {"type": "error", "message": "bad json"})
            return
        kind = msg.get("type")
        if kind == "hello":
            if msg.get("protocol") != PROTOCOL_VERSION:
                self._send_to(
                    sid,
                    {
                        "type": "error",
                        "message": f"protocol mismatch: runtime speaks "
                                   f"{PROTOCOL_VERSION}",
                    },
                )
                self._drop_client(sid)
            return
        if kind == "input":
            with self._lock:
                is_authority = sid == self._authority
                if is_authority:
                    self._input = OperatorState(
                        axes=tuple(float(a) for a in msg.get("axes", (0.0, 0.0))),
                        override=bool(msg.get("override", False)),
                        stop_button=bool(msg.get("stop_button", False)),
                        tick_received=self.tick,
                        session_id=sid,
                    )
            if not is_authority:
                self._send_to(
                    sid, {"type": "error", "message": "input dropped: not authority"}
                )
            return
        if kind == "control":
            if self.on_control is not None:
                self.on_control(msg.get("command", ""))
            return
        self._send_to(sid, {"type": "error", "message": f"unknown type {kind!r}"})

    def _send_to(self, sid: int, obj: dict) -> None:
        with self._lock:
            sock = self._clients.get(sid)
        if sock is None:
            return
        try:
            sock.sendall(encode_text_frame(json.dumps(obj)))
        except OSError:
            self._drop_client(sid)

    # -- runtime-facing API ----------------------------------------------------

    def publish(self, obj: dict) -> None:
        """Broadcast one frame; slow or dead clients are dropped."""
        data = encode_text_frame(json.dumps(obj))
        with self._lock:
            targets = list(self._clients.items())
        for sid, sock in targets:
            try:
                sock.sendall(data)
            except OSError:
                self._drop_client(sid)

    def publish_state(self, *, tick: int, episode: int, primitive: str,
                      state, image: np.ndarray | None, intervened: bool,
                      metrics: dict | None = None) -> None:
        self.tick = tick
        self.publish(
            {
                "type": "state",
                "tick": tick,
                "episode": episode,
                "primitive": primitive,
                "pose": list(state.pose),
                "velocity": list(state.velocity),
                "wrench": list(state.wrench),
                "image": None if image is None else
                         [round(float(v), 4) for v in image.ravel()],
                "intervened": intervened,
                "metrics": metrics or {},
            }
        )

    def operator_input(self) -> OperatorState:
        with self._lock:
            return self._input


class ConsoleGate:
    """Adapter: the bridge's latest input as an intervention gate."""

    def __init__(self, bridge: ConsoleBridge, act_dim: int = 2):
        self.bridge = bridge
        self.act_dim = act_dim

    def poll(self, state, obs=None, node: str = "", elapsed: int = 0, env=None,
             mode: str = "train"):
        from .hil import OperatorInput

        inp = self.bridge.operator_input()
        if not inp.override and not inp.stop_button:
            return None
        axes = np.zeros(self.act_dim)
        axes[: min(self.act_dim, len(inp.axes))] = inp.axes[: self.act_dim]
        return OperatorInput(
            axes=axes,
            override_active=inp.override,
            stop_button=inp.stop_button,
            source="console",
        )


class ConsoleClient:
    """Minimal client used by tests and the loopback check (runtime side
    uses the same codec, so this doubles as a protocol reference)."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        key = base64.b64encode(b"0123456789abcdef").decode()
        self.sock.sendall(
            (
                f"GET / HTTP/1.1\r\nHost: {host}:{port}\r\n"
                "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                f"Sec-WebSocket-Key: {key}\r\n"
                "Sec-WebSocket-Version: 13\r\n\r\n"
            ).encode()
        )
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ProtocolError("server closed during handshake")
            data += chunk
        head, _, leftover = data.partition(b"\r\n\r\n")
        if b"101" not in head.split(b"\r\n", 1)[0]:
            raise ProtocolError(f"upgrade refused: {head[:120]!r}")
        self._reader = FrameReader(self.sock, leftover)

    def send(self, obj: dict) -> None:
        data = json.dumps(obj).encode("utf-8")
        mask = b"\x37\xfa\x21\x3d"
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(data))
        n = len(data)
        if n < 126:
            head = struct.pack("!BB", 0x81, 0x80 | n)
        elif n < 1 << 16:
            head = struct.pack("!BBH", 0x81, 0x80 | 126, n)
        else:
            head = struct.pack("!BBQ", 0x81, 0x80 | 127, n)
        self.sock.sendall(head + mask + masked)

    def recv(self) -> dict:
        while True:
            opcode, payload = self._reader.read_frame()
            if opcode == 0x1:
                return json.loads(payload.decode("utf-8"))
            if opcode == 0x8:
                raise ConnectionError("server closed")

    def close(self) -> None:
        try:
            self.sock.sendall(encode_close_frame())
            self.sock.close()
        except OSError:
            pass
