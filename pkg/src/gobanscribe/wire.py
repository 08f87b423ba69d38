"""Operator wire endpoint: newline-delimited JSON over a TCP socket.

Server -> client messages (one JSON object per line):

    {"type": "snapshot", "board": [".B..", ...], "moves": [...], "frame": k}
    {"type": "move", "number": n, "color": "B"|"W", "point": [col, row],
     "frame": k, "flags": [...], "captures": [[col, row], ...]}
    {"type": "warning", "text": ..., "frame": k}
    {"type": "grid", "corners": [[x, y] x4], "frame": k}
    {"type": "ack", "kind": <command kind>, "frame": k}
    {"type": "error", "text": ..., "frame": k}

Client -> server:

    {"type": "command", "kind": "delete-last-move" | "swap-moves" |
     "confirm-late" | "force-reinit" | "pause" | "resume", "args": {...}}

A client connecting mid-game first receives a full snapshot (board rows
as strings of `.`/`B`/`W` plus the complete move list), then incremental
events.  Move events carry the server-computed captures, and every
board-mutating command ack is followed by a fresh snapshot, so a client
can mirror the board without any game logic of its own.  Commands are queued and applied by the engine at the next frame
boundary; malformed input yields an error event on that client only.
Connection failures never stop the session.
"""
from __future__ import annotations

import json
import socket
import threading

from .engine import Engine, OperatorCommand


def _encode(event: dict) -> bytes:
    return (json.dumps(event, separators=(",", ":")) + "\n").encode()


class OperatorServer:
    """Threaded NDJSON endpoint bound to an Engine.

    The server owns only queues: events flow out from the engine's
    observer hook, commands flow in through Engine.submit_command, which
    the main loop drains at frame boundaries (single-writer preserved).
    """

    def __init__(self, engine: Engine, host: str = "127.0.0.1",
                 port: int = 0):
        self.engine = engine
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self.address = self._sock.getsockname()
        self._clients: list[socket.socket] = []
        self._lock = threading.Lock()
        self._closed = False
        engine.add_observer(self.broadcast)
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               daemon=True)
        self._accept_thread.start()

    # -- outgoing ------------------------------------------------------------

    def broadcast(self, event: dict) -> None:
        data = _encode(event)
        with self._lock:
            alive = []
            for c in self._clients:
                try:
                    c.sendall(data)
                    alive.append(c)
                except OSError:
                    try:
                        c.close()
                    except OSError:
                        pass
            self._clients = alive

    # -- incoming ------------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            try:
                conn.sendall(_encode(self.engine.snapshot_event()))
            except OSError:
                continue
            with self._lock:
                self._clients.append(conn)
            threading.Thread(target=self._client_loop, args=(conn,),
                             daemon=True).start()

    def _client_loop(self, conn: socket.socket) -> None:
        buf = b""
        while not self._closed:
            try:
                chunk = conn.recv(4096)
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if line.strip():
                    self._handle_line(conn, line)
        with self._lock:
            if conn in self._clients:
                self._clients.remove(conn)
        try:
            conn.close()
        except OSError:
            pass

    def _handle_line(self, conn: socket.socket, line: bytes) -> None:
        try:
            msg = json.loads(line)
            if msg.get("type") != "command":
                raise ValueError(f"unsupported message type {msg.get('type')!r}")
            cmd = OperatorCommand(kind=msg["kind"],
                                  args=msg.get("args", {}))
        except (ValueError, KeyError, TypeError) as e:
            try:
                conn.sendall(_encode({"type": "error", "text": str(e)}))
            except OSError:
                pass
            return
        self.engine.submit_command(cmd)

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            for c in self._clients:
                try:
                    c.close()
                except OSError:
                    pass
            self._clients = []


def serve_operator(engine: Engine, host: str = "127.0.0.1",
                   port: int = 0) -> OperatorServer:
    """Attach an NDJSON operator endpoint to the engine.

    Returns the server; `server.address` holds the bound (host, port)
    (useful with port 0).  The caller is responsible for close().
    """
    return OperatorServer(engine, host, port)
