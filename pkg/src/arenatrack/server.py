"""Streaming interfaces around the fusion tracker.

Two modes:

* Replay (``--stdin``): read line-delimited detection messages to EOF,
  run the virtual-time tick clock over them, and write fused positions as
  line-delimited JSON.  Deterministic; used for piped evaluation.
* Live (``--listen``): accept producer connections on a TCP socket, tick
  on the wall clock, and publish fused positions to subscriber connections
  (or standard output).  Message timestamps must share the producers'
  epoch clock (time.time()).
"""

from __future__ import annotations

import json
import socket
import threading
import time

from .fusion import (
    FusionTracker,
    fused_to_json_line,
    message_from_json_line,
    run_tracker,
)

__all__ = ["run_stdin_replay", "TcpService"]


def run_stdin_replay(rigs, in_stream, out_stream, tick_rate: float, gate: float,
                     duration: float | None = None) -> dict:
    """Replay messages from a line stream; returns counters."""
    messages = []
    malformed = 0
    for line in in_stream:
        line = line.strip()
        if not line:
            continue
        try:
            messages.append(message_from_json_line(line))
        except (json.JSONDecodeError, KeyError, ValueError):
            malformed += 1
    known = {r.camera_id for r in rigs}
    dropped = sum(1 for m in messages if m.camera_id not in known)
    ticks = run_tracker([m for m in messages if m.camera_id in known], rigs,
                        tick_rate=tick_rate, gate=gate, duration=duration)
    emitted = 0
    for _, fused in ticks:
        for f in fused:
            out_stream.write(fused_to_json_line(f) + "\n")
            emitted += 1
    out_stream.flush()
    return {"messages": len(messages), "malformed": malformed,
            "dropped_unknown_camera": dropped, "ticks": len(ticks),
            "fused_emitted": emitted}


class TcpService:
    """Live fusion service: TCP ingest, wall-clock ticks, TCP/stream publish."""

    def __init__(self, rigs, tick_rate: float, gate: float,
                 listen: tuple[str, int], publish: tuple[str, int] | None = None,
                 out_stream=None):
        self.tracker = FusionTracker(rigs, tick_rate=tick_rate, gate=gate)
        self.tick_rate = tick_rate
        self.out_stream = out_stream
        self.malformed = 0
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._subscribers: list[socket.socket] = []
        self._sub_lock = threading.Lock()

        self._listen_sock = socket.create_server(listen)
        self._listen_sock.settimeout(0.2)
        self._publish_sock = None
        if publish is not None:
            self._publish_sock = socket.create_server(publish)
            self._publish_sock.settimeout(0.2)

    @property
    def listen_address(self) -> tuple[str, int]:
        return self._listen_sock.getsockname()[:2]

    @property
    def publish_address(self) -> tuple[str, int] | None:
        return self._publish_sock.getsockname()[:2] if self._publish_sock else None

    def start(self) -> None:
        self._spawn(self._accept_producers)
        if self._publish_sock is not None:
            self._spawn(self._accept_subscribers)
        self._spawn(self._tick_loop)

    def _spawn(self, fn) -> None:
        t = threading.Thread(target=fn, daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_producers(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listen_sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            self._spawn(lambda c=conn: self._read_producer(c))

    def _read_producer(self, conn: socket.socket) -> None:
        conn.settimeout(0.2)
        buf = b""
        with conn:
            while not self._stop.is_set():
                try:
                    chunk = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    return
                if not chunk:
                    return
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    self._handle_line(line.decode("utf-8", errors="replace"))

    def _handle_line(self, line: str) -> None:
        line = line.strip()
        if not line:
            return
        try:
            msg = message_from_json_line(line)
        except (json.JSONDecodeError, KeyError, ValueError):
            self.malformed += 1
            return
        self.tracker.ingest(msg)

    def _accept_subscribers(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._publish_sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with self._sub_lock:
                self._subscribers.append(conn)

    def _publish(self, lines: list[str]) -> None:
        if not lines:
            return
        payload = ("".join(l + "\n" for l in lines)).encode()
        if self.out_stream is not None:
            self.out_stream.write(payload.decode())
            self.out_stream.flush()
        with self._sub_lock:
            alive = []
            for s in self._subscribers:
                try:
                    s.sendall(payload)
                    alive.append(s)
                except OSError:
                    s.close()
            self._subscribers = alive

    def _tick_loop(self) -> None:
        period = 1.0 / self.tick_rate
        next_tick = time.monotonic() + period
        while not self._stop.wait(max(0.0, next_tick - time.monotonic())):
            next_tick += period
            fused = self.tracker.tick(time.time())
            self._publish([fused_to_json_line(f) for f in fused])

    def stop(self) -> None:
        self._stop.set()
        self._listen_sock.close()
        if self._publish_sock is not None:
            self._publish_sock.close()
        with self._sub_lock:
            for s in self._subscribers:
                s.close()
            self._subscribers = []
        for t in self._threads:
            t.join(timeout=2.0)
