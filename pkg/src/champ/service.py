"""Operator control plane.

Runs one kernel against the wall clock (simulated milliseconds map to
wall milliseconds through a configurable time scale, 1:1 by default)
and exposes a line-oriented JSON control API on a local TCP socket.
Browser clients may upgrade the same socket to a WebSocket; the JSON
payloads are identical on both transports.

All mutations funnel through the runtime's serialized command queue, so
the kernel only ever applies one structural change at a time no matter
how many clients are connected. Every subscriber observes the same
totally-ordered event sequence; a subscriber that cannot keep up is
disconnected rather than allowed to backpressure the kernel.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from . import gallery as gallery_mod
from .cartridge import Cartridge, UnknownPreset, make_cartridge, packaged_catalog
from .experiments import _parse_script, champ_seed
from .kernel import (
    BadPermutation,
    EmptySlot,
    Kernel,
    KernelError,
    OccupiedSlot,
)
from .protocol import Capability

WS_MAGIC = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

METRICS_INTERVAL_MS = 500.0
SUBSCRIBER_QUEUE_LIMIT = 1024
_PRESET_BY_CAPABILITY = {}


def _preset_name(capability: Capability) -> str:
    global _PRESET_BY_CAPABILITY
    if not _PRESET_BY_CAPABILITY:
        _PRESET_BY_CAPABILITY = {
            desc.capability: name for name, desc in packaged_catalog().items()
        }
    return _PRESET_BY_CAPABILITY.get(capability, capability.name.lower())


@dataclass
class _PendingCommand:
    command: dict
    done: threading.Event = field(default_factory=threading.Event)
    response: dict | None = None


class KernelRuntime:
    """Owns the kernel and its clock thread.

    time_scale is simulated-ms per wall-ms: 1.0 for live operation,
    larger for tests that should not wait out real pauses.
    """

    def __init__(
        self,
        kernel: Kernel | None = None,
        *,
        time_scale: float = 1.0,
        metrics_interval_ms: float = METRICS_INTERVAL_MS,
        seed: int | None = None,
        catalog: dict | None = None,
    ):
        self.kernel = kernel or Kernel()
        self.time_scale = time_scale
        self.metrics_interval_ms = metrics_interval_ms
        self.seed = champ_seed() if seed is None else seed
        self.catalog = catalog

        self._lock = threading.RLock()
        self._wake = threading.Condition(self._lock)
        self._commands: deque[_PendingCommand] = deque()
        self._stop = False
        self._thread: threading.Thread | None = None

        self.events: list[dict] = []  # totally ordered subscriber stream
        self._event_cond = threading.Condition()
        self._request_cache: dict[str, dict] = {}

        self._phase_log_idx = len(self.kernel.phase_log)
        self._alert_idx = len(self.kernel.alerts)
        self._next_metrics = self.kernel.queue.now + metrics_interval_ms

    # --- construction -------------------------------------------------------

    def boot(self, slots: dict[int, str], source_fps: float = 10.0) -> "KernelRuntime":
        carts = []
        for slot, preset in sorted(slots.items()):
            cart = self._make(preset, slot)
            cart.plug(slot)
            carts.append(cart)
        if carts:
            self.kernel.boot(carts)
        self.kernel.start_source(1000.0 / source_fps, 10**12)
        self._phase_log_idx = len(self.kernel.phase_log)
        self._next_metrics = self.kernel.queue.now + self.metrics_interval_ms
        return self

    def _make(self, preset: str, slot: int) -> Cartridge:
        return make_cartridge(preset, seed=self.seed ^ (slot + 1), catalog=self.catalog)

    # --- lifecycle ------------------------------------------------------------

    def start(self) -> "KernelRuntime":
        self._thread = threading.Thread(target=self._loop, name="kernel-clock", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        with self._wake:
            self._stop = True
            self._wake.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=5)
        with self._event_cond:
            self._event_cond.notify_all()

    @property
    def stopped(self) -> bool:
        return self._stop

    def _loop(self) -> None:
        wall0 = time.monotonic()
        sim0 = self.kernel.queue.now
        while True:
            with self._wake:
                if self._stop:
                    return
                while self._commands:
                    pending = self._commands.popleft()
                    pending.response = self._apply(pending.command)
                    pending.done.set()
                target = sim0 + (time.monotonic() - wall0) * 1000.0 * self.time_scale
                kern = self.kernel
                while True:
                    nxt = kern.queue.peek_time()
                    if nxt is None or nxt > target:
                        break
                    at, event = kern.queue.step()
                    kern._dispatch(event, at)
                if target > kern.queue.now:
                    kern.queue.now = target
                self._drain_kernel_logs()
                while kern.queue.now >= self._next_metrics:
                    self._emit(self._metrics_event())
                    self._next_metrics += self.metrics_interval_ms
                self._wake.wait(timeout=0.002)

    # --- events -----------------------------------------------------------------

    def _emit(self, event: dict) -> None:
        with self._event_cond:
            event["seq"] = len(self.events)
            self.events.append(event)
            self._event_cond.notify_all()

    def _drain_kernel_logs(self) -> None:
        """Turn new kernel phase-log entries and alerts into subscriber
        events, one per transition, in the order they happened."""
        kern = self.kernel
        while self._phase_log_idx < len(kern.phase_log):
            at, phase, detail = kern.phase_log[self._phase_log_idx]
            self._phase_log_idx += 1
            snap = self.snapshot_dict()
            snap["phase"] = phase
            snap["at_ms"] = at
            snap["detail"] = detail
            self._emit(snap)
        while self._alert_idx < len(kern.alerts):
            alert = kern.alerts[self._alert_idx]
            self._alert_idx += 1
            self._emit(
                {
                    "type": "alert",
                    "at_ms": alert.at_ms,
                    "severity": alert.severity,
                    "message": alert.message,
                }
            )

    def wait_for_event(self, seq: int, timeout: float = 10.0) -> bool:
        """Block until an event with index >= seq exists."""
        deadline = time.monotonic() + timeout
        with self._event_cond:
            while len(self.events) <= seq:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or self._stop:
                    return False
                self._event_cond.wait(timeout=remaining)
            return True

    # --- queries ------------------------------------------------------------------

    def snapshot_dict(self) -> dict:
        kern = self.kernel
        stages = []
        for slot in sorted(kern.slots):
            cart = kern.slots[slot]
            stages.append(
                {
                    "slot": slot,
                    "capability": cart.descriptor.capability.name,
                    "preset": _preset_name(cart.descriptor.capability),
                    "state": cart.state.value,
                    "bypassable": cart.descriptor.bypassable,
                }
            )
        now = kern.queue.now
        recent = [t for t, _ in kern.sink[-400:] if t > now - 1000.0]
        lat = [l for _, l in kern.latencies[-50:]]
        return {
            "type": "topology",
            "at_ms": now,
            "phase": kern.phase,
            "missing": sorted(c.name for c in kern.missing),
            "stages": stages,
            "link_depths": {str(s): d for s, d in sorted(kern.link_depths().items())},
            "holdback": len(kern.holdback),
            "alerts": [a.message for a in kern.alerts[-10:]],
            "fps": round(len(recent), 3),
            "latency_ms": round(sum(lat) / len(lat), 3) if lat else None,
            "frames_delivered": len(kern.sink),
        }

    def _metrics_event(self) -> dict:
        snap = self.snapshot_dict()
        return {
            "type": "metrics",
            "at_ms": snap["at_ms"],
            "fps": snap["fps"],
            "latency_ms": snap["latency_ms"],
            "frames_delivered": snap["frames_delivered"],
            "holdback": snap["holdback"],
            "phase": snap["phase"],
        }

    def snapshot(self) -> dict:
        with self._lock:
            return self.snapshot_dict()

    # --- commands --------------------------------------------------------------------

    def submit(self, command: dict) -> dict:
        """Serialize a command onto the kernel clock thread; blocks until
        it is applied. Duplicate request_ids return the original
        response without re-applying."""
        request_id = command.get("request_id")
        with self._lock:
            if request_id is not None and request_id in self._request_cache:
                return self._request_cache[request_id]
        pending = _PendingCommand(command)
        with self._wake:
            if self._stop:
                return {"type": "reject", "request_id": request_id, "reason": "server stopped"}
            self._commands.append(pending)
            self._wake.notify_all()
        pending.done.wait(timeout=30)
        response = pending.response or {
            "type": "reject",
            "request_id": request_id,
            "reason": "command timed out",
        }
        if request_id is not None:
            with self._lock:
                self._request_cache[request_id] = response
        return response

    def _apply(self, command: dict) -> dict:
        request_id = command.get("request_id")
        kind = command.get("type")
        payload = command.get("payload") or {}

        def ack(**result):
            return {"type": "ack", "request_id": request_id, "command": kind, "result": result}

        def reject(reason):
            return {"type": "reject", "request_id": request_id, "command": kind, "reason": reason}

        try:
            if kind == "insert":
                slot = int(payload["slot"])
                cart = self._make(payload["preset"], slot)
                outcome = self.kernel.apply_insert(slot, cart)
                self._drain_kernel_logs()
                if not outcome.accepted:
                    return reject(outcome.reason)
                return ack(slot=slot, queued=outcome.queued, pause_ms=outcome.pause_ms)
            if kind == "remove":
                slot = int(payload["slot"])
                outcome = self.kernel.apply_remove(slot)
                self._drain_kernel_logs()
                return ack(slot=slot, queued=outcome.queued, pause_ms=outcome.pause_ms)
            if kind == "reorder":
                assignment = {int(k): int(v) for k, v in payload["assignment"].items()}
                outcome = self.kernel.apply_reorder(assignment)
                self._drain_kernel_logs()
                if not outcome.accepted:
                    return reject(outcome.reason)
                return ack(assignment=payload["assignment"], queued=outcome.queued)
            if kind == "set_source_rate":
                self.kernel.set_source_rate(float(payload["fps"]))
                return ack(fps=float(payload["fps"]))
            if kind == "load_gallery":
                key = _read_key(payload["key_ref"])
                templates = gallery_mod.load_encrypted(payload["path"], key)
                loaded_into = 0
                for cart in self.kernel.slots.values():
                    if cart.descriptor.capability is Capability.DATABASE_STORAGE:
                        cart.gallery = templates
                        loaded_into += 1
                return ack(templates=len(templates), cartridges=loaded_into)
            if kind == "run_scenario":
                parsed = _parse_script(payload["path"])
                base = self.kernel.queue.now
                for ev in parsed["events"]:
                    at = base + float(ev["at_ms"])
                    if ev["kind"] == "remove":
                        self.kernel.schedule_hotplug(at, "remove", int(ev["slot"]))
                    elif ev["kind"] == "insert":
                        cart = self._make(ev["preset"], int(ev["slot"]))
                        self.kernel.schedule_hotplug(at, "insert", int(ev["slot"]), cart)
                    else:
                        self.kernel.schedule_hotplug(at, "rate", None, float(ev["fps"]))
                return ack(events=len(parsed["events"]))
            if kind == "shutdown":
                self._stop = True
                return ack()
            return reject(f"unknown command {kind!r}")
        except (OccupiedSlot, EmptySlot, BadPermutation, UnknownPreset) as exc:
            return reject(f"{type(exc).__name__}: {exc}")
        except (KernelError, gallery_mod.GalleryError, KeyError, ValueError, OSError) as exc:
            return reject(f"{type(exc).__name__}: {exc}")


def _read_key(key_ref: str) -> bytes:
    with open(key_ref) as fh:
        return bytes.fromhex(fh.read().strip())


# --- websocket plumbing ----------------------------------------------------------


def ws_accept_value(key: str) -> str:
    digest = hashlib.sha1((key + WS_MAGIC).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def ws_encode_text(message: str) -> bytes:
    data = message.encode("utf-8")
    header = bytes([0x81])  # FIN + text frame
    n = len(data)
    if n < 126:
        header += bytes([n])
    elif n < 2**16:
        header += bytes([126]) + struct.pack(">H", n)
    else:
        header += bytes([127]) + struct.pack(">Q", n)
    return header + data


class _WsReader:
    def __init__(self, sock: socket.socket, initial: bytes = b""):
        self.sock = sock
        self.buf = bytearray(initial)

    def _fill(self, n: int) -> bool:
        while len(self.buf) < n:
            chunk = self.sock.recv(4096)
            if not chunk:
                return False
            self.buf.extend(chunk)
        return True

    def read_message(self) -> str | None:
        """Next complete text message from the client, unmasking and
        coalescing continuation frames. None on close/EOF."""
        parts = []
        while True:
            if not self._fill(2):
                return None
            b0, b1 = self.buf[0], self.buf[1]
            opcode = b0 & 0x0F
            masked = bool(b1 & 0x80)
            length = b1 & 0x7F
            offset = 2
            if length == 126:
                if not self._fill(offset + 2):
                    return None
                length = struct.unpack(">H", bytes(self.buf[offset : offset + 2]))[0]
                offset += 2
            elif length == 127:
                if not self._fill(offset + 8):
                    return None
                length = struct.unpack(">Q", bytes(self.buf[offset : offset + 8]))[0]
                offset += 8
            mask = b""
            if masked:
                if not self._fill(offset + 4):
                    return None
                mask = bytes(self.buf[offset : offset + 4])
                offset += 4
            if not self._fill(offset + length):
                return None
            payload = bytes(self.buf[offset : offset + length])
            del self.buf[: offset + length]
            if masked:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if opcode == 0x8:  # close
                return None
            if opcode == 0x9:  # ping -> pong
                self.sock.sendall(bytes([0x8A, len(payload)]) + payload)
                continue
            if opcode == 0xA:  # pong
                continue
            parts.append(payload)
            if b0 & 0x80:  # FIN
                return b"".join(parts).decode("utf-8", errors="replace")


# --- server ------------------------------------------------------------------------


class _Conn:
    """One client connection, NDJSON or WebSocket."""

    def __init__(self, sock: socket.socket, server: "ControlServer"):
        self.sock = sock
        self.server = server
        self.ws = False
        self.send_lock = threading.Lock()

    def send_json(self, obj: dict) -> None:
        data = json.dumps(obj, sort_keys=True)
        with self.send_lock:
            if self.ws:
                self.sock.sendall(ws_encode_text(data))
            else:
                self.sock.sendall(data.encode("utf-8") + b"\n")


class ControlServer:
    def __init__(self, runtime: KernelRuntime, host: str = "127.0.0.1", port: int = 0):
        self.runtime = runtime
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = False
        self._threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="control-accept", daemon=True
        )

    def start(self) -> "ControlServer":
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._stop = True
        try:
            self._listener.close()
        except OSError:
            pass

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def _accept_loop(self) -> None:
        while not self._stop:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            thread = threading.Thread(
                target=self._serve_conn, args=(sock,), name="control-conn", daemon=True
            )
            thread.start()
            self._threads.append(thread)

    def _serve_conn(self, sock: socket.socket) -> None:
        conn = _Conn(sock, self)
        try:
            sock.settimeout(30)
            first = sock.recv(4096)
            if not first:
                return
            if first.startswith(b"GET "):
                rest = self._ws_handshake(conn, first)
                if rest is None:
                    return
                reader = _WsReader(sock, rest)
                sock.settimeout(None)
                while not self._stop:
                    message = reader.read_message()
                    if message is None:
                        return
                    self._handle_request(conn, message)
            else:
                sock.settimeout(None)
                buf = bytearray(first)
                while not self._stop:
                    while b"\n" in buf:
                        line, _, remainder = bytes(buf).partition(b"\n")
                        buf = bytearray(remainder)
                        if line.strip():
                            self._handle_request(conn, line.decode("utf-8", errors="replace"))
                    chunk = sock.recv(4096)
                    if not chunk:
                        return
                    buf.extend(chunk)
        except OSError:
            pass
        finally:
            try:
                sock.close()
            except OSError:
                pass

    def _ws_handshake(self, conn: _Conn, first: bytes) -> bytes | None:
        data = bytearray(first)
        while b"\r\n\r\n" not in data:
            chunk = conn.sock.recv(4096)
            if not chunk:
                return None
            data.extend(chunk)
        head, _, rest = bytes(data).partition(b"\r\n\r\n")
        headers = {}
        for line in head.decode("latin-1").split("\r\n")[1:]:
            if ":" in line:
                name, _, value = line.partition(":")
                headers[name.strip().lower()] = value.strip()
        key = headers.get("sec-websocket-key")
        if key is None or "websocket" not in headers.get("upgrade", "").lower():
            conn.sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            return None
        response = (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {ws_accept_value(key)}\r\n\r\n"
        )
        conn.sock.sendall(response.encode("latin-1"))
        conn.ws = True
        return rest

    def _handle_request(self, conn: _Conn, raw: str) -> None:
        try:
            request = json.loads(raw)
        except json.JSONDecodeError as exc:
            conn.send_json({"type": "reject", "reason": f"bad json: {exc}"})
            return
        kind = request.get("type")
        if kind == "snapshot":
            conn.send_json(self.runtime.snapshot())
        elif kind == "subscribe":
            # stream on a side thread so the same connection can keep
            # issuing commands; sends are serialized by the conn lock
            threading.Thread(
                target=self._stream_events, args=(conn,), name="control-stream", daemon=True
            ).start()
        else:
            conn.send_json(self.runtime.submit(request))

    def _stream_events(self, conn: _Conn) -> None:
        """Stream the totally-ordered event feed, starting from a fresh
        snapshot. Runs for the life of the connection; a slow consumer
        is disconnected rather than buffered without bound."""
        try:
            conn.send_json(self.runtime.snapshot())
            cursor = len(self.runtime.events)
            while not self._stop and not self.runtime.stopped:
                if not self.runtime.wait_for_event(cursor, timeout=0.5):
                    continue
                backlog = self.runtime.events[cursor:]
                if len(backlog) > SUBSCRIBER_QUEUE_LIMIT:
                    return  # too far behind: drop this subscriber
                for event in backlog:
                    conn.send_json(event)
                cursor += len(backlog)
        except OSError:
            pass


def serve(
    slots: dict[int, str],
    *,
    host: str = "127.0.0.1",
    port: int = 0,
    source_fps: float = 10.0,
    time_scale: float = 1.0,
    seed: int | None = None,
    catalog: dict | None = None,
) -> tuple[KernelRuntime, ControlServer]:
    runtime = KernelRuntime(time_scale=time_scale, seed=seed, catalog=catalog)
    runtime.boot(slots, source_fps=source_fps)
    runtime.start()
    server = ControlServer(runtime, host=host, port=port).start()
    return runtime, server


# --- client helpers -----------------------------------------------------------------


def request(address: str, payload: dict, timeout: float = 10.0) -> dict:
    """One-shot NDJSON client: connect, send one request, read one
    response."""
    host, _, port = address.rpartition(":")
    with socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout) as sock:
        sock.sendall(json.dumps(payload).encode("utf-8") + b"\n")
        buf = b""
        while b"\n" not in buf:
            chunk = sock.recv(4096)
            if not chunk:
                break
            buf += chunk
        line = buf.split(b"\n", 1)[0]
        return json.loads(line.decode("utf-8"))
