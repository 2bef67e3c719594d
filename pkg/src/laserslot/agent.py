"""Whitebox-resident netconf-lite server driving the simulated pluggables."""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import sys
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .core import GRID_GHZ, FeedbackRecord, TransceiverId, frequency_to_slot
from .errors import InvalidFrequency, ProtocolError, UnknownPort
from .netconf import (
    Channel,
    EditConfig,
    ErrorReply,
    GetTelemetry,
    Hello,
    OkReply,
    RpcMessage,
    TelemetryReply,
)
from .transceiver import LaserModel, LogicalClock, Transceivers, virtual_clock

log = logging.getLogger(__name__)

TELEMETRY_CAPACITY = 100


@dataclass
class WhiteboxConfig:
    whitebox_id: str
    ports: dict[str, LaserModel]
    host: str = "127.0.0.1"
    port: int = 0
    clock: LogicalClock | None = None
    log_path: Path | None = None
    log_stderr: bool = False
    keep_log: bool = False

    def __post_init__(self):
        if not self.ports:
            raise ValueError("a whitebox needs at least one port")

    @classmethod
    def from_document(cls, doc: dict, base_dir: Path | None = None, seed: int = 0) -> WhiteboxConfig:
        """Build from ``{whitebox_id, listen, ports: [{name, model_fit_file}], clock}``."""
        base_dir = Path(base_dir or ".")
        host, _, port = str(doc.get("listen", "127.0.0.1:0")).rpartition(":")
        names = [p["name"] for p in doc["ports"]]
        if len(set(names)) != len(names):
            raise ValueError("port names must be unique within a whitebox")
        seeds = np.random.SeedSequence(doc.get("seed", seed)).spawn(len(names))
        models = {
            p["name"]: LaserModel.load(base_dir / p["model_fit_file"], seed=s)
            for p, s in zip(doc["ports"], seeds)
        }
        clock_doc = doc.get("clock", {"mode": "logical"})
        clock = virtual_clock(clock_doc.get("mode", "logical"), clock_doc.get("factor"))
        log_path = doc.get("log_file")
        return cls(doc["whitebox_id"], models, host or "127.0.0.1", int(port or 0), clock,
                   base_dir / log_path if log_path else None, log_stderr=doc.get("log_stderr", True))


class _LogSink:
    def __init__(self, config: WhiteboxConfig):
        self._lock = threading.Lock()
        self._fh = open(config.log_path, "a", encoding="utf-8") if config.log_path else None
        self._stderr = config.log_stderr
        self.lines: list[str] | None = [] if config.keep_log else None

    def __call__(self, line: str) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.write(line + "\n")
            if self._stderr:
                print(line, file=sys.stderr)
            if self.lines is not None:
                self.lines.append(line)

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


class _Handler(socketserver.BaseRequestHandler):
    server: _TcpServer

    def handle(self):
        agent = self.server.agent
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        channel = Channel(sock)
        try:
            while True:
                try:
                    msg = channel.recv()
                except ConnectionError:
                    return
                except ProtocolError as exc:
                    log.warning("%s: closing session after protocol error: %s", agent.whitebox_id, exc)
                    return
                reply = agent.dispatch(msg)
                if reply is not None:
                    channel.send(reply)
        except ConnectionError:
            return
        finally:
            agent._track(sock, False)


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    # non-daemon handler threads are joined by server_close, which is the drain
    daemon_threads = False
    block_on_close = True

    def __init__(self, address, agent: AgentServer):
        self.agent = agent
        super().__init__(address, _Handler)

    def process_request(self, request, client_address):
        # register before the handler thread runs so shutdown cannot miss it
        self.agent._track(request, True)
        super().process_request(request, client_address)


class AgentServer:
    """Running agent; use ``serve`` to construct."""

    def __init__(self, config: WhiteboxConfig):
        self.config = config
        self.whitebox_id = config.whitebox_id
        self._sink = _LogSink(config)
        self.transceivers = Transceivers(config.ports, config.clock, self._sink)
        self.clock = self.transceivers.clock
        self.telemetry: deque[FeedbackRecord] = deque(maxlen=TELEMETRY_CAPACITY)
        self._telemetry_lock = threading.Lock()
        self._sessions: set[socket.socket] = set()
        self._sessions_lock = threading.Lock()
        self._stopped = False
        try:
            self._server = _TcpServer((config.host, config.port), self)
        except OSError:
            self.transceivers.close()
            self._sink.close()
            raise
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        kwargs={"poll_interval": 0.05},
                                        name=f"agent-{self.whitebox_id}", daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def log_lines(self) -> list[str] | None:
        return self._sink.lines

    def _track(self, sock, add):
        with self._sessions_lock:
            (self._sessions.add if add else self._sessions.discard)(sock)

    def dispatch(self, msg: RpcMessage) -> RpcMessage | None:
        body = msg.body
        mid = msg.message_id
        if isinstance(body, Hello):
            return RpcMessage(mid, Hello())
        if isinstance(body, EditConfig):
            return RpcMessage(mid, self._edit_config(body))
        if isinstance(body, GetTelemetry):
            with self._telemetry_lock:
                records = tuple(r for r in self.telemetry
                                if body.port is None or r.transceiver.port == body.port)
            return RpcMessage(mid, TelemetryReply(records))
        return RpcMessage(mid, ErrorReply("operation-not-supported",
                                          f"{type(body).__name__} is not a request"))

    def _edit_config(self, req: EditConfig):
        if req.port not in self.transceivers.ports:
            return ErrorReply("bad-element", f"unknown pluggable {req.port!r}")
        if req.grid_ghz != GRID_GHZ:
            return ErrorReply("invalid-value", f"grid {req.grid_ghz} GHz unsupported, need {GRID_GHZ}")
        try:
            slot = frequency_to_slot(req.frequency_ghz)
            result = self.transceivers.submit(req.port, req.frequency_ghz).result()
        except InvalidFrequency as exc:
            return ErrorReply("invalid-value", str(exc))
        except UnknownPort as exc:
            return ErrorReply("bad-element", str(exc))
        except Exception as exc:
            log.exception("%s: configuration of %s failed", self.whitebox_id, req.port)
            return ErrorReply("operation-failed", str(exc))
        record = FeedbackRecord(TransceiverId(self.whitebox_id, req.port), slot,
                                result.config_time_s, self.clock.to_datetime(result.end_us))
        with self._telemetry_lock:
            self.telemetry.append(record)
        return OkReply(result.config_time_s)

    def shutdown(self) -> None:
        """Stop accepting sessions; in-flight replies are sent before sockets close."""
        if self._stopped:
            return
        self._stopped = True
        self._server.shutdown()
        with self._sessions_lock:
            sessions = list(self._sessions)
        for s in sessions:
            # idle sessions see EOF; a handler mid-request still writes its reply
            try:
                s.shutdown(socket.SHUT_RD)
            except OSError:
                pass
        self._server.server_close()
        self._thread.join()
        self.transceivers.close()
        self._sink.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def serve(config: WhiteboxConfig) -> AgentServer:
    return AgentServer(config)


def shutdown(handle: AgentServer) -> None:
    handle.shutdown()


def load_config(path: str | Path, seed: int = 0) -> WhiteboxConfig:
    path = Path(path)
    return WhiteboxConfig.from_document(json.loads(path.read_text()), path.parent, seed)


def serve_forever(config: WhiteboxConfig, ready: Callable[[AgentServer], None] | None = None) -> None:
    server = serve(config)
    if ready is not None:
        ready(server)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
