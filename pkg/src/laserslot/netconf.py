"""Netconf-lite: XML RPC messages with ``]]>]]>`` end-of-message framing.

Vocabulary::

    <hello message-id="N"><capabilities><capability>..</capability></capabilities></hello>
    <rpc message-id="N"><edit-config><target><running/></target><config>
        <pluggable><id>PORT</id><laser-frequency-ghz>F</laser-frequency-ghz>
        <grid-ghz>100</grid-ghz></pluggable></config></edit-config></rpc>
    <rpc message-id="N"><get-telemetry>[<id>PORT</id>]</get-telemetry></rpc>
    <rpc-reply message-id="N"><ok/>[<config-time-seconds>T</config-time-seconds>]</rpc-reply>
    <rpc-reply message-id="N"><telemetry><record>..</record>*</telemetry></rpc-reply>
    <rpc-reply message-id="N"><rpc-error><error-tag>..</error-tag>
        <error-message>..</error-message></rpc-error></rpc-reply>
"""

from __future__ import annotations

import math
import socket
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterator, Union

from .core import GRID_GHZ, FeedbackRecord, TransceiverId, frequency_to_slot
from .errors import InvalidFrequency, ProtocolError, RpcError, SessionDown

DELIMITER = b"]]>]]>"
BASE_CAPABILITY = "urn:ietf:params:netconf:base:1.0"
PLUGGABLE_CAPABILITY = "urn:laserslot:pluggable-frequency:1.0"


@dataclass(frozen=True)
class Hello:
    capabilities: tuple[str, ...] = (BASE_CAPABILITY, PLUGGABLE_CAPABILITY)


@dataclass(frozen=True)
class EditConfig:
    port: str
    frequency_ghz: int
    grid_ghz: int = GRID_GHZ


@dataclass(frozen=True)
class GetTelemetry:
    port: str | None = None


@dataclass(frozen=True)
class OkReply:
    config_time_s: float | None = None


@dataclass(frozen=True)
class TelemetryReply:
    records: tuple[FeedbackRecord, ...] = ()


@dataclass(frozen=True)
class ErrorReply:
    tag: str
    message: str


Body = Union[Hello, EditConfig, GetTelemetry, OkReply, TelemetryReply, ErrorReply]
_REQUESTS = (EditConfig, GetTelemetry)


@dataclass(frozen=True)
class RpcMessage:
    message_id: int
    body: Body = field(default_factory=Hello)

    def __post_init__(self):
        if isinstance(self.message_id, bool) or not isinstance(self.message_id, int) or self.message_id < 1:
            raise ValueError(f"message_id must be a positive integer, got {self.message_id!r}")


def _sub(parent, tag, text=None):
    el = ET.SubElement(parent, tag)
    if text is not None:
        el.text = text
    return el


def _fmt_float(x: float) -> str:
    # repr is the shortest exact round-trip form
    return repr(float(x))


def encode(message: RpcMessage) -> bytes:
    body = message.body
    mid = str(message.message_id)
    if isinstance(body, Hello):
        root = ET.Element("hello", {"message-id": mid})
        caps = _sub(root, "capabilities")
        for c in body.capabilities:
            _sub(caps, "capability", c)
    elif isinstance(body, _REQUESTS):
        root = ET.Element("rpc", {"message-id": mid})
        if isinstance(body, EditConfig):
            ec = _sub(root, "edit-config")
            _sub(_sub(ec, "target"), "running")
            plug = _sub(_sub(ec, "config"), "pluggable")
            _sub(plug, "id", body.port)
            _sub(plug, "laser-frequency-ghz", str(body.frequency_ghz))
            _sub(plug, "grid-ghz", str(body.grid_ghz))
        else:
            gt = _sub(root, "get-telemetry")
            if body.port is not None:
                _sub(gt, "id", body.port)
    else:
        root = ET.Element("rpc-reply", {"message-id": mid})
        if isinstance(body, OkReply):
            _sub(root, "ok")
            if body.config_time_s is not None:
                _sub(root, "config-time-seconds", _fmt_float(body.config_time_s))
        elif isinstance(body, TelemetryReply):
            tel = _sub(root, "telemetry")
            for r in body.records:
                rec = _sub(tel, "record")
                _sub(rec, "whitebox", r.transceiver.whitebox)
                _sub(rec, "id", r.transceiver.port)
                _sub(rec, "laser-frequency-ghz", str(r.slot.frequency_ghz))
                _sub(rec, "config-time-seconds", _fmt_float(r.config_time_s))
                _sub(rec, "timestamp", r.wall_time.isoformat())
        elif isinstance(body, ErrorReply):
            err = _sub(root, "rpc-error")
            _sub(err, "error-tag", body.tag)
            _sub(err, "error-message", body.message)
        else:
            raise TypeError(f"cannot encode {type(body).__name__}")
    # text and attribute values always escape ">", so " />" only closes empty tags
    text = ET.tostring(root, encoding="unicode").replace(" />", "/>")
    return text.encode("utf-8") + DELIMITER


def _text(el, tag, doc) -> str:
    child = el.find(tag)
    if child is None:
        raise ProtocolError(doc, f"missing <{tag}>")
    return child.text or ""


def _int(text, doc) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ProtocolError(doc, f"not an integer: {text!r}") from None


def _float(text, doc) -> float:
    try:
        value = float(text.strip())
    except ValueError:
        raise ProtocolError(doc, f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ProtocolError(doc, f"not a finite number: {text!r}")
    return value


def _only_child(el, doc):
    children = list(el)
    if len(children) != 1:
        raise ProtocolError(doc, f"<{el.tag}> must have exactly one operation")
    return children[0]


def decode_document(doc: bytes) -> RpcMessage:
    try:
        root = ET.fromstring(doc)
    except ET.ParseError as exc:
        raise ProtocolError(doc, f"XML parse error: {exc}") from None
    mid = _int(root.get("message-id", ""), doc)
    if mid < 1:
        raise ProtocolError(doc, "message-id must be positive")
    if root.tag == "hello":
        caps = root.find("capabilities")
        if caps is None:
            raise ProtocolError(doc, "hello without capabilities")
        return RpcMessage(mid, Hello(tuple(c.text or "" for c in caps.findall("capability"))))
    if root.tag == "rpc":
        op = _only_child(root, doc)
        if op.tag == "edit-config":
            plug = op.find("config/pluggable")
            if plug is None:
                raise ProtocolError(doc, "edit-config without config/pluggable")
            return RpcMessage(mid, EditConfig(
                _text(plug, "id", doc),
                _int(_text(plug, "laser-frequency-ghz", doc), doc),
                _int(_text(plug, "grid-ghz", doc), doc),
            ))
        if op.tag == "get-telemetry":
            port = op.find("id")
            return RpcMessage(mid, GetTelemetry(None if port is None else (port.text or "")))
        raise ProtocolError(doc, f"unknown operation <{op.tag}>")
    if root.tag == "rpc-reply":
        children = list(root)
        if not children:
            raise ProtocolError(doc, "empty rpc-reply")
        first = children[0]
        if first.tag == "ok":
            t = root.find("config-time-seconds")
            return RpcMessage(mid, OkReply(None if t is None else _float(t.text or "", doc)))
        if first.tag == "telemetry":
            records = []
            for rec in first.findall("record"):
                freq = _int(_text(rec, "laser-frequency-ghz", doc), doc)
                try:
                    records.append(FeedbackRecord(
                        TransceiverId(_text(rec, "whitebox", doc), _text(rec, "id", doc)),
                        frequency_to_slot(freq),
                        _float(_text(rec, "config-time-seconds", doc), doc),
                        datetime.fromisoformat(_text(rec, "timestamp", doc)),
                    ))
                except (ValueError, InvalidFrequency) as exc:
                    raise ProtocolError(doc, f"bad telemetry record: {exc}") from None
            return RpcMessage(mid, TelemetryReply(tuple(records)))
        if first.tag == "rpc-error":
            return RpcMessage(mid, ErrorReply(_text(first, "error-tag", doc), _text(first, "error-message", doc)))
        raise ProtocolError(doc, f"unknown reply element <{first.tag}>")
    raise ProtocolError(doc, f"unknown root element <{root.tag}>")


class Decoder:
    """Per-connection reassembly buffer.

    ``feed`` appends bytes; iterating yields every complete message so far.
    Partial trailing data is kept until its delimiter arrives.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf.extend(data)

    def __iter__(self) -> Iterator[RpcMessage]:
        while True:
            end = self._buf.find(DELIMITER)
            if end < 0:
                return
            doc = bytes(self._buf[:end])
            del self._buf[:end + len(DELIMITER)]
            yield decode_document(doc)

    @property
    def pending(self) -> int:
        return len(self._buf)


def decode(data: bytes) -> list[RpcMessage]:
    """Decode every complete framed document in ``data``; trailing partial data is ignored."""
    d = Decoder()
    d.feed(data)
    return list(d)


class Channel:
    """Blocking message channel over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.decoder = Decoder()
        self._ready: list[RpcMessage] = []

    def send(self, message: RpcMessage) -> None:
        try:
            self.sock.sendall(encode(message))
        except OSError as exc:
            raise SessionDown(f"send failed: {exc}") from exc

    def recv(self) -> RpcMessage:
        while not self._ready:
            try:
                data = self.sock.recv(65536)
            except OSError as exc:
                raise SessionDown(f"receive failed: {exc}") from exc
            if not data:
                raise SessionDown("connection closed by peer")
            self.decoder.feed(data)
            self._ready.extend(self.decoder)
        return self._ready.pop(0)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class Session:
    """Client side of one controller-to-whitebox session.

    One request is outstanding at a time; concurrent callers are serialized.
    """

    def __init__(self, host: str, port: int, timeout: float | None = 30.0):
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise SessionDown(f"cannot connect to {host}:{port}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.address = (host, port)
        self.channel = Channel(sock)
        self._lock = threading.Lock()
        self._next_id = 1
        self.channel.send(RpcMessage(self._take_id(), Hello()))
        hello = self.channel.recv()
        if not isinstance(hello.body, Hello):
            self.channel.close()
            raise ProtocolError(encode(hello), "expected hello")
        self.peer_capabilities = hello.body.capabilities

    def _take_id(self) -> int:
        mid = self._next_id
        self._next_id += 1
        return mid

    def request(self, body: Body) -> Body:
        with self._lock:
            mid = self._take_id()
            self.channel.send(RpcMessage(mid, body))
            reply = self.channel.recv()
        if reply.message_id != mid:
            raise ProtocolError(encode(reply), f"reply id {reply.message_id} does not match request {mid}")
        if isinstance(reply.body, ErrorReply):
            raise RpcError(reply.body.tag, reply.body.message)
        return reply.body

    def edit_config(self, port: str, frequency_ghz: int) -> float:
        """Retune ``port``; returns the reported configuration time in seconds."""
        body = self.request(EditConfig(port, int(frequency_ghz)))
        if not isinstance(body, OkReply) or body.config_time_s is None:
            raise ProtocolError(b"", f"unexpected reply to edit-config: {body!r}")
        return body.config_time_s

    def get_telemetry(self, port: str | None = None) -> tuple[FeedbackRecord, ...]:
        body = self.request(GetTelemetry(port))
        if not isinstance(body, TelemetryReply):
            raise ProtocolError(b"", f"unexpected reply to get-telemetry: {body!r}")
        return body.records

    def close(self) -> None:
        self.channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
