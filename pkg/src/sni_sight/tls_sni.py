"""TLS record and ClientHello parsing down to the server name, per flow.

Walks record layer -> handshake message -> ClientHello fields -> extensions
-> server_name, and turns a capture file into a chronological list of
SniEvents.  Flows that do not start with plausible TLS are skipped, never
errors: captures carry plenty of non-TLS TCP traffic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .pcap_io import FlowBytes, FlowKey, MalformedLayer, PcapHeader, decode_tcp, read_pcap, stitch_flow

log = logging.getLogger(__name__)

RECORD_HANDSHAKE = 22
VALID_RECORD_TYPES = frozenset({20, 21, 22, 23})
MAX_RECORD_BODY = (1 << 14) + 2048
HANDSHAKE_CLIENT_HELLO = 1
EXT_SERVER_NAME = 0x0000
EXT_SUPPORTED_VERSIONS = 0x002B
SNI_HOST_NAME = 0x00
VERSION_TLS13 = 0x0304
VERSION_TLS12 = 0x0303

# Retransmitted ClientHellos with the same SNI inside one flow within this
# many seconds collapse to a single event.
DEFAULT_DEDUP_WINDOW = 1.0


class Malformed(Exception):
    """A ClientHello length field is inconsistent with the remaining bytes."""

    def __init__(self, field_name: str, offset: int):
        self.field_name = field_name
        self.offset = offset
        super().__init__(f"malformed ClientHello: {field_name} at byte offset {offset}")


class TlsVersion(str, Enum):
    TLS12 = "1.2"
    TLS13 = "1.3"


@dataclass(frozen=True)
class SniEvent:
    server_name: str
    timestamp: float
    tls_version: TlsVersion
    flow_key: FlowKey | None = None


@dataclass
class Trace:
    """A labeled chronological list of SNI events; the unit of one capture."""

    label: list[str]
    events: list[SniEvent]
    trace_id: str = ""


@dataclass(frozen=True)
class TlsRecord:
    content_type: int
    version: int
    body: bytes
    timestamp: float
    file_index: int = 0


@dataclass
class ClientHelloSummary:
    legacy_version: int
    cipher_suite_count: int
    extensions: list[tuple[int, bytes]] = field(default_factory=list)
    sni: str | None = None
    multiple_sni: bool = False
    supported_versions: list[int] | None = None


def parse_records(flow) -> tuple[list[TlsRecord], bool]:
    """Split a flow's bytes into TLS records.

    Accepts a FlowBytes (timestamps per record come from the segment holding
    the record's first byte) or raw bytes (timestamp 0).  Stops quietly at
    the first byte that cannot begin a record; returns (records, flagged)
    where flagged means the stream went bad after at least one valid record.
    """
    if isinstance(flow, FlowBytes):
        data = flow.data
        origin_at = flow.origin_at
    else:
        data = flow
        origin_at = lambda off: (0.0, 0)

    records: list[TlsRecord] = []
    offset = 0
    flagged = False
    while offset + 5 <= len(data):
        ctype = data[offset]
        major, minor = data[offset + 1], data[offset + 2]
        length = int.from_bytes(data[offset + 3 : offset + 5], "big")
        if ctype not in VALID_RECORD_TYPES or major != 3 or minor > 4 or not 0 < length <= MAX_RECORD_BODY:
            flagged = bool(records)
            break
        if offset + 5 + length > len(data):
            # record cut off by a flow gap or end of capture
            flagged = bool(records)
            break
        ts, idx = origin_at(offset)
        records.append(
            TlsRecord(ctype, (major << 8) | minor, data[offset + 5 : offset + 5 + length], ts, idx)
        )
        offset += 5 + length
    return records, flagged


def handshake_messages(records) -> list[tuple[int, bytes, float, int]]:
    """Reassemble handshake messages, coalescing across record boundaries.

    Returns (handshake type, message body, timestamp, file index) per
    message, the timestamp being that of the record carrying the message's
    first byte.
    """
    buf = bytearray()
    marks: list[tuple[int, float, int]] = []  # buffer offset -> (ts, file index)
    out = []
    consumed = 0
    for rec in records:
        if rec.content_type != RECORD_HANDSHAKE:
            continue
        marks.append((consumed + len(buf), rec.timestamp, rec.file_index))
        buf.extend(rec.body)
        while len(buf) >= 4:
            msg_type = buf[0]
            msg_len = int.from_bytes(buf[1:4], "big")
            if len(buf) < 4 + msg_len:
                break
            ts, idx = _mark_at(marks, consumed)
            out.append((msg_type, bytes(buf[4 : 4 + msg_len]), ts, idx))
            del buf[: 4 + msg_len]
            consumed += 4 + msg_len
    return out


def _mark_at(marks, offset):
    ts, idx = marks[0][1], marks[0][2]
    for start, t, i in marks:
        if start <= offset:
            ts, idx = t, i
        else:
            break
    return ts, idx


def parse_client_hello(body: bytes) -> ClientHelloSummary:
    """Parse a ClientHello handshake message body (type byte already stripped).

    Field walk: legacy version, random, session id, cipher suites,
    compression methods, then the optional extensions block.  Every length
    field is checked against the remaining bytes; the extensions block must
    account for exactly the declared length.
    """
    cur = _Cursor(body)
    legacy_version = cur.u16("legacy_version")
    cur.take(32, "random")
    sid_len = cur.u8("session_id_length")
    cur.take(sid_len, "session_id")
    suites_len = cur.u16("cipher_suites_length")
    if suites_len % 2:
        raise Malformed("cipher_suites_length", cur.offset)
    cur.take(suites_len, "cipher_suites")
    comp_len = cur.u8("compression_methods_length")
    cur.take(comp_len, "compression_methods")

    summary = ClientHelloSummary(legacy_version=legacy_version, cipher_suite_count=suites_len // 2)
    if cur.remaining == 0:
        return summary  # SSLv3-style minimal hello, no extensions block

    ext_total = cur.u16("extensions_length")
    if ext_total != cur.remaining:
        raise Malformed("extensions_length", cur.offset)
    while cur.remaining:
        ext_type = cur.u16("extension_type")
        ext_len = cur.u16("extension_length")
        ext_body = cur.take(ext_len, "extension_body")
        summary.extensions.append((ext_type, ext_body))
        if ext_type == EXT_SERVER_NAME:
            _parse_sni(ext_body, cur.offset - ext_len, summary)
        elif ext_type == EXT_SUPPORTED_VERSIONS:
            summary.supported_versions = _parse_supported_versions(ext_body, cur.offset - ext_len)
    return summary


def _parse_sni(body: bytes, base: int, summary: ClientHelloSummary) -> None:
    cur = _Cursor(body, base)
    list_len = cur.u16("server_name_list_length")
    if list_len != cur.remaining:
        raise Malformed("server_name_list_length", cur.offset)
    while cur.remaining:
        name_type = cur.u8("server_name_type")
        name_len = cur.u16("server_name_length")
        raw = cur.take(name_len, "server_name")
        if name_type != SNI_HOST_NAME:
            continue
        if summary.sni is not None:
            summary.multiple_sni = True  # first host_name wins
            continue
        if not raw or b"\x00" in raw:
            raise Malformed("server_name", cur.offset)
        try:
            summary.sni = raw.decode("ascii")
        except UnicodeDecodeError:
            raise Malformed("server_name", cur.offset) from None


def _parse_supported_versions(body: bytes, base: int) -> list[int]:
    cur = _Cursor(body, base)
    list_len = cur.u8("supported_versions_length")
    if list_len != cur.remaining or list_len % 2:
        raise Malformed("supported_versions_length", cur.offset)
    return [cur.u16("supported_version") for _ in range(list_len // 2)]


class _Cursor:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base

    @property
    def offset(self) -> int:
        return self.base + self.pos

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, name: str) -> bytes:
        if self.remaining < n:
            raise Malformed(name, self.offset)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, name: str) -> int:
        return self.take(1, name)[0]

    def u16(self, name: str) -> int:
        return int.from_bytes(self.take(2, name), "big")


def classify_version(summary: ClientHelloSummary) -> TlsVersion | None:
    """Map a ClientHello to TLS 1.2 / 1.3, or None for pure-legacy hellos.

    TLS 1.3 hellos carry legacy_version 0x0303 on the wire, so the
    supported_versions extension decides when present; otherwise the hello's
    own version field must say 0x0303.
    """
    if summary.supported_versions is not None:
        if VERSION_TLS13 in summary.supported_versions:
            return TlsVersion.TLS13
        if VERSION_TLS12 in summary.supported_versions:
            return TlsVersion.TLS12
        return None
    if summary.legacy_version == VERSION_TLS12:
        return TlsVersion.TLS12
    return None


def normalize_name(name: str) -> str:
    """Lowercase and strip one trailing dot, so vocabularies never split on case."""
    name = name.lower()
    if name.endswith("."):
        name = name[:-1]
    return name


def events_from_flow(flow: FlowBytes, dedup_window: float = DEFAULT_DEDUP_WINDOW) -> list[SniEvent]:
    records, flagged = parse_records(flow)
    if flagged:
        log.debug("flow %s went non-TLS after %d records", flow.flow_key, len(records))
    events: list[tuple[SniEvent, int]] = []
    last_seen: dict[str, float] = {}
    for msg_type, body, ts, idx in handshake_messages(records):
        if msg_type != HANDSHAKE_CLIENT_HELLO:
            continue
        try:
            summary = parse_client_hello(body)
        except Malformed as exc:
            log.debug("flow %s: %s", flow.flow_key, exc)
            continue
        if summary.sni is None:
            continue
        version = classify_version(summary)
        if version is None:
            continue
        name = normalize_name(summary.sni)
        if not name:
            continue
        prev = last_seen.get(name)
        if prev is not None and ts - prev <= dedup_window:
            last_seen[name] = ts
            continue
        last_seen[name] = ts
        events.append((SniEvent(name, ts, version, flow.flow_key), idx))
    return events


def extract_trace(source, dedup_window: float = DEFAULT_DEDUP_WINDOW) -> list[SniEvent]:
    """Extract the chronological SNI events of one capture file.

    Pure function of the file bytes: decodes every packet, stitches flows,
    parses ClientHellos, then merges all flows' events sorted by timestamp
    with ties broken by file order.  Malformed single packets are skipped
    with a warning; file-level errors propagate.
    """
    stream = read_pcap(source)
    header = next(stream)
    assert isinstance(header, PcapHeader)
    segments = []
    for record in stream:
        try:
            seg = decode_tcp(record, header.linktype)
        except MalformedLayer as exc:
            log.warning("packet %d skipped: %s", record.index, exc)
            continue
        if seg is not None:
            segments.append(seg)

    tagged = []
    for flow in stitch_flow(segments):
        tagged.extend(events_from_flow(flow, dedup_window))
    tagged.sort(key=lambda pair: (pair[0].timestamp, pair[1]))
    return [event for event, _ in tagged]


# ---------------------------------------------------------------------------
# Trace interchange format: one JSON object per line, UTF-8, events by ts.
#   {"label": [websites...], "events": [{"sni": str, "ts": float, "ver": "1.2"|"1.3"}]}

def trace_to_json(trace: Trace) -> str:
    events = [
        {"sni": e.server_name, "ts": e.timestamp, "ver": e.tls_version.value}
        for e in sorted(trace.events, key=lambda e: e.timestamp)
    ]
    return json.dumps({"label": list(trace.label), "events": events}, sort_keys=True)


def trace_from_json(line: str, trace_id: str = "") -> Trace:
    obj = json.loads(line)
    events = [
        SniEvent(ev["sni"], float(ev["ts"]), TlsVersion(ev["ver"])) for ev in obj["events"]
    ]
    return Trace(label=list(obj["label"]), events=events, trace_id=trace_id)


def write_traces(path, traces) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(trace_to_json(trace) + "\n")


def read_traces(path) -> list[Trace]:
    name = Path(path).name
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if line:
                out.append(trace_from_json(line, trace_id=f"{name}:{i}"))
    return out
