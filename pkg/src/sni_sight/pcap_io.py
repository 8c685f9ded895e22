"""Classic pcap decoding: file -> packet records -> TCP segments -> stitched flows.

Only classic pcap is handled (tcpdump's default output); pcapng is out of
scope.  Link layers: Ethernet (1) and Raw IP (101).  Linux cooked capture
(113) is rejected with a hint to re-capture with Ethernet framing.
"""

from __future__ import annotations

import bisect
import ipaddress
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

# Accepted magic values and what they imply.  The magic is always decoded
# little-endian here; a file written big-endian therefore shows up as the
# byte-swapped constant.
MAGIC_US = 0xA1B2C3D4
MAGIC_US_SWAPPED = 0xD4C3B2A1
MAGIC_NS = 0xA1B23C4D
MAGIC_NS_SWAPPED = 0x4D3CB2A1

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IP = 101
LINKTYPE_LINUX_SLL = 113

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = 0x8100

IPPROTO_TCP = 6


class PcapError(Exception):
    """Base class for capture-file decoding failures."""


class BadMagic(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


class TruncatedHeader(PcapError):
    pass


class TruncatedRecord(PcapError):
    def __init__(self, offset: int, message: str = ""):
        self.offset = offset
        super().__init__(message or f"truncated packet record at byte offset {offset}")


class MalformedLayer(PcapError):
    def __init__(self, layer: str, offset: int, message: str = ""):
        self.layer = layer
        self.offset = offset
        super().__init__(message or f"malformed {layer} layer at byte offset {offset}")


@dataclass(frozen=True)
class PcapHeader:
    magic: int
    version_major: int
    version_minor: int
    snaplen: int
    linktype: int
    byte_order: str        # struct prefix, "<" or ">"
    ts_resolution: float   # seconds per ts_frac unit: 1e-6 or 1e-9


@dataclass(frozen=True)
class PcapRecord:
    index: int             # position in file order, 0-based
    ts_sec: int
    ts_frac: int
    orig_len: int
    data: bytes
    ts_resolution: float

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_frac * self.ts_resolution


class FlowKey(NamedTuple):
    src: str
    dst: str
    sport: int
    dport: int
    proto: str = "tcp"


@dataclass(frozen=True)
class TcpSegment:
    flow_key: FlowKey
    seq: int
    timestamp: float
    payload: bytes
    file_index: int = 0


def read_pcap(source) -> Iterator[PcapHeader | PcapRecord]:
    """Yield the validated global header once, then every packet record.

    ``source`` is a path or a binary file object.  Both byte orders and both
    the microsecond and nanosecond magics are honored.  A truncated trailing
    record raises TruncatedRecord rather than being dropped.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            yield from _read_stream(fh)
    else:
        yield from _read_stream(source)


def _read_stream(fh) -> Iterator[PcapHeader | PcapRecord]:
    head = fh.read(GLOBAL_HEADER_LEN)
    if len(head) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(
            f"file ends after {len(head)} bytes; a pcap global header needs {GLOBAL_HEADER_LEN}"
        )
    (magic,) = struct.unpack("<I", head[:4])
    if magic == MAGIC_US:
        order, resolution = "<", 1e-6
    elif magic == MAGIC_NS:
        order, resolution = "<", 1e-9
    elif magic == MAGIC_US_SWAPPED:
        order, resolution, magic = ">", 1e-6, MAGIC_US
    elif magic == MAGIC_NS_SWAPPED:
        order, resolution, magic = ">", 1e-9, MAGIC_NS
    else:
        raise BadMagic(f"not a classic pcap file (magic 0x{magic:08x})")

    vmaj, vmin, _zone, _sigfigs, snaplen, linktype = struct.unpack(order + "HHiIII", head[4:])
    if linktype == LINKTYPE_LINUX_SLL:
        raise UnsupportedLinkType(
            "Linux cooked capture (linktype 113) is not decoded; "
            "re-capture with Ethernet framing (e.g. tcpdump -i eth0)"
        )
    if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW_IP):
        raise UnsupportedLinkType(f"unsupported linktype {linktype}")

    header = PcapHeader(magic, vmaj, vmin, snaplen, linktype, order, resolution)
    yield header

    offset = GLOBAL_HEADER_LEN
    index = 0
    while True:
        rec_head = fh.read(RECORD_HEADER_LEN)
        if not rec_head:
            return
        if len(rec_head) < RECORD_HEADER_LEN:
            raise TruncatedRecord(offset, f"record header cut short at byte offset {offset}")
        ts_sec, ts_frac, incl_len, orig_len = struct.unpack(order + "IIII", rec_head)
        data = fh.read(incl_len)
        if len(data) < incl_len:
            raise TruncatedRecord(
                offset,
                f"record at byte offset {offset} declares {incl_len} bytes, "
                f"file has {len(data)}",
            )
        yield PcapRecord(index, ts_sec, ts_frac, orig_len, data, resolution)
        offset += RECORD_HEADER_LEN + incl_len
        index += 1


def decode_tcp(record: PcapRecord, linktype: int) -> TcpSegment | None:
    """Decode one packet record down to its TCP payload.

    Returns None (skip) for anything that is not IPv4/IPv6 TCP: ARP, UDP,
    VLAN-tagged non-IP, IPv6 with extension headers, fragments past the
    first.  Raises MalformedLayer only when a packet that claims to carry
    TCP is internally inconsistent.
    """
    data = record.data
    if linktype == LINKTYPE_ETHERNET:
        if len(data) < 14:
            return None
        ethertype = int.from_bytes(data[12:14], "big")
        offset = 14
        if ethertype == ETHERTYPE_VLAN:
            # one 802.1Q tag: 2 bytes TCI then the inner ethertype
            if len(data) < 18:
                return None
            ethertype = int.from_bytes(data[16:18], "big")
            offset = 18
        if ethertype == ETHERTYPE_IPV4:
            return _decode_ipv4(record, data, offset)
        if ethertype == ETHERTYPE_IPV6:
            return _decode_ipv6(record, data, offset)
        return None
    if linktype == LINKTYPE_RAW_IP:
        if not data:
            return None
        version = data[0] >> 4
        if version == 4:
            return _decode_ipv4(record, data, 0)
        if version == 6:
            return _decode_ipv6(record, data, 0)
        return None
    raise UnsupportedLinkType(f"unsupported linktype {linktype}")


def _decode_ipv4(record: PcapRecord, data: bytes, offset: int) -> TcpSegment | None:
    if len(data) < offset + 20:
        return None
    b0 = data[offset]
    if b0 >> 4 != 4:
        return None
    ihl = (b0 & 0x0F) * 4
    if ihl < 20:
        return None
    total_length = int.from_bytes(data[offset + 2 : offset + 4], "big")
    flags_frag = int.from_bytes(data[offset + 6 : offset + 8], "big")
    if flags_frag & 0x1FFF:
        return None  # non-first fragment, reassembly is out of scope
    protocol = data[offset + 9]
    if protocol != IPPROTO_TCP:
        return None
    if total_length < ihl:
        raise MalformedLayer("ipv4", offset, f"ipv4 total length {total_length} < header length {ihl}")
    if len(data) < offset + ihl:
        raise MalformedLayer("ipv4", offset, "ipv4 header runs past captured bytes")
    src = str(ipaddress.ip_address(data[offset + 12 : offset + 16]))
    dst = str(ipaddress.ip_address(data[offset + 16 : offset + 20]))
    ip_end = min(offset + total_length, len(data))
    return _decode_tcp_header(record, data, offset + ihl, ip_end, src, dst)


def _decode_ipv6(record: PcapRecord, data: bytes, offset: int) -> TcpSegment | None:
    if len(data) < offset + 40:
        return None
    if data[offset] >> 4 != 6:
        return None
    payload_length = int.from_bytes(data[offset + 4 : offset + 6], "big")
    next_header = data[offset + 6]
    if next_header != IPPROTO_TCP:
        return None  # extension-header chains are out of scope
    src = str(ipaddress.ip_address(data[offset + 8 : offset + 24]))
    dst = str(ipaddress.ip_address(data[offset + 24 : offset + 40]))
    ip_end = min(offset + 40 + payload_length, len(data))
    return _decode_tcp_header(record, data, offset + 40, ip_end, src, dst)


def _decode_tcp_header(record, data, toff, ip_end, src, dst) -> TcpSegment:
    if ip_end < toff + 20 or len(data) < toff + 20:
        raise MalformedLayer("tcp", toff, "tcp header runs past packet end")
    sport = int.from_bytes(data[toff : toff + 2], "big")
    dport = int.from_bytes(data[toff + 2 : toff + 4], "big")
    seq = int.from_bytes(data[toff + 4 : toff + 8], "big")
    header_len = (data[toff + 12] >> 4) * 4
    if header_len < 20 or toff + header_len > ip_end:
        raise MalformedLayer("tcp", toff + 12, f"tcp data offset {header_len} inconsistent")
    payload = data[toff + header_len : ip_end]
    return TcpSegment(
        flow_key=FlowKey(src, dst, sport, dport),
        seq=seq,
        timestamp=record.timestamp,
        payload=payload,
        file_index=record.index,
    )


@dataclass
class FlowBytes:
    """One flow's payload bytes, concatenated in sequence-number order.

    ``chunks`` records, per contributing segment, the stitched-stream offset
    where its bytes start plus the segment's capture timestamp and file
    index.  This lets upper layers assign each TLS record the timestamp of
    the segment that carried the record's first byte (an approximation: only
    chronological ordering is needed downstream).
    """

    flow_key: FlowKey
    data: bytes = b""
    chunks: list[tuple[int, float, int]] = field(default_factory=list)
    truncated: bool = False

    @property
    def first_timestamp(self) -> float:
        return self.chunks[0][1] if self.chunks else 0.0

    def origin_at(self, offset: int) -> tuple[float, int]:
        """(timestamp, file index) of the segment that contributed ``offset``."""
        if not self.chunks:
            return (0.0, 0)
        starts = [c[0] for c in self.chunks]
        i = bisect.bisect_right(starts, offset) - 1
        return (self.chunks[i][1], self.chunks[i][2])


def stitch_flow(segments) -> list[FlowBytes]:
    """Group TCP segments by flow and stitch payloads in sequence order.

    Reassembly is deliberately minimal: segments whose byte range was already
    delivered are dropped, and any gap or partial overlap truncates the flow
    at that point (flagged).  Order of delivery does not matter.
    """
    by_flow: dict[FlowKey, list[TcpSegment]] = {}
    flow_order: list[FlowKey] = []
    for seg in segments:
        if seg is None or not seg.payload:
            continue
        if seg.flow_key not in by_flow:
            by_flow[seg.flow_key] = []
            flow_order.append(seg.flow_key)
        by_flow[seg.flow_key].append(seg)

    flows = []
    for key in flow_order:
        segs = sorted(by_flow[key], key=lambda s: (s.seq, s.file_index))
        flow = FlowBytes(flow_key=key)
        parts: list[bytes] = []
        expected = segs[0].seq
        length = 0
        for seg in segs:
            if seg.seq == expected:
                flow.chunks.append((length, seg.timestamp, seg.file_index))
                parts.append(seg.payload)
                length += len(seg.payload)
                expected += len(seg.payload)
            elif seg.seq + len(seg.payload) <= expected:
                continue  # duplicate or fully-covered retransmission
            else:
                flow.truncated = True  # gap or partial overlap: stop here
                break
        flow.data = b"".join(parts)
        flows.append(flow)
    return flows
