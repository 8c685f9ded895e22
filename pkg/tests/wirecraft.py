"""Hand-assembled packet and capture fixtures for the parser tests.

Everything here is built field by field from the wire layouts with explicit
offsets, independent of the package's own emitter, so the two sides can
check each other.
"""

import struct

# --- classic pcap ----------------------------------------------------------
# global header: magic u32 | major u16 | minor u16 | thiszone i32 |
#                sigfigs u32 | snaplen u32 | linktype u32
# record header: ts_sec u32 | ts_frac u32 | incl_len u32 | orig_len u32

MAGICS = {
    "us-le": ("<", 0xA1B2C3D4),
    "us-be": (">", 0xA1B2C3D4),
    "ns-le": ("<", 0xA1B23C4D),
    "ns-be": (">", 0xA1B23C4D),
}


def pcap_file(records, magic="us-le", linktype=1, snaplen=65535):
    order, value = MAGICS[magic]
    out = [struct.pack(order + "IHHiIII", value, 2, 4, 0, 0, snaplen, linktype)]
    for ts_sec, ts_frac, data in records:
        out.append(struct.pack(order + "IIII", ts_sec, ts_frac, len(data), len(data)))
        out.append(data)
    return b"".join(out)


# --- layer 2/3/4 -----------------------------------------------------------

def ethernet(payload, ethertype=0x0800, vlan=None):
    header = b"\xaa\xbb\xcc\x00\x00\x01" + b"\xaa\xbb\xcc\x00\x00\x02"
    if vlan is not None:
        # 802.1Q: TPID 0x8100, TCI (priority/vlan id), then the real ethertype
        header += struct.pack(">HH", 0x8100, vlan)
    return header + struct.pack(">H", ethertype) + payload


def ipv4(payload, proto=6, src=b"\x0a\x00\x00\x01", dst=b"\x0a\x00\x00\x02",
         total_length=None, frag_offset=0):
    if total_length is None:
        total_length = 20 + len(payload)
    # version 4, IHL 5 (20 bytes), no options
    return struct.pack(
        ">BBHHHBBH4s4s",
        0x45, 0, total_length, 0xBEEF, frag_offset, 64, proto, 0, src, dst,
    ) + payload


def ipv6(payload, next_header=6,
         src=bytes.fromhex("20010db8000000000000000000000001"),
         dst=bytes.fromhex("20010db8000000000000000000000002")):
    return struct.pack(">IHBB", 0x60000000, len(payload), next_header, 64) + src + dst + payload


def tcp(payload, sport=49152, dport=443, seq=1000, data_offset=5):
    return struct.pack(
        ">HHIIBBHHH", sport, dport, seq, 0, data_offset << 4, 0x18, 65535, 0, 0
    ) + payload


def arp_packet():
    # hardware type 1, protocol 0x0800, sizes 6/4, opcode 1 (request)
    body = struct.pack(">HHBBH", 1, 0x0800, 6, 4, 1) + bytes(20)
    return ethernet(body, ethertype=0x0806)


def udp_dns_packet():
    udp = struct.pack(">HHHH", 5353, 53, 8 + 12, 0) + bytes(12)
    return ethernet(ipv4(udp, proto=17))


def tcp_ab_packet():
    """Minimal Ethernet+IPv4+TCP frame carrying the payload b"AB".

    Byte map: 14 (ether) + 20 (ipv4, IHL=5, total 42) + 20 (tcp, offset 5)
    + 2 payload = 56 bytes.
    """
    return ethernet(ipv4(tcp(b"AB")))


# --- TLS -------------------------------------------------------------------

def tls_record(body, content_type=22, version=(3, 1)):
    return bytes([content_type, *version]) + struct.pack(">H", len(body)) + body


def handshake(body, msg_type=1):
    return bytes([msg_type]) + len(body).to_bytes(3, "big") + body


def sni_extension(*names, first_type=0x00):
    entries = b""
    for i, name in enumerate(names):
        raw = name.encode("ascii")
        name_type = first_type if i == 0 else 0x00
        entries += bytes([name_type]) + struct.pack(">H", len(raw)) + raw
    body = struct.pack(">H", len(entries)) + entries
    return struct.pack(">HH", 0x0000, len(body)) + body


def supported_versions_extension(*versions):
    body = bytes([2 * len(versions)]) + b"".join(struct.pack(">H", v) for v in versions)
    return struct.pack(">HH", 0x002B, len(body)) + body


def client_hello(sni="example.com", legacy_version=0x0303, extra_extensions=b"",
                 extensions_override=None, include_extensions_block=True):
    """ClientHello body assembled field by field:

      legacy version (2) | random (32) | session id length (1) = 0 |
      cipher suites length (2) = 4, two suites | compression length (1) = 1,
      null | extensions length (2) | extensions
    """
    fields = [
        struct.pack(">H", legacy_version),
        bytes(range(32)),          # random, content irrelevant
        b"\x00",                   # empty session id
        struct.pack(">H", 4) + b"\x13\x01\x00\x2f",
        b"\x01\x00",
    ]
    if not include_extensions_block:
        return b"".join(fields)
    if extensions_override is not None:
        extensions = extensions_override
    else:
        extensions = (sni_extension(sni) if sni is not None else b"") + extra_extensions
    fields.append(struct.pack(">H", len(extensions)) + extensions)
    return b"".join(fields)


def client_hello_packet(sni="example.com", ts=(1700000000, 0), seq=1000, sport=49152,
                        extra_extensions=b""):
    record = tls_record(handshake(client_hello(sni, extra_extensions=extra_extensions)))
    return ts[0], ts[1], ethernet(ipv4(tcp(record, seq=seq, sport=sport)))
