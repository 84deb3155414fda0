#!/usr/bin/env python3
"""Writes the golden capture and the dataset expected from preprocessing it.

The expected dataset is computed here with a separate parser so that the C++
pipeline is checked against an independent implementation.

usage: make_golden.py <out-dir>
"""

import base64
import json
import struct
import sys
from pathlib import Path

M, L = 5, 128


def checksum(data):
    if len(data) % 2:
        data += b"\0"
    s = sum(struct.unpack("!%dH" % (len(data) // 2), data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def eth(dst, src, ethertype, vlan=None):
    hdr = bytes(dst) + bytes(src)
    if vlan is not None:
        hdr += struct.pack("!HH", 0x8100, vlan)
    return hdr + struct.pack("!H", ethertype)


def ipv4(src, dst, proto, body, ttl=64, ident=0, options=b""):
    ihl = 5 + len(options) // 4
    hdr = struct.pack("!BBHHHBBH4s4s", 0x40 | ihl, 0, 4 * ihl + len(body), ident, 0x4000, ttl, proto, 0,
                      bytes(src), bytes(dst)) + options
    hdr = hdr[:10] + struct.pack("!H", checksum(hdr)) + hdr[12:]
    return hdr + body


def ipv6(src, dst, next_header, body, hop_limit=64):
    return struct.pack("!IHBB16s16s", 0x60000000, len(body), next_header, hop_limit, bytes(src), bytes(dst)) + body


def tcp(sport, dport, seq, ack, payload, flags=0x18):
    return struct.pack("!HHIIBBHHH", sport, dport, seq, ack, 0x50, flags, 65535, 0x1234, 0) + payload


def udp(sport, dport, payload):
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0xBEEF) + payload


def icmp_echo(ident, seq):
    body = struct.pack("!BBHHH", 8, 0, 0, ident, seq) + b"ping" * 8
    return body[:2] + struct.pack("!H", checksum(body)) + body[4:]


def mac(last):
    return [0x02, 0, 0, 0, 0, last]


def v4(*parts):
    return list(parts)


def v6(last):
    return [0x20, 0x01, 0x0D, 0xB8] + [0] * 11 + [last]


def build_packets():
    a, b = v4(10, 0, 0, 1), v4(10, 0, 0, 2)
    p = []

    def a_to_b(i, payload):
        return eth(mac(2), mac(1), 0x0800) + ipv4(a, b, 6, tcp(40000, 443, 1000 + i, 5000 + i, payload), ident=i)

    def b_to_a(i, payload):
        return eth(mac(1), mac(2), 0x0800) + ipv4(b, a, 6, tcp(443, 40000, 5000 + i, 1000 + i, payload), ttl=57,
                                                  ident=100 + i)

    p.append(a_to_b(0, b"\x16\x03\x01" + bytes(range(40))))
    p.append(b_to_a(1, b"\x16\x03\x03" + bytes(range(200))))  # longer than L
    mdns = v4(224, 0, 0, 251)
    p.append(eth([0x01, 0, 0x5E, 0, 0, 0xFB], mac(3), 0x0800)
             + ipv4(v4(10, 0, 0, 3), mdns, 17, udp(5353, 5353, b"\x00\x00\x84\x00" + b"\x01" * 12), ttl=255))
    p.append(a_to_b(2, b"\x17\x03\x03" + b"A" * 30))
    p.append(eth(mac(9), mac(8), 0x0800) + ipv4(v4(10, 0, 0, 8), v4(10, 0, 0, 9), 1, icmp_echo(7, 1)))
    p.append(b_to_a(3, b"\x17\x03\x03" + b"B" * 64))
    c1, c2 = v4(10, 1, 1, 1), v4(10, 1, 1, 2)
    p.append(eth(mac(0x22), mac(0x21), 0x0800, vlan=0x0064) + ipv4(c1, c2, 6, tcp(1234, 80, 1, 0, b"GET / HTTP/1.1\r\n\r\n")))
    p.append(a_to_b(4, b""))
    p.append(eth([0x01, 0, 0x5E, 0, 0, 0xFB], mac(3), 0x0800)
             + ipv4(v4(10, 0, 0, 3), mdns, 17, udp(5353, 5353, b"\x00\x00\x00\x00" + b"\x02" * 20), ttl=255))
    p.append(eth(mac(0x21), mac(0x22), 0x0800, vlan=0x0064)
             + ipv4(c2, c1, 6, tcp(80, 1234, 1, 19, b"HTTP/1.1 204 No Content\r\n\r\n"), ttl=61))
    p.append(eth(mac(0x31), mac(0x30), 0x0800)
             + ipv4(v4(192, 168, 1, 10), v4(192, 168, 1, 20), 6, tcp(5555, 22, 77, 0, b"SSH-2.0-x\r\n", flags=0x02),
                    options=b"\x01\x01\x01\x00"))
    p.append(b_to_a(5, b"\x17\x03\x03" + b"C" * 10))
    p.append(eth(mac(0x41), mac(0x40), 0x86DD) + ipv6(v6(1), v6(2), 17, udp(546, 547, b"\x01" + b"\x00" * 11)))
    p.append(a_to_b(6, b"\x15\x03\x03\x00\x02\x01\x00"))  # sixth and seventh packets of the flow are cut
    p.append(eth(mac(0x40), mac(0x41), 0x86DD) + ipv6(v6(2), v6(1), 17, udp(547, 546, b"\x02" + b"\x00" * 15), hop_limit=63))
    f1, f2 = v4(172, 16, 0, 5), v4(172, 16, 0, 6)
    for i in range(4):
        p.append(eth(mac(0x51), mac(0x50), 0x0800) + ipv4(f1, f2, 6, tcp(2000, 3000, 10 * i, 0, bytes([i]) * (5 + i)),
                                                         ttl=128, ident=i))
    p.append(eth([0x01, 0, 0x5E, 0, 0, 0xFB], mac(3), 0x0800)
             + ipv4(v4(10, 0, 0, 3), mdns, 17, udp(5353, 5353, b"\x00" * 4), ttl=255))
    assert len(p) == 20
    return p


def write_pcap(path, packets):
    out = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    t = 1_600_000_000_000_000
    for i, frame in enumerate(packets):
        ts = t + 1500 * i
        out += struct.pack("<IIII", ts // 1_000_000, ts % 1_000_000, len(frame), len(frame)) + frame
    path.write_bytes(out)


# Independent reference pipeline.

def dissect(frame):
    """Returns (l3 offset, ethertype) after at most one VLAN tag."""
    off, ethertype = 12, struct.unpack_from("!H", frame, 12)[0]
    if ethertype == 0x8100:
        off += 4
        ethertype = struct.unpack_from("!H", frame, off)[0]
    return off + 2, ethertype


def flow_key(frame):
    l3, ethertype = dissect(frame)
    if ethertype == 0x0800:
        ihl = (frame[l3] & 0x0F) * 4
        proto = frame[l3 + 9]
        src, dst = frame[l3 + 12:l3 + 16], frame[l3 + 16:l3 + 20]
        l4 = l3 + ihl
    elif ethertype == 0x86DD:
        proto = frame[l3 + 6]
        src, dst = frame[l3 + 8:l3 + 24], frame[l3 + 24:l3 + 40]
        l4 = l3 + 40
    else:
        return None
    if proto not in (6, 17):
        return None
    sport, dport = struct.unpack_from("!HH", frame, l4)
    return proto, frozenset([(bytes(src), sport), (bytes(dst), dport)])


def anonymize(frame):
    f = bytearray(frame)
    f[0:12] = bytes(12)
    l3, ethertype = dissect(frame)
    if ethertype == 0x0800:
        f[l3 + 12:l3 + 20] = bytes(8)
        proto, l4 = f[l3 + 9], l3 + (f[l3] & 0x0F) * 4
    else:
        f[l3 + 8:l3 + 40] = bytes(32)
        proto, l4 = f[l3 + 6], l3 + 40
    if proto in (6, 17):
        f[l4:l4 + 4] = bytes(4)
    return bytes(f)


def expected_dataset(packets):
    flows = {}
    for frame in packets:
        key = flow_key(frame)
        if key is not None:
            flows.setdefault(key, []).append(frame)
    lines = []
    for frames in flows.values():
        body = [(anonymize(fr)[:L]).ljust(L, b"\0") for fr in frames[:M]]
        body += [bytes(L)] * (M - len(body))
        record = {"label": None, "real_packet_count": min(len(frames), M),
                  "packets": [base64.b64encode(b).decode() for b in body]}
        lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)


def main():
    out = Path(sys.argv[1])
    (out / "golden").mkdir(parents=True, exist_ok=True)
    packets = build_packets()
    write_pcap(out / "golden" / "golden.pcap", packets)
    (out / "golden.jsonl").write_text(expected_dataset(packets))


if __name__ == "__main__":
    main()
