import io
import struct

import numpy as np
import pytest

# Independent frame builder (RFC 791 / 793 / 768 layouts); used as the
# reference the decoder must agree with. Checksums are left zero.


def mac(i):
    return bytes([0x02, 0, 0, 0, (i >> 8) & 0xFF, i & 0xFF])


def ipv4(a, b, c, d):
    return bytes([a, b, c, d])


def tcp_header(sport, dport, flags=0x18, options=b""):
    assert len(options) % 4 == 0
    offset = (20 + len(options)) // 4
    return struct.pack("!HHIIBBHHH", sport, dport, 1, 0, offset << 4, flags, 65535, 0, 0) + options


def udp_header(sport, dport, payload_len):
    return struct.pack("!HHHH", sport, dport, 8 + payload_len, 0)


def ip_header(src, dst, proto, body_len, options=b"", frag=0):
    assert len(options) % 4 == 0
    ihl = 5 + len(options) // 4
    total = 4 * ihl + body_len
    return struct.pack("!BBHHHBBH4s4s", 0x40 | ihl, 0, total, 0, frag, 64, proto, 0,
                       src, dst) + options


def frame(src_mac=None, dst_mac=None, src_ip=ipv4(10, 0, 0, 1), dst_ip=ipv4(10, 0, 0, 2),
          sport=40000, dport=443, proto="tcp", payload=b"", flags=0x18, ip_options=b"",
          tcp_options=b"", vlan=None, trailer=b""):
    src_mac = src_mac or mac(1)
    dst_mac = dst_mac or mac(2)
    if proto == "tcp":
        l4 = tcp_header(sport, dport, flags, tcp_options)
        pnum = 6
    else:
        l4 = udp_header(sport, dport, len(payload))
        pnum = 17
    ip = ip_header(src_ip, dst_ip, pnum, len(l4) + len(payload), ip_options)
    eth = dst_mac + src_mac
    if vlan is not None:
        eth += struct.pack("!HH", 0x8100, vlan)
    eth += struct.pack("!H", 0x0800)
    return eth + ip + l4 + payload + trailer


def pcap_bytes(frames, endian="<", magic=0xA1B2C3D4, start=1_600_000_000):
    out = io.BytesIO()
    out.write(struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, 65535, 1))
    for i, f in enumerate(frames):
        out.write(struct.pack(endian + "IIII", start + i, 1000 * i, len(f), len(f)))
        out.write(f)
    return out.getvalue()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance verdict lines, repeated in the terminal summary so they survive
# pytest's output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
