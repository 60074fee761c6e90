"""Classic libpcap reader and Ethernet/IPv4/TCP/UDP header decoder."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Iterator, Optional

from .errors import BadMagic, MalformedHeader, TruncatedRecord

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

LINKTYPE_ETHERNET = 1

ETH_HEADER_LEN = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100


class Protocol(IntEnum):
    TCP = 6
    UDP = 17


@dataclass(frozen=True)
class CaptureFrame:
    ts_sec: int
    ts_usec: int
    captured_len: int
    original_len: int
    data: bytes
    linktype: int = LINKTYPE_ETHERNET

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_usec / 1e6


@dataclass(frozen=True)
class DecodedPacket:
    """Header offsets and addressing for one TCP or UDP frame.

    ``end_offset`` is where the IPv4 datagram ends inside ``frame.data``;
    anything after it is link-layer trailer padding and is not payload.
    """

    frame: CaptureFrame
    eth_offset: int
    ip_offset: int
    transport_offset: int
    payload_offset: int
    end_offset: int
    src_mac: bytes
    dst_mac: bytes
    src_ip: bytes
    dst_ip: bytes
    src_port: int
    dst_port: int
    protocol: Protocol
    tcp_flags: Optional[int]

    @property
    def payload_len(self) -> int:
        return self.end_offset - self.payload_offset

    @property
    def data(self) -> bytes:
        """Frame bytes up to the end of the IP datagram."""
        return self.frame.data[: self.end_offset]


def _byte_order(magic: bytes) -> tuple[str, bool]:
    """Return (struct prefix, nanosecond flag) for the 4 magic bytes."""
    for prefix in ("<", ">"):
        (value,) = struct.unpack(prefix + "I", magic)
        if value == MAGIC_USEC:
            return prefix, False
        if value == MAGIC_NSEC:
            return prefix, True
    raise BadMagic(f"not a classic pcap file (magic 0x{magic.hex()})")


def read_capture(stream: BinaryIO) -> Iterator[CaptureFrame]:
    """Yield frames from a classic pcap stream in file order."""
    header = stream.read(GLOBAL_HEADER_LEN)
    if len(header) < 4:
        raise BadMagic("file too short for a pcap global header")
    order, nanos = _byte_order(header[:4])
    if len(header) < GLOBAL_HEADER_LEN:
        raise TruncatedRecord("global header truncated")
    linktype = struct.unpack(order + "I", header[20:24])[0] & 0x0FFFFFFF

    index = 0
    while True:
        rec = stream.read(RECORD_HEADER_LEN)
        if not rec:
            return
        if len(rec) < RECORD_HEADER_LEN:
            raise TruncatedRecord(f"record {index}: header has {len(rec)} of 16 bytes")
        ts_sec, ts_frac, incl_len, orig_len = struct.unpack(order + "IIII", rec)
        data = stream.read(incl_len)
        if len(data) < incl_len:
            raise TruncatedRecord(
                f"record {index}: header promises {incl_len} bytes, {len(data)} remain"
            )
        if nanos:
            ts_frac //= 1000
        yield CaptureFrame(ts_sec, ts_frac, incl_len, max(orig_len, incl_len), data, linktype)
        index += 1


def write_capture(stream: BinaryIO, frames, byte_order: str = "<", snaplen: int = 65535) -> None:
    """Write frames as a microsecond-resolution classic pcap."""
    stream.write(struct.pack(byte_order + "IHHiIII", MAGIC_USEC, 2, 4, 0, 0, snaplen,
                             LINKTYPE_ETHERNET))
    for f in frames:
        stream.write(struct.pack(byte_order + "IIII", f.ts_sec, f.ts_usec,
                                 len(f.data), f.original_len))
        stream.write(f.data)


def decode_packet(frame: CaptureFrame) -> Optional[DecodedPacket]:
    """Decode one frame; ``None`` means "not Ethernet II / IPv4 / TCP / UDP".

    Raises MalformedHeader when a header the frame claims to carry does not
    fit inside the captured bytes. Never reads past ``captured_len``.
    """
    if frame.linktype != LINKTYPE_ETHERNET:
        return None
    data = frame.data
    n = len(data)
    if n < ETH_HEADER_LEN:
        raise MalformedHeader(f"frame of {n} bytes is shorter than an Ethernet header")
    ethertype = int.from_bytes(data[12:14], "big")
    ip_off = ETH_HEADER_LEN
    if ethertype == ETHERTYPE_VLAN:
        if n < ip_off + 4:
            raise MalformedHeader("truncated VLAN tag")
        ethertype = int.from_bytes(data[16:18], "big")
        ip_off += 4
    if ethertype != ETHERTYPE_IPV4:
        return None

    if n < ip_off + 20:
        raise MalformedHeader("frame shorter than minimal IPv4 header")
    version, ihl = data[ip_off] >> 4, data[ip_off] & 0x0F
    if version != 4:
        raise MalformedHeader(f"IPv4 EtherType with IP version {version}")
    if ihl < 5:
        raise MalformedHeader(f"IHL {ihl} < 5")
    tr_off = ip_off + 4 * ihl
    if n < tr_off:
        raise MalformedHeader("frame shorter than declared IPv4 header length")
    total_len = int.from_bytes(data[ip_off + 2 : ip_off + 4], "big")
    frag_offset = int.from_bytes(data[ip_off + 6 : ip_off + 8], "big") & 0x1FFF
    if frag_offset:
        return None
    proto = data[ip_off + 9]
    if proto not in (Protocol.TCP, Protocol.UDP):
        return None

    if proto == Protocol.TCP:
        if n < tr_off + 20:
            raise MalformedHeader("frame shorter than minimal TCP header")
        data_offset = data[tr_off + 12] >> 4
        if data_offset < 5:
            raise MalformedHeader(f"TCP data offset {data_offset} < 5")
        pay_off = tr_off + 4 * data_offset
        if n < pay_off:
            raise MalformedHeader("frame shorter than declared TCP header length")
        flags = data[tr_off + 13]
    else:
        if n < tr_off + 8:
            raise MalformedHeader("frame shorter than UDP header")
        pay_off = tr_off + 8
        flags = None

    # total_len == 0 shows up with segmentation offload; trust the capture then
    if total_len == 0:
        end = n
    elif ip_off + total_len < pay_off:
        raise MalformedHeader(f"IPv4 total length {total_len} smaller than its headers")
    else:
        end = min(n, ip_off + total_len)

    return DecodedPacket(
        frame=frame,
        eth_offset=0,
        ip_offset=ip_off,
        transport_offset=tr_off,
        payload_offset=pay_off,
        end_offset=end,
        src_mac=data[6:12],
        dst_mac=data[0:6],
        src_ip=data[ip_off + 12 : ip_off + 16],
        dst_ip=data[ip_off + 16 : ip_off + 20],
        src_port=int.from_bytes(data[tr_off : tr_off + 2], "big"),
        dst_port=int.from_bytes(data[tr_off + 2 : tr_off + 4], "big"),
        protocol=Protocol(proto),
        tcp_flags=flags,
    )


def iter_packets(stream: BinaryIO) -> Iterator[DecodedPacket]:
    """Decoded TCP/UDP packets of a capture; undecodable frames are dropped."""
    for frame in read_capture(stream):
        try:
            pkt = decode_packet(frame)
        except MalformedHeader:
            continue
        if pkt is not None:
            yield pkt
