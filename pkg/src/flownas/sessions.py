"""Session assembly, header rewriting strategies and fixed-length vectors."""

from __future__ import annotations

import hashlib
import hmac
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySession, InvalidStrategy
from .pcap import DecodedPacket, Protocol

DEFAULT_LENGTH = 784
DNS_PORT = 53
UDP_PAD_BYTES = 12  # 8-byte UDP header + 12 = 20, the minimal TCP header


@dataclass(frozen=True, order=True)
class SessionKey:
    endpoint_a: tuple[bytes, int]
    endpoint_b: tuple[bytes, int]
    protocol: Protocol

    @classmethod
    def of(cls, pkt: DecodedPacket) -> "SessionKey":
        a = (pkt.src_ip, pkt.src_port)
        b = (pkt.dst_ip, pkt.dst_port)
        if b < a:
            a, b = b, a
        return cls(a, b, pkt.protocol)


@dataclass(frozen=True)
class PreprocStrategy:
    eth_removal: bool = False
    mac_anon: bool = False
    mac_zero: bool = False
    ip_anon: bool = False
    ip_zero: bool = False
    port_zero: bool = False
    udp_pad: bool = False

    def validate(self) -> None:
        if self.eth_removal + self.mac_anon + self.mac_zero > 1:
            raise InvalidStrategy("choose at most one of eth_removal, mac_anon, mac_zero")
        if self.ip_anon + self.ip_zero != 1:
            raise InvalidStrategy("exactly one of ip_anon, ip_zero must be set")

    @classmethod
    def from_id(cls, number: int) -> "PreprocStrategy":
        if not 1 <= number <= len(STRATEGIES):
            raise InvalidStrategy(f"strategy must be in 1..{len(STRATEGIES)}, got {number}")
        return STRATEGIES[number - 1]


def _row(link: str, ip: str, port_zero: bool, udp_pad: bool) -> PreprocStrategy:
    return PreprocStrategy(
        eth_removal=link == "rem",
        mac_anon=link == "anon",
        mac_zero=link == "zero",
        ip_anon=ip == "anon",
        ip_zero=ip == "zero",
        port_zero=port_zero,
        udp_pad=udp_pad,
    )


# Row order of the reference strategy table: link-layer treatment, then IP
# treatment, then (port zero, UDP pad) as (-,+), (-,-), (+,+), (+,-).
STRATEGIES: tuple[PreprocStrategy, ...] = tuple(
    _row(link, ip, port_zero, udp_pad)
    for link in ("rem", "anon", "zero")
    for ip in ("anon", "zero")
    for port_zero, udp_pad in ((False, True), (False, False), (True, True), (True, False))
)


class AnonymizationMap:
    """Keyed, injective pseudonymisation of MAC and IPv4 values.

    Pseudonyms come from HMAC-SHA256 truncated to the field width; a draw that
    collides with an already issued pseudonym, or equals its input, is redrawn
    with an incremented counter. Safe to share between threads.
    """

    def __init__(self, key: bytes):
        self._key = bytes(key)
        self._lock = threading.Lock()
        self._forward: dict[tuple[str, bytes], bytes] = {}
        self._issued: dict[str, set[bytes]] = {}

    def __call__(self, kind: str, value: bytes) -> bytes:
        value = bytes(value)
        hit = self._forward.get((kind, value))
        if hit is not None:
            return hit
        with self._lock:
            hit = self._forward.get((kind, value))
            if hit is not None:
                return hit
            issued = self._issued.setdefault(kind, set())
            counter = 0
            while True:
                msg = kind.encode() + b"\x00" + value + counter.to_bytes(4, "big")
                cand = hmac.new(self._key, msg, hashlib.sha256).digest()[: len(value)]
                if cand != value and cand not in issued:
                    break
                counter += 1
            issued.add(cand)
            self._forward[(kind, value)] = cand
            return cand

    def __len__(self) -> int:
        return len(self._forward)


def assemble_sessions(packets: Iterable[DecodedPacket]) -> dict[SessionKey, list[DecodedPacket]]:
    """Group packets into bidirectional sessions, keeping capture order."""
    sessions: dict[SessionKey, list[DecodedPacket]] = {}
    for pkt in packets:
        sessions.setdefault(SessionKey.of(pkt), []).append(pkt)
    return sessions


def filter_packets(session: Sequence[DecodedPacket]) -> list[DecodedPacket]:
    """Drop payload-less packets and anything on the DNS port."""
    return [
        p
        for p in session
        if p.payload_len > 0 and p.src_port != DNS_PORT and p.dst_port != DNS_PORT
    ]


def rewrite_packet(pkt: DecodedPacket, strategy: PreprocStrategy, anon: AnonymizationMap) -> bytes:
    buf = bytearray(pkt.data)
    ip, tr = pkt.ip_offset, pkt.transport_offset

    if not strategy.eth_removal:
        if strategy.mac_zero:
            buf[0:12] = bytes(12)
        elif strategy.mac_anon:
            buf[0:6] = anon("mac", buf[0:6])
            buf[6:12] = anon("mac", buf[6:12])

    if strategy.ip_zero:
        buf[ip + 12 : ip + 20] = bytes(8)
    elif strategy.ip_anon:
        buf[ip + 12 : ip + 16] = anon("ip", buf[ip + 12 : ip + 16])
        buf[ip + 16 : ip + 20] = anon("ip", buf[ip + 16 : ip + 20])

    if strategy.port_zero:
        buf[tr : tr + 4] = bytes(4)

    if strategy.udp_pad and pkt.protocol == Protocol.UDP:
        buf[tr + 8 : tr + 8] = bytes(UDP_PAD_BYTES)

    if strategy.eth_removal:
        del buf[:ip]
    return bytes(buf)


def apply_strategy(
    session: Sequence[DecodedPacket], strategy: PreprocStrategy, anon: AnonymizationMap
) -> list[bytes]:
    strategy.validate()
    return [rewrite_packet(p, strategy, anon) for p in session]


@dataclass
class SessionVector:
    data: np.ndarray  # uint8, shape (L,)
    label: int = 0

    @property
    def length(self) -> int:
        return int(self.data.shape[0])


def normalize_session(packets: Sequence[bytes], length: int = DEFAULT_LENGTH,
                      label: int = 0) -> SessionVector:
    """Concatenate packet bytes, truncate to ``length``, zero-pad the rest."""
    if length <= 0:
        raise ValueError("length must be positive")
    if not packets:
        raise EmptySession("session has no packets")
    out = np.zeros(length, dtype=np.uint8)
    pos = 0
    for chunk in packets:
        take = min(len(chunk), length - pos)
        out[pos : pos + take] = np.frombuffer(chunk, dtype=np.uint8, count=take)
        pos += take
        if pos == length:
            break
    return SessionVector(out, label)


def scale(vec) -> np.ndarray:
    data = vec.data if isinstance(vec, SessionVector) else np.asarray(vec)
    return data.astype(np.float64) / 255.0


def session_vectors(
    packets: Iterable[DecodedPacket],
    strategy: PreprocStrategy,
    anon: AnonymizationMap,
    length: int = DEFAULT_LENGTH,
    label: int = 0,
) -> list[SessionVector]:
    """Full per-capture pipeline: assemble, filter, rewrite, normalise."""
    strategy.validate()
    vectors = []
    for session in assemble_sessions(packets).values():
        kept = filter_packets(session)
        if not kept:
            continue
        vectors.append(normalize_session(apply_strategy(kept, strategy, anon), length, label))
    return vectors
