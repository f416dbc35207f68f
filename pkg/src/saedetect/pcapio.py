"""Reader for classic libpcap capture files (not pcapng).

Only TCP segments become packet records; everything else is skipped and
tallied. Payload size is taken from the IP headers, so snaplen-truncated
captures still yield correct sizes as long as the headers were captured.
"""

from __future__ import annotations

import ipaddress
import logging
import struct
from typing import Iterator

from .flows import DataFormatError, IngestTally, PacketRecord

logger = logging.getLogger(__name__)

_MAGIC_USEC = 0xA1B2C3D4
_MAGIC_NSEC = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101

_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_IPV6 = 0x86DD
_ETHERTYPE_VLAN = (0x8100, 0x88A8)

_IPPROTO_TCP = 6
# IPv6 extension headers that can precede the transport header
_IPV6_EXT = (0, 43, 60)
_IPV6_FRAGMENT = 44


def read_pcap(path, tally: IngestTally | None = None) -> Iterator[PacketRecord]:
    """Yield one PacketRecord per TCP segment found in a pcap file."""
    tally = tally if tally is not None else IngestTally()
    with open(path, "rb") as fp:
        header = fp.read(24)
        if len(header) < 24:
            raise DataFormatError(f"{path}: too short to be a pcap file")
        endian, ts_scale = _resolve_magic(header[:4])
        if endian is None:
            raise DataFormatError(f"{path}: unrecognized pcap magic {header[:4].hex()}")
        linktype = struct.unpack(endian + "I", header[20:24])[0] & 0x0FFFFFFF
        if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW):
            raise DataFormatError(f"{path}: unsupported link type {linktype}")

        rec_hdr = struct.Struct(endian + "IIII")
        while True:
            raw = fp.read(16)
            if not raw:
                break
            if len(raw) < 16:
                logger.warning("%s: truncated record header at end of file", path)
                tally.truncated += 1
                break
            ts_sec, ts_frac, incl_len, _orig_len = rec_hdr.unpack(raw)
            data = fp.read(incl_len)
            if len(data) < incl_len:
                logger.warning("%s: truncated final record body", path)
                tally.truncated += 1
                break
            pkt = _parse_frame(data, linktype, ts_sec + ts_frac * ts_scale, tally)
            if pkt is not None:
                yield pkt


def _resolve_magic(raw: bytes) -> tuple[str | None, float]:
    for endian in ("<", ">"):
        magic = struct.unpack(endian + "I", raw)[0]
        if magic == _MAGIC_USEC:
            return endian, 1e-6
        if magic == _MAGIC_NSEC:
            return endian, 1e-9
    return None, 0.0


def _parse_frame(data: bytes, linktype: int, ts: float, tally: IngestTally) -> PacketRecord | None:
    if linktype == LINKTYPE_ETHERNET:
        if len(data) < 14:
            tally.malformed += 1
            return None
        ethertype = struct.unpack(">H", data[12:14])[0]
        offset = 14
        while ethertype in _ETHERTYPE_VLAN:
            if len(data) < offset + 4:
                tally.malformed += 1
                return None
            ethertype = struct.unpack(">H", data[offset + 2 : offset + 4])[0]
            offset += 4
        if ethertype == _ETHERTYPE_IPV4:
            return _parse_ipv4(data, offset, ts, tally)
        if ethertype == _ETHERTYPE_IPV6:
            return _parse_ipv6(data, offset, ts, tally)
        tally.non_tcp += 1
        return None

    # raw IP: version nibble picks the parser
    if not data:
        tally.malformed += 1
        return None
    version = data[0] >> 4
    if version == 4:
        return _parse_ipv4(data, 0, ts, tally)
    if version == 6:
        return _parse_ipv6(data, 0, ts, tally)
    tally.malformed += 1
    return None


def _parse_ipv4(data: bytes, off: int, ts: float, tally: IngestTally) -> PacketRecord | None:
    if len(data) < off + 20:
        tally.malformed += 1
        return None
    ihl = (data[off] & 0x0F) * 4
    if data[off] >> 4 != 4 or ihl < 20:
        tally.malformed += 1
        return None
    total_len = struct.unpack(">H", data[off + 2 : off + 4])[0]
    frag = struct.unpack(">H", data[off + 6 : off + 8])[0]
    if frag & 0x1FFF:
        # non-first fragment carries no TCP header
        tally.fragments += 1
        return None
    if data[off + 9] != _IPPROTO_TCP:
        tally.non_tcp += 1
        return None
    src = str(ipaddress.ip_address(data[off + 12 : off + 16]))
    dst = str(ipaddress.ip_address(data[off + 16 : off + 20]))
    return _parse_tcp(data, off + ihl, ts, src, dst, total_len - ihl, tally)


def _parse_ipv6(data: bytes, off: int, ts: float, tally: IngestTally) -> PacketRecord | None:
    if len(data) < off + 40:
        tally.malformed += 1
        return None
    payload_len = struct.unpack(">H", data[off + 4 : off + 6])[0]
    next_header = data[off + 6]
    src = str(ipaddress.ip_address(data[off + 8 : off + 24]))
    dst = str(ipaddress.ip_address(data[off + 24 : off + 40]))
    pos = off + 40
    consumed = 0
    for _ in range(8):
        if next_header == _IPPROTO_TCP:
            return _parse_tcp(data, pos, ts, src, dst, payload_len - consumed, tally)
        if next_header == _IPV6_FRAGMENT:
            if len(data) < pos + 8:
                tally.malformed += 1
                return None
            frag_off = struct.unpack(">H", data[pos + 2 : pos + 4])[0] >> 3
            if frag_off:
                tally.fragments += 1
                return None
            next_header = data[pos]
            pos += 8
            consumed += 8
            continue
        if next_header in _IPV6_EXT:
            if len(data) < pos + 2:
                tally.malformed += 1
                return None
            ext_len = (data[pos + 1] + 1) * 8
            next_header = data[pos]
            pos += ext_len
            consumed += ext_len
            continue
        tally.non_tcp += 1
        return None
    tally.malformed += 1
    return None


def _parse_tcp(
    data: bytes, off: int, ts: float, src: str, dst: str, ip_payload_len: int, tally: IngestTally
) -> PacketRecord | None:
    if len(data) < off + 20:
        tally.malformed += 1
        return None
    src_port, dst_port = struct.unpack(">HH", data[off : off + 4])
    tcp_hl = (data[off + 12] >> 4) * 4
    if tcp_hl < 20:
        tally.malformed += 1
        return None
    payload = ip_payload_len - tcp_hl
    if payload < 0:
        tally.malformed += 1
        return None
    return PacketRecord(
        timestamp=ts,
        src_ip=src,
        dst_ip=dst,
        src_port=src_port,
        dst_port=dst_port,
        payload_size=payload,
    )
