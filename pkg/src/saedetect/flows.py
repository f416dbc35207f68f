"""Bidirectional TCP flow assembly from packet streams."""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

Endpoint = tuple[str, int]

PACKET_CSV_HEADER = ["timestamp", "src_ip", "src_port", "dst_ip", "dst_port", "payload_size"]
FLOW_CSV_HEADER = ["flow_id", "key_a", "key_b", "initiator", "start_time", "end_time", "packet_count"]
FLOW_PACKET_CSV_HEADER = ["flow_id", "offset_seconds", "direction", "payload_size"]

DEFAULT_TIMEOUT = 60.0
DEFAULT_REORDER_BUFFER = 10_000


class DataFormatError(Exception):
    """The input file cannot be interpreted at all (bad header, bad magic, ...)."""


@dataclass
class IngestTally:
    """Counts of records dropped or skipped while ingesting a stream."""

    malformed: int = 0
    non_tcp: int = 0
    fragments: int = 0
    late: int = 0
    truncated: int = 0

    @property
    def rejected(self) -> int:
        return self.malformed + self.non_tcp + self.fragments + self.late + self.truncated

    def summary(self) -> str:
        return (
            f"malformed={self.malformed} non_tcp={self.non_tcp} "
            f"fragments={self.fragments} late={self.late} truncated={self.truncated}"
        )


@dataclass(frozen=True)
class PacketRecord:
    """One observed TCP segment. payload_size is TCP payload bytes, headers excluded."""

    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    payload_size: int


def packet_problem(pkt: PacketRecord) -> str | None:
    """Return a rejection reason for a malformed record, or None if it is valid."""
    if not isinstance(pkt.timestamp, (int, float)) or not math.isfinite(pkt.timestamp):
        return "non-finite timestamp"
    if pkt.timestamp < 0:
        return "negative timestamp"
    if not pkt.src_ip or not pkt.dst_ip:
        return "empty address"
    for port in (pkt.src_port, pkt.dst_port):
        if not isinstance(port, int) or not 0 <= port <= 65535:
            return "port out of range"
    if not isinstance(pkt.payload_size, int) or pkt.payload_size < 0:
        return "negative payload size"
    return None


@dataclass(frozen=True, order=True)
class FlowKey:
    """Canonical connection key: the lexicographically smaller endpoint first."""

    endpoint_a: Endpoint
    endpoint_b: Endpoint

    @classmethod
    def from_endpoints(cls, a: Endpoint, b: Endpoint) -> "FlowKey":
        return cls(min(a, b), max(a, b))

    @classmethod
    def from_packet(cls, pkt: PacketRecord) -> "FlowKey":
        return cls.from_endpoints((pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port))


@dataclass
class BidirectionalFlow:
    """A timeout-bounded segment of one TCP connection, both directions included.

    The initiator is the endpoint that sent the segment's first packet; it
    defines the "sent" direction for feature extraction.
    """

    flow_id: str
    key: FlowKey
    initiator: Endpoint
    packets: list[PacketRecord]
    start_time: float
    end_time: float

    def direction_of(self, pkt: PacketRecord) -> str:
        return "S" if (pkt.src_ip, pkt.src_port) == self.initiator else "R"

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


@dataclass
class _Segment:
    key: FlowKey
    initiator: Endpoint
    start: float
    last: float
    packets: list[PacketRecord] = field(default_factory=list)


class FlowAssembler:
    """Streaming packet-to-flow transform.

    Packets are buffered in a bounded reorder window and handed to per-key
    segment tracking in timestamp order. A packet whose timestamp exceeds its
    segment's start by more than the timeout opens a new segment. Single
    writer: one instance must not be fed from multiple threads.
    """

    def __init__(
        self,
        timeout: float = DEFAULT_TIMEOUT,
        reorder_buffer: int = DEFAULT_REORDER_BUFFER,
        id_prefix: str = "flow",
    ) -> None:
        if timeout <= 0:
            raise ValueError(f"timeout must be positive, got {timeout}")
        if reorder_buffer < 1:
            raise ValueError("reorder_buffer must be at least 1")
        self.timeout = float(timeout)
        self.reorder_buffer = int(reorder_buffer)
        self.id_prefix = id_prefix
        self.tally = IngestTally()
        self._heap: list[tuple] = []
        self._seq = 0
        self._watermark = -math.inf
        self._segments: dict[FlowKey, _Segment] = {}
        self._completed: list[BidirectionalFlow] = []
        self._emitted = 0

    def assemble(self, packets: Iterable[PacketRecord]) -> list[BidirectionalFlow]:
        """Consume a whole stream and return its flows in completion order."""
        for pkt in packets:
            self.feed(pkt)
        return self.finish()

    def feed(self, pkt: PacketRecord) -> None:
        problem = packet_problem(pkt)
        if problem is not None:
            self.tally.malformed += 1
            return
        if pkt.timestamp < self._watermark:
            # arrived after the reorder window already moved past it
            self.tally.late += 1
            return
        # content fields ahead of the sequence number make equal-timestamp
        # ordering independent of arrival order
        entry = (
            pkt.timestamp,
            pkt.payload_size,
            pkt.src_ip,
            pkt.src_port,
            pkt.dst_ip,
            pkt.dst_port,
            self._seq,
            pkt,
        )
        self._seq += 1
        heapq.heappush(self._heap, entry)
        if len(self._heap) > self.reorder_buffer:
            self._pop_one()

    def finish(self) -> list[BidirectionalFlow]:
        """Drain the reorder buffer and close every open segment."""
        while self._heap:
            self._pop_one()
        for seg in sorted(self._segments.values(), key=lambda s: (s.start, s.key)):
            self._emit(seg)
        self._segments.clear()
        done, self._completed = self._completed, []
        return done

    def _pop_one(self) -> None:
        entry = heapq.heappop(self._heap)
        pkt: PacketRecord = entry[-1]
        if pkt.timestamp > self._watermark:
            self._watermark = pkt.timestamp
        self._track(pkt)

    def _track(self, pkt: PacketRecord) -> None:
        key = FlowKey.from_packet(pkt)
        seg = self._segments.get(key)
        if seg is not None and pkt.timestamp - seg.start > self.timeout:
            self._emit(seg)
            seg = None
        if seg is None:
            seg = _Segment(
                key=key,
                initiator=(pkt.src_ip, pkt.src_port),
                start=pkt.timestamp,
                last=pkt.timestamp,
            )
            self._segments[key] = seg
        seg.packets.append(pkt)
        seg.last = pkt.timestamp

    def _emit(self, seg: _Segment) -> None:
        flow = BidirectionalFlow(
            flow_id=f"{self.id_prefix}-{self._emitted:06d}",
            key=seg.key,
            initiator=seg.initiator,
            packets=seg.packets,
            start_time=seg.start,
            end_time=seg.last,
        )
        self._emitted += 1
        self._completed.append(flow)


def assemble(packets: Iterable[PacketRecord], timeout: float = DEFAULT_TIMEOUT) -> list[BidirectionalFlow]:
    """One-shot assembly. Use FlowAssembler directly to inspect the ingest tally."""
    return FlowAssembler(timeout=timeout).assemble(packets)


# ---------------------------------------------------------------------------
# CSV interchange

def read_packet_csv(path, tally: IngestTally | None = None) -> Iterator[PacketRecord]:
    """Yield packet records from a CSV with the standard packet header.

    Unparseable rows are rejected and tallied; a wrong header is fatal.
    """
    tally = tally if tally is not None else IngestTally()
    with open(path, newline="", encoding="utf-8-sig") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PACKET_CSV_HEADER:
            raise DataFormatError(f"{path}: expected packet CSV header {','.join(PACKET_CSV_HEADER)}")
        for row in reader:
            if not row:
                continue
            try:
                pkt = PacketRecord(
                    timestamp=float(row[0]),
                    src_ip=row[1].strip(),
                    src_port=int(row[2]),
                    dst_ip=row[3].strip(),
                    dst_port=int(row[4]),
                    payload_size=int(row[5]),
                )
            except (ValueError, IndexError):
                tally.malformed += 1
                continue
            if packet_problem(pkt) is not None:
                tally.malformed += 1
                continue
            yield pkt


def write_packet_csv(path, packets: Iterable[PacketRecord]) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(PACKET_CSV_HEADER)
        for pkt in packets:
            writer.writerow(
                [repr(pkt.timestamp), pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port, pkt.payload_size]
            )
            n += 1
    return n


def format_endpoint(ep: Endpoint) -> str:
    ip, port = ep
    return f"[{ip}]:{port}" if ":" in ip else f"{ip}:{port}"


def parse_endpoint(text: str) -> Endpoint:
    text = text.strip()
    if text.startswith("["):
        ip, _, port = text[1:].partition("]:")
    else:
        ip, _, port = text.rpartition(":")
    if not ip or not port:
        raise DataFormatError(f"bad endpoint: {text!r}")
    return ip, int(port)


def write_flow_csv(flows: Iterable[BidirectionalFlow], flow_path, packets_path) -> int:
    """Write the flow table and its per-packet sidecar."""
    n = 0
    with open(flow_path, "w", newline="", encoding="utf-8") as ffp, open(
        packets_path, "w", newline="", encoding="utf-8"
    ) as pfp:
        fw = csv.writer(ffp)
        pw = csv.writer(pfp)
        fw.writerow(FLOW_CSV_HEADER)
        pw.writerow(FLOW_PACKET_CSV_HEADER)
        for flow in flows:
            fw.writerow(
                [
                    flow.flow_id,
                    format_endpoint(flow.key.endpoint_a),
                    format_endpoint(flow.key.endpoint_b),
                    format_endpoint(flow.initiator),
                    repr(flow.start_time),
                    repr(flow.end_time),
                    len(flow.packets),
                ]
            )
            for pkt in flow.packets:
                pw.writerow(
                    [flow.flow_id, repr(pkt.timestamp - flow.start_time), flow.direction_of(pkt), pkt.payload_size]
                )
            n += 1
    return n


def read_flow_csv(flow_path, packets_path) -> list[BidirectionalFlow]:
    """Reconstruct flows from the flow table plus its per-packet sidecar."""
    per_flow: dict[str, list[tuple[float, str, int]]] = {}
    with open(packets_path, newline="", encoding="utf-8-sig") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FLOW_PACKET_CSV_HEADER:
            raise DataFormatError(f"{packets_path}: expected header {','.join(FLOW_PACKET_CSV_HEADER)}")
        for row in reader:
            if not row:
                continue
            try:
                per_flow.setdefault(row[0], []).append((float(row[1]), row[2], int(row[3])))
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{packets_path}: bad row {row!r}") from exc

    flows: list[BidirectionalFlow] = []
    with open(flow_path, newline="", encoding="utf-8-sig") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FLOW_CSV_HEADER:
            raise DataFormatError(f"{flow_path}: expected header {','.join(FLOW_CSV_HEADER)}")
        for row in reader:
            if not row:
                continue
            try:
                flow_id = row[0]
                key = FlowKey.from_endpoints(parse_endpoint(row[1]), parse_endpoint(row[2]))
                initiator = parse_endpoint(row[3])
                start = float(row[4])
                end = float(row[5])
                count = int(row[6])
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{flow_path}: bad row {row!r}") from exc
            entries = per_flow.get(flow_id, [])
            if len(entries) != count:
                raise DataFormatError(
                    f"{flow_path}: flow {flow_id} lists {count} packets, sidecar has {len(entries)}"
                )
            responder = key.endpoint_b if initiator == key.endpoint_a else key.endpoint_a
            packets = []
            for offset, direction, size in entries:
                src, dst = (initiator, responder) if direction == "S" else (responder, initiator)
                packets.append(
                    PacketRecord(
                        timestamp=start + offset,
                        src_ip=src[0],
                        src_port=src[1],
                        dst_ip=dst[0],
                        dst_port=dst[1],
                        payload_size=size,
                    )
                )
            packets.sort(key=lambda p: p.timestamp)
            flows.append(
                BidirectionalFlow(
                    flow_id=flow_id,
                    key=key,
                    initiator=initiator,
                    packets=packets,
                    start_time=start,
                    end_time=end,
                )
            )
    return flows
