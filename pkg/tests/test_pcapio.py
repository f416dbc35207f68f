import struct

import pytest

import pcapgen
from saedetect.flows import DataFormatError, IngestTally
from saedetect.pcapio import read_pcap


def write(tmp_path, data, name="test.pcap"):
    path = tmp_path / name
    path.write_bytes(data)
    return path


def test_tcp_and_udp_mix(tmp_path):
    records = []
    for i in range(10):
        records.append(pcapgen.tcp_packet(1.0 + i, "10.0.0.1", "10.0.0.2", 1234, 80, b"x" * 10))
    for i in range(5):
        records.append(
            pcapgen.record(20.0 + i, pcapgen.ethernet(pcapgen.ipv4("10.0.0.1", "10.0.0.2", pcapgen.udp(53, 53, b"q"), proto=17)))
        )
    path = write(tmp_path, pcapgen.capture(records))
    tally = IngestTally()
    packets = list(read_pcap(path, tally))
    assert len(packets) == 10
    assert tally.non_tcp == 5


def test_pure_ack_has_zero_payload(tmp_path):
    path = write(tmp_path, pcapgen.capture([pcapgen.tcp_packet(1.0, "10.0.0.1", "10.0.0.2", 5000, 443)]))
    (pkt,) = read_pcap(path)
    assert pkt.payload_size == 0


def test_http_exchange_payload_sums(tmp_path):
    # ground truth by construction: we know every payload byte we wrote
    request = b"GET /index.html HTTP/1.1\r\nHost: example.test\r\n\r\n"
    response = b"HTTP/1.1 200 OK\r\nContent-Length: 13\r\n\r\nHello, world!"
    records = [
        pcapgen.tcp_packet(1.000000, "192.168.1.10", "93.184.216.34", 49152, 80),  # SYN-ish, no payload
        pcapgen.tcp_packet(1.000150, "93.184.216.34", "192.168.1.10", 80, 49152),
        pcapgen.tcp_packet(1.000300, "192.168.1.10", "93.184.216.34", 49152, 80, request),
        pcapgen.tcp_packet(1.020000, "93.184.216.34", "192.168.1.10", 80, 49152, response),
    ]
    path = write(tmp_path, pcapgen.capture(records))
    packets = list(read_pcap(path))
    assert sum(p.payload_size for p in packets) == len(request) + len(response)
    sent = sum(p.payload_size for p in packets if p.src_ip == "192.168.1.10")
    assert sent == len(request)


def test_fields_extracted(tmp_path):
    path = write(
        tmp_path,
        pcapgen.capture([pcapgen.tcp_packet(1234.000567, "10.1.2.3", "10.4.5.6", 40000, 8883, b"abc")]),
    )
    (pkt,) = read_pcap(path)
    assert pkt.src_ip == "10.1.2.3"
    assert pkt.dst_ip == "10.4.5.6"
    assert pkt.src_port == 40000
    assert pkt.dst_port == 8883
    assert pkt.payload_size == 3
    assert pkt.timestamp == pytest.approx(1234.000567, abs=1e-9)


def test_big_endian_capture(tmp_path):
    frame = pcapgen.ethernet(pcapgen.ipv4("10.0.0.1", "10.0.0.2", pcapgen.tcp(1, 2, b"zz")))
    data = pcapgen.capture([pcapgen.record(7.5, frame, endian=">")], endian=">")
    path = write(tmp_path, data)
    (pkt,) = read_pcap(path)
    assert pkt.payload_size == 2
    assert pkt.timestamp == 7.5


def test_nanosecond_magic(tmp_path):
    frame = pcapgen.ethernet(pcapgen.ipv4("10.0.0.1", "10.0.0.2", pcapgen.tcp(1, 2, b"q")))
    data = pcapgen.capture([pcapgen.record(3.000000123, frame, nsec=True)], magic=pcapgen.MAGIC_NSEC)
    path = write(tmp_path, data)
    (pkt,) = read_pcap(path)
    assert pkt.timestamp == pytest.approx(3.000000123, abs=1e-12)


def test_ipv6_tcp(tmp_path):
    frame = pcapgen.ethernet(pcapgen.ipv6("2001:db8::1", "2001:db8::2", pcapgen.tcp(1000, 443, b"hello")), ethertype=0x86DD)
    path = write(tmp_path, pcapgen.capture([pcapgen.record(1.0, frame)]))
    (pkt,) = read_pcap(path)
    assert pkt.src_ip == "2001:db8::1"
    assert pkt.payload_size == 5


def test_vlan_tag_skipped(tmp_path):
    inner = pcapgen.ipv4("10.0.0.1", "10.0.0.2", pcapgen.tcp(1, 2, b"pq"))
    frame = (
        b"\x02\x00\x00\x00\x00\x01" + b"\x02\x00\x00\x00\x00\x02"
        + struct.pack(">H", 0x8100) + struct.pack(">HH", 100, 0x0800) + inner
    )
    path = write(tmp_path, pcapgen.capture([pcapgen.record(1.0, frame)]))
    (pkt,) = read_pcap(path)
    assert pkt.payload_size == 2


def test_raw_ip_linktype(tmp_path):
    frame = pcapgen.ipv4("10.0.0.1", "10.0.0.2", pcapgen.tcp(1, 2, b"raw"))
    path = write(tmp_path, pcapgen.capture([pcapgen.record(1.0, frame)], linktype=101))
    (pkt,) = read_pcap(path)
    assert pkt.payload_size == 3


def test_fragment_skipped(tmp_path):
    frame = pcapgen.ethernet(pcapgen.ipv4("10.0.0.1", "10.0.0.2", b"\x00" * 24, frag_offset=100))
    path = write(tmp_path, pcapgen.capture([pcapgen.record(1.0, frame)]))
    tally = IngestTally()
    assert list(read_pcap(path, tally)) == []
    assert tally.fragments == 1


def test_truncated_final_record(tmp_path):
    good = pcapgen.tcp_packet(1.0, "10.0.0.1", "10.0.0.2", 1, 2, b"ok")
    frame = pcapgen.ethernet(pcapgen.ipv4("10.0.0.1", "10.0.0.2", pcapgen.tcp(1, 2, b"lost")))
    truncated = pcapgen.record(2.0, frame)[: 16 + len(frame) - 7]
    path = write(tmp_path, pcapgen.capture([good]) + truncated)
    tally = IngestTally()
    packets = list(read_pcap(path, tally))
    assert len(packets) == 1
    assert tally.truncated == 1


def test_snaplen_cut_payload_still_counted(tmp_path):
    # headers captured, payload clipped by snaplen: size comes from the IP header
    frame = pcapgen.ethernet(pcapgen.ipv4("10.0.0.1", "10.0.0.2", pcapgen.tcp(1, 2, b"y" * 200)))
    rec = pcapgen.record(1.0, frame, incl_len=14 + 20 + 20 + 5)
    path = write(tmp_path, pcapgen.global_header() + rec)
    (pkt,) = read_pcap(path)
    assert pkt.payload_size == 200


def test_bad_magic_fatal(tmp_path):
    path = write(tmp_path, b"\xde\xad\xbe\xef" + b"\x00" * 20)
    with pytest.raises(DataFormatError):
        list(read_pcap(path))


def test_too_short_fatal(tmp_path):
    path = write(tmp_path, b"\xd4\xc3\xb2\xa1")
    with pytest.raises(DataFormatError):
        list(read_pcap(path))


def test_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        list(read_pcap(tmp_path / "nope.pcap"))
