"""Synthetic labeled traffic: per-device flow generators for the evaluation harness.

Each profile draws packet sizes from a truncated lognormal, inter-arrival
gaps from an exponential, and per-direction packet counts from a geometric
distribution. The malicious family uses heavier size tails and much shorter
gaps than the device profiles.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .flows import BidirectionalFlow, FlowKey, PacketRecord

LABELS_CSV_HEADER = ["flow_id", "label", "device"]

SIZE_MIN = 1.0
SIZE_MAX = 1500.0

# flows are laid out on a shared timeline with this much room each, so a
# corpus can round-trip through a time-ordered packet CSV
FLOW_SPACING_SECONDS = 100.0

# frozen seeds for the reference experiment
REFERENCE_CORPUS_SEED = 888
REFERENCE_TRAIN_SEED = 17
REFERENCE_FLOWS_PER_DEVICE = 500
REFERENCE_MALICIOUS_FLOWS = 625


@dataclass(frozen=True)
class SyntheticDeviceProfile:
    """Distribution parameters for one device type (or one attack family member).

    sent/recv sizes: lognormal(mu, sigma) in log-space, truncated to [1, 1500]
    bytes. Inter-arrival gaps: exponential with the given rate (events/s).
    Packets per direction: geometric(p), support >= 1.
    """

    name: str
    sent_size_mu: float
    sent_size_sigma: float
    recv_size_mu: float
    recv_size_sigma: float
    iat_rate: float
    packets_per_flow_p: float
    seed: int

    def validate(self) -> None:
        if not self.name:
            raise ValueError("profile needs a name")
        for label, value in (
            ("sent_size_sigma", self.sent_size_sigma),
            ("recv_size_sigma", self.recv_size_sigma),
            ("iat_rate", self.iat_rate),
        ):
            if value <= 0:
                raise ValueError(f"{self.name}: {label} must be strictly positive, got {value}")
        if not 0 < self.packets_per_flow_p <= 1:
            raise ValueError(f"{self.name}: packets_per_flow_p must be in (0, 1], got {self.packets_per_flow_p}")


@dataclass(frozen=True)
class LabeledFlow:
    flow: BidirectionalFlow
    label: str
    device: str


def default_device_profiles() -> list[SyntheticDeviceProfile]:
    """Four legitimate device profiles, frozen for the reference experiment.

    Heavily overlapping on purpose: the devices mostly speak the same
    request/response dialect with slightly different sizes and pacing, which
    is the regime where the intersection rule pays off (a flow odd for its
    own device's detector is usually still covered by a sibling).
    """
    return [
        SyntheticDeviceProfile("camera", 6.10, 0.15, 5.10, 0.18, 5.5, 0.20, 101),
        SyntheticDeviceProfile("motion-sensor", 6.13, 0.15, 5.13, 0.18, 5.0, 0.20, 102),
        SyntheticDeviceProfile("smart-bulb", 6.16, 0.15, 5.16, 0.18, 4.5, 0.20, 103),
        SyntheticDeviceProfile("smart-plug", 6.19, 0.15, 5.19, 0.18, 4.0, 0.20, 104),
    ]


def default_malicious_profiles() -> list[SyntheticDeviceProfile]:
    """Attack family: tiny, heavy-tailed payloads in fast bursts."""
    return [
        SyntheticDeviceProfile("botnet-scan", 2.50, 0.45, 2.20, 0.50, 60.0, 0.05, 201),
        SyntheticDeviceProfile("botnet-flood", 2.90, 0.50, 2.00, 0.50, 90.0, 0.05, 202),
    ]


def _draw_sizes(rng: np.random.Generator, mu: float, sigma: float, count: int) -> np.ndarray:
    sizes = np.clip(rng.lognormal(mu, sigma, size=count), SIZE_MIN, SIZE_MAX)
    return np.maximum(np.round(sizes), 1).astype(int)


def generate_flow(
    profile: SyntheticDeviceProfile,
    rng: np.random.Generator,
    flow_id: str,
    device_endpoint: tuple[str, int],
    server_endpoint: tuple[str, int],
    base_time: float = 0.0,
) -> BidirectionalFlow:
    """Draw one bidirectional flow; the device endpoint initiates."""
    n_sent = int(rng.geometric(profile.packets_per_flow_p))
    n_recv = int(rng.geometric(profile.packets_per_flow_p))
    scale = 1.0 / profile.iat_rate

    sent_times = base_time + np.concatenate([[0.0], np.cumsum(rng.exponential(scale, n_sent - 1))])
    sent_sizes = _draw_sizes(rng, profile.sent_size_mu, profile.sent_size_sigma, n_sent)
    # responder answers strictly after the first packet
    recv_start = base_time + rng.exponential(scale) + 1e-4
    recv_times = recv_start + np.concatenate([[0.0], np.cumsum(rng.exponential(scale, n_recv - 1))])
    recv_sizes = _draw_sizes(rng, profile.recv_size_mu, profile.recv_size_sigma, n_recv)

    packets = [
        PacketRecord(float(t), device_endpoint[0], server_endpoint[0], device_endpoint[1], server_endpoint[1], int(s))
        for t, s in zip(sent_times, sent_sizes)
    ] + [
        PacketRecord(float(t), server_endpoint[0], device_endpoint[0], server_endpoint[1], device_endpoint[1], int(s))
        for t, s in zip(recv_times, recv_sizes)
    ]
    packets.sort(key=lambda p: p.timestamp)

    return BidirectionalFlow(
        flow_id=flow_id,
        key=FlowKey.from_endpoints(device_endpoint, server_endpoint),
        initiator=device_endpoint,
        packets=packets,
        start_time=packets[0].timestamp,
        end_time=packets[-1].timestamp,
    )


def generate_dataset(
    profiles: Sequence[SyntheticDeviceProfile],
    flows_per_device: int,
    malicious_profiles: Sequence[SyntheticDeviceProfile],
    malicious_flows: int,
    seed: int,
) -> list[LabeledFlow]:
    """Deterministic labeled corpus: legitimate flows per device plus a malicious pool."""
    if not profiles:
        raise ValueError("need at least one legitimate device profile")
    if flows_per_device < 50:
        raise ValueError(f"flows_per_device must be at least 50, got {flows_per_device}")
    if malicious_flows > 0 and not malicious_profiles:
        raise ValueError("malicious_flows > 0 requires at least one malicious profile")
    for p in list(profiles) + list(malicious_profiles):
        p.validate()

    corpus: list[LabeledFlow] = []
    flow_index = 0

    def emit(profile: SyntheticDeviceProfile, count: int, label: str, subnet: int) -> None:
        nonlocal flow_index
        rng = np.random.default_rng(np.random.SeedSequence([seed, profile.seed]))
        device_ip = f"10.0.{subnet}.2"
        server_ip = f"52.0.{subnet}.1"
        for i in range(count):
            flow_id = f"{profile.name}-{i:05d}"
            flow = generate_flow(
                profile,
                rng,
                flow_id,
                device_endpoint=(device_ip, 10000 + i),
                server_endpoint=(server_ip, 443),
                base_time=flow_index * FLOW_SPACING_SECONDS,
            )
            corpus.append(LabeledFlow(flow=flow, label=label, device=profile.name))
            flow_index += 1

    for subnet, profile in enumerate(profiles):
        emit(profile, flows_per_device, "legit", subnet)

    if malicious_flows > 0:
        share, extra = divmod(malicious_flows, len(malicious_profiles))
        for j, profile in enumerate(malicious_profiles):
            emit(profile, share + (1 if j < extra else 0), "malicious", 100 + j)

    return corpus


def reference_corpus() -> list[LabeledFlow]:
    """The frozen desk-scale corpus used by the acceptance checks."""
    return generate_dataset(
        default_device_profiles(),
        REFERENCE_FLOWS_PER_DEVICE,
        default_malicious_profiles(),
        REFERENCE_MALICIOUS_FLOWS,
        REFERENCE_CORPUS_SEED,
    )


def corpus_packets(corpus: Sequence[LabeledFlow]) -> list[PacketRecord]:
    """All packets of a corpus in global timestamp order, as one capture."""
    packets = [p for lf in corpus for p in lf.flow.packets]
    packets.sort(key=lambda p: p.timestamp)
    return packets


def write_labels_csv(path, corpus: Sequence[LabeledFlow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(LABELS_CSV_HEADER)
        for lf in corpus:
            writer.writerow([lf.flow.flow_id, lf.label, lf.device])


def read_labels_csv(path) -> dict[str, tuple[str, str]]:
    """Map flow_id -> (label, device)."""
    from .flows import DataFormatError

    out: dict[str, tuple[str, str]] = {}
    with open(path, newline="", encoding="utf-8-sig") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != LABELS_CSV_HEADER:
            raise DataFormatError(f"{path}: expected header {','.join(LABELS_CSV_HEADER)}")
        for row in reader:
            if not row:
                continue
            if len(row) < 3:
                raise DataFormatError(f"{path}: bad row {row!r}")
            out[row[0]] = (row[1], row[2])
    return out
