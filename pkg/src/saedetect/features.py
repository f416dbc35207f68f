"""16-dimensional flow descriptors and z-score normalization.

Per direction (sent = from the flow initiator): mean, median, min, max,
population standard deviation and count of the sizes of the first N data
packets, plus mean and population std of the inter-arrival times between
those packets. Statistics that cannot be computed (fewer than one packet
for sizes, fewer than two for IATs) are zero-filled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .flows import BidirectionalFlow, DataFormatError, PacketRecord

FEATURE_NAMES = [
    "sent_mean",
    "sent_median",
    "sent_min",
    "sent_max",
    "sent_std",
    "sent_count",
    "recv_mean",
    "recv_median",
    "recv_min",
    "recv_max",
    "recv_std",
    "recv_count",
    "sent_iat_mean",
    "sent_iat_std",
    "recv_iat_mean",
    "recv_iat_std",
]
N_FEATURES = len(FEATURE_NAMES)

FEATURE_CSV_HEADER = ["flow_id", "n", *FEATURE_NAMES, "label"]
VALID_LABELS = ("legit", "malicious", "unknown")

STD_FLOOR = 1e-9


@dataclass(frozen=True)
class FeatureVector:
    """Flow descriptor: 16 values in the canonical order of FEATURE_NAMES."""

    values: np.ndarray
    n_packets: int
    flow_id: str


@dataclass(frozen=True)
class NormalizationParams:
    """Per-feature mean and (floored) population std, fitted on training data only."""

    mean: np.ndarray
    std: np.ndarray


def _window(packets: Sequence[PacketRecord], n: int, include_empty: bool) -> list[PacketRecord]:
    if not include_empty:
        packets = [p for p in packets if p.payload_size > 0]
    # size tiebreak gives a canonical order for equal timestamps, so the
    # window does not depend on arrival order of ties
    ordered = sorted(packets, key=lambda p: (p.timestamp, p.payload_size))
    return ordered[:n]


def _direction_features(window: Sequence[PacketRecord]) -> tuple[list[float], list[float]]:
    if not window:
        return [0.0] * 6, [0.0, 0.0]
    sizes = np.array([p.payload_size for p in window], dtype=float)
    size_stats = [
        float(sizes.mean()),
        float(np.median(sizes)),
        float(sizes.min()),
        float(sizes.max()),
        float(sizes.std()),
        float(np.count_nonzero(sizes)),
    ]
    if len(window) < 2:
        return size_stats, [0.0, 0.0]
    iat = np.diff(np.array([p.timestamp for p in window], dtype=float))
    return size_stats, [float(iat.mean()), float(iat.std())]


def featurize(flow: BidirectionalFlow, n: int, include_empty: bool = False) -> FeatureVector:
    """Describe a flow by statistics over the first n data packets per direction.

    A data packet has payload_size > 0; with include_empty=True zero-payload
    packets occupy window slots and enter the size statistics, but never the
    count feature. n must be at least 2 so inter-arrival times exist.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2 for inter-arrival times, got {n}")
    sent = [p for p in flow.packets if flow.direction_of(p) == "S"]
    recv = [p for p in flow.packets if flow.direction_of(p) == "R"]
    sent_sizes, sent_iat = _direction_features(_window(sent, n, include_empty))
    recv_sizes, recv_iat = _direction_features(_window(recv, n, include_empty))
    values = np.array(sent_sizes + recv_sizes + sent_iat + recv_iat, dtype=float)
    return FeatureVector(values=values, n_packets=n, flow_id=flow.flow_id)


def feature_matrix(vectors: Iterable[FeatureVector]) -> np.ndarray:
    return np.stack([v.values for v in vectors]).astype(float)


def fit_normalization(vectors) -> NormalizationParams:
    """Fit per-feature mean and population std; stds below the floor become 1.0.

    Accepts a list of FeatureVector or a (samples, features) array.
    """
    X = vectors if isinstance(vectors, np.ndarray) else feature_matrix(list(vectors))
    if X.size == 0:
        raise ValueError("cannot fit normalization on an empty sample set")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return NormalizationParams(mean=mean, std=std)


def normalize(v, params: NormalizationParams) -> np.ndarray:
    values = v.values if isinstance(v, FeatureVector) else np.asarray(v, dtype=float)
    return (values - params.mean) / params.std


def normalize_matrix(X: np.ndarray, params: NormalizationParams) -> np.ndarray:
    return (X - params.mean) / params.std


def denormalize(z: np.ndarray, params: NormalizationParams) -> np.ndarray:
    return z * params.std + params.mean


# ---------------------------------------------------------------------------
# CSV interchange

def write_feature_csv(path, vectors: Sequence[FeatureVector], labels: Sequence[str] | None = None) -> int:
    if labels is None:
        labels = ["unknown"] * len(vectors)
    if len(labels) != len(vectors):
        raise ValueError("labels and vectors must have the same length")
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(FEATURE_CSV_HEADER)
        for v, label in zip(vectors, labels):
            if label not in VALID_LABELS:
                raise ValueError(f"label must be one of {VALID_LABELS}, got {label!r}")
            writer.writerow([v.flow_id, v.n_packets, *[repr(float(x)) for x in v.values], label])
    return len(vectors)


def read_feature_csv(path) -> tuple[list[FeatureVector], list[str]]:
    vectors: list[FeatureVector] = []
    labels: list[str] = []
    with open(path, newline="", encoding="utf-8-sig") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FEATURE_CSV_HEADER:
            raise DataFormatError(f"{path}: expected feature CSV header {','.join(FEATURE_CSV_HEADER)}")
        for row in reader:
            if not row:
                continue
            try:
                flow_id = row[0]
                n = int(row[1])
                values = np.array([float(x) for x in row[2 : 2 + N_FEATURES]], dtype=float)
                label = row[2 + N_FEATURES].strip()
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}: bad row {row!r}") from exc
            if values.shape != (N_FEATURES,):
                raise DataFormatError(f"{path}: bad row {row!r}")
            if label not in VALID_LABELS:
                raise DataFormatError(f"{path}: unknown label {label!r}")
            vectors.append(FeatureVector(values=values, n_packets=n, flow_id=flow_id))
            labels.append(label)
    return vectors, labels
