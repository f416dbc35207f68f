"""Intersection-rule decision over the per-device detectors.

A flow is anomalous only if every detector flags it; it is legitimate as
soon as one detector accepts it. Each detector normalizes the raw feature
vector with its own fitted parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .autoencoder import SparseAutoencoder, reconstruction_errors
from .calibration import NotCalibratedError
from .features import FeatureVector, feature_matrix, normalize_matrix


@dataclass(frozen=True)
class ModelDecision:
    device_type: str
    re: float
    threshold: float
    decision: bool


@dataclass(frozen=True)
class Verdict:
    flow_id: str
    anomalous: bool
    per_model: tuple[ModelDecision, ...]

    def to_dict(self) -> dict:
        return {
            "flow_id": self.flow_id,
            "anomalous": self.anomalous,
            "per_model": [
                {
                    "device_type": d.device_type,
                    "re": d.re,
                    "threshold": d.threshold,
                    "decision": d.decision,
                }
                for d in self.per_model
            ],
        }


class ModelSet:
    """An immutable collection of calibrated detectors, one per device type."""

    def __init__(self, models: Sequence[SparseAutoencoder]):
        if not models:
            raise ValueError("model set is empty")
        names = [m.device_type for m in models]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate device types in model set: {names}")
        for m in models:
            if m.threshold is None:
                raise NotCalibratedError(f"model {m.device_type!r} has no threshold")
            if m.normalization is None:
                raise ValueError(f"model {m.device_type!r} has no fitted normalization")
        sizes = {m.hyper.input_size for m in models}
        if len(sizes) != 1:
            raise ValueError(f"models disagree on input size: {sorted(sizes)}")
        windows = {m.hyper.n_packets for m in models}
        if len(windows) != 1:
            raise ValueError(f"models disagree on the feature window n: {sorted(windows)}")
        self._models = tuple(models)

    @property
    def models(self) -> tuple[SparseAutoencoder, ...]:
        return self._models

    @property
    def n_packets(self) -> int:
        return self._models[0].hyper.n_packets

    @property
    def input_size(self) -> int:
        return self._models[0].hyper.input_size

    def __len__(self) -> int:
        return len(self._models)


def decide(model_set: ModelSet, vector: FeatureVector) -> Verdict:
    """Feed one raw feature vector to every detector and intersect the flags."""
    return decide_batch(model_set, [vector])[0]


def decide_batch(model_set: ModelSet, vectors: Sequence[FeatureVector]) -> list[Verdict]:
    """Elementwise decide over a list of vectors, order preserved."""
    if not vectors:
        return []
    for v in vectors:
        if v.n_packets != model_set.n_packets:
            raise ValueError(
                f"vector {v.flow_id!r} was built with n={v.n_packets}, models expect n={model_set.n_packets}"
            )
    X = feature_matrix(vectors)
    per_model_re = []
    per_model_flag = []
    for model in model_set.models:
        Z = normalize_matrix(X, model.normalization)
        _, Z_hat = model.forward_batch(Z)
        res = reconstruction_errors(Z, Z_hat)
        per_model_re.append(res)
        per_model_flag.append(res > model.threshold)
    flags = np.column_stack(per_model_flag)
    res_matrix = np.column_stack(per_model_re)
    anomalous = flags.all(axis=1)

    verdicts = []
    for i, v in enumerate(vectors):
        decisions = tuple(
            ModelDecision(
                device_type=m.device_type,
                re=float(res_matrix[i, j]),
                threshold=float(m.threshold),
                decision=bool(flags[i, j]),
            )
            for j, m in enumerate(model_set.models)
        )
        verdicts.append(Verdict(flow_id=v.flow_id, anomalous=bool(anomalous[i]), per_model=decisions))
    return verdicts


def write_verdicts_jsonl(verdicts: Iterable[Verdict], fp: IO[str]) -> int:
    n = 0
    for v in verdicts:
        fp.write(json.dumps(v.to_dict()) + "\n")
        n += 1
    return n
