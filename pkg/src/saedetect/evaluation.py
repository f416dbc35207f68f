"""Cross-validated evaluation: per-device folds, N sweep, TPR/FPR accounting.

Legitimate flows are split into k folds per device. For each fold, every
device detector is trained on 80% of the remaining flows and calibrated on
the other 20%; the ensemble is then scored on the held-out legitimate fold
(negatives) plus the full malicious pool (positives). Malicious flows never
enter training or calibration.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .autoencoder import Hyperparams, train
from .calibration import calibrate
from .ensemble import ModelSet, decide_batch
from .features import FeatureVector, featurize, fit_normalization, normalize_matrix
from .flows import BidirectionalFlow, PacketRecord
from .synthetic import LabeledFlow


class ConfigurationError(Exception):
    """The corpus cannot support the requested evaluation layout."""


@dataclass(frozen=True)
class FoldMetrics:
    n: int
    fold: int
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def tpr(self) -> float | None:
        pos = self.tp + self.fn
        return self.tp / pos if pos else None

    @property
    def fpr(self) -> float | None:
        neg = self.fp + self.tn
        return self.fp / neg if neg else None

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class AggregateRow:
    """Confusion counts for one N, summed over all folds."""

    n: int
    tp: int
    tn: int
    fp: int
    fn: int
    tpr: float | None
    fpr: float | None


@dataclass
class EvaluationReport:
    rows: list[AggregateRow]
    folds: list[FoldMetrics]
    config: dict


def confusion_counts(predicted: Sequence[bool], actual: Sequence[bool]) -> tuple[int, int, int, int]:
    """(tp, tn, fp, fn) with the positive class being anomalous/malicious."""
    if len(predicted) != len(actual):
        raise ValueError(f"length mismatch: {len(predicted)} predictions vs {len(actual)} labels")
    tp = tn = fp = fn = 0
    for p, a in zip(predicted, actual):
        if p and a:
            tp += 1
        elif not p and not a:
            tn += 1
        elif p and not a:
            fp += 1
        else:
            fn += 1
    return tp, tn, fp, fn


def aggregate_folds(folds: Sequence[FoldMetrics]) -> list[AggregateRow]:
    rows = []
    for n in sorted({f.n for f in folds}):
        sub = [f for f in folds if f.n == n]
        tp = sum(f.tp for f in sub)
        tn = sum(f.tn for f in sub)
        fp = sum(f.fp for f in sub)
        fn = sum(f.fn for f in sub)
        rows.append(
            AggregateRow(
                n=n,
                tp=tp,
                tn=tn,
                fp=fp,
                fn=fn,
                tpr=tp / (tp + fn) if tp + fn else None,
                fpr=fp / (fp + tn) if fp + tn else None,
            )
        )
    return rows


def _device_folds(
    by_device: dict[str, list[LabeledFlow]], k_folds: int, seed: int
) -> dict[str, list[int]]:
    """Assign a fold index to every legitimate flow, per device, deterministically.

    The assignment depends only on (corpus order, seed, k_folds), never on N,
    so sweeps over N score identical splits.
    """
    assignment: dict[str, list[int]] = {}
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    for device in sorted(by_device):
        flows = by_device[device]
        if len(flows) < k_folds:
            raise ConfigurationError(
                f"device {device!r} has {len(flows)} flows, fewer than k_folds={k_folds}"
            )
        order = rng.permutation(len(flows))
        folds = [0] * len(flows)
        for rank, idx in enumerate(order):
            folds[idx] = rank % k_folds
        assignment[device] = folds
    return assignment


def _train_seed(seed: int, fold: int, device_index: int) -> int:
    return int(np.random.SeedSequence([seed, fold, device_index]).generate_state(1)[0])


def run_cv(
    corpus: Sequence[LabeledFlow],
    n: int,
    hyper: Hyperparams,
    k_folds: int = 5,
    seed: int = 0,
    include_empty: bool = False,
    val_fraction: float = 0.2,
    test_flow_transform: Callable[[BidirectionalFlow], BidirectionalFlow] | None = None,
) -> list[FoldMetrics]:
    """k-fold cross-validation of the ensemble at one feature window n.

    test_flow_transform, when given, is applied to legitimate flows at test
    time only (training and calibration always see the clean flows).
    """
    if k_folds < 2:
        raise ConfigurationError(f"k_folds must be at least 2, got {k_folds}")
    legit = [lf for lf in corpus if lf.label == "legit"]
    malicious = [lf for lf in corpus if lf.label == "malicious"]
    if not legit:
        raise ConfigurationError("corpus has no legitimate flows")

    by_device: dict[str, list[LabeledFlow]] = {}
    for lf in legit:
        by_device.setdefault(lf.device, []).append(lf)
    fold_of = _device_folds(by_device, k_folds, seed)
    devices = sorted(by_device)
    hyper = replace(hyper, n_packets=n)

    # flows are immutable across folds; featurize each one once
    feature_cache: dict[str, FeatureVector] = {
        lf.flow.flow_id: featurize(lf.flow, n, include_empty) for lf in corpus
    }
    malicious_vectors = [feature_cache[lf.flow.flow_id] for lf in malicious]

    metrics: list[FoldMetrics] = []
    for fold in range(k_folds):
        models = []
        for di, device in enumerate(devices):
            flows = by_device[device]
            rest = [lf for lf, f in zip(flows, fold_of[device]) if f != fold]
            if len(rest) < 2:
                raise ConfigurationError(f"device {device!r}: not enough flows to split train/validation")
            split_rng = np.random.default_rng(np.random.SeedSequence([seed, fold, di, 2]))
            order = split_rng.permutation(len(rest))
            n_val = max(1, round(val_fraction * len(rest)))
            n_val = min(n_val, len(rest) - 1)
            val_idx = set(order[:n_val].tolist())
            train_vecs = [feature_cache[rest[i].flow.flow_id] for i in range(len(rest)) if i not in val_idx]
            val_vecs = [feature_cache[rest[i].flow.flow_id] for i in sorted(val_idx)]

            params = fit_normalization(train_vecs)
            X_train = normalize_matrix(np.stack([v.values for v in train_vecs]), params)
            X_val = normalize_matrix(np.stack([v.values for v in val_vecs]), params)
            model, _ = train(X_train, X_val, hyper, _train_seed(seed, fold, di), device_type=device)
            model.normalization = params
            calibrate(model, X_val)
            models.append(model)
        model_set = ModelSet(models)

        test_legit = [lf for d in devices for lf, f in zip(by_device[d], fold_of[d]) if f == fold]
        if test_flow_transform is None:
            legit_vectors = [feature_cache[lf.flow.flow_id] for lf in test_legit]
        else:
            legit_vectors = [featurize(test_flow_transform(lf.flow), n, include_empty) for lf in test_legit]

        vectors = legit_vectors + malicious_vectors
        labels = [False] * len(legit_vectors) + [True] * len(malicious_vectors)
        verdicts = decide_batch(model_set, vectors)
        tp, tn, fp, fn = confusion_counts([v.anomalous for v in verdicts], labels)
        metrics.append(FoldMetrics(n=n, fold=fold, tp=tp, tn=tn, fp=fp, fn=fn))
    return metrics


def sweep_n(
    corpus: Sequence[LabeledFlow],
    n_values: Sequence[int],
    hyper: Hyperparams,
    k_folds: int = 5,
    seed: int = 0,
    include_empty: bool = False,
    val_fraction: float = 0.2,
    extra_config: dict | None = None,
) -> EvaluationReport:
    """run_cv for every requested n; one aggregated row per n."""
    if not n_values:
        raise ConfigurationError("n_values must not be empty")
    if any(n < 2 for n in n_values):
        raise ConfigurationError(f"every n must be at least 2, got {list(n_values)}")
    folds: list[FoldMetrics] = []
    for n in n_values:
        folds.extend(
            run_cv(
                corpus,
                n,
                hyper,
                k_folds=k_folds,
                seed=seed,
                include_empty=include_empty,
                val_fraction=val_fraction,
            )
        )
    n_legit = sum(1 for lf in corpus if lf.label == "legit")
    config = {
        "n_values": list(n_values),
        "k_folds": k_folds,
        "seed": seed,
        "val_fraction": val_fraction,
        "include_empty_packets": include_empty,
        "hyperparams": asdict(hyper),
        "corpus": {
            "flows": len(corpus),
            "legit": n_legit,
            "malicious": len(corpus) - n_legit,
        },
    }
    if extra_config:
        config.update(extra_config)
    return EvaluationReport(rows=aggregate_folds(folds), folds=folds, config=config)


# ---------------------------------------------------------------------------
# Test-time perturbation used to demonstrate the FPR-vs-N mechanism

def select_perturbation_victims(corpus: Sequence[LabeledFlow], fraction: float, seed: int) -> frozenset[str]:
    """Pick a deterministic fraction of the legitimate flow ids."""
    legit_ids = [lf.flow.flow_id for lf in corpus if lf.label == "legit"]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBAD]))
    count = int(round(fraction * len(legit_ids)))
    picked = rng.choice(len(legit_ids), size=count, replace=False)
    return frozenset(legit_ids[i] for i in picked)


def make_late_size_perturbation(
    victims: frozenset[str], packet_index: int = 7, payload_size: int = 1500
) -> Callable[[BidirectionalFlow], BidirectionalFlow]:
    """Overwrite the size of one late sent-direction data packet in victim flows.

    packet_index is 0-based within the sent-direction data packets, so only
    detectors with a feature window reaching past it are affected. Flows that
    are shorter than the index pass through unchanged.
    """

    def transform(flow: BidirectionalFlow) -> BidirectionalFlow:
        if flow.flow_id not in victims:
            return flow
        seen = 0
        packets: list[PacketRecord] = []
        hit = False
        for pkt in flow.packets:
            if not hit and flow.direction_of(pkt) == "S" and pkt.payload_size > 0:
                if seen == packet_index:
                    packets.append(replace(pkt, payload_size=payload_size))
                    hit = True
                    continue
                seen += 1
            packets.append(pkt)
        if not hit:
            return flow
        return replace(flow, packets=packets)

    return transform


# ---------------------------------------------------------------------------
# Report files

def _rate_str(value: float | None) -> str:
    return "nan" if value is None else f"{value:.6f}"


def write_report_csv(report: EvaluationReport, path) -> None:
    """Per-fold rows: n,fold,tp,tn,fp,fn,tpr,fpr (undefined rates written as nan)."""
    with open(path, "w", newline="", encoding="utf-8") as fp:
        fp.write("n,fold,tp,tn,fp,fn,tpr,fpr\n")
        for f in report.folds:
            fp.write(
                f"{f.n},{f.fold},{f.tp},{f.tn},{f.fp},{f.fn},{_rate_str(f.tpr)},{_rate_str(f.fpr)}\n"
            )


def write_summary_json(report: EvaluationReport, path) -> None:
    doc = {
        "rows": [asdict(r) for r in report.rows],
        "config": report.config,
    }
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(doc, fp, indent=2, sort_keys=True)
        fp.write("\n")


def write_plot_data(report: EvaluationReport, path) -> None:
    """Gnuplot-style table of the aggregated per-N rates."""
    with open(path, "w", encoding="utf-8") as fp:
        fp.write("# n tpr fpr\n")
        for row in report.rows:
            fp.write(f"{row.n} {_rate_str(row.tpr)} {_rate_str(row.fpr)}\n")
