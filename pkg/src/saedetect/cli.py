"""Command-line entry point wiring the whole pipeline."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import autoencoder, calibration, ensemble, evaluation, features, flows, pcapio, synthetic
from .config import MODELS_DIR_ENV, ConfigError, PipelineConfig, load_config

EXIT_OK = 0
EXIT_ANOMALY_FOUND = 1
EXIT_USAGE = 2
EXIT_DATA = 3

PCAP_MAGICS = (b"\xa1\xb2\xc3\xd4", b"\xd4\xc3\xb2\xa1", b"\xa1\xb2\x3c\x4d", b"\x4d\x3c\xb2\xa1")


class UsageError(Exception):
    pass


def _sniff_kind(path: Path) -> str:
    """Classify an input file as pcap, packet CSV or flow CSV."""
    with open(path, "rb") as fp:
        head = fp.read(4)
    if head in PCAP_MAGICS:
        return "pcap"
    with open(path, newline="", encoding="utf-8-sig", errors="replace") as fp:
        first = fp.readline().strip()
    columns = [c.strip() for c in first.split(",")]
    if columns == flows.PACKET_CSV_HEADER:
        return "packet-csv"
    if columns == flows.FLOW_CSV_HEADER:
        return "flow-csv"
    raise flows.DataFormatError(f"{path}: neither a pcap file nor a recognized CSV header")


def _read_packets(path: Path, tally: flows.IngestTally):
    if _sniff_kind(path) == "pcap":
        return pcapio.read_pcap(path, tally)
    return flows.read_packet_csv(path, tally)


def _require_input(path_str: str) -> Path:
    path = Path(path_str)
    if not path.exists():
        raise UsageError(f"input file not found: {path}")
    return path


def _load_flows(path: Path, packets_path: str | None, cfg: PipelineConfig) -> list[flows.BidirectionalFlow]:
    kind = _sniff_kind(path)
    if kind == "flow-csv":
        sidecar = Path(packets_path) if packets_path else path.with_suffix(".packets.csv")
        if not sidecar.exists():
            raise UsageError(f"per-packet sidecar not found: {sidecar}")
        return flows.read_flow_csv(path, sidecar)
    assembler = flows.FlowAssembler(timeout=cfg.timeout_seconds)
    result = assembler.assemble(_read_packets(path, assembler.tally))
    print(f"assembled {len(result)} flows ({assembler.tally.summary()})", file=sys.stderr)
    return result


# ---------------------------------------------------------------------------
# subcommands

def cmd_extract(args, cfg: PipelineConfig) -> int:
    in_path = _require_input(args.input)
    out_path = Path(args.out)
    packets_out = Path(args.packets_out) if args.packets_out else out_path.with_suffix(".packets.csv")
    assembler = flows.FlowAssembler(timeout=cfg.timeout_seconds)
    result = assembler.assemble(_read_packets(in_path, assembler.tally))
    flows.write_flow_csv(result, out_path, packets_out)
    print(f"flows: {len(result)}")
    print(f"rejected: {assembler.tally.rejected} ({assembler.tally.summary()})")
    return EXIT_OK


def cmd_featurize(args, cfg: PipelineConfig) -> int:
    in_path = _require_input(args.input)
    flow_list = _load_flows(in_path, args.packets, cfg)
    labels_map = synthetic.read_labels_csv(args.labels_csv) if args.labels_csv else {}
    if args.device:
        if not labels_map:
            raise UsageError("--device requires --labels-csv")
        flow_list = [f for f in flow_list if labels_map.get(f.flow_id, ("", ""))[1] == args.device]
        if not flow_list:
            raise flows.DataFormatError(f"no flows labeled with device {args.device!r}")
    vectors = [features.featurize(f, cfg.n_packets, cfg.include_empty_packets) for f in flow_list]
    labels = [labels_map.get(f.flow_id, (args.label, ""))[0] if labels_map else args.label for f in flow_list]
    features.write_feature_csv(args.out, vectors, labels)
    print(f"wrote {len(vectors)} feature vectors (n={cfg.n_packets}) to {args.out}")
    return EXIT_OK


def cmd_train(args, cfg: PipelineConfig) -> int:
    in_path = _require_input(args.input)
    vectors, labels = features.read_feature_csv(in_path)
    if any(lbl == "malicious" for lbl in labels):
        raise flows.DataFormatError("training data must contain only legitimate traffic")
    if len(vectors) < 50:
        raise flows.DataFormatError(f"refusing to train on {len(vectors)} samples (need at least 50)")
    n_set = {v.n_packets for v in vectors}
    if len(n_set) != 1:
        raise flows.DataFormatError(f"feature file mixes several n values: {sorted(n_set)}")
    n = n_set.pop()

    rng = np.random.default_rng(np.random.SeedSequence([cfg.train_seed, 3]))
    order = rng.permutation(len(vectors))
    n_val = max(1, round(cfg.val_fraction * len(vectors)))
    n_val = min(n_val, len(vectors) - 1)
    val_idx = set(order[:n_val].tolist())
    train_vecs = [vectors[i] for i in range(len(vectors)) if i not in val_idx]
    val_vecs = [vectors[i] for i in sorted(val_idx)]

    params = features.fit_normalization(train_vecs)
    X_train = features.normalize_matrix(np.stack([v.values for v in train_vecs]), params)
    X_val = features.normalize_matrix(np.stack([v.values for v in val_vecs]), params)

    hyper = cfg.hyperparams(n_packets=n)
    model, report = autoencoder.train(X_train, X_val, hyper, cfg.train_seed, device_type=args.device_type)
    model.normalization = params
    threshold_report = calibration.calibrate(model, X_val)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    autoencoder.save_model(model, out_path)

    print(f"device_type: {args.device_type}")
    print(f"samples: {len(vectors)} (train {len(train_vecs)}, validation {len(val_vecs)})")
    print(f"epochs_run: {report.epochs_run}")
    print(f"final_train_loss: {report.train_loss_history[-1]:.6f}")
    print(f"best_val_re: {min(report.val_re_history):.6f}")
    print(f"mean_hidden_activation: {float(report.mean_hidden_activation.mean()):.4f}")
    print(
        f"threshold: {threshold_report.threshold:.6f} "
        f"(mean {threshold_report.re_mean:.6f} + std {threshold_report.re_std:.6f}, "
        f"{threshold_report.n_outliers_removed}/{threshold_report.n_validation} outliers removed)"
    )
    print(f"model written to {out_path}")
    return EXIT_OK


def _models_dir(args, cfg: PipelineConfig) -> Path:
    if args.models:
        return Path(args.models)
    env = os.environ.get(MODELS_DIR_ENV)
    if env:
        return Path(env)
    return Path(cfg.models_dir)


def cmd_detect(args, cfg: PipelineConfig) -> int:
    in_path = _require_input(args.input)
    models_dir = _models_dir(args, cfg)
    if not models_dir.is_dir():
        raise UsageError(f"models directory not found: {models_dir}")
    model_paths = sorted(models_dir.glob("*.json"))
    if not model_paths:
        raise UsageError(f"no model files in {models_dir}")
    model_set = ensemble.ModelSet([autoencoder.load_model(p) for p in model_paths])
    if args.n is not None and args.n != model_set.n_packets:
        raise UsageError(f"--n {args.n} does not match the models' n={model_set.n_packets}")

    flow_list = _load_flows(in_path, args.packets, cfg)
    vectors = [features.featurize(f, model_set.n_packets, cfg.include_empty_packets) for f in flow_list]
    verdicts = ensemble.decide_batch(model_set, vectors)

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fp:
            ensemble.write_verdicts_jsonl(verdicts, fp)
    else:
        ensemble.write_verdicts_jsonl(verdicts, sys.stdout)
    n_anomalous = sum(v.anomalous for v in verdicts)
    print(f"anomalous: {n_anomalous}/{len(verdicts)} flows ({len(model_set)} detectors)", file=sys.stderr)
    if args.fail_on_anomaly and n_anomalous:
        return EXIT_ANOMALY_FOUND
    return EXIT_OK


def cmd_synth(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = synthetic.generate_dataset(
        synthetic.default_device_profiles(),
        cfg.flows_per_device,
        synthetic.default_malicious_profiles(),
        cfg.malicious_flows,
        cfg.corpus_seed,
    )
    flow_path = out_dir / "corpus.flows.csv"
    packet_path = out_dir / "corpus.flows.packets.csv"
    labels_path = out_dir / "corpus.labels.csv"
    flows.write_flow_csv([lf.flow for lf in corpus], flow_path, packet_path)
    synthetic.write_labels_csv(labels_path, corpus)
    n_legit = sum(1 for lf in corpus if lf.label == "legit")
    print(f"corpus: {len(corpus)} flows ({n_legit} legit, {len(corpus) - n_legit} malicious)")
    print(f"wrote {flow_path}, {packet_path}, {labels_path}")
    return EXIT_OK


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = synthetic.default_device_profiles()
    malicious = synthetic.default_malicious_profiles()
    corpus = synthetic.generate_dataset(
        profiles, cfg.flows_per_device, malicious, cfg.malicious_flows, cfg.corpus_seed
    )
    report = evaluation.sweep_n(
        corpus,
        cfg.n_values,
        cfg.hyperparams(),
        k_folds=cfg.k_folds,
        seed=cfg.train_seed,
        include_empty=cfg.include_empty_packets,
        val_fraction=cfg.val_fraction,
        extra_config={
            "corpus_seed": cfg.corpus_seed,
            "profiles": [p.name for p in profiles],
            "malicious_profiles": [p.name for p in malicious],
        },
    )
    evaluation.write_report_csv(report, out_dir / "report.csv")
    evaluation.write_summary_json(report, out_dir / "summary.json")
    evaluation.write_plot_data(report, out_dir / "tpr_fpr.dat")
    print("n    tpr       fpr")
    for row in report.rows:
        tpr = "nan" if row.tpr is None else f"{row.tpr:.4f}"
        fpr = "nan" if row.fpr is None else f"{row.fpr:.4f}"
        print(f"{row.n:<4d} {tpr:<9s} {fpr}")
    print(f"reports written to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saedetect",
        description="Learn per-device profiles of legitimate IoT TCP flows and flag anomalies.",
    )
    parser.add_argument("--config", help="flat JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="assemble bidirectional TCP flows from a pcap or packet CSV")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="flow CSV output path")
    p.add_argument("--packets-out", help="per-packet sidecar path (default: <out>.packets.csv)")
    p.add_argument("--timeout", type=float, dest="timeout_seconds", help="flow split timeout in seconds")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("featurize", help="turn flows into 16-feature vectors")
    p.add_argument("input", help="flow CSV (with sidecar), packet CSV or pcap")
    p.add_argument("--packets", help="sidecar path when input is a flow CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, dest="n_packets", help="feature window (first N data packets)")
    p.add_argument("--label", default="unknown", choices=features.VALID_LABELS)
    p.add_argument("--labels-csv", help="flow_id,label,device file to join on flow_id")
    p.add_argument("--device", help="keep only flows of this device (needs --labels-csv)")
    p.add_argument("--include-empty-packets", action="store_true", dest="include_empty_packets", default=None)
    p.add_argument("--timeout", type=float, dest="timeout_seconds")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="fit normalization, train and calibrate one device model")
    p.add_argument("input", help="feature CSV of one device's legitimate flows")
    p.add_argument("--device-type", required=True)
    p.add_argument("--out", required=True, help="model JSON output path")
    p.add_argument("--seed", type=int, dest="train_seed")
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int, dest="patience")
    p.add_argument("--hidden-size", type=int, dest="hidden_size")
    p.add_argument("--target-sparsity", type=float, dest="target_sparsity")
    p.add_argument("--sparsity-weight", type=float, dest="sparsity_weight")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="score flows with every model in a directory")
    p.add_argument("input", help="pcap, packet CSV or flow CSV")
    p.add_argument("--packets", help="sidecar path when input is a flow CSV")
    p.add_argument("--models", help=f"models directory (default: ${MODELS_DIR_ENV} or config)")
    p.add_argument("--n", type=int, help="assert the models' feature window")
    p.add_argument("--out", help="verdicts JSON-lines path (default: stdout)")
    p.add_argument("--fail-on-anomaly", action="store_true")
    p.add_argument("--timeout", type=float, dest="timeout_seconds")
    p.add_argument("--include-empty-packets", action="store_true", dest="include_empty_packets", default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth", help="generate the labeled synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--flows-per-device", type=int, dest="flows_per_device")
    p.add_argument("--malicious-flows", type=int, dest="malicious_flows")
    p.add_argument("--seed", type=int, dest="corpus_seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="cross-validated N sweep on the synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-values", dest="n_values", help="comma-separated list, e.g. 2,3,4")
    p.add_argument("--k-folds", type=int, dest="k_folds")
    p.add_argument("--seed", type=int, dest="train_seed")
    p.add_argument("--corpus-seed", type=int, dest="corpus_seed")
    p.add_argument("--flows-per-device", type=int, dest="flows_per_device")
    p.add_argument("--malicious-flows", type=int, dest="malicious_flows")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.set_defaults(func=cmd_evaluate)

    return parser


_CONFIG_KEYS = (
    "timeout_seconds",
    "n_packets",
    "include_empty_packets",
    "train_seed",
    "corpus_seed",
    "val_fraction",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "hidden_size",
    "target_sparsity",
    "sparsity_weight",
    "flows_per_device",
    "malicious_flows",
    "k_folds",
    "n_values",
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if getattr(args, k, None) is not None}
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (flows.DataFormatError, autoencoder.DataError, calibration.CalibrationError,
            calibration.NotCalibratedError, autoencoder.TrainingDiverged,
            evaluation.ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
