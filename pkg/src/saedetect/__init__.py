"""Per-device sparse-autoencoder profiles for flagging anomalous IoT TCP flows."""

from .autoencoder import (
    Hyperparams,
    SparseAutoencoder,
    TrainReport,
    gradients,
    load_model,
    loss,
    reconstruction_error,
    reconstruction_errors,
    save_model,
    train,
)
from .calibration import CalibrationError, ThresholdReport, calibrate, is_anomalous, threshold_from_errors
from .ensemble import ModelSet, Verdict, decide, decide_batch
from .evaluation import EvaluationReport, confusion_counts, run_cv, sweep_n
from .features import FeatureVector, NormalizationParams, featurize, fit_normalization, normalize
from .flows import BidirectionalFlow, FlowAssembler, FlowKey, PacketRecord, assemble, read_packet_csv
from .pcapio import read_pcap
from .synthetic import SyntheticDeviceProfile, generate_dataset, reference_corpus

__version__ = "0.1.0"

__all__ = [
    "BidirectionalFlow",
    "CalibrationError",
    "EvaluationReport",
    "FeatureVector",
    "FlowAssembler",
    "FlowKey",
    "Hyperparams",
    "ModelSet",
    "NormalizationParams",
    "PacketRecord",
    "SparseAutoencoder",
    "SyntheticDeviceProfile",
    "ThresholdReport",
    "TrainReport",
    "Verdict",
    "assemble",
    "calibrate",
    "confusion_counts",
    "decide",
    "decide_batch",
    "featurize",
    "fit_normalization",
    "generate_dataset",
    "gradients",
    "is_anomalous",
    "load_model",
    "loss",
    "normalize",
    "read_packet_csv",
    "read_pcap",
    "reconstruction_error",
    "reconstruction_errors",
    "reference_corpus",
    "run_cv",
    "save_model",
    "sweep_n",
    "threshold_from_errors",
    "train",
]
