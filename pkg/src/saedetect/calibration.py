"""Detection threshold calibration from validation reconstruction errors.

The threshold is mean plus population std of the validation REs after
dropping extreme outliers, where an extreme outlier reconstructs worse
than random guessing: RE greater than twice the feature count.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autoencoder import SparseAutoencoder, model_errors, reconstruction_error


class CalibrationError(Exception):
    """Every validation sample was rejected: the model reconstructs worse than random guessing."""


class NotCalibratedError(Exception):
    """The model has no threshold yet; run calibrate() first."""


@dataclass(frozen=True)
class ThresholdReport:
    threshold: float
    n_validation: int
    n_outliers_removed: int
    re_mean: float
    re_std: float
    outlier_cutoff: float

    def to_dict(self) -> dict:
        return asdict(self)


def threshold_from_errors(errors, input_size: int) -> ThresholdReport:
    """Apply the outlier cutoff (2 x input_size) and take mean + std of the rest.

    The cutoff is a fixed constant, not recomputed after removal.
    """
    re_values = np.asarray(errors, dtype=float)
    if re_values.ndim != 1 or re_values.size == 0:
        raise ValueError("need a non-empty 1-d array of reconstruction errors")
    cutoff = 2.0 * input_size
    kept = re_values[re_values <= cutoff]
    if kept.size == 0:
        raise CalibrationError(
            f"all {re_values.size} validation samples exceed the outlier cutoff {cutoff}; "
            "the model performs worse than random guessing"
        )
    mean = float(kept.mean())
    std = float(kept.std())
    return ThresholdReport(
        threshold=mean + std,
        n_validation=int(re_values.size),
        n_outliers_removed=int(re_values.size - kept.size),
        re_mean=mean,
        re_std=std,
        outlier_cutoff=cutoff,
    )


def calibrate(model: SparseAutoencoder, validation: np.ndarray) -> ThresholdReport:
    """Set the model's threshold from a normalized validation set."""
    validation = np.atleast_2d(np.asarray(validation, dtype=float))
    if validation.shape[0] == 0:
        raise ValueError("validation set is empty")
    report = threshold_from_errors(model_errors(model, validation), model.hyper.input_size)
    model.threshold = report.threshold
    return report


def is_anomalous(model: SparseAutoencoder, x_normalized: np.ndarray) -> bool:
    """True iff the reconstruction error is strictly above the threshold."""
    if model.threshold is None:
        raise NotCalibratedError(f"model {model.device_type!r} has no threshold")
    _, x_hat = model.forward(np.asarray(x_normalized, dtype=float))
    return reconstruction_error(x_normalized, x_hat) > model.threshold


def anomaly_decisions(model: SparseAutoencoder, X_normalized: np.ndarray) -> np.ndarray:
    """Vectorized is_anomalous over the rows of a normalized sample matrix."""
    if model.threshold is None:
        raise NotCalibratedError(f"model {model.device_type!r} has no threshold")
    return model_errors(model, X_normalized) > model.threshold
