"""From-scratch sparse autoencoder: sigmoid hidden layer, linear output.

The training objective is mean squared reconstruction error per sample plus
a KL-divergence penalty that pulls the batch-mean activation of every hidden
unit toward a small target. Optimization is plain mini-batch SGD with early
stopping on validation reconstruction error.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import asdict, dataclass

import numpy as np

from .features import NormalizationParams

SCHEMA_VERSION = 1

# keeps the KL term finite when a unit saturates
RHO_CLAMP = 1e-7


class TrainingDiverged(Exception):
    """Raised when the training loss stops being finite."""


class DataError(Exception):
    """A model file is present but cannot be loaded."""


@dataclass
class Hyperparams:
    # learning_rate / max_epochs / patience were tuned on the validation
    # procedure against the reference synthetic corpus
    input_size: int = 16
    hidden_size: int = 32
    target_sparsity: float = 0.1
    sparsity_weight: float = 0.2
    learning_rate: float = 0.05
    batch_size: int = 32
    max_epochs: int = 600
    patience: int = 30
    n_packets: int = 3


@dataclass
class TrainReport:
    epochs_run: int
    train_loss_history: list[float]
    val_re_history: list[float]
    mean_hidden_activation: np.ndarray


@dataclass
class LossBreakdown:
    total: float
    recon: float
    sparsity: float


@dataclass
class Gradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class SparseAutoencoder:
    """One trained (or in-training) detector for a single device type.

    A trained model is immutable in practice and safe to share across
    threads; training mutates weights and must stay on one thread.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    hyper: Hyperparams
    device_type: str = "device"
    rng_seed: int = 0
    normalization: NormalizationParams | None = None
    threshold: float | None = None
    trained_at: str | None = None

    @classmethod
    def initialize(cls, hyper: Hyperparams, seed: int, device_type: str = "device") -> "SparseAutoencoder":
        """Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)); zero biases."""
        rng = np.random.default_rng(seed)
        limit = np.sqrt(6.0 / (hyper.input_size + hyper.hidden_size))
        return cls(
            w1=rng.uniform(-limit, limit, size=(hyper.hidden_size, hyper.input_size)),
            b1=np.zeros(hyper.hidden_size),
            w2=rng.uniform(-limit, limit, size=(hyper.input_size, hyper.hidden_size)),
            b2=np.zeros(hyper.input_size),
            hyper=hyper,
            device_type=device_type,
            rng_seed=seed,
        )

    @property
    def is_calibrated(self) -> bool:
        return self.threshold is not None

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (hidden activation, reconstruction) for one input vector."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.hyper.input_size,):
            raise ValueError(f"expected input of shape ({self.hyper.input_size},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input vector contains non-finite values")
        hidden = _sigmoid(self.w1 @ x + self.b1)
        x_hat = self.w2 @ hidden + self.b2
        return hidden, x_hat

    def forward_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        hidden = _sigmoid(X @ self.w1.T + self.b1)
        return hidden, hidden @ self.w2.T + self.b2


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def reconstruction_error(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Sum of squared coordinate differences between input and reconstruction."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    d = x_hat - x
    return float(d @ d)


def reconstruction_errors(X: np.ndarray, X_hat: np.ndarray) -> np.ndarray:
    """Row-wise reconstruction errors for matching (samples, features) arrays."""
    X = np.asarray(X, dtype=float)
    X_hat = np.asarray(X_hat, dtype=float)
    if X.shape != X_hat.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {X_hat.shape}")
    d = X_hat - X
    return np.einsum("ij,ij->i", d, d)


def model_errors(model: SparseAutoencoder, X: np.ndarray) -> np.ndarray:
    _, X_hat = model.forward_batch(X)
    return reconstruction_errors(X, X_hat)


def _kl_sparsity(rho: float, rho_hat: np.ndarray) -> float:
    q = np.clip(rho_hat, RHO_CLAMP, 1.0 - RHO_CLAMP)
    return float(np.sum(rho * np.log(rho / q) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - q))))


def loss(model: SparseAutoencoder, batch: np.ndarray) -> LossBreakdown:
    """Batch loss: mean reconstruction error plus weighted KL sparsity penalty."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] < 1:
        raise ValueError("batch must contain at least one sample")
    hidden, x_hat = model.forward_batch(batch)
    recon = float(reconstruction_errors(batch, x_hat).mean())
    sparsity = _kl_sparsity(model.hyper.target_sparsity, hidden.mean(axis=0))
    return LossBreakdown(
        total=recon + model.hyper.sparsity_weight * sparsity,
        recon=recon,
        sparsity=sparsity,
    )


def _backprop(model: SparseAutoencoder, batch: np.ndarray) -> tuple[Gradients, LossBreakdown]:
    """Analytic gradient of the batch loss, sharing one forward pass."""
    X = np.atleast_2d(np.asarray(batch, dtype=float))
    m = X.shape[0]
    rho = model.hyper.target_sparsity
    beta = model.hyper.sparsity_weight

    hidden, x_hat = model.forward_batch(X)
    diff = x_hat - X
    recon = float(np.einsum("ij,ij->", diff, diff)) / m

    rho_hat = hidden.mean(axis=0)
    q = np.clip(rho_hat, RHO_CLAMP, 1.0 - RHO_CLAMP)
    sparsity = float(np.sum(rho * np.log(rho / q) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - q))))

    d_out = (2.0 / m) * diff
    g_w2 = d_out.T @ hidden
    g_b2 = d_out.sum(axis=0)

    d_hidden = d_out @ model.w2
    # the penalty reaches each sample through the batch mean, d rho_hat / d h = 1/m;
    # a clamped unit contributes no gradient
    inside = (rho_hat > RHO_CLAMP) & (rho_hat < 1.0 - RHO_CLAMP)
    d_kl = np.where(inside, -rho / q + (1.0 - rho) / (1.0 - q), 0.0)
    d_hidden = d_hidden + (beta / m) * d_kl

    d_z1 = d_hidden * hidden * (1.0 - hidden)
    g_w1 = d_z1.T @ X
    g_b1 = d_z1.sum(axis=0)

    breakdown = LossBreakdown(total=recon + beta * sparsity, recon=recon, sparsity=sparsity)
    return Gradients(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2), breakdown


def gradients(model: SparseAutoencoder, batch: np.ndarray) -> Gradients:
    """Analytic gradient of loss() with respect to all weights and biases."""
    return _backprop(model, batch)[0]


def train(
    train_data: np.ndarray,
    val_data: np.ndarray,
    hyper: Hyperparams,
    seed: int,
    device_type: str = "device",
) -> tuple[SparseAutoencoder, TrainReport]:
    """Mini-batch SGD with early stopping on validation reconstruction error.

    Inputs must already be normalized. Returns the weights of the epoch with
    the best validation RE. Identical (seed, data, hyperparams) give a
    bit-identical model.
    """
    X = np.atleast_2d(np.asarray(train_data, dtype=float))
    V = np.atleast_2d(np.asarray(val_data, dtype=float))
    for name, arr in (("training", X), ("validation", V)):
        if arr.shape[0] == 0:
            raise ValueError(f"{name} set is empty")
        if arr.shape[1] != hyper.input_size:
            raise ValueError(f"{name} data has width {arr.shape[1]}, expected {hyper.input_size}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} data contains non-finite values")

    model = SparseAutoencoder.initialize(hyper, seed, device_type)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    m = X.shape[0]
    lr = hyper.learning_rate

    train_history: list[float] = []
    val_history: list[float] = []
    best_re = np.inf
    best_weights = None
    wait = 0
    epochs_run = 0

    for epoch in range(1, hyper.max_epochs + 1):
        epochs_run = epoch
        order = shuffle_rng.permutation(m)
        batch_totals = []
        for start in range(0, m, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            grads, breakdown = _backprop(model, X[idx])
            if not np.isfinite(breakdown.total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (learning_rate={lr}); "
                    "lower the learning rate or check the input scaling"
                )
            model.w1 -= lr * grads.w1
            model.b1 -= lr * grads.b1
            model.w2 -= lr * grads.w2
            model.b2 -= lr * grads.b2
            batch_totals.append(breakdown.total)
        train_history.append(float(np.mean(batch_totals)))

        val_re = float(model_errors(model, V).mean())
        val_history.append(val_re)
        if val_re < best_re:
            best_re = val_re
            best_weights = (model.w1.copy(), model.b1.copy(), model.w2.copy(), model.b2.copy())
            wait = 0
        else:
            wait += 1
            if wait >= hyper.patience:
                break

    if best_weights is not None:
        model.w1, model.b1, model.w2, model.b2 = best_weights
    hidden, _ = model.forward_batch(X)
    report = TrainReport(
        epochs_run=epochs_run,
        train_loss_history=train_history,
        val_re_history=val_history,
        mean_hidden_activation=hidden.mean(axis=0),
    )
    return model, report


# ---------------------------------------------------------------------------
# Persistence: one JSON document per model

def model_to_dict(model: SparseAutoencoder) -> dict:
    norm = None
    if model.normalization is not None:
        norm = {
            "mean": model.normalization.mean.tolist(),
            "std": model.normalization.std.tolist(),
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "device_type": model.device_type,
        "hyperparams": asdict(model.hyper),
        "normalization": norm,
        "weights": {
            "W1": model.w1.tolist(),
            "b1": model.b1.tolist(),
            "W2": model.w2.tolist(),
            "b2": model.b2.tolist(),
        },
        "threshold": model.threshold,
        "rng_seed": model.rng_seed,
        "trained_at": model.trained_at,
    }


def model_from_dict(doc: dict) -> SparseAutoencoder:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported model schema version {doc.get('schema_version')!r}")
    hyper = Hyperparams(**doc["hyperparams"])
    weights = doc["weights"]
    norm = None
    if doc.get("normalization") is not None:
        norm = NormalizationParams(
            mean=np.array(doc["normalization"]["mean"], dtype=float),
            std=np.array(doc["normalization"]["std"], dtype=float),
        )
    return SparseAutoencoder(
        w1=np.array(weights["W1"], dtype=float),
        b1=np.array(weights["b1"], dtype=float),
        w2=np.array(weights["W2"], dtype=float),
        b2=np.array(weights["b2"], dtype=float),
        hyper=hyper,
        device_type=doc["device_type"],
        rng_seed=doc["rng_seed"],
        normalization=norm,
        threshold=doc.get("threshold"),
        trained_at=doc.get("trained_at"),
    )


def save_model(model: SparseAutoencoder, path, stamp: bool = True) -> None:
    if stamp and model.trained_at is None:
        model.trained_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(model_to_dict(model), fp, indent=2, sort_keys=True)
        fp.write("\n")


def load_model(path) -> SparseAutoencoder:
    with open(path, encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a valid model file: {exc}") from exc
    try:
        return model_from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a valid model file: {exc}") from exc
