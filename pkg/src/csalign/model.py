"""A compact differentiable backbone: temporal average pooling, channel
flattening, tanh fully-connected layers into a feature vector, and a
linear classifier head. No batch coupling (no batch norm), so per-sample
outputs are independent and the feature/classifier split needed by the
alignment losses is explicit.

Also provides cross-entropy, prediction, and accuracy/kappa metrics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .data import SubjectDataset
from .errors import NumericError, SampleSizeError, ShapeError

__all__ = [
    "BackboneConfig",
    "Metrics",
    "init_params",
    "forward",
    "forward_nodes",
    "cross_entropy",
    "cross_entropy_node",
    "one_hot",
    "predict",
    "evaluate",
    "confusion_metrics",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class BackboneConfig:
    channels: int
    samples: int
    feature_dim: int = 32
    n_classes: int = 2
    hidden_widths: tuple[int, ...] = (64,)
    pool_factor: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.feature_dim < 2 or self.n_classes < 2:
            raise ShapeError("feature_dim and n_classes must both be >= 2")
        if any(w <= 0 for w in self.hidden_widths):
            raise ShapeError("hidden widths must be positive")
        if self.pool_factor < 1 or self.samples // self.pool_factor < 1:
            raise ShapeError("pool factor leaves no temporal samples")

    @property
    def input_dim(self) -> int:
        return self.channels * (self.samples // self.pool_factor)

    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden_widths, self.feature_dim]
        return list(zip(sizes[:-1], sizes[1:]))


def init_params(cfg: BackboneConfig) -> dict[str, np.ndarray]:
    """Seeded Glorot-uniform weights, zero biases. Bit-reproducible for a
    fixed config."""
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, np.ndarray] = {}
    for i, (fan_in, fan_out) in enumerate(cfg.layer_dims()):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"fc{i}_w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"fc{i}_b"] = np.zeros(fan_out)
    bound = np.sqrt(6.0 / (cfg.feature_dim + cfg.n_classes))
    params["cls_w"] = rng.uniform(-bound, bound, size=(cfg.feature_dim, cfg.n_classes))
    params["cls_b"] = np.zeros(cfg.n_classes)
    return params


def pool_flatten(cfg: BackboneConfig, batch: np.ndarray) -> np.ndarray:
    """Average-pool the time axis by the pooling factor, then flatten
    channel-major. Trailing samples that do not fill a window are dropped."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 2:
        batch = batch[None]
    if batch.ndim != 3 or batch.shape[1] != cfg.channels:
        raise ShapeError(
            f"expected batch of shape (B, {cfg.channels}, {cfg.samples}), "
            f"got {batch.shape}"
        )
    if batch.shape[2] != cfg.samples:
        raise ShapeError(
            f"trial length {batch.shape[2]} does not match config {cfg.samples}"
        )
    t_p = cfg.samples // cfg.pool_factor
    pooled = batch[:, :, : t_p * cfg.pool_factor]
    pooled = pooled.reshape(batch.shape[0], cfg.channels, t_p, cfg.pool_factor)
    pooled = pooled.mean(axis=3)
    return pooled.reshape(batch.shape[0], cfg.channels * t_p)


def forward_nodes(
    cfg: BackboneConfig, params: dict[str, ad.Node], batch: np.ndarray
) -> tuple[ad.Node, ad.Node]:
    """Differentiable forward pass. ``params`` are autodiff leaves; the
    pooled input is a constant (gradients are only needed for parameters
    and features)."""
    h: ad.Node = ad.constant(pool_flatten(cfg, batch), op="input")
    n_layers = len(cfg.hidden_widths) + 1
    for i in range(n_layers):
        h = ad.tanh(ad.add(ad.matmul(h, params[f"fc{i}_w"]), params[f"fc{i}_b"]))
        if not np.all(np.isfinite(h.value)):
            raise NumericError(f"non-finite activation after layer {i}")
    logits = ad.add(ad.matmul(h, params["cls_w"]), params["cls_b"])
    if not np.all(np.isfinite(logits.value)):
        raise NumericError("non-finite logits in classifier layer")
    return h, logits


def forward(
    cfg: BackboneConfig, params: dict[str, np.ndarray], batch: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Plain forward pass returning (features B x d, logits B x K)."""
    leaves = {k: ad.constant(v) for k, v in params.items()}
    feat, logits = forward_nodes(cfg, leaves, batch)
    return feat.value, logits.value


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """1-based labels to one-hot rows."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 1 or labels.max() > n_classes:
        raise ShapeError(f"labels must lie in 1..{n_classes}")
    out = np.zeros((labels.size, n_classes), dtype=np.float64)
    out[np.arange(labels.size), labels - 1] = 1.0
    return out


def cross_entropy_node(logits: ad.Node, targets: np.ndarray) -> ad.Node:
    """Mean cross-entropy between softmax(logits) and one-hot targets,
    stabilized through log-sum-exp."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.value.shape:
        raise ShapeError(
            f"one-hot targets {targets.shape} do not match logits {logits.value.shape}"
        )
    log_p = ad.log_softmax(logits)
    per_sample = ad.nsum(ad.mul(log_p, targets), axis=1)
    return ad.mul(ad.nmean(per_sample), -1.0)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float(cross_entropy_node(ad.constant(logits), targets).value)


def predict(
    cfg: BackboneConfig, params: dict[str, np.ndarray], batch: np.ndarray
) -> np.ndarray:
    """1-based argmax class labels."""
    _, logits = forward(cfg, params, batch)
    return np.argmax(logits, axis=1) + 1


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    chance: float
    kappa: float
    confusion: np.ndarray  # confusion[true - 1, predicted - 1]


def confusion_metrics(confusion: np.ndarray) -> Metrics:
    """Accuracy and Cohen's kappa from a (true x predicted) count matrix;
    chance agreement comes from the marginals."""
    confusion = np.asarray(confusion, dtype=np.int64)
    total = confusion.sum()
    if total == 0:
        raise SampleSizeError("empty confusion matrix")
    p_o = float(np.trace(confusion)) / total
    row = confusion.sum(axis=1) / total
    col = confusion.sum(axis=0) / total
    p_e = float(row @ col)
    if 1.0 - p_e <= 1e-15:
        kappa = 1.0 if p_o >= 1.0 - 1e-15 else 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return Metrics(accuracy=p_o, chance=p_e, kappa=kappa, confusion=confusion)


def evaluate(
    cfg: BackboneConfig, params: dict[str, np.ndarray], ds: SubjectDataset
) -> Metrics:
    """Accuracy, chance-corrected kappa, and the confusion matrix on a
    labeled dataset."""
    if len(ds) == 0:
        raise SampleSizeError(f"subject {ds.subject_id} has no trials")
    labels = ds.labels()
    preds = predict(cfg, params, ds.signals())
    k = cfg.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for true, pred in zip(labels, preds):
        confusion[true - 1, pred - 1] += 1
    return confusion_metrics(confusion)


def save_checkpoint(
    path, cfg: BackboneConfig, params: dict[str, np.ndarray]
) -> None:
    """Lossless 64-bit checkpoint: named parameter tensors plus the
    backbone config as a JSON side value."""
    payload = {f"param::{k}": np.asarray(v, dtype=np.float64) for k, v in params.items()}
    payload["config_json"] = np.frombuffer(
        json.dumps(asdict(cfg)).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[BackboneConfig, dict[str, np.ndarray]]:
    with np.load(path) as data:
        raw = json.loads(bytes(data["config_json"]).decode("utf-8"))
        raw["hidden_widths"] = tuple(raw["hidden_widths"])
        cfg = BackboneConfig(**raw)
        params = {
            key[len("param::") :]: data[key]
            for key in data.files
            if key.startswith("param::")
        }
    return cfg, params
