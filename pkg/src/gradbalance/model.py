"""Small differentiable classifiers with exact closed-form gradients.

Two model kinds: a linear softmax classifier and a one-hidden-layer MLP.
Parameters live in a single flat float64 vector whose layout is derived from
the config, so gradients, checkpoints, and similarity computations all share
one representation. Loss is mean cross entropy with log-sum-exp
stabilization; per-class losses and gradients are per-class means, which
keeps head and tail gradients magnitude-comparable.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError

KINDS = ("linear-softmax", "one-hidden-layer")
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    feature_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: str = "relu"
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.feature_dim < 1 or self.num_classes < 2:
            raise ValidationError("feature_dim must be >= 1 and num_classes >= 2")
        if self.kind == "one-hidden-layer" and self.hidden_dim < 1:
            raise ValidationError("one-hidden-layer model needs hidden_dim >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {ACTIVATIONS}")
        if self.init_scale <= 0:
            raise ValidationError("init_scale must be positive")


@dataclass(frozen=True)
class ClassGradient:
    """Mean loss and mean parameter gradient of one class's samples."""

    class_id: int
    grad: np.ndarray = field(repr=False)
    sample_count: int
    loss: float


def param_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Named shapes of the flat parameter vector, in storage order."""
    d, k, h = config.feature_dim, config.num_classes, config.hidden_dim
    if config.kind == "linear-softmax":
        return [("W", (k, d)), ("b", (k,))]
    return [("W1", (h, d)), ("b1", (h,)), ("W2", (k, h)), ("b2", (k,))]


def num_params(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(config))


def unpack(params: np.ndarray, config: ModelConfig) -> dict[str, np.ndarray]:
    """Views into the flat vector, keyed by layout name."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (num_params(config),):
        raise DimensionError(
            f"parameter vector has length {params.shape}, expected ({num_params(config)},)"
        )
    out, offset = {}, 0
    for name, shape in param_layout(config):
        size = int(np.prod(shape))
        out[name] = params[offset : offset + size].reshape(shape)
        offset += size
    return out


def last_layer_slice(config: ModelConfig) -> slice:
    """Flat-vector slice covering the final linear layer (weights and bias)."""
    if config.kind == "linear-softmax":
        return slice(0, num_params(config))
    start = config.hidden_dim * config.feature_dim + config.hidden_dim
    return slice(start, num_params(config))


def init_params(config: ModelConfig) -> np.ndarray:
    """Seeded init: biases zero, weights uniform in +-init_scale/sqrt(fan_in)."""
    rng = np.random.default_rng(config.seed)
    parts = []
    for name, shape in param_layout(config):
        if name.startswith("b"):
            parts.append(np.zeros(int(np.prod(shape))))
        else:
            fan_in = shape[1]
            s = config.init_scale / np.sqrt(fan_in)
            parts.append(rng.uniform(-s, s, size=int(np.prod(shape))))
    return np.concatenate(parts)


def forward(params: np.ndarray, config: ModelConfig, features: np.ndarray) -> np.ndarray:
    """Logits (N x K) for a feature matrix (N x d)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.feature_dim:
        raise DimensionError(
            f"features have shape {x.shape}, expected (*, {config.feature_dim})"
        )
    p = unpack(params, config)
    if config.kind == "linear-softmax":
        return x @ p["W"].T + p["b"]
    pre = x @ p["W1"].T + p["b1"]
    hidden = np.maximum(pre, 0.0) if config.activation == "relu" else np.tanh(pre)
    return hidden @ p["W2"].T + p["b2"]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def per_example_losses(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Negative log softmax probability of each sample's true class."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValidationError("labels out of range for logits")
    return -_log_softmax(logits)[np.arange(len(labels)), labels]


def ce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over the batch."""
    return float(per_example_losses(logits, labels).mean())


def loss_and_grad(
    params: np.ndarray,
    config: ModelConfig,
    features: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Weighted-mean CE loss and its flat gradient.

    ``sample_weights`` defaults to uniform; they are normalized by the batch
    size, so the unweighted call is the plain mean over samples.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise ValidationError("batch is empty")
    if x.ndim != 2 or x.shape[1] != config.feature_dim:
        raise DimensionError(
            f"features have shape {x.shape}, expected (*, {config.feature_dim})"
        )
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)

    p = unpack(params, config)
    if config.kind == "linear-softmax":
        logits = x @ p["W"].T + p["b"]
    else:
        pre = x @ p["W1"].T + p["b1"]
        hidden = np.maximum(pre, 0.0) if config.activation == "relu" else np.tanh(pre)
        logits = hidden @ p["W2"].T + p["b2"]

    losses = per_example_losses(logits, y)
    loss = float((w * losses).sum() / n)

    dz = softmax(logits)
    dz[np.arange(n), y] -= 1.0
    dz *= (w / n)[:, None]

    if config.kind == "linear-softmax":
        grad = np.concatenate([(dz.T @ x).ravel(), dz.sum(axis=0)])
    else:
        dh = dz @ p["W2"]
        if config.activation == "relu":
            da = dh * (pre > 0)
        else:
            da = dh * (1.0 - hidden**2)
        grad = np.concatenate(
            [(da.T @ x).ravel(), da.sum(axis=0), (dz.T @ hidden).ravel(), dz.sum(axis=0)]
        )
    return loss, grad


def batch_gradient(
    params: np.ndarray, config: ModelConfig, features: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Gradient of the mean CE loss over the batch."""
    return loss_and_grad(params, config, features, labels)[1]


def per_class_losses(
    params: np.ndarray, config: ModelConfig, features: np.ndarray, labels: np.ndarray
) -> dict[int, float]:
    """Mean loss per class present in the batch (forward pass only)."""
    logits = forward(params, config, features)
    losses = per_example_losses(logits, np.asarray(labels, dtype=np.int64))
    y = np.asarray(labels)
    return {int(c): float(losses[y == c].mean()) for c in np.unique(y)}


def per_class_gradients(
    params: np.ndarray, config: ModelConfig, features: np.ndarray, labels: np.ndarray
) -> list[ClassGradient]:
    """Mean loss and gradient for each class present in the batch.

    Classes absent from the batch are omitted. The count-weighted average of
    the returned gradients reconstructs the batch gradient exactly.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise ValidationError("batch is empty")
    out = []
    for c in np.unique(y):
        mask = y == c
        loss, grad = loss_and_grad(params, config, x[mask], y[mask])
        out.append(
            ClassGradient(
                class_id=int(c), grad=grad, sample_count=int(mask.sum()), loss=loss
            )
        )
    return out


def predict(params: np.ndarray, config: ModelConfig, features: np.ndarray) -> np.ndarray:
    return np.argmax(forward(params, config, features), axis=1)


def save_checkpoint(path, params: np.ndarray, config: ModelConfig) -> None:
    """JSON checkpoint: model config, layout header, flat float64 values."""
    doc = {
        "model": {
            "kind": config.kind,
            "feature_dim": config.feature_dim,
            "num_classes": config.num_classes,
            "hidden_dim": config.hidden_dim,
            "activation": config.activation,
            "init_scale": config.init_scale,
            "seed": config.seed,
        },
        "layout": [[name, list(shape)] for name, shape in param_layout(config)],
        "values": [float(v) for v in np.asarray(params, dtype=np.float64)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[np.ndarray, ModelConfig]:
    with open(path) as fh:
        doc = json.load(fh)
    config = ModelConfig(**doc["model"])
    params = np.asarray(doc["values"], dtype=np.float64)
    if params.shape != (num_params(config),):
        raise ValidationError(
            f"checkpoint has {params.shape[0]} values, layout expects {num_params(config)}"
        )
    return params, config
