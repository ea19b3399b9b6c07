"""Dense-network materialization and partial-training evaluation.

Genotypes made of fully connected and dropout layers are turned into plain
numpy networks, trained for a configurable (typically small) number of
epochs, and scored on a held-out split. The short-training score is what
the search loop uses as fitness input; the same machinery also does full
training and k-fold assessment of finished candidates.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import data as data_mod
from .genotype import (
    Activation,
    Genotype,
    GenotypeError,
    LayerKind,
    ProblemKind,
    count_params,
    from_dict,
    to_dict,
    validate,
)

log = logging.getLogger(__name__)


class Metric(str, Enum):
    ACCURACY = "accuracy"
    PRECISION = "precision"
    RECALL = "recall"
    F1 = "f1"
    MSE = "mse"
    RMSE = "rmse"


#: Metrics where larger is better (scores); the rest are error magnitudes.
SCORE_METRICS = frozenset({Metric.ACCURACY, Metric.PRECISION, Metric.RECALL, Metric.F1})


class Loss(str, Enum):
    CATEGORICAL_CROSS_ENTROPY = "categorical_cross_entropy"
    MEAN_SQUARED_ERROR = "mean_squared_error"


class UnsupportedLayerError(GenotypeError):
    """The training backend cannot materialize a layer kind."""


class DivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class UndefinedMetricWarning(UserWarning):
    """A metric ratio had a zero denominator and was reported as 0."""


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float = 0.001
    optimizer: str = "adam"
    loss: Loss = Loss.CATEGORICAL_CROSS_ENTROPY
    metric: Metric = Metric.ACCURACY
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        self.loss = Loss(self.loss)
        self.metric = Metric(self.metric)
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        # classification pairs with cross-entropy, regression with MSE
        if self.loss == Loss.CATEGORICAL_CROSS_ENTROPY and self.metric not in SCORE_METRICS:
            raise ValueError("cross-entropy loss pairs with classification metrics")
        if self.loss == Loss.MEAN_SQUARED_ERROR and self.metric in SCORE_METRICS:
            raise ValueError("squared-error loss pairs with regression metrics")

    @classmethod
    def for_problem(cls, problem: ProblemKind, epochs: int, **kw) -> "TrainConfig":
        if problem == ProblemKind.CLASSIFICATION:
            return cls(epochs, loss=Loss.CATEGORICAL_CROSS_ENTROPY, metric=Metric.ACCURACY, **kw)
        return cls(epochs, loss=Loss.MEAN_SQUARED_ERROR, metric=Metric.MSE, **kw)


@dataclass
class PerfReport:
    value: float
    loss_curve: list[float]
    wall_time: float


# --- network ----------------------------------------------------------------

def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z, kind: Activation):
    if kind == Activation.SIGMOID:
        return _sigmoid(z)
    if kind == Activation.TANH:
        return np.tanh(z)
    if kind == Activation.RELU:
        return np.maximum(z, 0.0)
    if kind == Activation.SOFTMAX:
        return _softmax(z)
    return z  # linear


def _activation_grad(z, a, kind: Activation):
    # Derivative of the activation w.r.t. its input, from cached values.
    if kind == Activation.SIGMOID:
        return a * (1.0 - a)
    if kind == Activation.TANH:
        return 1.0 - a * a
    if kind == Activation.RELU:
        return (z > 0.0).astype(z.dtype)
    if kind == Activation.LINEAR:
        return np.ones_like(z)
    raise ValueError(f"no elementwise gradient for {kind}")


class _DenseLayer:
    def __init__(self, W: np.ndarray, b: np.ndarray, activation: Activation):
        self.W = W
        self.b = b
        self.activation = activation


class _DropoutLayer:
    def __init__(self, rate: float):
        self.rate = rate


class DenseNetwork:
    """A stack of affine+activation layers with optional inverted dropout."""

    def __init__(self, layers, input_dim: int):
        self.layers = layers
        self.input_dim = input_dim

    @property
    def param_count(self) -> int:
        return sum(
            layer.W.size + layer.b.size
            for layer in self.layers
            if isinstance(layer, _DenseLayer)
        )

    @property
    def output_units(self) -> int:
        for layer in reversed(self.layers):
            if isinstance(layer, _DenseLayer):
                return layer.b.size
        raise ValueError("network has no dense layers")

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if isinstance(layer, _DenseLayer):
                out.extend((layer.W, layer.b))
        return out

    def forward(self, batch: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        """Predictions for a batch; dropout is active only while training."""
        a, _ = self._forward_cached(batch, training, rng)
        return a

    def _forward_cached(self, batch, training, rng):
        X = np.asarray(batch, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.input_dim:
            raise ValueError(
                f"batch feature width {X.shape[1]} does not match input dim {self.input_dim}"
            )
        a = X
        caches = []
        for layer in self.layers:
            if isinstance(layer, _DenseLayer):
                z = a @ layer.W + layer.b
                out = _activate(z, layer.activation)
                caches.append((layer, a, z, out))
                a = out
            else:
                if training and layer.rate > 0.0:
                    if rng is None:
                        raise ValueError("training-mode dropout needs an rng")
                    if layer.rate >= 1.0:
                        mask = np.zeros_like(a)
                    else:
                        keep = rng.random(a.shape) >= layer.rate
                        mask = keep / (1.0 - layer.rate)
                    a = a * mask
                else:
                    mask = None
                caches.append((layer, mask))
        return a, caches


def materialize(g: Genotype, input_dim: int, seed: int) -> DenseNetwork:
    """Build the network a dense genotype describes, Glorot-initialized from ``seed``."""
    report = validate(g)
    if not report.ok:
        raise GenotypeError(f"cannot materialize invalid genotype: {report.summary()}")
    for i, gene in enumerate(g.layers):
        if gene.kind not in (LayerKind.FULLY_CONNECTED, LayerKind.DROPOUT):
            raise UnsupportedLayerError(
                f"layer {i}: {gene.kind.label()} layers have no training backend here"
            )
    rng = np.random.default_rng(seed)
    layers = []
    fan = int(input_dim)
    for gene in g.layers:
        if gene.kind == LayerKind.FULLY_CONNECTED:
            limit = np.sqrt(6.0 / (fan + gene.units))
            W = rng.uniform(-limit, limit, size=(fan, gene.units))
            b = np.zeros(gene.units)
            layers.append(_DenseLayer(W, b, gene.activation))
            fan = gene.units
        else:
            layers.append(_DropoutLayer(gene.dropout_rate))
    net = DenseNetwork(layers, int(input_dim))
    assert net.param_count == count_params(g, int(input_dim))
    return net


# --- loss and gradients -----------------------------------------------------

def _loss_value(outputs: np.ndarray, Y: np.ndarray, loss: Loss) -> float:
    n = len(outputs)
    if loss == Loss.CATEGORICAL_CROSS_ENTROPY:
        return float(-np.sum(Y * np.log(np.clip(outputs, 1e-12, 1.0))) / n)
    return float(0.5 * np.sum((outputs - Y) ** 2) / n)


def loss_and_gradients(net: DenseNetwork, X, Y, loss: Loss, training=False, rng=None):
    """Loss on a batch and its gradient for every weight matrix and bias."""
    outputs, caches = net._forward_cached(X, training, rng)
    n = len(outputs)
    value = _loss_value(outputs, Y, loss)

    last = caches[-1]
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    if loss == Loss.CATEGORICAL_CROSS_ENTROPY:
        layer = last[0]
        if not isinstance(layer, _DenseLayer) or layer.activation != Activation.SOFTMAX:
            raise ValueError("cross-entropy training expects a softmax output layer")
        delta = (outputs - Y) / n  # d loss / d logits, softmax and CE fused
    else:
        dA = (outputs - Y) / n
        layer, _, z, a = last
        delta = dA * _activation_grad(z, a, layer.activation)

    d_prev = None
    for cache in reversed(caches):
        layer = cache[0]
        if isinstance(layer, _DenseLayer):
            if d_prev is not None:
                _, _, z, a = cache
                delta = d_prev * _activation_grad(z, a, layer.activation)
            a_in = cache[1]
            grads.append((a_in.T @ delta, delta.sum(axis=0)))
            d_prev = delta @ layer.W.T
            delta = None
        else:
            mask = cache[1]
            if mask is not None:
                d_prev = d_prev * mask
    grads.reverse()
    flat: list[np.ndarray] = []
    for gW, gb in grads:
        flat.extend((gW, gb))
    return value, flat


class _Sgd:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * correction * m / (np.sqrt(v) + self.eps)


def make_optimizer(name: str, params, lr: float):
    return _Adam(params, lr) if name == "adam" else _Sgd(params, lr)


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"labels outside 0..{classes - 1}")
    return np.eye(classes)[labels]


def _target_matrix(net: DenseNetwork, ds: data_mod.Dataset) -> np.ndarray:
    if ds.problem == ProblemKind.CLASSIFICATION:
        return one_hot(ds.targets, net.output_units)
    return ds.targets.reshape(-1, 1)


def train(net: DenseNetwork, dataset_split, cfg: TrainConfig) -> PerfReport:
    """Minibatch-train a network and score it on the validation split.

    ``dataset_split`` is a ``(train, validation)`` pair of datasets. All
    randomness (shuffling, dropout masks) flows from ``cfg.seed``, so the
    result is deterministic.
    """
    train_ds, val_ds = dataset_split
    Y = _target_matrix(net, train_ds)
    X = train_ds.features
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(cfg.optimizer, net.parameters(), cfg.learning_rate)

    started = time.perf_counter()
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(X))
        epoch_losses = []
        for at in range(0, len(X), cfg.batch_size):
            idx = perm[at : at + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                value, grads = loss_and_gradients(
                    net, X[idx], Y[idx], cfg.loss, training=True, rng=rng
                )
            if not np.isfinite(value):
                raise DivergedError(epoch)
            optimizer.step(grads)
            epoch_losses.append(value)
        curve.append(float(np.mean(epoch_losses)))

    preds = net.forward(val_ds.features, training=False)
    if val_ds.problem == ProblemKind.REGRESSION:
        preds = preds[:, 0]
    value = metric(cfg.metric, preds, val_ds.targets)
    return PerfReport(value, curve, time.perf_counter() - started)


# --- metrics ----------------------------------------------------------------

def _ratio(num: float, den: float, name: str) -> float:
    if den == 0:
        warnings.warn(f"{name} undefined (zero denominator), reporting 0", UndefinedMetricWarning)
        return 0.0
    return num / den


def _binary_prf(labels: np.ndarray, targets: np.ndarray) -> tuple[float, float, float]:
    tp = float(np.sum((labels == 1) & (targets == 1)))
    fp = float(np.sum((labels == 1) & (targets != 1)))
    fn = float(np.sum((labels != 1) & (targets == 1)))
    precision = _ratio(tp, tp + fp, "precision")
    recall = _ratio(tp, tp + fn, "recall")
    f1 = _ratio(2.0 * precision * recall, precision + recall, "f1")
    return precision, recall, f1


def metric(kind: Metric, predictions, targets) -> float:
    """Score predictions against targets.

    Classification metrics accept probability rows or already-argmaxed
    labels. Precision/recall/F1 use class 1 as the positive class for
    binary targets and macro-average one-vs-rest otherwise; a ratio with a
    zero denominator is reported as 0 with an ``UndefinedMetricWarning``.
    """
    kind = Metric(kind)
    preds = np.asarray(predictions)
    targets = np.asarray(targets)
    if len(preds) != len(targets):
        raise ValueError("predictions and targets differ in length")
    if kind in (Metric.MSE, Metric.RMSE):
        diff = preds.astype(np.float64).reshape(len(preds), -1) - targets.astype(
            np.float64
        ).reshape(len(targets), -1)
        per_sample = np.sum(diff**2, axis=1)
        if kind == Metric.MSE:
            return float(0.5 * per_sample.mean())
        return float(np.sqrt(per_sample.mean()))

    labels = preds.argmax(axis=1) if preds.ndim == 2 and preds.shape[1] > 1 else preds
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    targets = targets.astype(np.int64)
    if kind == Metric.ACCURACY:
        return float(np.mean(labels == targets))
    classes = np.unique(targets)
    if len(classes) <= 2:
        p, r, f1 = _binary_prf(labels, targets)
    else:
        per = [
            _binary_prf((labels == c).astype(int), (targets == c).astype(int))
            for c in classes
        ]
        p, r, f1 = (float(np.mean([row[i] for row in per])) for i in range(3))
    return {Metric.PRECISION: p, Metric.RECALL: r, Metric.F1: f1}[kind]


def kfold_evaluate(g: Genotype, dataset: data_mod.Dataset, k: int, cfg: TrainConfig):
    """Mean and standard deviation of the metric over k train/validate folds.

    Every fold trains a fresh materialization from the same seed, so the
    only variation between folds is the data split itself.
    """
    folds = data_mod.kfold(dataset, k, cfg.seed)
    all_idx = np.arange(dataset.sample_count)
    values = []
    for i, fold in enumerate(folds):
        train_idx = np.setdiff1d(all_idx, fold)
        net = materialize(g, dataset.feature_count, cfg.seed)
        report = train(net, (dataset.take(train_idx), dataset.take(fold)), cfg)
        values.append(report.value)
        log.debug("fold %d/%d: %s=%.4f", i + 1, k, cfg.metric.value, report.value)
    return float(np.mean(values)), float(np.std(values))


# --- search-facing evaluator -------------------------------------------------

def make_evaluator(
    dataset: data_mod.Dataset,
    problem: ProblemKind,
    input_dim: int,
    cv_ratio: float,
    epochs: int,
    learning_rate: float = 0.001,
    batch_size: int = 512,
    split_seed: int = 0,
):
    """Partial-training fitness evaluator for the search loop.

    The train/validation split is fixed once from ``split_seed``; each
    candidate's weights and shuffle stream come from the per-candidate seed,
    so evaluation order and parallelism cannot change any result. Returns a
    ``(validation metric, parameter count)`` pair.
    """
    split_pair = data_mod.split(dataset, cv_ratio, split_seed)

    def evaluate(genotype: Genotype, seed: int) -> tuple[float, int]:
        net = materialize(genotype, input_dim, seed)
        cfg = TrainConfig.for_problem(
            problem,
            epochs,
            learning_rate=learning_rate,
            batch_size=batch_size,
            seed=seed,
        )
        report = train(net, split_pair, cfg)
        return report.value, net.param_count

    return evaluate


# --- model export -------------------------------------------------------------

def save_model(net: DenseNetwork, g: Genotype, history: list[float], base_path) -> tuple[Path, Path]:
    """Write ``<base>.json`` (header) and ``<base>.bin`` (little-endian f32 params).

    Parameters are flattened in layer order, each layer's weights before its
    biases.
    """
    base = Path(base_path)
    header = {
        "genotype": to_dict(g),
        "input_dim": net.input_dim,
        "shapes": [
            list(layer.W.shape)
            for layer in net.layers
            if isinstance(layer, _DenseLayer)
        ],
        "loss_history": history,
        "param_count": net.param_count,
    }
    json_path = base.with_suffix(".json")
    bin_path = base.with_suffix(".bin")
    json_path.write_text(json.dumps(header, indent=2))
    blob = bytearray()
    for layer in net.layers:
        if isinstance(layer, _DenseLayer):
            blob += layer.W.astype("<f4").tobytes()
            blob += layer.b.astype("<f4").tobytes()
    bin_path.write_bytes(bytes(blob))
    return json_path, bin_path


def load_model(base_path) -> tuple[Genotype, DenseNetwork, dict]:
    """Inverse of :func:`save_model`."""
    base = Path(base_path)
    header = json.loads(base.with_suffix(".json").read_text())
    g = from_dict(header["genotype"])
    blob = base.with_suffix(".bin").read_bytes()
    net = materialize(g, header["input_dim"], seed=0)
    floats = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    expected = net.param_count
    if floats.size != expected:
        raise ValueError(f"parameter blob has {floats.size} floats, header promises {expected}")
    at = 0
    for layer in net.layers:
        if isinstance(layer, _DenseLayer):
            w_n = layer.W.size
            layer.W = floats[at : at + w_n].reshape(layer.W.shape)
            at += w_n
            b_n = layer.b.size
            layer.b = floats[at : at + b_n].copy()
            at += b_n
    return g, net, header
