"""Miniature class-dependent viewpoint classifier and its trainer.

One shared affine trunk with a ReLU feeds one affine head per class; each
head emits the concatenated azimuth/elevation/inplane logits for the
configured bin layout. Inputs are flattened grayscale pixels of
downsampled images. Training is plain mini-batch SGD on the
distance-weighted loss, backpropagated through head and trunk by the
chain rule; only the head matching a sample's class ever receives
gradient, so a batch of class A leaves class B's head bit-identical.

The trunk is deliberately tiny: the mechanism under test is the loss,
the class-dependent heads, and the synthesized data, not the feature
extractor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geomloss import GROUPS, LossConfig, loss_backward
from .synthpipe import DatasetManifest
from .viewgeom import BinLayout, bin_center

__all__ = [
    "ToyModel",
    "TrainConfig",
    "forward",
    "predict",
    "train",
    "train_on_arrays",
    "model_loss_and_grads",
    "load_features",
    "save_model",
    "load_model",
]


@dataclass
class ToyModel:
    layout: BinLayout
    categories: list[str]
    input_size: int
    trunk_weights: np.ndarray  # (hidden, input_dim)
    trunk_bias: np.ndarray  # (hidden,)
    head_weights: np.ndarray  # (n_classes, total_bins, hidden)
    head_bias: np.ndarray  # (n_classes, total_bins)

    @property
    def n_classes(self) -> int:
        return len(self.categories)

    @property
    def input_dim(self) -> int:
        return self.input_size * self.input_size

    @property
    def hidden(self) -> int:
        return self.trunk_weights.shape[0]

    def __post_init__(self):
        total = self.layout.total_bins
        if self.head_weights.shape != (self.n_classes, total, self.hidden):
            raise ValueError("head weight shape does not match layout/classes")
        if self.trunk_weights.shape[1] != self.input_dim:
            raise ValueError("trunk width does not match input size")

    @classmethod
    def create(
        cls,
        layout: BinLayout,
        categories: list[str],
        input_size: int = 32,
        hidden: int = 64,
        seed: int = 0,
    ) -> "ToyModel":
        """Random initialization: scaled-Gaussian trunk, zero heads."""
        rng = np.random.default_rng(seed)
        input_dim = input_size * input_size
        return cls(
            layout=layout,
            categories=list(categories),
            input_size=input_size,
            trunk_weights=rng.normal(0.0, np.sqrt(2.0 / input_dim), (hidden, input_dim)),
            trunk_bias=np.zeros(hidden),
            head_weights=np.zeros((len(categories), layout.total_bins, hidden)),
            head_bias=np.zeros((len(categories), layout.total_bins)),
        )

    def copy(self) -> "ToyModel":
        return ToyModel(
            layout=self.layout,
            categories=list(self.categories),
            input_size=self.input_size,
            trunk_weights=self.trunk_weights.copy(),
            trunk_bias=self.trunk_bias.copy(),
            head_weights=self.head_weights.copy(),
            head_bias=self.head_bias.copy(),
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    sigma: float = 1.0
    layout: BinLayout = field(default_factory=BinLayout)
    source_weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning rate, epochs, and batch size must be positive")

    def loss_config(self) -> LossConfig:
        return LossConfig(sigma=self.sigma, layout=self.layout)


def _group_slices(layout: BinLayout):
    a, e = layout.azimuth_bins, layout.elevation_bins
    return (
        slice(0, a),
        slice(a, a + e),
        slice(a + e, a + e + layout.inplane_bins),
    )


def forward(model: ToyModel, features: np.ndarray, class_id: int):
    """Per-group logits of one class head; returns (azimuth, elevation, inplane)."""
    if not 0 <= class_id < model.n_classes:
        raise ValueError(f"unknown class id {class_id}")
    features = np.asarray(features, dtype=float).reshape(-1)
    if features.size != model.input_dim:
        raise ValueError(
            f"expected {model.input_dim} features, got {features.size}"
        )
    hidden = np.maximum(0.0, model.trunk_weights @ features + model.trunk_bias)
    logits = model.head_weights[class_id] @ hidden + model.head_bias[class_id]
    return tuple(logits[s] for s in _group_slices(model.layout))


def predict(model: ToyModel, features: np.ndarray, class_id: int):
    """Viewpoint at the argmax bin centers, plus per-group probabilities.

    Ties at the argmax resolve to the lowest bin index. The probability
    vectors are suitable for top-k proposal scoring.
    """
    groups = forward(model, features, class_id)
    probs = []
    bins = []
    for logits in groups:
        shifted = np.exp(logits - logits.max())
        probs.append(shifted / shifted.sum())
        bins.append(int(np.argmax(logits)))
    viewpoint = bin_center(tuple(bins), model.layout)
    return viewpoint, tuple(probs)


def model_loss_and_grads(
    model: ToyModel,
    features: np.ndarray,
    class_ids,
    gt_bins,
    config: LossConfig,
    sample_weights=None,
):
    """Mean loss over a batch and gradients for every parameter array.

    Returns (loss, grads) with grads keyed like the parameter attributes.
    Heads of classes absent from the batch get exactly zero gradient.
    """
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    if sample_weights is None:
        sample_weights = np.ones(n)
    grads = {
        "trunk_weights": np.zeros_like(model.trunk_weights),
        "trunk_bias": np.zeros_like(model.trunk_bias),
        "head_weights": np.zeros_like(model.head_weights),
        "head_bias": np.zeros_like(model.head_bias),
    }
    slices = _group_slices(model.layout)
    total = 0.0
    for x, class_id, bins, weight in zip(features, class_ids, gt_bins, sample_weights):
        pre = model.trunk_weights @ x + model.trunk_bias
        hidden = np.maximum(0.0, pre)
        logits = model.head_weights[class_id] @ hidden + model.head_bias[class_id]
        grad_logits = np.zeros_like(logits)
        for group, gt_bin, s in zip(GROUPS, bins, slices):
            out = loss_backward(logits[s], gt_bin, config, group)
            total += weight * out.loss
            grad_logits[s] = weight * out.grad_logits
        grads["head_weights"][class_id] += np.outer(grad_logits, hidden)
        grads["head_bias"][class_id] += grad_logits
        grad_hidden = model.head_weights[class_id].T @ grad_logits
        grad_pre = grad_hidden * (pre > 0.0)
        grads["trunk_weights"] += np.outer(grad_pre, x)
        grads["trunk_bias"] += grad_pre
    for key in grads:
        grads[key] /= n
    return total / n, grads


def train_on_arrays(
    model: ToyModel,
    features: np.ndarray,
    class_ids,
    gt_bins,
    config: TrainConfig,
    sample_weights=None,
):
    """In-place mini-batch SGD; returns the per-epoch mean loss history."""
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    if n == 0:
        raise ValueError("no training samples")
    class_ids = np.asarray(class_ids)
    gt_bins = list(gt_bins)
    if sample_weights is None:
        sample_weights = np.ones(n)
    sample_weights = np.asarray(sample_weights, dtype=float)
    loss_config = config.loss_config()
    rng = np.random.default_rng(config.seed)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = model_loss_and_grads(
                model,
                features[batch],
                class_ids[batch],
                [gt_bins[i] for i in batch],
                loss_config,
                sample_weights[batch],
            )
            epoch_loss += loss * batch.size
            model.trunk_weights -= config.learning_rate * grads["trunk_weights"]
            model.trunk_bias -= config.learning_rate * grads["trunk_bias"]
            model.head_weights -= config.learning_rate * grads["head_weights"]
            model.head_bias -= config.learning_rate * grads["head_bias"]
        history.append(epoch_loss / n)
    return history


def image_features(path: str | Path, input_size: int) -> np.ndarray:
    """Grayscale pixels downsampled to input_size^2, scaled to [0, 1]."""
    try:
        with Image.open(path) as img:
            small = img.convert("L").resize(
                (input_size, input_size), Image.Resampling.BILINEAR
            )
    except FileNotFoundError:
        raise
    except Exception as err:
        raise ValueError(f"cannot decode image {path}: {err}") from None
    return np.asarray(small, dtype=float).reshape(-1) / 255.0


def load_features(
    manifest: DatasetManifest,
    images_dir: str | Path,
    model: ToyModel,
    source_weights: dict[str, float] | None = None,
):
    """Features, class ids, bin labels, and weights for every record."""
    images_dir = Path(images_dir)
    source_weights = source_weights or {}
    class_index = {c: i for i, c in enumerate(model.categories)}
    features = []
    class_ids = []
    gt_bins = []
    weights = []
    for record in manifest.records:
        category = record["category"]
        if category not in class_index:
            raise ValueError(f"manifest category {category!r} not in model classes")
        features.append(image_features(images_dir / record["image"], model.input_size))
        class_ids.append(class_index[category])
        gt_bins.append(
            (record["azimuth_bin"], record["elevation_bin"], record["inplane_bin"])
        )
        weights.append(source_weights.get(record.get("source", "synthetic"), 1.0))
    return np.array(features), np.array(class_ids), gt_bins, np.array(weights)


def train(
    model: ToyModel,
    manifest: DatasetManifest,
    config: TrainConfig,
    images_dir: str | Path,
):
    """Train on a synthesized dataset; returns the loss history."""
    features, class_ids, gt_bins, weights = load_features(
        manifest, images_dir, model, config.source_weights
    )
    return train_on_arrays(model, features, class_ids, gt_bins, config, weights)


def save_model(model: ToyModel, path: str | Path) -> None:
    doc = {
        "layout": {
            "azimuth_bins": model.layout.azimuth_bins,
            "elevation_bins": model.layout.elevation_bins,
            "inplane_bins": model.layout.inplane_bins,
        },
        "categories": model.categories,
        "input_size": model.input_size,
        "trunk_weights": model.trunk_weights.tolist(),
        "trunk_bias": model.trunk_bias.tolist(),
        "head_weights": model.head_weights.tolist(),
        "head_bias": model.head_bias.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> ToyModel:
    doc = json.loads(Path(path).read_text())
    return ToyModel(
        layout=BinLayout(**doc["layout"]),
        categories=list(doc["categories"]),
        input_size=int(doc["input_size"]),
        trunk_weights=np.array(doc["trunk_weights"]),
        trunk_bias=np.array(doc["trunk_bias"]),
        head_weights=np.array(doc["head_weights"]),
        head_bias=np.array(doc["head_bias"]),
    )
