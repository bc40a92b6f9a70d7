"""Distance-weighted softmax classification loss over viewpoint bins.

Instead of penalizing only the log-probability of the ground-truth bin,
the loss weights every bin's log-probability by exp(-d/sigma), where d is
the viewpoint distance (radians) between that bin's center and the
ground-truth bin's center:

    L = -sum_v exp(-d(v, gt)/sigma) * log p_v,    p = softmax(logits)

so probability mass assigned to nearby views is penalized less than mass
far away. The analytic gradient w.r.t. the logits is

    dL/dz_k = p_k * sum_v w_v - w_k.

Each of the three angle groups (azimuth, elevation, in-plane) has its own
head and its own weight table; azimuth and in-plane distances wrap, while
elevation distance is linear on [-90, 90].
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .viewgeom import BinLayout, ViewpointTuple, viewpoint_distance

__all__ = [
    "LossConfig",
    "WeightTable",
    "LossOutput",
    "GROUPS",
    "softmax",
    "build_weight_table",
    "loss_forward",
    "loss_backward",
    "batch_loss",
]

GROUPS = ("azimuth", "elevation", "inplane")


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters.

    sigma is the exponential decay scale, in radians of viewpoint distance
    (sigma = 1 spans roughly 57 degrees). weight_floor sparsifies the
    weight table: entries below it are truncated to zero. The default
    floor of 0 keeps the exact dense weighting.
    """

    sigma: float = 1.0
    layout: BinLayout = BinLayout()
    weight_floor: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.weight_floor < 1.0:
            raise ValueError(f"weight_floor must be in [0, 1), got {self.weight_floor}")

    def group_bins(self, group: str) -> int:
        if group not in GROUPS:
            raise ValueError(f"unknown angle group {group!r}")
        return getattr(self.layout, f"{group}_bins")


@dataclass(frozen=True)
class WeightTable:
    """Pairwise bin-center weights for one angle group.

    weights[v, s] = exp(-d(center_v, center_s)/sigma), truncated to zero
    below the configured floor. The diagonal is exactly 1. Column s is the
    weight vector for ground-truth bin s (the matrix is symmetric because
    the viewpoint distance is).
    """

    group: str
    weights: np.ndarray

    def column(self, gt_bin: int) -> np.ndarray:
        n = self.weights.shape[0]
        if not 0 <= gt_bin < n:
            raise IndexError(f"gt_bin {gt_bin} out of range [0, {n})")
        return self.weights[:, gt_bin]


@dataclass(frozen=True)
class LossOutput:
    loss: float
    grad_logits: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax; probabilities sum to 1 within 1e-12."""
    logits = np.asarray(logits, dtype=float)
    if logits.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


@lru_cache(maxsize=32)
def _weight_matrix(config: LossConfig, group: str) -> np.ndarray:
    n = config.group_bins(group)
    if group == "azimuth":
        width = config.layout.azimuth_width
        centers = [ViewpointTuple((k + 0.5) * width, 0.0, 0.0) for k in range(n)]
    elif group == "elevation":
        width = config.layout.elevation_width
        centers = [
            ViewpointTuple(0.0, -90.0 + (k + 0.5) * width, 0.0) for k in range(n)
        ]
    else:
        width = config.layout.inplane_width
        centers = [
            ViewpointTuple(0.0, 0.0, -180.0 + (k + 0.5) * width) for k in range(n)
        ]
    weights = np.empty((n, n))
    for i in range(n):
        weights[i, i] = 1.0
        for j in range(i + 1, n):
            w = np.exp(-viewpoint_distance(centers[i], centers[j]) / config.sigma)
            weights[i, j] = w
            weights[j, i] = w
    if config.weight_floor > 0.0:
        weights[weights < config.weight_floor] = 0.0
    weights.flags.writeable = False
    return weights


def build_weight_table(config: LossConfig, group: str = "azimuth") -> WeightTable:
    """Weight table for one angle group of the configured layout (cached)."""
    return WeightTable(group=group, weights=_weight_matrix(config, group))


def loss_forward(
    logits: np.ndarray, gt_bin: int, config: LossConfig, group: str = "azimuth"
) -> float:
    """Weighted negative log-likelihood of one angle group's logits."""
    logits = np.asarray(logits, dtype=float)
    n = config.group_bins(group)
    if logits.shape != (n,):
        raise ValueError(f"expected {n} {group} logits, got shape {logits.shape}")
    weights = build_weight_table(config, group).column(gt_bin)
    shifted = logits - logits.max()
    log_probs = shifted - np.log(np.exp(shifted).sum())
    return float(-(weights @ log_probs))


def loss_backward(
    logits: np.ndarray, gt_bin: int, config: LossConfig, group: str = "azimuth"
) -> LossOutput:
    """Loss value and analytic gradient w.r.t. the logits.

    The gradient entries always sum to zero: sum_k (p_k * W - w_k) with
    W = sum_v w_v gives W - W = 0.
    """
    loss = loss_forward(logits, gt_bin, config, group)
    weights = build_weight_table(config, group).column(gt_bin)
    probs = softmax(logits)
    grad = probs * weights.sum() - weights
    return LossOutput(loss=loss, grad_logits=grad)


def _split_groups(head_logits: np.ndarray, layout: BinLayout):
    a, e = layout.azimuth_bins, layout.elevation_bins
    return head_logits[:a], head_logits[a : a + e], head_logits[a + e :]


def batch_loss(
    samples: list[tuple[np.ndarray, int, tuple[int, int, int]]],
    config: LossConfig,
    sample_weights: list[float] | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Class-masked loss over a batch.

    Each sample is (head_logits, class_label, gt_bins), where head_logits
    has shape (num_classes, total_bins) holding every class head's
    concatenated azimuth/elevation/inplane logits, and gt_bins is the
    (azimuth, elevation, inplane) bin triple. Only the head matching the
    sample's class contributes loss; gradients for all other heads are
    exactly zero. Optional sample_weights multiply each sample's loss and
    gradient (defaults to 1.0).

    Returns the total loss and one gradient array per sample, shaped like
    its head_logits.
    """
    layout = config.layout
    if sample_weights is None:
        sample_weights = [1.0] * len(samples)
    if len(sample_weights) != len(samples):
        raise ValueError("sample_weights length must match samples")
    total = 0.0
    grads = []
    for (head_logits, class_label, gt_bins), weight in zip(samples, sample_weights):
        head_logits = np.asarray(head_logits, dtype=float)
        if head_logits.ndim != 2 or head_logits.shape[1] != layout.total_bins:
            raise ValueError(
                f"head logits must have shape (num_classes, {layout.total_bins}), "
                f"got {head_logits.shape}"
            )
        if not 0 <= class_label < head_logits.shape[0]:
            raise ValueError(f"class label {class_label} has no head")
        grad = np.zeros_like(head_logits)
        own = head_logits[class_label]
        offsets = (0, layout.azimuth_bins, layout.azimuth_bins + layout.elevation_bins)
        for group, gt_bin, offset, n in zip(
            GROUPS,
            gt_bins,
            offsets,
            (layout.azimuth_bins, layout.elevation_bins, layout.inplane_bins),
        ):
            out = loss_backward(own[offset : offset + n], gt_bin, config, group)
            total += weight * out.loss
            grad[class_label, offset : offset + n] = weight * out.grad_logits
        grads.append(grad)
    return total, grads
