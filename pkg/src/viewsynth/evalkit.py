"""Detection and viewpoint estimation metrics.

Covers box IoU, PASCAL-style average precision with pluggable
true-positive predicates, azimuth-aware AVP, accuracy-vs-angular-error
curves with medians, rotation-geodesic accuracy/median error, 16-bin
tolerance accuracy, and top-k viewpoint proposals after circular
non-maximum suppression.

Matching convention: detections are processed in descending score order;
each one claims the highest-IoU unmatched non-difficult ground truth in
its image with IoU >= 0.5. A claimed ground truth is consumed whether or
not the predicate holds (a right box with a wrong viewpoint is a false
positive AND uses up the ground truth), which makes the viewpoint-aware
AP a pointwise restriction of plain AP, so AVP <= AP on every input.
Detections whose only IoU >= 0.5 overlap is with difficult ground truths
are ignored. AP integrates the monotonically interpolated
precision-recall curve over all points (the 11-point variant is
available behind a flag).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .viewgeom import (
    BinLayout,
    ViewpointTuple,
    discretize,
    rotation_from_viewpoint,
    rotation_geodesic,
)

__all__ = [
    "DetectionRecord",
    "GroundTruthRecord",
    "EvalReport",
    "iou",
    "average_precision",
    "avp",
    "AVP_BIN_COUNTS",
    "accuracy_curve",
    "acc_pi6_mederr",
    "tolerance_accuracy_16v",
    "topk_proposals",
    "topk_bin_accuracy",
    "match_viewpoint_pairs",
    "build_report",
]

IOU_THRESHOLD = 0.5
AVP_BIN_COUNTS = (4, 8, 16, 24)


def _check_bbox(bbox):
    l, t, r, b = (float(x) for x in bbox)
    if not (r > l and b > t):
        raise ValueError(f"degenerate bbox {bbox}")
    return (l, t, r, b)


@dataclass
class DetectionRecord:
    image_id: str
    bbox: tuple[float, float, float, float]
    score: float
    viewpoint: ViewpointTuple
    category: str = ""
    azimuth_probs: np.ndarray | None = None

    def __post_init__(self):
        self.bbox = _check_bbox(self.bbox)
        if self.azimuth_probs is not None:
            self.azimuth_probs = np.asarray(self.azimuth_probs, dtype=float)
            if abs(self.azimuth_probs.sum() - 1.0) > 1e-6:
                raise ValueError("azimuth probability vector must sum to 1")


@dataclass
class GroundTruthRecord:
    image_id: str
    bbox: tuple[float, float, float, float]
    viewpoint: ViewpointTuple
    category: str = ""
    difficult: bool = False

    def __post_init__(self):
        self.bbox = _check_bbox(self.bbox)


def iou(a, b) -> float:
    """Intersection over union of two [l, t, r, b] boxes; 0 when disjoint."""
    al, at, ar, ab = _check_bbox(a)
    bl, bt, br, bb = _check_bbox(b)
    width = min(ar, br) - max(al, bl)
    height = min(ab, bb) - max(at, bt)
    if width <= 0.0 or height <= 0.0:
        return 0.0
    inter = width * height
    union = (ar - al) * (ab - at) + (br - bl) * (bb - bt) - inter
    return inter / union


def _sorted_detections(detections):
    # canonical order: score descending, content tie-break, so shuffled
    # input never changes the result
    return sorted(detections, key=lambda d: (-d.score, d.image_id, d.bbox))


def _match_detections(detections, groundtruths, is_true_positive):
    """Greedy matching; yields (detection, matched_gt_or_None, outcome).

    outcome is "tp", "fp", or "ignored" (difficult-only overlap).
    """
    gts = sorted(groundtruths, key=lambda g: (g.image_id, g.bbox))
    by_image: dict[str, list] = {}
    for gt in gts:
        by_image.setdefault(gt.image_id, []).append(gt)
    matched: set[int] = set()
    results = []
    for det in _sorted_detections(detections):
        candidates = by_image.get(det.image_id, [])
        best, best_iou = None, 0.0
        difficult_hit = False
        for gt in candidates:
            overlap = iou(det.bbox, gt.bbox)
            if overlap < IOU_THRESHOLD:
                continue
            if gt.difficult:
                difficult_hit = True
                continue
            if id(gt) in matched:
                continue
            if best is None or overlap > best_iou:  # ties keep the earlier gt
                best, best_iou = gt, overlap
        if best is not None:
            matched.add(id(best))
            outcome = "tp" if is_true_positive(det, best) else "fp"
            results.append((det, best, outcome))
        elif difficult_hit:
            results.append((det, None, "ignored"))
        else:
            results.append((det, None, "fp"))
    return results


def _interpolated_ap(recall, precision, eleven_point=False):
    if eleven_point:
        total = 0.0
        for level in np.linspace(0.0, 1.0, 11):
            candidates = precision[recall >= level]
            total += candidates.max() if candidates.size else 0.0
        return total / 11.0
    # all-points: make precision non-increasing from the right, then sum
    # rectangles between consecutive recall values
    r = np.concatenate([[0.0], recall, [1.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    for k in range(len(p) - 2, -1, -1):
        p[k] = max(p[k], p[k + 1])
    steps = np.nonzero(r[1:] != r[:-1])[0]
    return float(np.sum((r[steps + 1] - r[steps]) * p[steps + 1]))


def average_precision(
    detections, groundtruths, is_true_positive, eleven_point: bool = False
) -> float:
    """Area under the interpolated precision-recall curve.

    is_true_positive(detection, matched_gt) decides whether an IoU-matched
    detection counts; plain AP passes a constant-true predicate. Zero
    ground truths is reported as 0 with a warning.
    """
    npos = sum(1 for gt in groundtruths if not gt.difficult)
    if npos == 0:
        print("warning: zero ground truths; AP defined as 0", file=sys.stderr)
        return 0.0
    outcomes = [
        outcome
        for _, _, outcome in _match_detections(detections, groundtruths, is_true_positive)
        if outcome != "ignored"
    ]
    if not outcomes:
        return 0.0
    tp = np.cumsum([1 if o == "tp" else 0 for o in outcomes])
    fp = np.cumsum([1 if o == "fp" else 0 for o in outcomes])
    recall = tp / npos
    precision = tp / np.maximum(tp + fp, 1)
    return _interpolated_ap(recall, precision, eleven_point)


def _same_azimuth_bin(n_bins):
    layout = BinLayout(n_bins, 1, 1)
    def predicate(det, gt):
        return discretize(det.viewpoint, layout)[0] == discretize(gt.viewpoint, layout)[0]
    return predicate


def avp(detections, groundtruths, n_azimuth_bins: int, **kwargs) -> float:
    """Average precision requiring the matched azimuth bin to agree.

    Supported bin counts: 4, 8, 16, 24 (other layouts can be evaluated
    through average_precision directly).
    """
    if n_azimuth_bins not in AVP_BIN_COUNTS:
        raise ValueError(
            f"n_azimuth_bins must be one of {AVP_BIN_COUNTS}, got {n_azimuth_bins}"
        )
    return average_precision(
        detections, groundtruths, _same_azimuth_bin(n_azimuth_bins), **kwargs
    )


def circular_azimuth_error(pred_deg: float, gt_deg: float) -> float:
    """Azimuth error in degrees, wrapped to [0, 180]."""
    diff = abs(pred_deg - gt_deg) % 360.0
    return min(diff, 360.0 - diff)


def accuracy_curve(pred_azimuths, gt_azimuths, delta_grid):
    """Fraction of pairs with circular azimuth error below each threshold.

    Returns ([(delta, fraction), ...], median_error_degrees). The curve is
    non-decreasing in delta and reaches 1 at 180 degrees.
    """
    pred = list(pred_azimuths)
    gt = list(gt_azimuths)
    if len(pred) != len(gt):
        raise ValueError("prediction/ground-truth counts differ")
    if not pred:
        raise ValueError("no pairs to evaluate")
    errors = [circular_azimuth_error(p, g) for p, g in zip(pred, gt)]
    curve = [
        (float(delta), sum(e < delta for e in errors) / len(errors))
        for delta in delta_grid
    ]
    return curve, float(median(errors))


def acc_pi6_mederr(pred_viewpoints, gt_viewpoints) -> tuple[float, float]:
    """Rotation-geodesic accuracy at pi/6 and median error in degrees."""
    pred = list(pred_viewpoints)
    gt = list(gt_viewpoints)
    if len(pred) != len(gt):
        raise ValueError("prediction/ground-truth counts differ")
    if not pred:
        raise ValueError("no pairs to evaluate")
    deltas = [
        rotation_geodesic(rotation_from_viewpoint(p), rotation_from_viewpoint(g))
        for p, g in zip(pred, gt)
    ]
    acc = sum(d < np.pi / 6.0 for d in deltas) / len(deltas)
    return float(acc), float(np.degrees(median(deltas)))


def tolerance_accuracy_16v(pred_bins, gt_bins, n_bins: int = 16) -> float:
    """Fraction of predictions within one circular bin of the label."""
    pred = list(pred_bins)
    gt = list(gt_bins)
    if len(pred) != len(gt):
        raise ValueError("prediction/ground-truth counts differ")
    if not pred:
        raise ValueError("no pairs to evaluate")
    for b in (*pred, *gt):
        if not 0 <= b < n_bins:
            raise ValueError(f"bin {b} out of range [0, {n_bins})")
    hits = 0
    for p, g in zip(pred, gt):
        dist = abs(p - g) % n_bins
        if min(dist, n_bins - dist) <= 1:
            hits += 1
    return hits / len(pred)


def topk_proposals(prob_vector, k: int, nms_window: int = 5) -> list[int]:
    """Top-k bins after circular non-maximum suppression.

    A bin survives if its probability is positive and the maximum of its
    centered window (ties survive, so a uniform vector keeps every bin).
    Survivors are ranked by probability, ties broken by lowest index;
    fewer than k are returned when fewer peaks exist. The global argmax
    always survives, so top-(k+1) proposals extend top-k.
    """
    probs = np.asarray(prob_vector, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("probability vector must be a nonempty 1-D array")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError("probability vector must sum to 1")
    if k < 1:
        raise ValueError("k must be at least 1")
    if nms_window < 1 or nms_window % 2 == 0:
        raise ValueError("nms_window must be odd and at least 1")
    n = probs.size
    half = nms_window // 2
    peaks = []
    for i in range(n):
        if probs[i] <= 0.0:
            continue
        window = probs[(np.arange(i - half, i + half + 1)) % n]
        if probs[i] >= window.max():
            peaks.append(i)
    peaks.sort(key=lambda i: (-probs[i], i))
    return peaks[:k]


def topk_bin_accuracy(prob_vectors, gt_bins, k: int, nms_window: int = 5) -> float:
    """Fraction of samples whose label bin is among the top-k proposals."""
    vectors = list(prob_vectors)
    gt = list(gt_bins)
    if len(vectors) != len(gt):
        raise ValueError("prediction/ground-truth counts differ")
    if not vectors:
        raise ValueError("no pairs to evaluate")
    hits = sum(
        1 for probs, g in zip(vectors, gt) if g in topk_proposals(probs, k, nms_window)
    )
    return hits / len(vectors)


def match_viewpoint_pairs(detections, groundtruths):
    """(predicted, ground-truth) viewpoint pairs of IoU-matched detections.

    Uses the same greedy matching as AP with a constant-true predicate, so
    the pairs are exactly the correctly localized detections.
    """
    pairs = []
    for det, gt, outcome in _match_detections(
        detections, groundtruths, lambda d, g: True
    ):
        if outcome == "tp":
            pairs.append((det.viewpoint, gt.viewpoint))
    return pairs


@dataclass
class EvalReport:
    """Per-category metrics plus their means."""

    categories: dict[str, dict] = field(default_factory=dict)
    means: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"categories": self.categories, "means": self.means}


_MEAN_FIELDS = (
    "ap",
    "avp_4",
    "avp_8",
    "avp_16",
    "avp_24",
    "median_azimuth_error_deg",
    "acc_pi6",
    "mederr_deg",
    "tol_16v",
)


def build_report(
    detections, groundtruths, delta_grid=None, eleven_point: bool = False
) -> EvalReport:
    """Evaluate everything per category and average across categories.

    Viewpoint metrics are computed over IoU-matched pairs; categories with
    no matched pairs report null viewpoint metrics and are excluded from
    those means.
    """
    if delta_grid is None:
        delta_grid = list(range(0, 181, 5))
    categories = sorted(
        {gt.category for gt in groundtruths} | {d.category for d in detections}
    )
    report = EvalReport()
    tol_layout = BinLayout(16, 1, 1)
    for category in categories:
        dets = [d for d in detections if d.category == category]
        gts = [g for g in groundtruths if g.category == category]
        entry: dict = {
            "ap": average_precision(dets, gts, lambda d, g: True, eleven_point),
        }
        for n in AVP_BIN_COUNTS:
            entry[f"avp_{n}"] = avp(dets, gts, n, eleven_point=eleven_point)
        pairs = match_viewpoint_pairs(dets, gts)
        if pairs:
            pred_az = [p.azimuth_deg for p, _ in pairs]
            gt_az = [g.azimuth_deg for _, g in pairs]
            curve, med = accuracy_curve(pred_az, gt_az, delta_grid)
            acc, mederr = acc_pi6_mederr([p for p, _ in pairs], [g for _, g in pairs])
            entry["accuracy_curve"] = curve
            entry["median_azimuth_error_deg"] = med
            entry["acc_pi6"] = acc
            entry["mederr_deg"] = mederr
            entry["tol_16v"] = tolerance_accuracy_16v(
                [discretize(p, tol_layout)[0] for p, _ in pairs],
                [discretize(g, tol_layout)[0] for _, g in pairs],
            )
            entry["matched_pairs"] = len(pairs)
        else:
            entry.update(
                accuracy_curve=None,
                median_azimuth_error_deg=None,
                acc_pi6=None,
                mederr_deg=None,
                tol_16v=None,
                matched_pairs=0,
            )
        report.categories[category] = entry
    for name in _MEAN_FIELDS:
        values = [
            entry[name]
            for entry in report.categories.values()
            if entry.get(name) is not None
        ]
        report.means[name] = float(np.mean(values)) if values else None
    return report
