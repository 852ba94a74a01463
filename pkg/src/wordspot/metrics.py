"""Detection-oriented and keyword-spotting evaluation.

Detections are (class, score, interval) triples and ground truths
(class, interval) pairs, with intervals in seconds; an optional ``group``
(typically the utterance id) scopes matching so intervals from different
recordings never match each other.  Matching is greedy in descending score
order: a detection is a true positive when it overlaps an unmatched
same-class, same-group ground truth at or above the IoU threshold (highest
IoU first, earliest ground truth on ties).  Because matching is greedy by
score, the assignment of the top-k detections never depends on lower
scores, so threshold sweeps are prefix-consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_IOU_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(1, 20))
DEFAULT_FA_TARGETS = (5.0, 15.0, 25.0)


@dataclass(frozen=True)
class ScoredDetection:
    cls: int
    score: float
    start_s: float
    end_s: float
    group: str = ""  # matching scope, e.g. the utterance id


@dataclass(frozen=True)
class GroundTruth:
    cls: int
    start_s: float
    end_s: float
    group: str = ""


def iou_1d(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Intersection over union of two intervals; 0 when disjoint or both empty."""
    if a[1] < a[0] or b[1] < b[0]:
        raise ValueError(f"malformed interval: {a} vs {b}")
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _sorted_dets(dets: list[ScoredDetection]) -> list[ScoredDetection]:
    return sorted(dets, key=lambda d: (-d.score, d.start_s, d.cls))


def match_detections(
    dets: list[ScoredDetection], gts: list[GroundTruth], iou_thr: float
) -> tuple[list[bool], list[bool]]:
    """Greedy matching; returns (per-detection TP flags, per-gt matched flags).

    Detections must already be sorted by descending score.
    """
    matched = [False] * len(gts)
    tp_flags = []
    for det in dets:
        best_iou, best_gt = 0.0, -1
        for g, gt in enumerate(gts):
            if matched[g] or gt.cls != det.cls or gt.group != det.group:
                continue
            iou = iou_1d((det.start_s, det.end_s), (gt.start_s, gt.end_s))
            if iou >= iou_thr and iou > best_iou:
                best_iou, best_gt = iou, g
        if best_gt >= 0:
            matched[best_gt] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    return tp_flags, matched


def average_precision(
    dets: list[ScoredDetection], gts: list[GroundTruth], iou_thr: float
) -> float:
    """Area under the stepwise precision-recall curve for one class.

    Equals the mean over ground truths of the precision at each true
    positive's rank.  Returns NaN when there are no ground truths.
    """
    if not gts:
        return float("nan")
    if not dets:
        return 0.0
    ordered = _sorted_dets(dets)
    tp_flags, _ = match_detections(ordered, gts, iou_thr)
    ap = 0.0
    tp = 0
    for rank, is_tp in enumerate(tp_flags, start=1):
        if is_tp:
            tp += 1
            ap += tp / rank
    return ap / len(gts)


def mean_ap(
    dets: list[ScoredDetection],
    gts: list[GroundTruth],
    thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS,
) -> tuple[float, dict[float, float]]:
    """Mean over IoU thresholds of the class-mean AP.

    Classes with no ground truths are skipped.  Returns
    (mAP, per-threshold class-mean AP).
    """
    classes = sorted({gt.cls for gt in gts})
    per_threshold: dict[float, float] = {}
    for thr in thresholds:
        if not classes:
            per_threshold[thr] = 0.0
            continue
        aps = []
        for c in classes:
            aps.append(
                average_precision(
                    [d for d in dets if d.cls == c],
                    [g for g in gts if g.cls == c],
                    thr,
                )
            )
        per_threshold[thr] = float(np.mean(aps))
    overall = float(np.mean(list(per_threshold.values()))) if per_threshold else 0.0
    return overall, per_threshold


def frr_fa_sweep(
    dets: list[ScoredDetection], gts: list[GroundTruth], audio_hours: float, match_iou: float
) -> list[tuple[float, float, float]]:
    """Operating curve: (threshold, false alarms per hour, false rejection rate).

    The sweep starts above every score (no detections kept) and lowers the
    threshold through each distinct score.  FA/h is non-decreasing and FRR
    non-increasing along the returned list.
    """
    if audio_hours <= 0:
        raise ValueError("audio_hours must be positive")
    ordered = _sorted_dets(dets)
    tp_flags, _ = match_detections(ordered, gts, match_iou)
    total_gts = len(gts)
    points = [(float("inf"), 0.0, 1.0 if total_gts else 0.0)]
    tp = fp = 0
    for i, (det, is_tp) in enumerate(zip(ordered, tp_flags)):
        if is_tp:
            tp += 1
        else:
            fp += 1
        is_last_at_score = i + 1 == len(ordered) or ordered[i + 1].score != det.score
        if is_last_at_score:
            frr = 1.0 - tp / total_gts if total_gts else 0.0
            points.append((det.score, fp / audio_hours, frr))
    return points


def frr_at_fa(
    dets: list[ScoredDetection],
    gts: list[GroundTruth],
    audio_hours: float,
    fa_targets: tuple[float, ...] = DEFAULT_FA_TARGETS,
    match_iou: float = 0.5,
) -> dict[float, float]:
    """False rejection rate at each false-alarm budget.

    For each target, reports the FRR of the most permissive threshold whose
    FA/h stays within budget; 1.0 when no threshold qualifies.
    """
    points = frr_fa_sweep(dets, gts, audio_hours, match_iou)
    result = {}
    for target in fa_targets:
        eligible = [frr for _, fa, frr in points if fa <= target]
        result[target] = min(eligible) if eligible else 1.0
    return result


def rtf(process_time_s: float, audio_time_s: float) -> float:
    """Real-time factor: processing time divided by audio duration."""
    if audio_time_s <= 0:
        raise ValueError("audio_time_s must be positive")
    return process_time_s / audio_time_s


def classification_accuracy(pred_labels, true_labels) -> float:
    """Fraction of positions where predicted and true labels agree."""
    if len(pred_labels) != len(true_labels):
        raise ValueError(
            f"label length mismatch: {len(pred_labels)} vs {len(true_labels)}"
        )
    if len(pred_labels) == 0:
        return 0.0
    return sum(p == t for p, t in zip(pred_labels, true_labels)) / len(pred_labels)


@dataclass
class EvalReport:
    """Aggregated evaluation results plus the curve data behind them."""

    per_class_ap: dict[int, dict[float, float]]
    per_threshold_ap: dict[float, float]
    map_value: float
    ap_low: float            # class-mean AP at IoU 0.05
    ap_high: float           # class-mean AP at IoU 0.75
    frr: dict[float, float]
    counts: dict[float, dict[str, int]]
    audio_hours: float
    num_detections: int
    num_ground_truths: int
    rtf: float | None = None
    classification_accuracy: float | None = None
    metadata: dict = field(default_factory=dict)
    # Curve data for figures (not serialized to JSON).
    pr_curves: dict[int, tuple[list[float], list[float]]] = field(default_factory=dict)
    fa_frr_points: list[tuple[float, float, float]] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        obj = {
            "map": self.map_value,
            "ap_at_iou_0.05": self.ap_low,
            "ap_at_iou_0.75": self.ap_high,
            "frr_at_fa_per_hour": {f"{k:g}": v for k, v in self.frr.items()},
            "per_threshold_ap": {f"{k:.2f}": v for k, v in self.per_threshold_ap.items()},
            "per_class_ap": {
                str(c): {f"{t:.2f}": v for t, v in by_thr.items()}
                for c, by_thr in self.per_class_ap.items()
            },
            "counts": {f"{k:.2f}": v for k, v in self.counts.items()},
            "audio_hours": self.audio_hours,
            "num_detections": self.num_detections,
            "num_ground_truths": self.num_ground_truths,
            "rtf": self.rtf,
            "classification_accuracy": self.classification_accuracy,
            "metadata": self.metadata,
        }
        return obj


def evaluate_detections(
    dets: list[ScoredDetection],
    gts: list[GroundTruth],
    audio_hours: float,
    fa_targets: tuple[float, ...] = DEFAULT_FA_TARGETS,
    match_iou: float = 0.5,
    thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS,
    rtf_value: float | None = None,
    cls_accuracy: float | None = None,
) -> EvalReport:
    """Assemble the full report: AP sweep, FRR at FA budgets, and counts."""
    classes = sorted({gt.cls for gt in gts})
    per_class_ap: dict[int, dict[float, float]] = {c: {} for c in classes}
    per_threshold_ap: dict[float, float] = {}
    counts: dict[float, dict[str, int]] = {}
    for thr in thresholds:
        aps = []
        for c in classes:
            ap = average_precision(
                [d for d in dets if d.cls == c], [g for g in gts if g.cls == c], thr
            )
            per_class_ap[c][thr] = ap
            aps.append(ap)
        per_threshold_ap[thr] = float(np.mean(aps)) if aps else 0.0
        tp_flags, matched = match_detections(_sorted_dets(dets), gts, thr)
        tp = sum(tp_flags)
        counts[thr] = {"tp": tp, "fp": len(dets) - tp, "fn": len(gts) - sum(matched)}
    map_value = float(np.mean(list(per_threshold_ap.values()))) if per_threshold_ap else 0.0

    frr = frr_at_fa(dets, gts, audio_hours, fa_targets, match_iou)
    ordered_targets = sorted(frr)
    for lo, hi in zip(ordered_targets, ordered_targets[1:]):
        assert frr[hi] <= frr[lo] + 1e-12, "FRR must be non-increasing in the FA budget"

    pr_curves = {}
    for c in classes:
        cls_dets = _sorted_dets([d for d in dets if d.cls == c])
        cls_gts = [g for g in gts if g.cls == c]
        tp_flags, _ = match_detections(cls_dets, cls_gts, match_iou)
        recalls, precisions = [], []
        tp = 0
        for rank, is_tp in enumerate(tp_flags, start=1):
            tp += is_tp
            recalls.append(tp / len(cls_gts) if cls_gts else 0.0)
            precisions.append(tp / rank)
        pr_curves[c] = (recalls, precisions)

    return EvalReport(
        per_class_ap=per_class_ap,
        per_threshold_ap=per_threshold_ap,
        map_value=map_value,
        ap_low=per_threshold_ap.get(0.05, 0.0),
        ap_high=per_threshold_ap.get(0.75, 0.0),
        frr=frr,
        counts=counts,
        audio_hours=audio_hours,
        num_detections=len(dets),
        num_ground_truths=len(gts),
        rtf=rtf_value,
        classification_accuracy=cls_accuracy,
        pr_curves=pr_curves,
        fa_frr_points=frr_fa_sweep(dets, gts, audio_hours, match_iou) if gts or dets else [],
    )
