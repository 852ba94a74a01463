"""Sliding-window classification baseline.

A window/step plan guarantees every keyword fits entirely inside at least
one window (requires window > max keyword length and step < window - max
keyword length).  Per-window class scores are converted to detections by
keeping confident keyword windows and union-merging consecutive
overlapping windows of the same class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import Detection


class WindowPlanError(ValueError):
    """Window/step constraints violated."""


@dataclass
class WindowPlan:
    window_s: float
    step_s: float
    windows: list[tuple[float, float]]


def plan_windows(
    duration_s: float, window_s: float, step_s: float, max_keyword_s: float
) -> WindowPlan:
    """Deterministic window list covering [0, duration]; final window right-aligned.

    Enforces ``window_s > max_keyword_s`` and ``step_s < window_s -
    max_keyword_s`` so every interval no longer than ``max_keyword_s`` is
    fully contained in some window.
    """
    if duration_s <= 0:
        raise WindowPlanError("duration_s must be positive")
    if max_keyword_s <= 0:
        raise WindowPlanError("max_keyword_s must be positive")
    if step_s <= 0:
        raise WindowPlanError("step_s must be positive")
    if window_s <= max_keyword_s:
        raise WindowPlanError(
            f"window too small: window_s ({window_s:g}) must exceed the maximum "
            f"keyword length ({max_keyword_s:g})"
        )
    if step_s >= window_s - max_keyword_s:
        raise WindowPlanError(
            f"step too large: step_s ({step_s:g}) must be below window_s - "
            f"max_keyword_s ({window_s - max_keyword_s:g})"
        )
    if duration_s <= window_s:
        return WindowPlan(window_s, step_s, [(0.0, min(window_s, duration_s))])
    starts = []
    i = 0
    while True:
        pos = i * step_s
        if pos + window_s >= duration_s - 1e-9:
            break
        starts.append(pos)
        i += 1
    starts.append(duration_s - window_s)
    return WindowPlan(window_s, step_s, [(s, s + window_s) for s in starts])


def windows_to_detections(
    window_scores: np.ndarray,
    plan: WindowPlan,
    merge_threshold: float,
    num_keywords: int,
    frames_per_second: float,
) -> list[Detection]:
    """Convert per-window class scores into merged keyword detections.

    A window becomes a candidate when its best non-background class is a
    keyword scoring at least ``merge_threshold``.  Runs of overlapping
    same-class candidates merge into one detection spanning their union,
    scored by the maximum.  The conversion is idempotent under re-merging.
    """
    window_scores = np.asarray(window_scores)
    if window_scores.ndim != 2 or window_scores.shape[0] != len(plan.windows):
        raise ValueError(
            f"expected [num_windows, classes] scores for {len(plan.windows)} windows, "
            f"got {window_scores.shape}"
        )
    candidates = []
    for (start, end), scores in zip(plan.windows, window_scores):
        best = int(np.argmax(scores[:-1]))  # background (last class) never proposes
        if best < num_keywords and scores[best] >= merge_threshold:
            candidates.append((start, end, best, float(scores[best])))
    candidates.sort(key=lambda c: (c[0], c[1]))

    merged: list[tuple[float, float, int, float]] = []
    for start, end, cls, score in candidates:
        if merged and merged[-1][2] == cls and start < merged[-1][1]:
            prev = merged[-1]
            merged[-1] = (prev[0], max(prev[1], end), cls, max(prev[3], score))
        else:
            merged.append((start, end, cls, score))

    detections = []
    for start, end, cls, score in merged:
        center_s = 0.5 * (start + end)
        detections.append(
            Detection(
                cls=cls,
                score=score,
                center=center_s * frames_per_second,
                length=(end - start) * frames_per_second,
                frames_per_second=frames_per_second,
            )
        )
    detections.sort(key=lambda d: (-d.score, d.center, d.cls))
    return detections


def grid_search_step(
    evaluate_step,
    steps: tuple[float, ...],
    window_s: float,
    max_keyword_s: float,
) -> tuple[float, dict[float, float]]:
    """Pick the step size maximizing dev mAP; ties favor the larger (faster) step.

    ``evaluate_step(step_s) -> mAP`` runs the sliding-window pipeline on the
    dev set.  Steps violating the coverage constraints are skipped; if all
    are inadmissible a WindowPlanError is raised.
    """
    results: dict[float, float] = {}
    for step_s in steps:
        try:
            plan_windows(window_s + max_keyword_s + 1.0, window_s, step_s, max_keyword_s)
        except WindowPlanError:
            continue
        results[step_s] = float(evaluate_step(step_s))
    if not results:
        raise WindowPlanError(
            f"no admissible step in {steps}: all violate the window constraints "
            f"for window_s={window_s:g}, max_keyword_s={max_keyword_s:g}"
        )
    best = max(results.items(), key=lambda kv: (kv[1], kv[0]))
    return best[0], results
