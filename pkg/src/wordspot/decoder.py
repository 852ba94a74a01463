"""NMS-free decoding of prediction tensors into ranked keyword detections.

Local maxima of each heatmap channel become candidate centers; the top-M
candidates across all channels (including the unknown channel, which
competes for slots but is dropped from the output) turn into detections
with sub-frame centers from the offset head and extents from the length
head.  No non-maximum suppression is applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Detection:
    """One decoded keyword: class, confidence, and temporal extent.

    ``center`` and ``length`` are in frames on the grid defined by
    ``frames_per_second``; second-space accessors add ``origin_offset_s``
    (nonzero for detections from a chunk of longer audio).
    """

    cls: int
    score: float
    center: float
    length: float
    frames_per_second: float
    origin_offset_s: float = 0.0

    def interval_frames(self) -> tuple[float, float]:
        half = self.length / 2.0
        return (self.center - half, self.center + half)

    def center_s(self) -> float:
        return self.origin_offset_s + self.center / self.frames_per_second

    def interval_s(self) -> tuple[float, float]:
        lo, hi = self.interval_frames()
        fps = self.frames_per_second
        return (self.origin_offset_s + lo / fps, self.origin_offset_s + hi / fps)


def find_peaks(column: np.ndarray, neighborhood: int = 1) -> list[tuple[int, float]]:
    """Local maxima of a 1D score vector (out-of-range neighbors are -inf).

    A plateau of equal values yields only its leftmost index.  With
    ``neighborhood`` > 1 a peak must additionally dominate every value
    within that many frames on both sides.
    """
    n = len(column)
    peaks: list[tuple[int, float]] = []
    start = 0
    while start < n:
        end = start
        while end + 1 < n and column[end + 1] == column[start]:
            end += 1
        left = column[start - 1] if start > 0 else -np.inf
        right = column[end + 1] if end + 1 < n else -np.inf
        value = column[start]
        if value > left and value > right:
            is_peak = True
            if neighborhood > 1:
                lo = max(0, start - neighborhood)
                hi = min(n, end + 1 + neighborhood)
                window = np.concatenate([column[lo:start], column[end + 1 : hi]])
                if window.size:
                    if np.any(window > value):
                        is_peak = False
                    elif np.any(window == value) and np.argmax(column[lo:hi] == value) + lo < start:
                        is_peak = False
            if is_peak:
                peaks.append((start, float(value)))
        start = end + 1
    return peaks


def decode(
    preds,
    cfg,
    frames_per_second: float | None = None,
    origin_offset_s: float = 0.0,
) -> list[Detection]:
    """Turn prediction tensors into a score-ranked detection list.

    Peaks are gathered over every heatmap channel, ranked by score
    (ties broken by lower frame, then lower class), and truncated to
    ``max_detections``.  Unknown-channel entries are removed after the
    truncation, so they occupy ranking slots but are never emitted.
    """
    heat = preds.heat
    if heat.ndim != 2:
        raise ValueError(f"expected [frames, channels] heatmap, got shape {heat.shape}")
    fps = frames_per_second if frames_per_second is not None else cfg.frames_per_second
    candidates = []
    for c in range(heat.shape[1]):
        for t, score in find_peaks(heat[:, c], cfg.peak_neighborhood):
            if score > 0.0:  # detections carry strictly positive confidence
                candidates.append((t, c, score))
    candidates.sort(key=lambda item: (-item[2], item[0], item[1]))
    selected = candidates[: cfg.max_detections]

    detections = []
    for t, c, score in selected:
        if cfg.use_unknown_class and c == cfg.num_keywords:
            continue
        detections.append(
            Detection(
                cls=c,
                score=score,
                center=t + float(preds.offset[t]),
                length=float(preds.length[t]),
                frames_per_second=fps,
                origin_offset_s=origin_offset_s,
            )
        )
    return detections


def score_threshold_filter(detections: list[Detection], threshold: float) -> list[Detection]:
    """Keep detections scoring at least ``threshold``; order is preserved."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return [d for d in detections if d.score >= threshold]


def detection_record(utterance_id: str, det: Detection, keyword_name: str) -> dict:
    start_s, end_s = det.interval_s()
    return {
        "utterance_id": utterance_id,
        "keyword": keyword_name,
        "score": det.score,
        "start_s": start_s,
        "end_s": end_s,
        "center_s": det.center_s(),
    }


def write_detections_jsonl(path: str | Path, records: list[dict]) -> None:
    """One JSON object per line; key order is fixed for reproducible bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_detections_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
