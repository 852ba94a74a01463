"""End-to-end inference: audio in, detections out.

Long audio is processed in input-length chunks with 50% overlap; duplicate
detections seen by neighboring chunks are merged keeping the higher score.
"""

from __future__ import annotations

import time

from .config import PipelineConfig
from .dataset import KeywordSet, Utterance, merge_chunk_detections
from .decoder import Detection, decode, score_threshold_filter
from .features import AudioClip, chunk_spans, model_features, normalize_length, read_wav
from .metrics import GroundTruth, ScoredDetection
from .model import Detector


def detect_clip(
    detector: Detector, clip: AudioClip, cfg: PipelineConfig, min_score: float | None = None
) -> list[Detection]:
    """Run the detector over a clip of any length.

    Clips shorter than the input window are repeat-padded; longer clips are
    chunked with 50% overlap and cross-chunk duplicates merged.  Detections
    centered beyond the true clip duration are dropped.
    """
    min_score = cfg.detect_min_score if min_score is None else min_score
    duration = clip.duration_s
    spans = chunk_spans(duration, cfg.input_len_s)
    sr = cfg.sample_rate_hz
    tagged = []
    for chunk_idx, (start_s, _end_s) in enumerate(spans):
        if duration <= cfg.input_len_s:
            chunk = normalize_length(clip, cfg.input_len_s, "repeat_pad", rng_seed=0)
            origin = 0.0
        else:
            a = min(round(start_s * sr), len(clip.samples) - cfg.input_len_samples)
            chunk = AudioClip(clip.samples[a : a + cfg.input_len_samples], sr)
            origin = a / sr
        feats = model_features(chunk, cfg)
        preds, _ = detector.forward(feats)
        dets = decode(preds, cfg, origin_offset_s=origin)
        dets = score_threshold_filter(dets, min_score)
        tagged.extend((chunk_idx, d) for d in dets)
    if len(spans) > 1:
        merged = merge_chunk_detections(tagged, cfg.merge_overlap_iou)
    else:
        merged = [d for _, d in tagged]
    return [d for d in merged if d.center_s() <= duration]


def detect_utterances(
    detector: Detector,
    utts: list[Utterance],
    cfg: PipelineConfig,
    min_score: float | None = None,
) -> tuple[dict[str, list[Detection]], float, float]:
    """Detect over a list of utterances.

    Returns (per-utterance detections, processing seconds, audio seconds);
    the two times feed the real-time factor.
    """
    results: dict[str, list[Detection]] = {}
    audio_s = 0.0
    started = time.perf_counter()
    for utt in utts:
        clip = read_wav(utt.audio_path)
        audio_s += clip.duration_s
        results[utt.utt_id] = detect_clip(detector, clip, cfg, min_score)
    process_s = time.perf_counter() - started
    return results, process_s, audio_s


def ground_truths_from_utterances(
    utts: list[Utterance], cfg: PipelineConfig, keywords_only: bool = True
) -> list[GroundTruth]:
    """Convert aligned words to second-space ground-truth intervals."""
    fps = cfg.frames_per_second
    gts = []
    for utt in utts:
        for w in utt.words:
            if keywords_only and w.cls >= cfg.num_keywords:
                continue
            start_s, end_s = w.interval_seconds(fps)
            gts.append(GroundTruth(cls=w.cls, start_s=start_s, end_s=end_s, group=utt.utt_id))
    return gts


def scored_detections_from_records(
    records: list[dict], keywords: KeywordSet
) -> list[ScoredDetection]:
    """Convert detection JSONL records to metric inputs (unknown names rejected)."""
    dets = []
    for rec in records:
        cls = keywords.class_of(rec["keyword"])
        if cls >= keywords.num_keywords:
            raise ValueError(f"detection names unknown keyword {rec['keyword']!r}")
        dets.append(
            ScoredDetection(
                cls=cls,
                score=float(rec["score"]),
                start_s=float(rec["start_s"]),
                end_s=float(rec["end_s"]),
                group=rec["utterance_id"],
            )
        )
    return dets
