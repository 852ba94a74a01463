"""Anchor-free keyword detection in continuous speech.

A library and CLI that treats keyword spotting as 1D object detection:
word alignments become heatmap/length/offset training targets, a small
convolutional detector regresses them, peaks are decoded into detections
without NMS, and results are scored with 1D detection metrics (mAP,
FRR at fixed false alarms per hour).
"""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config, serialize_config
from .dataset import AlignedWord, KeywordSet, SynthSpec, Utterance, generate_synthetic_corpus
from .decoder import Detection, decode, find_peaks, score_threshold_filter
from .encoder import TargetTensors, count_keywords, encode_targets
from .features import AudioClip, Spectrogram, augment, normalize_length, stft_magnitude
from .losses import LossBreakdown, focal_heatmap_loss, l1_length_loss, l1_offset_loss, total_loss
from .metrics import (
    EvalReport,
    GroundTruth,
    ScoredDetection,
    average_precision,
    classification_accuracy,
    frr_at_fa,
    iou_1d,
    mean_ap,
    rtf,
)
from .model import ArchSpec, Detector, PredictionTensors, load_checkpoint, save_checkpoint

__all__ = [
    "PipelineConfig",
    "load_config",
    "serialize_config",
    "AlignedWord",
    "KeywordSet",
    "SynthSpec",
    "Utterance",
    "generate_synthetic_corpus",
    "Detection",
    "decode",
    "find_peaks",
    "score_threshold_filter",
    "TargetTensors",
    "count_keywords",
    "encode_targets",
    "AudioClip",
    "Spectrogram",
    "augment",
    "normalize_length",
    "stft_magnitude",
    "LossBreakdown",
    "focal_heatmap_loss",
    "l1_length_loss",
    "l1_offset_loss",
    "total_loss",
    "EvalReport",
    "GroundTruth",
    "ScoredDetection",
    "average_precision",
    "classification_accuracy",
    "frr_at_fa",
    "iou_1d",
    "mean_ap",
    "rtf",
    "ArchSpec",
    "Detector",
    "PredictionTensors",
    "load_checkpoint",
    "save_checkpoint",
]
