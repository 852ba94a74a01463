"""Pipeline configuration: a single flat set of hyper-parameters shared by every stage.

The on-disk format is a plain ``key = value`` text file (``#`` starts a
comment).  Every key can also be overridden on the command line via
``--<key> <value>``; see :mod:`wordspot.cli`.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """A config file failed to parse or a value violates an invariant."""


@dataclass(frozen=True)
class PipelineConfig:
    # audio / features
    sample_rate_hz: int = 16000
    input_len_s: float = 5.11
    hop_length: int = 160
    win_length: int = 400
    filter_length: int = 510
    temporal_resolution: int = 128
    log_spectrogram: bool = True
    normalize_spectrogram: bool = True

    # task
    num_keywords: int = 3
    use_unknown_class: bool = True

    # target encoding
    gamma: float = 0.125
    regress_unknown: bool = True

    # loss
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    lambda_len: float = 0.1
    lambda_offset: float = 1.0

    # detector architecture
    n_channels: int = 64
    depth: int = 3
    kernel_size: int = 3

    # decoding
    max_detections: int = 30
    peak_neighborhood: int = 1
    detect_min_score: float = 0.1

    # training
    batch_size: int = 64
    learning_rate: float = 0.00125
    epochs: int = 40
    augment_prob: float = 0.2
    noise_snr_db_low: float = 5.0
    noise_snr_db_high: float = 20.0
    pitch_shift_max_semitones: float = 2.0

    # evaluation
    frr_match_iou: float = 0.5
    merge_overlap_iou: float = 0.5

    # sliding-window classification baseline
    cls_window_s: float = 0.5

    @property
    def heatmap_channels(self) -> int:
        """Number of heatmap channels: keywords plus the unknown-word channel."""
        return self.num_keywords + 1 if self.use_unknown_class else self.num_keywords

    @property
    def input_len_samples(self) -> int:
        return round(self.input_len_s * self.sample_rate_hz)

    @property
    def frames_per_second(self) -> float:
        """Canonical frame rate of the reduced feature grid (frames evenly tile the clip)."""
        return self.temporal_resolution / self.input_len_s

    @property
    def freq_bins(self) -> int:
        return self.filter_length // 2 + 1

    def validate(self) -> None:
        """Raise ConfigError naming the offending key on any invariant violation."""
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be positive")
        if self.input_len_s <= 0:
            raise ConfigError("input_len_s must be positive")
        if self.hop_length <= 0:
            raise ConfigError("hop_length must be positive")
        if self.win_length <= 0:
            raise ConfigError("win_length must be positive")
        if self.filter_length < self.win_length:
            raise ConfigError("filter_length must be >= win_length")
        if self.temporal_resolution <= 0:
            raise ConfigError("temporal_resolution must be positive")
        if self.num_keywords < 1:
            raise ConfigError("num_keywords out of range (must be >= 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma out of range (must satisfy 0 < gamma <= 1)")
        if self.focal_alpha <= 0 or self.focal_beta <= 0:
            raise ConfigError("focal_alpha and focal_beta must be positive")
        if self.lambda_len < 0:
            raise ConfigError("lambda_len must be >= 0")
        if self.lambda_offset < 0:
            raise ConfigError("lambda_offset must be >= 0")
        if self.max_detections < 1:
            raise ConfigError("max_detections out of range (must be >= 1)")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ConfigError("augment_prob out of range (must be in [0, 1])")
        if self.n_channels < 1:
            raise ConfigError("n_channels must be >= 1")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd integer")
        if self.peak_neighborhood < 1:
            raise ConfigError("peak_neighborhood must be >= 1")
        if not 0.0 <= self.detect_min_score <= 1.0:
            raise ConfigError("detect_min_score out of range (must be in [0, 1])")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.noise_snr_db_low > self.noise_snr_db_high:
            raise ConfigError("noise_snr_db_low must be <= noise_snr_db_high")
        if not 0.0 <= self.pitch_shift_max_semitones <= 2.0:
            raise ConfigError("pitch_shift_max_semitones out of range (must be in [0, 2])")
        if not 0.0 < self.frr_match_iou <= 1.0:
            raise ConfigError("frr_match_iou out of range (must be in (0, 1])")
        if not 0.0 < self.merge_overlap_iou <= 1.0:
            raise ConfigError("merge_overlap_iou out of range (must be in (0, 1])")
        if self.cls_window_s <= 0:
            raise ConfigError("cls_window_s must be positive")
        # Raw STFT frames are reduced, never upsampled, to the target resolution.
        raw_frames = self.input_len_s * self.sample_rate_hz / self.hop_length
        if raw_frames < self.temporal_resolution:
            raise ConfigError(
                "temporal_resolution exceeds available frames "
                f"(input_len_s*sample_rate_hz/hop_length = {raw_frames:.1f} < "
                f"{self.temporal_resolution})"
            )


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _parse_value(key: str, raw: str):
    field = _FIELDS[key]
    raw = raw.strip()
    if field.type in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if field.type in ("int", int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if field.type in ("float", float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_config(text: str) -> PipelineConfig:
    """Parse ``key = value`` lines into a validated PipelineConfig."""
    overrides: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in overrides:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        overrides[key] = _parse_value(key, raw)
    cfg = PipelineConfig(**overrides)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    """Load a config file; absent keys fall back to the defaults above."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text)


def serialize_config(cfg: PipelineConfig) -> str:
    """Render a config as the key=value text format (round-trips exactly)."""
    lines = [
        f"{f.name} = {_format_value(getattr(cfg, f.name))}"
        for f in dataclasses.fields(PipelineConfig)
    ]
    return "\n".join(lines) + "\n"


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(serialize_config(cfg), encoding="utf-8")


def apply_overrides(cfg: PipelineConfig, overrides: dict[str, str]) -> PipelineConfig:
    """Apply string-valued overrides (e.g. from CLI flags) on top of a config."""
    parsed = {}
    for key, raw in overrides.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        parsed[key] = _parse_value(key, raw)
    updated = dataclasses.replace(cfg, **parsed)
    updated.validate()
    return updated


def config_hash(cfg: PipelineConfig) -> str:
    """Stable content hash of the full config serialization."""
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


# Keys that determine what a trained model IS: input pipeline, target
# geometry, loss semantics, and architecture.  Training-schedule and
# decode-time knobs are excluded so a checkpoint can be resumed for more
# epochs or decoded with different thresholds.
MODEL_IDENTITY_FIELDS = (
    "sample_rate_hz",
    "input_len_s",
    "hop_length",
    "win_length",
    "filter_length",
    "temporal_resolution",
    "log_spectrogram",
    "normalize_spectrogram",
    "num_keywords",
    "use_unknown_class",
    "gamma",
    "regress_unknown",
    "focal_alpha",
    "focal_beta",
    "lambda_len",
    "lambda_offset",
    "n_channels",
    "depth",
    "kernel_size",
    "cls_window_s",
)


def model_identity_hash(cfg: PipelineConfig) -> str:
    """Hash used to pair checkpoints with configs they are compatible with."""
    text = "\n".join(
        f"{name} = {_format_value(getattr(cfg, name))}" for name in MODEL_IDENTITY_FIELDS
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def config_field_names() -> list[str]:
    return [f.name for f in dataclasses.fields(PipelineConfig)]
