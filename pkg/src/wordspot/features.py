"""Audio ingestion and feature extraction.

Converts 16 kHz mono PCM audio into the fixed-resolution magnitude
spectrogram the detector consumes, and provides the training-time length
normalization and augmentation transforms.  All operations are pure given
(input, seed), so batch preparation can run in parallel workers.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig


class AudioError(ValueError):
    """Unusable audio input (wrong format, too short, bad parameters)."""


@dataclass
class AudioClip:
    """Mono audio samples as float64 amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def copy(self) -> "AudioClip":
        return AudioClip(self.samples.copy(), self.sample_rate_hz)


@dataclass
class Spectrogram:
    """Time-frequency magnitude matrix with frame-rate bookkeeping.

    ``frames_per_second`` is defined so that the frames evenly tile the
    source clip: frame ``f`` covers ``[f, f+1) / frames_per_second``
    seconds after ``origin_offset_s``.  Conversions in both directions are
    plain linear maps and stay consistent through temporal pooling.
    """

    data: np.ndarray  # [frames, freq_bins], magnitudes >= 0
    frames_per_second: float
    origin_offset_s: float = 0.0

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def freq_bins(self) -> int:
        return self.data.shape[1]

    def frame_of_time(self, t_s: float) -> float:
        return (t_s - self.origin_offset_s) * self.frames_per_second

    def time_of_frame(self, frame: float) -> float:
        return self.origin_offset_s + frame / self.frames_per_second


def read_wav(path: str | Path) -> AudioClip:
    """Read a 16-bit PCM mono WAV file; any other layout is rejected."""
    path = Path(path)
    if not path.exists():
        raise AudioError(f"audio file missing: {path}")
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1:
            raise AudioError(f"{path}: expected mono audio, got {wav.getnchannels()} channels")
        if wav.getsampwidth() != 2:
            raise AudioError(f"{path}: expected 16-bit PCM, got {8 * wav.getsampwidth()}-bit")
        rate = wav.getframerate()
        raw = wav.readframes(wav.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM mono WAV (values clipped to [-1, 1])."""
    scaled = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.round(scaled * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(clip.sample_rate_hz)
        wav.writeframes(pcm.tobytes())


def wav_duration_s(path: str | Path) -> float:
    """Duration from the WAV header without reading sample data."""
    with wave.open(str(Path(path)), "rb") as wav:
        return wav.getnframes() / wav.getframerate()


def require_sample_rate(clip: AudioClip, cfg: PipelineConfig) -> None:
    if clip.sample_rate_hz != cfg.sample_rate_hz:
        raise AudioError(
            f"sample rate mismatch: clip has {clip.sample_rate_hz} Hz, "
            f"pipeline expects {cfg.sample_rate_hz} Hz (resample before ingestion)"
        )


def stft_magnitude(clip: AudioClip, cfg: PipelineConfig) -> Spectrogram:
    """Magnitude spectrogram with a Hann window zero-padded to the filter length.

    Frame count is ``1 + floor((len - win_length) / hop_length)``; frequency
    bins number ``filter_length // 2 + 1``.
    """
    require_sample_rate(clip, cfg)
    n = len(clip.samples)
    if n < cfg.win_length:
        raise AudioError(f"clip too short for STFT: {n} samples < win_length {cfg.win_length}")
    hop, win, nfft = cfg.hop_length, cfg.win_length, cfg.filter_length
    n_frames = 1 + (n - win) // hop
    window = np.hanning(win)
    idx = hop * np.arange(n_frames)[:, None] + np.arange(win)[None, :]
    frames = clip.samples[idx] * window[None, :]
    mags = np.abs(np.fft.rfft(frames, n=nfft, axis=1))
    fps = n_frames * clip.sample_rate_hz / n
    return Spectrogram(data=mags, frames_per_second=fps)


def reduce_to_frames(spec: Spectrogram, target_frames: int) -> Spectrogram:
    """Average-pool the time axis down to exactly ``target_frames`` frames.

    Pool kernel is ``ceil(frames / target_frames)`` with non-overlapping
    stride; the final pool may be partially filled.  The frame rate is
    rescaled so the reduced frames span the same time extent.
    """
    frames = spec.num_frames
    if frames < target_frames:
        raise AudioError(f"cannot reduce {frames} frames to {target_frames}: too few frames")
    if frames == target_frames:
        return Spectrogram(spec.data.copy(), spec.frames_per_second, spec.origin_offset_s)
    kernel = math.ceil(frames / target_frames)
    if (target_frames - 1) * kernel >= frames:
        raise AudioError(
            f"pooling {frames} frames to {target_frames} with kernel {kernel} "
            "would leave an empty pool; choose a smaller target"
        )
    out = np.empty((target_frames, spec.freq_bins), dtype=spec.data.dtype)
    for t in range(target_frames):
        out[t] = spec.data[t * kernel : min((t + 1) * kernel, frames)].mean(axis=0)
    new_fps = spec.frames_per_second * target_frames / frames
    return Spectrogram(out, new_fps, spec.origin_offset_s)


def normalize_length(
    clip: AudioClip, target_s: float, mode: str, rng_seed: int
) -> AudioClip:
    """Force a clip to exactly ``round(target_s * rate)`` samples.

    ``repeat_pad`` tiles the clip; ``random_crop`` (deterministic in
    ``rng_seed``) and ``center_crop`` select a contiguous window.
    """
    if len(clip.samples) == 0:
        raise AudioError("cannot length-normalize an empty clip")
    target_n = round(target_s * clip.sample_rate_hz)
    n = len(clip.samples)
    if n == target_n:
        return clip.copy()
    if mode == "repeat_pad":
        reps = math.ceil(target_n / n)
        return AudioClip(np.tile(clip.samples, reps)[:target_n], clip.sample_rate_hz)
    if mode in ("random_crop", "center_crop"):
        if n < target_n:
            raise AudioError(f"cannot crop {n} samples to {target_n}: clip too short")
        if mode == "center_crop":
            start = (n - target_n) // 2
        else:
            start = int(np.random.default_rng(rng_seed).integers(0, n - target_n + 1))
        return AudioClip(clip.samples[start : start + target_n].copy(), clip.sample_rate_hz)
    raise AudioError(f"unknown length normalization mode {mode!r}")


def _white_noise_at_power(rng: np.random.Generator, n: int, power: float) -> np.ndarray:
    noise = rng.standard_normal(n)
    measured = float(np.mean(noise**2))
    if measured <= 0.0:
        return np.zeros(n)
    return noise * math.sqrt(power / measured)


def _ola_time_stretch(x: np.ndarray, factor: float, win: int = 1024, hop: int = 256) -> np.ndarray:
    """Overlap-add time stretch by ``factor`` (same pitch, new duration)."""
    n_out = max(1, round(len(x) * factor))
    window = np.hanning(win)
    out = np.zeros(n_out + win)
    weight = np.zeros(n_out + win)
    for pos_out in range(0, n_out, hop):
        pos_in = round(pos_out / factor)
        grain = x[pos_in : pos_in + win]
        if len(grain) < win:
            grain = np.pad(grain, (0, win - len(grain)))
        out[pos_out : pos_out + win] += grain * window
        weight[pos_out : pos_out + win] += window
    out = out[:n_out]
    weight = weight[:n_out]
    covered = weight > 1e-3
    out[covered] /= weight[covered]
    # Window endpoints are zero, so the first/last samples get no coverage;
    # fall back to the nearest source sample there.
    if not covered.all():
        idx = np.flatnonzero(~covered)
        src = np.clip(np.round(idx / factor).astype(int), 0, len(x) - 1)
        out[idx] = x[src]
    return out


def _resample_to_length(x: np.ndarray, n_out: int) -> np.ndarray:
    if len(x) == n_out:
        return x.copy()
    positions = np.linspace(0.0, len(x) - 1, n_out)
    return np.interp(positions, np.arange(len(x)), x)


def augment(clip: AudioClip, kind: str, param: float, rng_seed: int) -> AudioClip:
    """Apply one augmentation kind.

    ``additive_noise`` mixes white noise at ``param`` dB SNR (``inf`` means
    no noise).  ``pitch_shift`` shifts by ``param`` semitones (within
    [-2, 2]) through resample-then-restretch, preserving duration.
    """
    if kind == "additive_noise":
        snr_db = float(param)
        if math.isnan(snr_db):
            raise AudioError("additive_noise: SNR must be a number or +inf")
        if math.isinf(snr_db) and snr_db > 0:
            return clip.copy()
        signal_power = float(np.mean(clip.samples**2))
        noise_power = signal_power / (10.0 ** (snr_db / 10.0))
        rng = np.random.default_rng(rng_seed)
        noise = _white_noise_at_power(rng, len(clip.samples), noise_power)
        return AudioClip(clip.samples + noise, clip.sample_rate_hz)
    if kind == "pitch_shift":
        semitones = float(param)
        if math.isnan(semitones) or abs(semitones) > 2.0:
            raise AudioError("pitch_shift: semitone shift must lie in [-2, 2]")
        factor = 2.0 ** (semitones / 12.0)
        stretched = _ola_time_stretch(clip.samples, factor)
        shifted = _resample_to_length(stretched, len(clip.samples))
        return AudioClip(shifted, clip.sample_rate_hz)
    raise AudioError(f"unknown augmentation kind {kind!r}")


def model_features(clip: AudioClip, cfg: PipelineConfig) -> np.ndarray:
    """Full input pipeline: STFT -> pool to the target resolution -> log -> normalize.

    Returns a [temporal_resolution, freq_bins] float64 matrix.  The log and
    per-utterance mean/variance normalization steps follow the
    ``log_spectrogram`` / ``normalize_spectrogram`` config flags.
    """
    spec = reduce_to_frames(stft_magnitude(clip, cfg), cfg.temporal_resolution)
    x = spec.data
    if cfg.log_spectrogram:
        x = np.log1p(x)
    if cfg.normalize_spectrogram:
        x = (x - x.mean()) / (x.std() + 1e-8)
    return x


def chunk_spans(duration_s: float, input_len_s: float) -> list[tuple[float, float]]:
    """Split long audio into input-length chunks with 50% overlap.

    The final chunk is right-aligned so the tail is always covered.  Audio
    no longer than one input window yields a single ``[0, duration]`` span.
    """
    if duration_s <= input_len_s:
        return [(0.0, duration_s)]
    step = input_len_s / 2.0
    starts = []
    pos = 0.0
    while pos + input_len_s < duration_s - 1e-9:
        starts.append(pos)
        pos += step
    starts.append(duration_s - input_len_s)
    return [(s, s + input_len_s) for s in starts]
