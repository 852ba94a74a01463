"""Training loops for the detector and the window classifier.

Everything is deterministic given the base seed: per-epoch RNGs are derived
from (seed, epoch), so training resumed from a checkpoint continues on
exactly the trajectory an uninterrupted run would have taken.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .dataset import AlignedWord, Utterance
from .encoder import TargetTensors, encode_targets
from .features import AudioClip, augment, model_features, read_wav
from .losses import (
    LossBreakdown,
    focal_heatmap_loss,
    l1_length_loss,
    l1_offset_loss,
    total_loss,
)
from .model import ArchSpec, Detector, save_checkpoint


class NumericFailure(RuntimeError):
    """Training produced a non-finite loss; details were dumped next to the run."""


class Adam:
    """Adam over the detector's named parameter dict (updates in place)."""

    def __init__(self, params: "OrderedDict[str, np.ndarray]", lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name, param in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.step_count])}
        for name in self.params:
            out[f"m:{name}"] = self.m[name]
            out[f"v:{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        if not arrays:
            return
        self.step_count = int(arrays["t"][0])
        for name in self.params:
            self.m[name] = arrays[f"m:{name}"].copy()
            self.v[name] = arrays[f"v:{name}"].copy()


def _shift_words(words: list[AlignedWord], shift_frames: float, frames: int) -> list[AlignedWord]:
    """Translate words onto a clip window, keeping only those fully inside."""
    out = []
    seen_locs = set()
    for w in words:
        loc_pc = w.loc_pc + shift_frames
        half = w.length / 2.0
        if loc_pc < 0 or loc_pc >= frames:
            continue
        if loc_pc - half < -0.5 or loc_pc + half > frames - 0.5 + 1.0:
            continue
        shifted = AlignedWord(text=w.text, cls=w.cls, loc_pc=loc_pc, length=w.length)
        if shifted.loc in seen_locs:  # crop rounding can merge close centers
            continue
        seen_locs.add(shifted.loc)
        out.append(shifted)
    return out


def prepare_training_example(
    utt: Utterance,
    samples: np.ndarray,
    cfg: PipelineConfig,
    rng: np.random.Generator,
    augment_on: bool,
) -> tuple[np.ndarray, TargetTensors]:
    """Length-normalize, optionally augment, and encode one utterance.

    Longer audio is randomly cropped (word positions shift with the crop);
    shorter audio is repeat-padded with labels replicated on each tile.
    """
    n_target = cfg.input_len_samples
    n = len(samples)
    fps = cfg.frames_per_second
    frames = cfg.temporal_resolution
    if n == n_target:
        clip_samples = samples
        words = _shift_words(utt.words, 0.0, frames)
    elif n > n_target:
        start = int(rng.integers(0, n - n_target + 1))
        clip_samples = samples[start : start + n_target]
        shift = -(start / cfg.sample_rate_hz) * fps
        words = _shift_words(utt.words, shift, frames)
    else:
        reps = math.ceil(n_target / n)
        clip_samples = np.tile(samples, reps)[:n_target]
        words = []
        for rep in range(reps):
            shift = (rep * n / cfg.sample_rate_hz) * fps
            tile_end_frame = min(frames, ((rep + 1) * n / cfg.sample_rate_hz) * fps)
            for w in _shift_words(utt.words, shift, frames):
                if w.loc_pc + w.length / 2.0 <= tile_end_frame + 0.5:
                    words.append(w)
        dedup: dict[int, AlignedWord] = {}
        for w in words:
            dedup.setdefault(w.loc, w)
        words = sorted(dedup.values(), key=lambda w: w.loc_pc)

    clip = AudioClip(np.asarray(clip_samples, dtype=np.float64), cfg.sample_rate_hz)
    if augment_on and cfg.augment_prob > 0:
        if rng.random() < cfg.augment_prob:
            snr = float(rng.uniform(cfg.noise_snr_db_low, cfg.noise_snr_db_high))
            clip = augment(clip, "additive_noise", snr, int(rng.integers(2**31)))
        if rng.random() < cfg.augment_prob and cfg.pitch_shift_max_semitones > 0:
            semis = float(rng.uniform(-cfg.pitch_shift_max_semitones, cfg.pitch_shift_max_semitones))
            clip = augment(clip, "pitch_shift", semis, int(rng.integers(2**31)))

    feats = model_features(clip, cfg)
    targets = encode_targets(words, cfg)
    return feats, targets


def batch_loss_and_grads(
    outputs: dict[str, np.ndarray],
    targets: list[TargetTensors],
    cfg: PipelineConfig,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Mean per-sample loss over a batch and gradients w.r.t. the outputs."""
    batch = len(targets)
    g_heat = np.zeros_like(outputs["heat"])
    g_length = np.zeros_like(outputs["length"])
    g_offset = np.zeros_like(outputs["offset"])
    h_sum = l_sum = o_sum = t_sum = 0.0
    n_sum = 0
    for i, tgt in enumerate(targets):
        l_h, gh = focal_heatmap_loss(
            outputs["heat"][i], tgt.heat, tgt.num_keywords, cfg.focal_alpha, cfg.focal_beta
        )
        l_len, gl = l1_length_loss(outputs["length"][i], tgt.length, tgt.mask, tgt.num_keywords)
        l_off, go = l1_offset_loss(outputs["offset"][i], tgt.offset, tgt.mask, tgt.num_keywords)
        parts = total_loss(l_h, l_len, l_off, tgt.num_keywords, cfg)
        g_heat[i] = gh / batch
        g_length[i] = gl * (cfg.lambda_len / batch)
        g_offset[i] = go * (cfg.lambda_offset / batch)
        h_sum += l_h
        l_sum += l_len
        o_sum += l_off
        t_sum += parts.total
        n_sum += parts.n_used
    breakdown = LossBreakdown(
        heatmap=h_sum / batch,
        length=l_sum / batch,
        offset=o_sum / batch,
        total=t_sum / batch,
        n_used=n_sum,
    )
    grads = {"heat": g_heat, "length": g_length, "offset": g_offset}
    return breakdown, grads


@dataclass
class TrainResult:
    checkpoint_path: Path
    steps: int
    final_loss: float
    log_path: Path


def _load_audio_cache(utts: list[Utterance], cfg: PipelineConfig) -> dict[str, np.ndarray]:
    from .features import AudioError

    cache = {}
    for utt in utts:
        clip = read_wav(utt.audio_path)
        if clip.sample_rate_hz != cfg.sample_rate_hz:
            raise AudioError(
                f"{utt.audio_path}: sample rate {clip.sample_rate_hz} != {cfg.sample_rate_hz}"
            )
        cache[utt.utt_id] = clip.samples
    return cache


def train_detector(
    train_utts: list[Utterance],
    cfg: PipelineConfig,
    seed: int,
    out_dir: str | Path,
    epochs: int | None = None,
    resume: str | Path | None = None,
    quiet: bool = False,
) -> TrainResult:
    """Train the detector; writes per-epoch checkpoints and a JSONL step log.

    A non-finite loss aborts immediately: the offending batch is dumped to
    ``numeric_failure.json`` and NumericFailure is raised.
    """
    from .model import load_checkpoint

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    epochs = epochs if epochs is not None else cfg.epochs

    if resume is not None:
        detector, ckpt_cfg, opt_state, extra = load_checkpoint(resume, expected_cfg=cfg)
        start_epoch = int(extra.get("epoch", 0)) + 1
    else:
        arch = ArchSpec.from_config(cfg)
        detector = Detector(arch, seed=seed)
        opt_state, start_epoch = {}, 0

    adam = Adam(detector.parameters(), cfg.learning_rate)
    adam.load_state(opt_state)
    if not quiet:
        info = detector.describe()
        print(
            f"detector: {info['num_parameters']} parameters, receptive field "
            f"+-{info['receptive_field_radius_frames']} frames"
        )

    audio = _load_audio_cache(train_utts, cfg)
    log_path = out_dir / "train_log.jsonl"
    log_lines = []
    if resume is not None and log_path.exists():
        log_lines = log_path.read_text(encoding="utf-8").splitlines()
        log_lines = [ln for ln in log_lines if json.loads(ln)["epoch"] < start_epoch]

    steps = 0
    final_loss = float("nan")
    ckpt_path = out_dir / "model.npz"
    for epoch in range(start_epoch, epochs):
        rng = np.random.default_rng(np.random.SeedSequence((seed, epoch)))
        order = rng.permutation(len(train_utts))
        for lo in range(0, len(order), cfg.batch_size):
            idxs = order[lo : lo + cfg.batch_size]
            batch_utts = [train_utts[i] for i in idxs]
            feats, targets = [], []
            for utt in batch_utts:
                f, t = prepare_training_example(utt, audio[utt.utt_id], cfg, rng, augment_on=True)
                feats.append(f)
                targets.append(t)
            x = np.stack(feats)
            outputs, cache = detector.forward_batch(x)
            breakdown, out_grads = batch_loss_and_grads(outputs, targets, cfg)
            if not math.isfinite(breakdown.total):
                dump = {
                    "epoch": epoch,
                    "step": steps,
                    "utterances": [u.utt_id for u in batch_utts],
                    "loss": {
                        "heatmap": breakdown.heatmap,
                        "length": breakdown.length,
                        "offset": breakdown.offset,
                        "total": breakdown.total,
                    },
                }
                (out_dir / "numeric_failure.json").write_text(
                    json.dumps(dump, indent=2, default=str) + "\n", encoding="utf-8"
                )
                raise NumericFailure(
                    f"non-finite loss at epoch {epoch} step {steps}; "
                    f"batch dumped to {out_dir / 'numeric_failure.json'}"
                )
            param_grads = detector.backward(cache, out_grads)
            adam.step(param_grads)
            final_loss = breakdown.total
            log_lines.append(
                json.dumps(
                    {
                        "epoch": epoch,
                        "step": steps,
                        "loss_heatmap": breakdown.heatmap,
                        "loss_length": breakdown.length,
                        "loss_offset": breakdown.offset,
                        "loss_total": breakdown.total,
                        "n_used": breakdown.n_used,
                    }
                )
            )
            steps += 1
        epoch_ckpt = ckpt_dir / f"epoch_{epoch:03d}.npz"
        save_checkpoint(
            epoch_ckpt, detector, cfg, optimizer_state=adam.state_arrays(), extra={"epoch": epoch}
        )
        save_checkpoint(
            ckpt_path, detector, cfg, optimizer_state=adam.state_arrays(), extra={"epoch": epoch}
        )
        if not quiet:
            print(f"epoch {epoch + 1}/{epochs}: loss {final_loss:.4f}")
        log_path.write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    return TrainResult(ckpt_path, steps, final_loss, log_path)


# ---------------------------------------------------------------------------
# Window classifier (classification-head variant and sliding-window baseline)
# ---------------------------------------------------------------------------


def window_frame_count(cfg: PipelineConfig) -> int:
    n = round(cfg.cls_window_s * cfg.sample_rate_hz)
    return 1 + (n - cfg.win_length) // cfg.hop_length


def window_features(samples: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    clip = AudioClip(np.asarray(samples, dtype=np.float64), cfg.sample_rate_hz)
    spec_frames = window_frame_count(cfg)
    from .features import reduce_to_frames, stft_magnitude

    spec = reduce_to_frames(stft_magnitude(clip, cfg), spec_frames)
    x = spec.data
    if cfg.log_spectrogram:
        x = np.log1p(x)
    if cfg.normalize_spectrogram:
        x = (x - x.mean()) / (x.std() + 1e-8)
    return x


def build_window_dataset(
    utts: list[Utterance],
    audio: dict[str, np.ndarray],
    cfg: PipelineConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Trimmed training windows: one per word, plus noise-only background windows.

    Labels: 0..C-1 keywords, C unknown word, C+1 background.
    """
    w_samples = round(cfg.cls_window_s * cfg.sample_rate_hz)
    fps = cfg.frames_per_second
    feats, labels = [], []
    for utt in utts:
        samples = audio[utt.utt_id]
        for w in utt.words:
            center = (w.loc_pc / fps) * cfg.sample_rate_hz
            start = int(round(center - w_samples / 2))
            start = max(0, min(start, len(samples) - w_samples))
            if len(samples) < w_samples:
                continue
            feats.append(window_features(samples[start : start + w_samples], cfg))
            labels.append(w.cls)
        n_bg = max(1, len(utt.words) // 6)
        for _ in range(n_bg):
            noise = rng.standard_normal(w_samples) * rng.uniform(0.001, 0.02)
            feats.append(window_features(noise, cfg))
            labels.append(cfg.num_keywords + 1)
    return np.stack(feats), np.asarray(labels)


def train_window_classifier(
    train_utts: list[Utterance],
    cfg: PipelineConfig,
    seed: int,
    epochs: int = 12,
    holdout_fraction: float = 0.15,
    quiet: bool = True,
) -> tuple[Detector, float]:
    """Train the classification-head variant on trimmed windows.

    Returns (classifier, held-out window accuracy).
    """
    frames = window_frame_count(cfg)
    if frames % (2**cfg.depth) != 0:
        raise NumericFailure(
            f"window of {frames} frames is not divisible by 2^depth={2**cfg.depth}; "
            "adjust cls_window_s"
        )
    arch = ArchSpec.from_config(cfg, frames=frames, num_cls_classes=cfg.num_keywords + 2)
    detector = Detector(arch, seed=seed)
    adam = Adam(detector.parameters(), cfg.learning_rate)

    audio = _load_audio_cache(train_utts, cfg)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD47A)))
    x, y = build_window_dataset(train_utts, audio, cfg, rng)
    order = rng.permutation(len(y))
    n_hold = max(1, int(len(y) * holdout_fraction))
    hold_idx, train_idx = order[:n_hold], order[n_hold:]

    batch = min(cfg.batch_size, len(train_idx))
    for epoch in range(epochs):
        ep_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC15, epoch)))
        perm = ep_rng.permutation(train_idx)
        losses = []
        for lo in range(0, len(perm), batch):
            idxs = perm[lo : lo + batch]
            probs, cache = detector.classification_forward(x[idxs])
            b = len(idxs)
            p_true = probs[np.arange(b), y[idxs]]
            loss = float(np.mean(-np.log(np.clip(p_true, 1e-12, None))))
            if not math.isfinite(loss):
                raise NumericFailure(f"non-finite classifier loss at epoch {epoch}")
            grad_probs = np.zeros_like(probs)
            grad_probs[np.arange(b), y[idxs]] = -1.0 / np.clip(p_true, 1e-12, None) / b
            grads = detector.classification_backward(cache, grad_probs)
            adam.step(grads)
            losses.append(loss)
        if not quiet:
            print(f"classifier epoch {epoch + 1}/{epochs}: loss {np.mean(losses):.4f}")

    probs, _ = detector.classification_forward(x[hold_idx])
    accuracy = float(np.mean(np.argmax(probs, axis=1) == y[hold_idx]))
    return detector, accuracy
