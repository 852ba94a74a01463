"""Corpus handling: word alignments, keyword classes, and synthetic data.

The alignment format is a TSV with one aligned word per line:
``utterance_id <TAB> audio_path <TAB> word <TAB> start_s <TAB> end_s``.
Word times are converted to frame-space centers and lengths using the
canonical frame rate, so everything downstream lives on the detector's
temporal grid.

The synthetic corpus generator builds a desk-scale stand-in for a real
continuous-speech corpus: keyword "words" are fixed multi-tone patterns,
fillers are random tone sequences, and words butt up against each other
with no silence in between.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .features import AudioClip, wav_duration_s, write_wav


class DataError(ValueError):
    """Malformed corpus data (alignments, splits, keyword lists)."""


@dataclass(frozen=True)
class KeywordSet:
    """Ordered keyword vocabulary; class index of a keyword is its position.

    Matching is case-insensitive on whole words.  Multi-word key phrases
    (e.g. "talk about") match a contiguous run of aligned words.  Any word
    outside the set belongs to the unknown class, whose index equals the
    number of keywords.
    """

    names: tuple[str, ...]

    def __post_init__(self):
        if not self.names:
            raise DataError("keyword set must contain at least one keyword")
        lowered = [n.lower() for n in self.names]
        if len(set(lowered)) != len(lowered):
            raise DataError("keyword names must be unique (case-insensitive)")
        if any(not n.strip() for n in self.names):
            raise DataError("keyword names must be non-empty")

    @property
    def num_keywords(self) -> int:
        return len(self.names)

    @property
    def unknown_index(self) -> int:
        return len(self.names)

    def class_of(self, word: str) -> int:
        """Class index for a single word; unknown_index when not a keyword."""
        lowered = word.lower()
        for c, name in enumerate(self.names):
            if name.lower() == lowered:
                return c
        return self.unknown_index

    def name_of(self, cls: int) -> str:
        if 0 <= cls < len(self.names):
            return self.names[cls]
        if cls == self.unknown_index:
            return "<unknown>"
        raise DataError(f"class index {cls} out of range")

    def phrase_tokens(self) -> list[tuple[int, tuple[str, ...]]]:
        """(class, lowercase token tuple) pairs, longest phrases first."""
        items = [(c, tuple(n.lower().split())) for c, n in enumerate(self.names)]
        return sorted(items, key=lambda item: -len(item[1]))

    @classmethod
    def from_file(cls, path: str | Path) -> "KeywordSet":
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
        return cls(tuple(ln for ln in lines if ln))

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.names) + "\n", encoding="utf-8")


@dataclass
class AlignedWord:
    """One word occurrence on the detector's frame grid.

    ``loc_pc`` is the precise (real-valued) center frame, split into the
    integer frame ``loc`` and the sub-frame remainder ``ofs``; ``length``
    is the word extent in frames.
    """

    text: str
    cls: int
    loc_pc: float
    length: float

    @property
    def loc(self) -> int:
        return int(math.floor(self.loc_pc))

    @property
    def ofs(self) -> float:
        return self.loc_pc - self.loc

    def interval_frames(self) -> tuple[float, float]:
        half = self.length / 2.0
        return (self.loc_pc - half, self.loc_pc + half)

    def interval_seconds(self, frames_per_second: float) -> tuple[float, float]:
        lo, hi = self.interval_frames()
        return (lo / frames_per_second, hi / frames_per_second)

    def validate(self, num_keywords: int, frame_extent: float) -> None:
        """Check invariants against a clip that spans ``frame_extent`` frames."""
        if not 0 <= self.cls <= num_keywords:
            raise DataError(f"word {self.text!r}: class {self.cls} out of range")
        if self.length <= 0:
            raise DataError(f"word {self.text!r}: degenerate interval (length must be > 0)")
        if self.loc_pc < 0 or self.loc_pc >= frame_extent:
            raise DataError(
                f"word {self.text!r}: center frame {self.loc_pc:.2f} outside [0, {frame_extent:.2f})"
            )
        lo, hi = self.interval_frames()
        if lo < -1.5 or hi > frame_extent + 0.5:
            raise DataError(
                f"word {self.text!r}: interval [{lo:.2f}, {hi:.2f}] extends beyond the clip"
            )


@dataclass
class Utterance:
    utt_id: str
    audio_path: Path
    duration_s: float
    words: list[AlignedWord] = field(default_factory=list)


def _match_words_to_classes(
    texts: list[str], keywords: KeywordSet
) -> list[tuple[int, int, int]]:
    """Greedy longest-phrase matching over a word sequence.

    Returns (start_index, end_index_exclusive, class) runs covering every
    word; non-keyword words become single-word unknown runs.
    """
    phrases = keywords.phrase_tokens()
    lowered = [t.lower() for t in texts]
    runs = []
    i = 0
    while i < len(texts):
        matched = False
        for cls, tokens in phrases:
            k = len(tokens)
            if tuple(lowered[i : i + k]) == tokens:
                runs.append((i, i + k, cls))
                i += k
                matched = True
                break
        if not matched:
            runs.append((i, i + 1, keywords.unknown_index))
            i += 1
    return runs


def load_alignments(
    path: str | Path,
    keywords: KeywordSet,
    cfg: PipelineConfig,
    audio_root: str | Path | None = None,
    check_audio: bool = True,
) -> list[Utterance]:
    """Load an alignment TSV into utterances with frame-space words.

    Word intervals are validated against the audio duration; keyword
    phrases are matched case-insensitively and merged into single spanning
    words.  Raises DataError on malformed records, missing audio, or
    intervals outside the audio.
    """
    path = Path(path)
    root = Path(audio_root) if audio_root is not None else path.parent
    if not path.exists():
        raise DataError(f"alignment file missing: {path}")
    rows: dict[str, list[tuple[str, float, float]]] = {}
    audio_of: dict[str, Path] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
        utt_id, audio_rel, word, start_raw, end_raw = parts
        try:
            start_s, end_s = float(start_raw), float(end_raw)
        except ValueError:
            raise DataError(f"{path}:{lineno}: start/end must be numbers") from None
        if not word.strip():
            raise DataError(f"{path}:{lineno}: empty word")
        if end_s <= start_s:
            raise DataError(f"{path}:{lineno}: degenerate interval ({start_s} .. {end_s})")
        audio_path = root / audio_rel
        prior = audio_of.setdefault(utt_id, audio_path)
        if prior != audio_path:
            raise DataError(f"{path}:{lineno}: utterance {utt_id!r} maps to two audio files")
        rows.setdefault(utt_id, []).append((word, start_s, end_s))

    fps = cfg.frames_per_second
    utterances = []
    for utt_id, records in rows.items():
        audio_path = audio_of[utt_id]
        if check_audio:
            if not audio_path.exists():
                raise DataError(f"utterance {utt_id!r}: audio file missing: {audio_path}")
            duration_s = wav_duration_s(audio_path)
        else:
            duration_s = max(end for _, _, end in records)
        records = sorted(records, key=lambda r: r[1])
        for word, start_s, end_s in records:
            if end_s > duration_s + 1e-6:
                raise DataError(
                    f"utterance {utt_id!r}: word {word!r} ends at {end_s:.3f}s, "
                    f"beyond the {duration_s:.3f}s audio"
                )
        texts = [r[0] for r in records]
        words = []
        for i0, i1, cls in _match_words_to_classes(texts, keywords):
            start_s = records[i0][1]
            end_s = records[i1 - 1][2]
            center = 0.5 * (start_s + end_s)
            text = " ".join(texts[i0:i1])
            words.append(
                AlignedWord(text=text, cls=cls, loc_pc=center * fps, length=(end_s - start_s) * fps)
            )
        words.sort(key=lambda w: w.loc_pc)
        frame_extent = duration_s * fps
        seen_locs = set()
        for w in words:
            w.validate(keywords.num_keywords, frame_extent)
            if w.loc in seen_locs:
                raise DataError(
                    f"utterance {utt_id!r}: two words share center frame {w.loc} "
                    "(temporal resolution too coarse for this alignment)"
                )
            seen_locs.add(w.loc)
        utterances.append(Utterance(utt_id, audio_path, duration_s, words))
    return utterances


def write_alignments(
    path: str | Path, utterances: list[Utterance], cfg: PipelineConfig, audio_root: str | Path | None = None
) -> None:
    """Inverse of load_alignments (frame-space words back to seconds)."""
    path = Path(path)
    root = Path(audio_root) if audio_root is not None else path.parent
    fps = cfg.frames_per_second
    lines = []
    for utt in utterances:
        try:
            rel = utt.audio_path.relative_to(root)
        except ValueError:
            rel = utt.audio_path
        for w in utt.words:
            start_s, end_s = w.interval_seconds(fps)
            lines.append(f"{utt.utt_id}\t{rel}\t{w.text}\t{start_s!r}\t{end_s!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


KEYWORD_NAME_POOL = (
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliett", "kilo", "lima", "mike", "november", "oscar", "papa",
    "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu",
)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic continuous-speech corpus generator."""

    num_keywords: int = 3
    num_utterances: int = 360
    words_per_utterance: int = 12
    keyword_prob: float = 0.25
    utterance_s: float = 5.11
    sample_rate_hz: int = 16000
    snr_db: float = 20.0
    tone_vocab_size: int = 12
    tones_per_keyword: int = 3
    filler_tones_max: int = 3
    tone_low_hz: float = 350.0
    tone_high_hz: float = 2800.0
    split_fractions: tuple[float, ...] = (0.8, 0.1, 0.1)

    def keyword_names(self) -> tuple[str, ...]:
        if self.num_keywords <= len(KEYWORD_NAME_POOL):
            return KEYWORD_NAME_POOL[: self.num_keywords]
        extra = tuple(f"kw{i}" for i in range(len(KEYWORD_NAME_POOL), self.num_keywords))
        return KEYWORD_NAME_POOL + extra


def _tone(freq: float, n_samples: int, rate: int, phase: float, amp: float = 0.3) -> np.ndarray:
    t = np.arange(n_samples) / rate
    wave_ = amp * np.sin(2.0 * math.pi * freq * t + phase)
    fade = min(round(0.005 * rate), n_samples // 2)
    if fade > 0:
        ramp = 0.5 * (1.0 - np.cos(np.linspace(0.0, math.pi, fade)))
        wave_[:fade] *= ramp
        wave_[-fade:] *= ramp[::-1]
    return wave_


def _render_word(
    tone_indices: list[int],
    tone_freqs: np.ndarray,
    n_samples: int,
    rate: int,
    rng: np.random.Generator,
) -> np.ndarray:
    bounds = np.round(np.linspace(0, n_samples, len(tone_indices) + 1)).astype(int)
    parts = []
    for idx, (a, b) in zip(tone_indices, zip(bounds[:-1], bounds[1:])):
        parts.append(_tone(tone_freqs[idx], b - a, rate, phase=rng.uniform(0, 2 * math.pi)))
    return np.concatenate(parts) if parts else np.zeros(0)


def generate_synthetic_corpus(
    spec: SynthSpec, rng_seed: int, out_dir: str | Path
) -> Path:
    """Write a deterministic synthetic corpus to ``out_dir``.

    Layout: ``audio/*.wav``, ``alignments.tsv``, ``keywords.txt``,
    ``splits/{train,dev,test}.txt``, ``corpus.json``.  Every utterance is
    continuous tone-speech: words are tiled back to back with no silence,
    keywords are fixed tone patterns, fillers random ones, and white noise
    is mixed at the requested SNR.
    """
    if spec.num_keywords < 1:
        raise DataError("num_keywords must be >= 1")
    if spec.num_utterances < 1:
        raise DataError("num_utterances must be >= 1")
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "splits").mkdir(exist_ok=True)

    rng = np.random.default_rng(rng_seed)
    rate = spec.sample_rate_hz
    tone_freqs = np.geomspace(spec.tone_low_hz, spec.tone_high_hz, spec.tone_vocab_size)

    # Fixed tone pattern per keyword; patterns are pairwise distinct.
    patterns: list[tuple[int, ...]] = []
    while len(patterns) < spec.num_keywords:
        cand = tuple(rng.choice(spec.tone_vocab_size, size=spec.tones_per_keyword, replace=False))
        if cand not in patterns:
            patterns.append(cand)
    names = spec.keyword_names()

    n_target = round(spec.utterance_s * rate)
    alignment_lines = []
    utt_ids = []
    for u in range(spec.num_utterances):
        utt_id = f"utt_{u:05d}"
        utt_ids.append(utt_id)
        word_plans = []  # (text, tone indices, nominal duration, is_keyword)
        for _ in range(spec.words_per_utterance):
            if rng.random() < spec.keyword_prob:
                cls = int(rng.integers(spec.num_keywords))
                tones = list(patterns[cls])
                dur = float(len(tones) * rng.uniform(0.13, 0.16))
                word_plans.append((names[cls], tones, dur, True))
            else:
                n_tones = int(rng.integers(1, spec.filler_tones_max + 1))
                tones = [int(rng.integers(spec.tone_vocab_size)) for _ in range(n_tones)]
                text = "f" + ".".join(f"{t:02d}" for t in tones)
                dur = float(rng.uniform(0.25, 0.55))
                word_plans.append((text, tones, dur, False))
        # Fillers absorb the timing slack so keyword durations stay as drawn
        # (bounded), no matter how many words share the utterance.
        kw_total = sum(d for _, _, d, is_kw in word_plans if is_kw)
        filler_total = sum(d for _, _, d, is_kw in word_plans if not is_kw)
        filler_scale = (spec.utterance_s - kw_total) / filler_total if filler_total else 0.0
        if filler_total and 0.3 <= filler_scale <= 3.5:
            scales = (1.0, filler_scale)
        else:
            global_scale = spec.utterance_s / (kw_total + filler_total)
            scales = (global_scale, global_scale)
        bounds = [0]
        acc = 0.0
        for _, _, dur, is_kw in word_plans:
            acc += dur * scales[0 if is_kw else 1]
            bounds.append(round(acc * rate))
        bounds[-1] = n_target

        signal = np.zeros(n_target)
        for (text, tones, _, _), a, b in zip(word_plans, bounds[:-1], bounds[1:]):
            signal[a:b] = _render_word(tones, tone_freqs, b - a, rate, rng)
            alignment_lines.append(
                f"{utt_id}\taudio/{utt_id}.wav\t{text}\t{a / rate!r}\t{b / rate!r}"
            )
        power = float(np.mean(signal**2))
        noise = rng.standard_normal(n_target)
        noise *= math.sqrt(power / (10.0 ** (spec.snr_db / 10.0)) / max(np.mean(noise**2), 1e-30))
        mix = signal + noise
        peak = float(np.max(np.abs(mix)))
        if peak > 0.97:
            mix *= 0.97 / peak
        write_wav(audio_dir / f"{utt_id}.wav", AudioClip(mix, rate))

    (out_dir / "alignments.tsv").write_text("\n".join(alignment_lines) + "\n", encoding="utf-8")
    KeywordSet(names).to_file(out_dir / "keywords.txt")

    splits = split_dataset(utt_ids, spec.split_fractions, rng_seed)
    for split_name, ids in zip(("train", "dev", "test"), splits):
        (out_dir / "splits" / f"{split_name}.txt").write_text(
            "\n".join(ids) + ("\n" if ids else ""), encoding="utf-8"
        )

    meta = {
        "num_keywords": spec.num_keywords,
        "num_utterances": spec.num_utterances,
        "words_per_utterance": spec.words_per_utterance,
        "keyword_prob": spec.keyword_prob,
        "utterance_s": spec.utterance_s,
        "sample_rate_hz": spec.sample_rate_hz,
        "snr_db": spec.snr_db,
        "seed": rng_seed,
        "keyword_names": list(names),
        "keyword_tone_patterns": [list(map(int, p)) for p in patterns],
        "tone_freqs_hz": [float(f) for f in tone_freqs],
        "split_sizes": [len(s) for s in splits],
    }
    (out_dir / "corpus.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return out_dir


def split_dataset(
    ids: list[str], fractions: tuple[float, ...], rng_seed: int
) -> tuple[list[str], ...]:
    """Deterministic utterance-level split; fractions must sum to 1."""
    if not ids:
        raise DataError("cannot split an empty corpus")
    if not 1 <= len(fractions) <= 3:
        raise DataError("expected between 1 and 3 split fractions")
    if any(f < 0 for f in fractions):
        raise DataError("split fractions must be non-negative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1 (got {sum(fractions)})")
    order = list(ids)
    np.random.default_rng(rng_seed).shuffle(order)
    boundaries = [0]
    acc = 0.0
    for f in fractions:
        acc += f
        boundaries.append(round(acc * len(order)))
    boundaries[-1] = len(order)
    parts = tuple(order[a:b] for a, b in zip(boundaries[:-1], boundaries[1:]))
    return parts + tuple([] for _ in range(3 - len(parts)))


def load_corpus(
    corpus_dir: str | Path, cfg: PipelineConfig
) -> tuple[KeywordSet, dict[str, list[Utterance]]]:
    """Read a corpus directory into (keywords, per-split utterance lists)."""
    corpus_dir = Path(corpus_dir)
    if not (corpus_dir / "keywords.txt").exists():
        raise DataError(
            f"{corpus_dir} is not a corpus directory (missing keywords.txt); "
            "generate one with 'wordspot gen-data'"
        )
    keywords = KeywordSet.from_file(corpus_dir / "keywords.txt")
    utterances = load_alignments(corpus_dir / "alignments.tsv", keywords, cfg, audio_root=corpus_dir)
    by_id = {u.utt_id: u for u in utterances}
    splits: dict[str, list[Utterance]] = {}
    for split_name in ("train", "dev", "test"):
        split_path = corpus_dir / "splits" / f"{split_name}.txt"
        if not split_path.exists():
            splits[split_name] = []
            continue
        ids = [ln.strip() for ln in split_path.read_text(encoding="utf-8").splitlines() if ln.strip()]
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"split {split_name!r} references unknown utterances: {missing[:3]}")
        splits[split_name] = [by_id[i] for i in ids]
    return keywords, splits


def merge_chunk_detections(detections, overlap_iou: float):
    """Collapse duplicate detections produced by overlapping audio chunks.

    Input items are (chunk_index, detection) pairs whose detections carry
    absolute-time intervals.  Higher-scoring detections win; a detection is
    dropped when a kept detection of the same class from a different chunk
    overlaps it with IoU >= ``overlap_iou``.  Within-chunk detections are
    never suppressed (the decoder applies no NMS).
    """
    from .metrics import iou_1d

    ranked = sorted(detections, key=lambda cd: (-cd[1].score, cd[1].center_s(), cd[1].cls))
    kept: list = []
    for chunk, det in ranked:
        duplicate = False
        for kchunk, kdet in kept:
            if kchunk == chunk or kdet.cls != det.cls:
                continue
            if iou_1d(kdet.interval_s(), det.interval_s()) >= overlap_iou:
                duplicate = True
                break
        if not duplicate:
            kept.append((chunk, det))
    kept.sort(key=lambda cd: (-cd[1].score, cd[1].center_s(), cd[1].cls))
    return [det for _, det in kept]
