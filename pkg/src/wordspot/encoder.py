"""Ground-truth target construction for training.

Each aligned word stamps a Gaussian bump onto its class channel of the
heatmap (peak value exactly 1 at the word's integer center frame, spread
proportional to the word length), and writes its length and sub-frame
offset at that center.  Overlapping bumps on the same channel combine by
pointwise maximum so peak values and locations are preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .dataset import AlignedWord, DataError


@dataclass
class TargetTensors:
    """Training targets: heatmap, per-center length/offset, and the regression mask."""

    heat: np.ndarray      # [frames, channels] in [0, 1]
    length: np.ndarray    # [frames] >= 0, nonzero only at word centers
    offset: np.ndarray    # [frames] in [0, 1), nonzero only at word centers
    mask: np.ndarray      # [frames] bool, true where regression losses apply
    num_keywords: int     # loss normalizer: keyword (not unknown) count


def count_keywords(words: list[AlignedWord], num_keyword_classes: int) -> int:
    """Number of words whose class is a keyword (unknown words excluded)."""
    return sum(1 for w in words if w.cls < num_keyword_classes)


def encode_targets(words: list[AlignedWord], cfg: PipelineConfig) -> TargetTensors:
    """Build (heatmap, length, offset, mask) tensors for one clip.

    Words must have distinct integer center frames.  Unknown-class words
    receive heat on the unknown channel when it exists and enter the
    regression mask when ``regress_unknown`` is set; they never count
    toward ``num_keywords``.  Without the unknown channel they are treated
    as background and contribute nothing.
    """
    frames = cfg.temporal_resolution
    channels = cfg.heatmap_channels
    heat = np.zeros((frames, channels))
    length = np.zeros(frames)
    offset = np.zeros(frames)
    mask = np.zeros(frames, dtype=bool)

    seen_locs = set()
    for w in words:
        w.validate(cfg.num_keywords, float(frames))
        if w.loc in seen_locs:
            raise DataError(f"two words share center frame {w.loc}; targets would collide")
        seen_locs.add(w.loc)

        is_unknown = w.cls >= cfg.num_keywords
        if is_unknown and not cfg.use_unknown_class:
            continue
        sigma = w.length * cfg.gamma
        radius = math.ceil(3.0 * sigma)
        lo = max(0, w.loc - radius)
        hi = min(frames - 1, w.loc + radius)
        t = np.arange(lo, hi + 1)
        bump = np.exp(-((t - w.loc) ** 2) / (2.0 * sigma * sigma))
        channel = heat[lo : hi + 1, w.cls]
        np.maximum(channel, bump, out=channel)
        heat[w.loc, w.cls] = 1.0

        if not is_unknown or cfg.regress_unknown:
            length[w.loc] = w.length
            offset[w.loc] = w.ofs
            mask[w.loc] = True

    return TargetTensors(
        heat=heat,
        length=length,
        offset=offset,
        mask=mask,
        num_keywords=count_keywords(words, cfg.num_keywords),
    )
