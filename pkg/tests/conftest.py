import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wordspot.config import PipelineConfig
from wordspot.dataset import SynthSpec, generate_synthetic_corpus, load_corpus


@pytest.fixture(scope="session")
def default_cfg() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A very small corpus for fast pipeline tests (not the acceptance corpus)."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    spec = SynthSpec(
        num_keywords=3,
        num_utterances=24,
        words_per_utterance=10,
        split_fractions=(0.75, 0.125, 0.125),
    )
    generate_synthetic_corpus(spec, rng_seed=11, out_dir=out)
    return out


@pytest.fixture(scope="session")
def tiny_corpus_loaded(tiny_corpus, default_cfg):
    return load_corpus(tiny_corpus, default_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
