import numpy as np
import pytest

from wordspot.config import PipelineConfig
from wordspot.dataset import AlignedWord
from wordspot.decoder import (
    decode,
    find_peaks,
    read_detections_jsonl,
    score_threshold_filter,
    write_detections_jsonl,
    detection_record,
)
from wordspot.encoder import encode_targets
from wordspot.model import PredictionTensors


@pytest.fixture(scope="module")
def cfg():
    return PipelineConfig(num_keywords=3)


class TestFindPeaks:
    def test_simple_peak(self):
        assert find_peaks(np.array([0.1, 0.9, 0.1])) == [(1, 0.9)]

    def test_monotone_increasing_boundary(self):
        column = np.linspace(0.0, 1.0, 16)
        assert find_peaks(column) == [(15, 1.0)]

    def test_plateau_leftmost(self):
        assert find_peaks(np.array([0.2, 0.5, 0.5, 0.2])) == [(1, 0.5)]

    def test_plateau_on_rising_slope_is_not_a_peak(self):
        assert find_peaks(np.array([0.2, 0.5, 0.5, 0.9])) == [(3, 0.9)]

    def test_plateau_at_left_edge(self):
        assert find_peaks(np.array([0.5, 0.5, 0.2])) == [(0, 0.5)]

    def test_multiple_peaks(self):
        column = np.array([0.0, 0.6, 0.1, 0.0, 0.8, 0.0])
        assert find_peaks(column) == [(1, 0.6), (4, 0.8)]

    def test_wider_neighborhood(self):
        column = np.array([0.0, 0.5, 0.4, 0.6, 0.0, 0.0])
        assert find_peaks(column, neighborhood=1) == [(1, 0.5), (3, 0.6)]
        assert find_peaks(column, neighborhood=2) == [(3, 0.6)]


def preds_from_targets(tgt):
    return PredictionTensors(heat=tgt.heat, length=tgt.length, offset=tgt.offset)


class TestDecode:
    def test_round_trip_via_encoder(self, cfg):
        words = [
            AlignedWord(text="a", cls=0, loc_pc=20.3, length=8.0),
            AlignedWord(text="b", cls=2, loc_pc=54.9, length=11.5),
            AlignedWord(text="u", cls=3, loc_pc=90.1, length=6.0),  # unknown
        ]
        tgt = encode_targets(words, cfg)
        dets = decode(preds_from_targets(tgt), cfg)
        dets = score_threshold_filter(dets, 0.99)
        assert len(dets) == 2  # unknown never emitted
        by_cls = {d.cls: d for d in dets}
        assert set(by_cls) == {0, 2}
        assert by_cls[0].center == pytest.approx(20.3)
        assert by_cls[0].length == pytest.approx(8.0)
        assert by_cls[2].center == pytest.approx(54.9)
        assert by_cls[2].length == pytest.approx(11.5)
        for d in dets:
            assert d.score == 1.0

    def test_all_zero_heatmap(self, cfg):
        preds = PredictionTensors(
            heat=np.zeros((128, 4)), length=np.zeros(128), offset=np.zeros(128)
        )
        assert decode(preds, cfg) == []

    def test_top_m_truncation(self):
        cfg = PipelineConfig(num_keywords=3, max_detections=30)
        rng = np.random.default_rng(0)
        heat = np.zeros((128, 4))
        # 40 isolated peaks with distinct scores on keyword channels only
        scores = rng.permutation(np.linspace(0.2, 0.9, 40))
        positions = np.arange(2, 2 + 40 * 3, 3)
        for pos, score in zip(positions, scores):
            heat[pos, pos % 3] = score
        preds = PredictionTensors(heat=heat, length=np.ones(128), offset=np.zeros(128))
        dets = decode(preds, cfg)
        assert len(dets) == 30
        kept_scores = sorted((d.score for d in dets), reverse=True)
        assert kept_scores == sorted(scores, reverse=True)[:30]
        assert [d.score for d in dets] == kept_scores  # sorted by descending score

    def test_unknown_competes_for_slots(self):
        cfg = PipelineConfig(num_keywords=1, max_detections=2)
        heat = np.zeros((16, 2))
        heat[2, 1] = 0.9   # unknown, takes a slot
        heat[6, 1] = 0.8   # unknown, takes the other slot
        heat[10, 0] = 0.7  # keyword, pushed out by the unknowns
        preds = PredictionTensors(heat=heat, length=np.ones(16), offset=np.zeros(16))
        assert decode(preds, cfg) == []

    def test_score_order_and_tiebreak(self, cfg):
        heat = np.zeros((128, 4))
        heat[10, 0] = 0.5
        heat[10 + 4, 1] = 0.5
        heat[50, 2] = 0.9
        preds = PredictionTensors(heat=heat, length=np.ones(128), offset=np.zeros(128))
        dets = decode(preds, cfg)
        assert [d.cls for d in dets] == [2, 0, 1]  # ties: lower frame first, then lower class

    def test_monotone_transform_invariance(self, cfg):
        rng = np.random.default_rng(4)
        heat = np.clip(rng.random((128, 4)), 1e-6, 1 - 1e-6) * 0.5
        preds = PredictionTensors(heat=heat, length=rng.uniform(1, 5, 128), offset=rng.random(128))
        base = decode(preds, cfg)
        transformed = PredictionTensors(heat=heat**2, length=preds.length, offset=preds.offset)
        squared = decode(transformed, cfg)
        assert [(d.cls, d.center, d.length) for d in base] == [
            (d.cls, d.center, d.length) for d in squared
        ]

    def test_seconds_conversion(self, cfg):
        heat = np.zeros((128, 4))
        heat[64, 1] = 0.8
        offset = np.zeros(128)
        offset[64] = 0.5
        length = np.zeros(128)
        length[64] = 10.0
        preds = PredictionTensors(heat=heat, length=length, offset=offset)
        det = decode(preds, cfg, origin_offset_s=2.0)[0]
        fps = cfg.frames_per_second
        assert det.center_s() == pytest.approx(2.0 + 64.5 / fps)
        lo, hi = det.interval_s()
        assert hi - lo == pytest.approx(10.0 / fps)


class TestThresholdFilter:
    def test_zero_threshold_is_identity(self, cfg):
        heat = np.zeros((128, 4))
        heat[5, 0] = 0.4
        preds = PredictionTensors(heat=heat, length=np.ones(128), offset=np.zeros(128))
        dets = decode(preds, cfg)
        assert score_threshold_filter(dets, 0.0) == dets

    def test_half_threshold(self):
        from wordspot.decoder import Detection

        dets = [
            Detection(cls=0, score=s, center=10.0, length=4.0, frames_per_second=25.0)
            for s in (0.9, 0.5, 0.3)
        ]
        kept = score_threshold_filter(dets, 0.5)
        assert [d.score for d in kept] == [0.9, 0.5]

    def test_exact_one_survives_threshold_one(self):
        from wordspot.decoder import Detection

        dets = [
            Detection(cls=0, score=1.0, center=1.0, length=1.0, frames_per_second=25.0),
            Detection(cls=0, score=0.999, center=2.0, length=1.0, frames_per_second=25.0),
        ]
        kept = score_threshold_filter(dets, 1.0)
        assert len(kept) == 1 and kept[0].score == 1.0


class TestDetectionsJsonl:
    def test_round_trip(self, tmp_path, cfg):
        from wordspot.decoder import Detection

        det = Detection(cls=1, score=0.75, center=30.5, length=10.0, frames_per_second=25.0)
        rec = detection_record("utt_1", det, "bravo")
        path = tmp_path / "dets.jsonl"
        write_detections_jsonl(path, [rec])
        loaded = read_detections_jsonl(path)
        assert loaded == [rec]
        assert list(loaded[0].keys()) == [
            "utterance_id", "keyword", "score", "start_s", "end_s", "center_s",
        ]
