import numpy as np
import pytest

from wordspot.baseline import (
    WindowPlanError,
    grid_search_step,
    plan_windows,
    windows_to_detections,
)


class TestPlanWindows:
    def test_step_constraint_violation(self):
        # step 0.2 >= window - max_kw = 0.05
        with pytest.raises(WindowPlanError, match="step too large"):
            plan_windows(5.11, 0.5, 0.2, 0.45)

    def test_window_too_small(self):
        with pytest.raises(WindowPlanError, match="window too small"):
            plan_windows(5.11, 0.4, 0.05, 0.45)
        with pytest.raises(WindowPlanError, match="window too small"):
            plan_windows(5.11, 0.45, 0.05, 0.45)  # equality also fails

    def test_worked_example_count(self):
        plan = plan_windows(5.11, 0.5, 0.1, 0.35)
        assert len(plan.windows) == 48
        assert plan.windows[0] == (0.0, 0.5)
        lo, hi = plan.windows[-1]
        assert hi == pytest.approx(5.11)

    def test_final_window_right_aligned(self):
        plan = plan_windows(3.0, 0.5, 0.3, 0.1)
        assert plan.windows[-1][1] == pytest.approx(3.0)

    def test_coverage_exhaustive_10ms(self):
        duration, window, step, max_kw = 5.11, 0.5, 0.1, 0.35
        plan = plan_windows(duration, window, step, max_kw)
        grid = np.arange(0.0, duration - max_kw + 1e-9, 0.01)
        for start in grid:
            interval = (start, start + max_kw)
            assert any(
                w0 - 1e-9 <= interval[0] and interval[1] <= w1 + 1e-9
                for w0, w1 in plan.windows
            ), f"interval {interval} not covered"

    def test_random_valid_triples_cover(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            window = float(rng.uniform(0.3, 1.0))
            max_kw = float(rng.uniform(0.05, window - 0.06))
            step = float(rng.uniform(0.01, window - max_kw - 0.01))
            duration = float(rng.uniform(window, 8.0))
            plan = plan_windows(duration, window, step, max_kw)
            for start in np.arange(0.0, duration - max_kw + 1e-9, 0.01):
                assert any(
                    w0 - 1e-9 <= start and start + max_kw <= w1 + 1e-9
                    for w0, w1 in plan.windows
                )


class TestWindowsToDetections:
    def make_plan(self, n=6, window=0.5, step=0.2):
        windows = [(i * step, i * step + window) for i in range(n)]
        return plan_windows(n * step + window + 1.0, window, step, 0.25) if False else type(
            "P", (), {"window_s": window, "step_s": step, "windows": windows}
        )()

    def test_nothing_above_threshold(self):
        plan = self.make_plan()
        scores = np.full((6, 4), 0.1)  # 2 keywords + unknown + background
        assert windows_to_detections(scores, plan, 0.5, 2, 25.0) == []

    def test_single_confident_window(self):
        plan = self.make_plan()
        scores = np.full((6, 4), 0.05)
        scores[:, 3] = 0.8  # background everywhere
        scores[2] = [0.9, 0.02, 0.03, 0.05]
        dets = windows_to_detections(scores, plan, 0.5, 2, 25.0)
        assert len(dets) == 1
        det = dets[0]
        assert det.cls == 0
        assert det.score == pytest.approx(0.9)
        lo, hi = det.interval_s()
        assert (lo, hi) == (pytest.approx(plan.windows[2][0]), pytest.approx(plan.windows[2][1]))

    def test_consecutive_windows_merge(self):
        plan = self.make_plan()
        scores = np.zeros((6, 4))
        scores[:, 3] = 0.9
        for i, s in zip((1, 2, 3), (0.8, 0.9, 0.7)):
            scores[i] = [s, 0.0, 0.0, 1.0 - s]
        dets = windows_to_detections(scores, plan, 0.5, 2, 25.0)
        assert len(dets) == 1
        det = dets[0]
        assert det.score == pytest.approx(0.9)
        lo, hi = det.interval_s()
        assert lo == pytest.approx(plan.windows[1][0])
        assert hi == pytest.approx(plan.windows[3][1])

    def test_unknown_windows_yield_nothing(self):
        plan = self.make_plan()
        scores = np.zeros((6, 4))
        scores[:, 2] = 0.95  # unknown dominates every window
        assert windows_to_detections(scores, plan, 0.5, 2, 25.0) == []

    def test_merge_idempotent(self):
        plan = self.make_plan()
        rng = np.random.default_rng(1)
        scores = rng.random((6, 4))
        dets = windows_to_detections(scores, plan, 0.4, 2, 25.0)
        # Re-merging the merged intervals must not change them: same-class
        # merged detections never overlap.
        for a in dets:
            for b in dets:
                if a is not b and a.cls == b.cls:
                    lo_a, hi_a = a.interval_s()
                    lo_b, hi_b = b.interval_s()
                    assert hi_a <= lo_b + 1e-12 or hi_b <= lo_a + 1e-12


class TestGridSearch:
    def test_single_admissible_step(self):
        best, results = grid_search_step(lambda s: 0.5, (0.05,), window_s=0.5, max_keyword_s=0.35)
        assert best == 0.05
        assert results == {0.05: 0.5}

    def test_tie_prefers_larger_step(self):
        best, _ = grid_search_step(lambda s: 0.7, (0.05, 0.1), window_s=0.5, max_keyword_s=0.35)
        assert best == 0.1

    def test_all_steps_inadmissible(self):
        with pytest.raises(WindowPlanError, match="no admissible step"):
            grid_search_step(lambda s: 0.0, (0.3, 0.4), window_s=0.5, max_keyword_s=0.35)

    def test_picks_maximum(self):
        scores = {0.05: 0.2, 0.1: 0.9, 0.14: 0.4}
        best, _ = grid_search_step(lambda s: scores[s], (0.05, 0.1, 0.14), 0.5, 0.35)
        assert best == 0.1
