import numpy as np
import pytest

from wordspot.config import PipelineConfig, config_hash
from wordspot.model import (
    ArchError,
    ArchSpec,
    CheckpointError,
    Detector,
    ShapeError,
    load_checkpoint,
    save_checkpoint,
)

TINY = ArchSpec(input_bins=6, frames=16, n_channels=4, depth=2, kernel_size=3, heatmap_channels=3)


def tiny_detector(seed=0, cls_classes=0):
    arch = ArchSpec(
        input_bins=6, frames=16, n_channels=4, depth=2, kernel_size=3,
        heatmap_channels=3, num_cls_classes=cls_classes,
    )
    return Detector(arch, seed=seed)


def linear_probe_loss(det, x, probes):
    """Scalar linear functional of the outputs; used for gradient checking."""
    outputs, cache = det.forward_batch(x)
    value = (
        float(np.sum(outputs["heat"] * probes["heat"]))
        + float(np.sum(outputs["length"] * probes["length"]))
        + float(np.sum(outputs["offset"] * probes["offset"]))
    )
    return value, cache


class TestInit:
    def test_deterministic(self):
        a = tiny_detector(seed=7).parameters()
        b = tiny_detector(seed=7).parameters()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_seeds_differ(self):
        a = tiny_detector(seed=1).parameters()
        b = tiny_detector(seed=2).parameters()
        assert any(not np.array_equal(a[n], b[n]) for n in a)

    def test_zero_input_heat_is_focal_prior(self):
        det = tiny_detector()
        preds, _ = det.forward(np.zeros((16, 6)))
        np.testing.assert_allclose(preds.heat, 0.01, atol=1e-12)

    def test_indivisible_frames_rejected(self):
        with pytest.raises(ArchError, match="divisible"):
            ArchSpec(
                input_bins=6, frames=18, n_channels=4, depth=2, kernel_size=3, heatmap_channels=3
            ).validate()

    def test_describe(self):
        det = tiny_detector()
        info = det.describe()
        assert info["num_parameters"] == det.num_parameters() > 0
        assert info["receptive_field_radius_frames"] >= 1


class TestForward:
    def test_output_ranges(self):
        det = tiny_detector(seed=3)
        rng = np.random.default_rng(0)
        preds, _ = det.forward(rng.standard_normal((16, 6)) * 3)
        assert preds.heat.shape == (16, 3)
        assert preds.length.shape == (16,)
        assert preds.offset.shape == (16,)
        assert np.all(preds.heat > 0) and np.all(preds.heat < 1)
        assert np.all(preds.length >= 0)
        assert np.all(preds.offset > 0) and np.all(preds.offset < 1)

    def test_purity(self):
        det = tiny_detector(seed=4)
        x = np.random.default_rng(1).standard_normal((16, 6))
        a, _ = det.forward(x)
        b, _ = det.forward(x)
        np.testing.assert_array_equal(a.heat, b.heat)
        np.testing.assert_array_equal(a.length, b.length)
        np.testing.assert_array_equal(a.offset, b.offset)

    def test_shape_mismatch(self):
        det = tiny_detector()
        with pytest.raises(ShapeError):
            det.forward(np.zeros((10, 6)))
        with pytest.raises(ShapeError):
            det.forward(np.zeros((16, 5)))

    def test_translation_equivariance(self):
        # All-convolutional with per-frame normalization: a circular shift by
        # one full stride moves the output identically away from the edges.
        arch = ArchSpec(
            input_bins=8, frames=128, n_channels=8, depth=3, kernel_size=3, heatmap_channels=3
        )
        det = Detector(arch, seed=5)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((128, 8))
        shift = 2**arch.depth
        preds_a, _ = det.forward(x)
        preds_b, _ = det.forward(np.roll(x, shift, axis=0))
        margin = det.receptive_field_radius() + shift
        interior = slice(margin, 128 - margin)
        shifted_heat = np.roll(preds_a.heat, shift, axis=0)
        assert np.max(np.abs(preds_b.heat[interior] - shifted_heat[interior])) < 1e-5

    def test_receptive_field_locality(self):
        det = tiny_detector(seed=6)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((16, 6))
        base, _ = det.forward(x)
        radius = det.receptive_field_radius()
        t_probe = 2
        t_far = t_probe + radius + 1
        if t_far < 16:
            x2 = x.copy()
            x2[t_far:] += rng.standard_normal((16 - t_far, 6)) * 5
            moved, _ = det.forward(x2)
            np.testing.assert_allclose(moved.heat[t_probe], base.heat[t_probe], atol=1e-12)


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        det = tiny_detector(seed=7)
        x = np.random.default_rng(4).standard_normal((1, 16, 6))
        out, cache = det.forward_batch(x)
        zeros = {k: np.zeros_like(v) for k, v in out.items()}
        grads = det.backward(cache, zeros)
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_linearity_in_upstream(self):
        det = tiny_detector(seed=8)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 16, 6))
        out, cache = det.forward_batch(x)
        probes = {k: rng.standard_normal(v.shape) for k, v in out.items()}
        g1 = det.backward(cache, probes)
        out, cache = det.forward_batch(x)
        g2 = det.backward(cache, {k: 2.0 * v for k, v in probes.items()})
        for name in g1:
            np.testing.assert_allclose(g2[name], 2.0 * g1[name], rtol=1e-12)

    def test_cache_mismatch_rejected(self):
        det_a = tiny_detector(seed=9)
        det_b = tiny_detector(seed=10)
        x = np.random.default_rng(6).standard_normal((1, 16, 6))
        out, cache = det_a.forward_batch(x)
        with pytest.raises(ValueError, match="cache mismatch"):
            det_b.backward(cache, {k: np.zeros_like(v) for k, v in out.items()})

    def test_directional_derivative(self):
        # (f(p + eps d) - f(p - eps d)) / 2eps must equal grad . d for the
        # whole parameter vector at once.
        rng = np.random.default_rng(7)
        det = tiny_detector(seed=11)
        x = rng.standard_normal((1, 16, 6))
        out, cache = det.forward_batch(x)
        probes = {k: rng.standard_normal(v.shape) for k, v in out.items()}
        value, cache = linear_probe_loss(det, x, probes)
        grads = det.backward(cache, probes)
        params = det.parameters()
        direction = {k: rng.standard_normal(v.shape) for k, v in params.items()}
        eps = 1e-4
        for sign in (1.0, -1.0):
            for k, arr in params.items():
                arr += sign * eps * direction[k]
            if sign > 0:
                f_plus, _ = linear_probe_loss(det, x, probes)
                for k, arr in params.items():
                    arr -= eps * direction[k]
            else:
                f_minus, _ = linear_probe_loss(det, x, probes)
                for k, arr in params.items():
                    arr += eps * direction[k]
        fd = (f_plus - f_minus) / (2 * eps)
        analytic = sum(float(np.sum(grads[k] * direction[k])) for k in grads)
        assert fd == pytest.approx(analytic, rel=1e-5, abs=1e-8)

    def test_sampled_finite_differences(self):
        rng = np.random.default_rng(8)
        det = tiny_detector(seed=12)
        x = rng.standard_normal((1, 16, 6))
        out, cache = det.forward_batch(x)
        probes = {k: rng.standard_normal(v.shape) for k, v in out.items()}
        _, cache = linear_probe_loss(det, x, probes)
        grads = det.backward(cache, probes)
        params = det.parameters()
        eps = 1e-5  # small enough that FD truncation sits well below the gate
        worst = 0.0
        for name, arr in params.items():
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(4, flat.size), replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus, _ = linear_probe_loss(det, x, probes)
                flat[i] = orig - eps
                f_minus, _ = linear_probe_loss(det, x, probes)
                flat[i] = orig
                fd = (f_plus - f_minus) / (2 * eps)
                an = grads[name].reshape(-1)[i]
                err = abs(fd - an) / max(abs(fd), abs(an), 1e-3)
                worst = max(worst, err)
        assert worst < 1e-3


class TestClassificationHead:
    def test_scores_sum_to_one(self):
        det = tiny_detector(seed=13, cls_classes=5)
        rng = np.random.default_rng(9)
        probs, _ = det.classification_forward(rng.standard_normal((3, 16, 6)))
        assert probs.shape == (3, 5)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_uniform_logits_give_uniform_scores(self):
        det = tiny_detector(seed=14, cls_classes=5)
        det.classifier.weight[...] = 0.0
        det.classifier.bias[...] = 0.0
        probs, _ = det.classification_forward(np.random.default_rng(10).standard_normal((2, 16, 6)))
        np.testing.assert_allclose(probs, 1.0 / 5.0, atol=1e-12)

    def test_without_head_rejected(self):
        det = tiny_detector(seed=15)
        with pytest.raises(ArchError, match="classification head"):
            det.classification_forward(np.zeros((1, 16, 6)))

    def test_classification_gradient_directional(self):
        rng = np.random.default_rng(11)
        det = tiny_detector(seed=16, cls_classes=4)
        x = rng.standard_normal((2, 16, 6))
        probe = rng.standard_normal((2, 4))

        def loss():
            probs, cache = det.classification_forward(x)
            return float(np.sum(probs * probe)), cache

        value, cache = loss()
        grads = det.classification_backward(cache, probe)
        params = det.parameters()
        direction = {k: rng.standard_normal(v.shape) for k, v in params.items()}
        eps = 1e-5  # softmax curvature makes truncation error visible at 1e-4
        for k, arr in params.items():
            arr += eps * direction[k]
        f_plus, _ = loss()
        for k, arr in params.items():
            arr -= 2 * eps * direction[k]
        f_minus, _ = loss()
        for k, arr in params.items():
            arr += eps * direction[k]
        fd = (f_plus - f_minus) / (2 * eps)
        analytic = sum(float(np.sum(grads[k] * direction[k])) for k in grads)
        assert fd == pytest.approx(analytic, rel=1e-5, abs=1e-8)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = PipelineConfig(num_keywords=2, n_channels=4, depth=2)
        arch = ArchSpec.from_config(cfg, frames=16)
        det = Detector(arch, seed=17)
        path = tmp_path / "model.npz"
        save_checkpoint(path, det, cfg, optimizer_state={"t": np.array([5])}, extra={"epoch": 3})
        loaded, loaded_cfg, opt_state, extra = load_checkpoint(path)
        assert loaded_cfg == cfg
        assert extra["epoch"] == 3
        assert int(opt_state["t"][0]) == 5
        for name, arr in det.parameters().items():
            np.testing.assert_array_equal(arr, loaded.parameters()[name])
        x = np.random.default_rng(12).standard_normal((16, cfg.freq_bins))
        a, _ = det.forward(x)
        b, _ = loaded.forward(x)
        np.testing.assert_array_equal(a.heat, b.heat)

    def test_config_hash_mismatch(self, tmp_path):
        cfg = PipelineConfig(num_keywords=2, n_channels=4, depth=2)
        det = Detector(ArchSpec.from_config(cfg, frames=16), seed=0)
        path = tmp_path / "model.npz"
        save_checkpoint(path, det, cfg)
        other = PipelineConfig(num_keywords=2, n_channels=4, depth=2, gamma=0.25)
        assert config_hash(other) != config_hash(cfg)
        with pytest.raises(CheckpointError, match="hash mismatch"):
            load_checkpoint(path, expected_cfg=other)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.npz"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
