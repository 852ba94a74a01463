"""Small 1D convolutional detector with explicit forward and backward passes.

The network is numpy-only so every gradient can be validated against
central finite differences.  Layout: an input projection, ``depth``
stride-2 residual blocks, ``depth`` nearest-neighbor upsampling blocks
restoring full resolution, and three convolutional heads (heatmap with
logistic output, length with softplus, offset with logistic).  Activations
are smooth (SiLU) so finite-difference checks are well conditioned.

An optional dense classifier head on the pooled encoder features supports
the window-classification variant.
"""

from __future__ import annotations

import json
import math
import zipfile
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .config import (
    PipelineConfig,
    config_hash,
    model_identity_hash,
    parse_config,
    serialize_config,
)


class ArchError(ValueError):
    """Invalid architecture description."""


class ShapeError(ValueError):
    """Input tensor does not match the architecture's expected shape."""


class CheckpointError(ValueError):
    """Unreadable checkpoint or config mismatch."""


@dataclass(frozen=True)
class ArchSpec:
    input_bins: int
    frames: int
    n_channels: int
    depth: int
    kernel_size: int
    heatmap_channels: int
    num_cls_classes: int = 0  # 0: no classifier head

    def validate(self) -> None:
        if min(self.input_bins, self.frames, self.n_channels, self.depth) < 1:
            raise ArchError("input_bins, frames, n_channels, depth must all be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ArchError("kernel_size must be a positive odd integer")
        if self.heatmap_channels < 1:
            raise ArchError("heatmap_channels must be >= 1")
        if self.frames % (2**self.depth) != 0:
            raise ArchError(
                f"frames ({self.frames}) must be divisible by 2^depth ({2**self.depth})"
            )

    @classmethod
    def from_config(
        cls, cfg: PipelineConfig, frames: int | None = None, num_cls_classes: int = 0
    ) -> "ArchSpec":
        return cls(
            input_bins=cfg.freq_bins,
            frames=frames if frames is not None else cfg.temporal_resolution,
            n_channels=cfg.n_channels,
            depth=cfg.depth,
            kernel_size=cfg.kernel_size,
            heatmap_channels=cfg.heatmap_channels,
            num_cls_classes=num_cls_classes,
        )


@dataclass
class PredictionTensors:
    """Per-clip model outputs on the frame grid."""

    heat: np.ndarray    # [frames, channels] in (0, 1)
    length: np.ndarray  # [frames] >= 0
    offset: np.ndarray  # [frames] in (0, 1)


# ---------------------------------------------------------------------------
# Layers.  Each owns its parameters; forward returns (output, cache) and
# backward returns (input gradient, {param name: gradient}).
# ---------------------------------------------------------------------------


class Conv1d:
    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, stride: int = 1):
        self.name = name
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        self.pad = (kernel - 1) // 2
        self.weight = np.zeros((c_out, c_in, kernel))
        self.bias = np.zeros(c_out)

    def init(self, rng: np.random.Generator) -> None:
        fan_in = self.c_in * self.kernel
        self.weight = rng.standard_normal(self.weight.shape) * math.sqrt(2.0 / fan_in)
        self.bias = np.zeros(self.c_out)

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def forward(self, x: np.ndarray):
        batch, _, t_in = x.shape
        if self.pad:
            xp = np.zeros((batch, self.c_in, t_in + 2 * self.pad))
            xp[:, :, self.pad : self.pad + t_in] = x
        else:
            xp = x
        t_out = (t_in + 2 * self.pad - self.kernel) // self.stride + 1
        span = self.stride * (t_out - 1) + 1
        out = np.empty((batch, self.c_out, t_out))
        out[:] = self.bias[None, :, None]
        for j in range(self.kernel):
            xj = xp[:, :, j : j + span : self.stride]
            out += self.weight[:, :, j] @ xj
        return out, (xp, t_in, t_out)

    def backward(self, cache, grad_out: np.ndarray):
        xp, t_in, t_out = cache
        span = self.stride * (t_out - 1) + 1
        grad_bias = grad_out.sum(axis=(0, 2))
        grad_weight = np.empty_like(self.weight)
        grad_xp = np.zeros_like(xp)
        for j in range(self.kernel):
            xj = xp[:, :, j : j + span : self.stride]
            grad_weight[:, :, j] = np.tensordot(grad_out, xj, axes=([0, 2], [0, 2]))
            grad_xp[:, :, j : j + span : self.stride] += self.weight[:, :, j].T @ grad_out
        grad_x = grad_xp[:, :, self.pad : self.pad + t_in] if self.pad else grad_xp
        return grad_x, {f"{self.name}.weight": grad_weight, f"{self.name}.bias": grad_bias}


class ChannelNorm:
    """Per-frame normalization over channels with learned gain and bias."""

    EPS = 1e-5

    def __init__(self, name: str, channels: int):
        self.name = name
        self.gain = np.ones(channels)
        self.bias = np.zeros(channels)

    def init(self, rng: np.random.Generator) -> None:
        self.gain = np.ones_like(self.gain)
        self.bias = np.zeros_like(self.bias)

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.gain": self.gain, f"{self.name}.bias": self.bias}

    def forward(self, x: np.ndarray):
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xn = (x - mu) * inv_std
        out = self.gain[None, :, None] * xn + self.bias[None, :, None]
        return out, (xn, inv_std)

    def backward(self, cache, grad_out: np.ndarray):
        xn, inv_std = cache
        grad_gain = (grad_out * xn).sum(axis=(0, 2))
        grad_bias = grad_out.sum(axis=(0, 2))
        gxn = grad_out * self.gain[None, :, None]
        grad_x = inv_std * (
            gxn
            - gxn.mean(axis=1, keepdims=True)
            - xn * (gxn * xn).mean(axis=1, keepdims=True)
        )
        return grad_x, {f"{self.name}.gain": grad_gain, f"{self.name}.bias": grad_bias}


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Clipping keeps exp() finite; outputs stay strictly inside (0, 1).
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def silu_forward(x: np.ndarray):
    s = _sigmoid(x)
    return x * s, (x, s)


def silu_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    x, s = cache
    return grad_out * (s * (1.0 + x * (1.0 - s)))


def upsample2_forward(x: np.ndarray):
    out = np.repeat(x, 2, axis=2)
    return out, None


def upsample2_backward(_, grad_out: np.ndarray) -> np.ndarray:
    return grad_out[:, :, 0::2] + grad_out[:, :, 1::2]


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int):
        self.name = name
        self.n_in, self.n_out = n_in, n_out
        self.weight = np.zeros((n_out, n_in))
        self.bias = np.zeros(n_out)

    def init(self, rng: np.random.Generator) -> None:
        self.weight = rng.standard_normal(self.weight.shape) * math.sqrt(2.0 / self.n_in)
        self.bias = np.zeros(self.n_out)

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def forward(self, x: np.ndarray):
        return x @ self.weight.T + self.bias, x

    def backward(self, cache, grad_out: np.ndarray):
        x = cache
        grad_weight = grad_out.T @ x
        grad_bias = grad_out.sum(axis=0)
        grad_x = grad_out @ self.weight
        return grad_x, {f"{self.name}.weight": grad_weight, f"{self.name}.bias": grad_bias}


class _ConvNormAct:
    """conv -> channel norm -> SiLU, the basic unit of the backbone."""

    def __init__(self, name: str, c_in: int, c_out: int, kernel: int, stride: int = 1):
        self.conv = Conv1d(f"{name}.conv", c_in, c_out, kernel, stride)
        self.norm = ChannelNorm(f"{name}.norm", c_out)

    def init(self, rng):
        self.conv.init(rng)
        self.norm.init(rng)

    def params(self):
        return {**self.conv.params(), **self.norm.params()}

    def forward(self, x):
        y, c1 = self.conv.forward(x)
        y, c2 = self.norm.forward(y)
        y, c3 = silu_forward(y)
        return y, (c1, c2, c3)

    def backward(self, cache, grad_out):
        c1, c2, c3 = cache
        g = silu_backward(c3, grad_out)
        g, gn = self.norm.backward(c2, g)
        g, gc = self.conv.backward(c1, g)
        return g, {**gn, **gc}


class _DownBlock:
    """Stride-2 residual block: two conv-norm stages plus a strided 1x1 skip."""

    def __init__(self, name: str, channels: int, kernel: int):
        self.conv_a = Conv1d(f"{name}.conv_a", channels, channels, kernel, stride=2)
        self.norm_a = ChannelNorm(f"{name}.norm_a", channels)
        self.conv_b = Conv1d(f"{name}.conv_b", channels, channels, kernel)
        self.norm_b = ChannelNorm(f"{name}.norm_b", channels)
        self.skip = Conv1d(f"{name}.skip", channels, channels, 1, stride=2)

    def init(self, rng):
        for layer in (self.conv_a, self.norm_a, self.conv_b, self.norm_b, self.skip):
            layer.init(rng)

    def params(self):
        out = {}
        for layer in (self.conv_a, self.norm_a, self.conv_b, self.norm_b, self.skip):
            out.update(layer.params())
        return out

    def forward(self, x):
        y, ca = self.conv_a.forward(x)
        y, cna = self.norm_a.forward(y)
        y, cs1 = silu_forward(y)
        y, cb = self.conv_b.forward(y)
        y, cnb = self.norm_b.forward(y)
        skip, cskip = self.skip.forward(x)
        out, cs2 = silu_forward(y + skip)
        return out, (ca, cna, cs1, cb, cnb, cskip, cs2)

    def backward(self, cache, grad_out):
        ca, cna, cs1, cb, cnb, cskip, cs2 = cache
        grads = {}
        g = silu_backward(cs2, grad_out)
        g_skip, gp = self.skip.backward(cskip, g)
        grads.update(gp)
        g, gp = self.norm_b.backward(cnb, g)
        grads.update(gp)
        g, gp = self.conv_b.backward(cb, g)
        grads.update(gp)
        g = silu_backward(cs1, g)
        g, gp = self.norm_a.backward(cna, g)
        grads.update(gp)
        g, gp = self.conv_a.backward(ca, g)
        grads.update(gp)
        return g + g_skip, grads


class _UpBlock:
    """Nearest-neighbor x2 upsampling followed by conv-norm-SiLU."""

    def __init__(self, name: str, channels: int, kernel: int):
        self.stage = _ConvNormAct(name, channels, channels, kernel)

    def init(self, rng):
        self.stage.init(rng)

    def params(self):
        return self.stage.params()

    def forward(self, x):
        y, cu = upsample2_forward(x)
        y, cs = self.stage.forward(y)
        return y, (cu, cs)

    def backward(self, cache, grad_out):
        cu, cs = cache
        g, grads = self.stage.backward(cs, grad_out)
        return upsample2_backward(cu, g), grads


class _Head:
    """conv-SiLU stack followed by a 1x1 projection (activation applied by caller).

    The hidden width is half the backbone width; the heads only need to
    read out per-frame evidence the backbone already assembled.
    """

    def __init__(self, name: str, channels: int, out_channels: int, kernel: int):
        hidden = max(channels // 2, 8)
        self.conv = Conv1d(f"{name}.conv", channels, hidden, kernel)
        self.out = Conv1d(f"{name}.out", hidden, out_channels, 1)

    def init(self, rng):
        self.conv.init(rng)
        self.out.init(rng)

    def params(self):
        return {**self.conv.params(), **self.out.params()}

    def forward(self, x):
        y, c1 = self.conv.forward(x)
        y, c2 = silu_forward(y)
        y, c3 = self.out.forward(y)
        return y, (c1, c2, c3)

    def backward(self, cache, grad_out):
        c1, c2, c3 = cache
        g, g_out = self.out.backward(c3, grad_out)
        g = silu_backward(c2, g)
        g, g_conv = self.conv.backward(c1, g)
        return g, {**g_out, **g_conv}


# ---------------------------------------------------------------------------
# Detector
# ---------------------------------------------------------------------------


class Detector:
    """The assembled network; deterministic given (arch, seed)."""

    def __init__(self, arch: ArchSpec, seed: int = 0):
        arch.validate()
        self.arch = arch
        rng = np.random.default_rng(seed)
        k = arch.kernel_size
        ch = arch.n_channels
        self.proj = _ConvNormAct("proj", arch.input_bins, ch, k)
        self.down = [_DownBlock(f"down{i}", ch, k) for i in range(arch.depth)]
        self.up = [_UpBlock(f"up{i}", ch, k) for i in range(arch.depth)]
        self.head_heat = _Head("head_heat", ch, arch.heatmap_channels, k)
        self.head_length = _Head("head_length", ch, 1, k)
        self.head_offset = _Head("head_offset", ch, 1, k)
        self.classifier = (
            Dense("classifier", ch, arch.num_cls_classes) if arch.num_cls_classes else None
        )
        for block in self._blocks():
            block.init(rng)
        # Start with near-zero heat everywhere for focal-loss stability.
        self.head_heat.out.bias[:] = math.log(0.01 / 0.99)

    def _blocks(self):
        blocks = [self.proj, *self.down, *self.up, self.head_heat, self.head_length, self.head_offset]
        if self.classifier is not None:
            blocks.append(self.classifier)
        return blocks

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for block in self._blocks():
            out.update(block.params())
        return out

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(values) != set(params):
            missing = sorted(set(params) - set(values))
            extra = sorted(set(values) - set(params))
            raise ArchError(f"parameter mismatch (missing {missing[:3]}, extra {extra[:3]})")
        for name, arr in params.items():
            if arr.shape != values[name].shape:
                raise ArchError(f"parameter {name}: shape {values[name].shape} != {arr.shape}")
            arr[...] = values[name]

    def num_parameters(self) -> int:
        return sum(arr.size for arr in self.parameters().values())

    def describe(self) -> dict:
        return {
            "arch": asdict(self.arch),
            "num_parameters": self.num_parameters(),
            "receptive_field_radius_frames": self.receptive_field_radius(),
        }

    def receptive_field_radius(self) -> int:
        """Analytic bound (in input frames) on one output frame's dependence.

        Walks the detection path backward composing each layer's index band;
        returns the larger of the left/right extents (padding and the
        down/up alignment make the band asymmetric).
        """
        k = self.arch.kernel_size
        pad = (k - 1) // 2
        # (kind, stride) from input to output; "up" halves the index scale
        stack: list[tuple[str, int]] = [("conv", 1)]  # projection
        for _ in range(self.arch.depth):
            stack += [("conv", 2), ("conv", 1)]
        for _ in range(self.arch.depth):
            stack += [("up", 0), ("conv", 1)]
        stack += [("conv", 1)]  # head conv (1x1 output adds nothing)
        lo = hi = 0.0
        for kind, stride in reversed(stack):
            if kind == "conv":
                lo = stride * lo - pad
                hi = stride * hi + (k - 1 - pad)
            else:  # nearest-neighbor x2: output u reads input floor(u/2)
                lo = 0.5 * lo - 0.5
                hi = 0.5 * hi
        return math.ceil(max(-lo, hi))

    # -- detection path ----------------------------------------------------

    def _check_input(self, x: np.ndarray, frames: int) -> None:
        if x.ndim != 3 or x.shape[1] != self.arch.input_bins or x.shape[2] != frames:
            raise ShapeError(
                f"expected input [batch, {self.arch.input_bins}, {frames}], got {x.shape}"
            )

    def forward_batch(self, feats: np.ndarray):
        """Run a [batch, frames, bins] feature batch through the detection path.

        Returns (outputs, cache) where outputs holds heat [B, frames,
        channels], length [B, frames], offset [B, frames].
        """
        if feats.ndim != 3:
            raise ShapeError(f"expected [batch, frames, bins] input, got {feats.shape}")
        x = np.ascontiguousarray(feats.transpose(0, 2, 1), dtype=np.float64)
        self._check_input(x, self.arch.frames)
        caches = {}
        y, caches["proj"] = self.proj.forward(x)
        down_caches = []
        for block in self.down:
            y, c = block.forward(y)
            down_caches.append(c)
        caches["down"] = down_caches
        up_caches = []
        for block in self.up:
            y, c = block.forward(y)
            up_caches.append(c)
        caches["up"] = up_caches
        heat_logits, caches["head_heat"] = self.head_heat.forward(y)
        length_raw, caches["head_length"] = self.head_length.forward(y)
        offset_logits, caches["head_offset"] = self.head_offset.forward(y)

        heat = _sigmoid(heat_logits)
        length = np.logaddexp(0.0, length_raw[:, 0, :])
        offset = _sigmoid(offset_logits[:, 0, :])
        caches["activations"] = (heat, length_raw[:, 0, :], offset)
        caches["_detector"] = id(self)
        caches["_shape"] = feats.shape
        outputs = {
            "heat": heat.transpose(0, 2, 1),
            "length": length,
            "offset": offset,
        }
        return outputs, caches

    def forward(self, feats: np.ndarray) -> tuple[PredictionTensors, dict]:
        """Single-clip forward: feats is [frames, bins]."""
        if feats.ndim != 2:
            raise ShapeError(f"expected [frames, bins] input, got {feats.shape}")
        outputs, cache = self.forward_batch(feats[None])
        preds = PredictionTensors(
            heat=outputs["heat"][0], length=outputs["length"][0], offset=outputs["offset"][0]
        )
        return preds, cache

    def backward(self, cache: dict, grads: dict) -> "OrderedDict[str, np.ndarray]":
        """Backpropagate output-space gradients to every parameter.

        ``grads`` maps heat/length/offset to arrays shaped like the batched
        forward outputs.  Returns gradients keyed like ``parameters()``.
        """
        if cache.get("_detector") != id(self):
            raise ValueError("cache mismatch: cache was produced by a different detector")
        heat, length_raw, offset = cache["activations"]
        g_heat = np.zeros_like(heat)
        if "heat" in grads:
            g = np.asarray(grads["heat"])
            if g.shape != (heat.shape[0], heat.shape[2], heat.shape[1]):
                raise ShapeError(f"heat gradient shape {g.shape} does not match forward output")
            g_heat = g.transpose(0, 2, 1) * heat * (1.0 - heat)
        g_length = np.zeros_like(length_raw)
        if "length" in grads:
            g_length = np.asarray(grads["length"]) * _sigmoid(length_raw)
        g_offset = np.zeros_like(offset)
        if "offset" in grads:
            g_offset = np.asarray(grads["offset"]) * offset * (1.0 - offset)

        param_grads: OrderedDict[str, np.ndarray] = OrderedDict(
            (name, np.zeros_like(arr)) for name, arr in self.parameters().items()
        )

        def absorb(grads_dict):
            for name, g in grads_dict.items():
                param_grads[name] += g

        g_y, gp = self.head_heat.backward(cache["head_heat"], g_heat)
        absorb(gp)
        g2, gp = self.head_length.backward(cache["head_length"], g_length[:, None, :])
        absorb(gp)
        g_y = g_y + g2
        g2, gp = self.head_offset.backward(cache["head_offset"], g_offset[:, None, :])
        absorb(gp)
        g_y = g_y + g2

        for block, c in zip(reversed(self.up), reversed(cache["up"])):
            g_y, gp = block.backward(c, g_y)
            absorb(gp)
        for block, c in zip(reversed(self.down), reversed(cache["down"])):
            g_y, gp = block.backward(c, g_y)
            absorb(gp)
        _, gp = self.proj.backward(cache["proj"], g_y)
        absorb(gp)
        return param_grads

    # -- classification path (window variant) ------------------------------

    def classification_forward(self, feats: np.ndarray):
        """Window classification: encoder -> global average pool -> softmax.

        ``feats`` is [batch, frames, bins] for a short window whose frame
        count must match the architecture.  Returns (probs [batch,
        classes], cache).
        """
        if self.classifier is None:
            raise ArchError("this detector was built without a classification head")
        if feats.ndim == 2:
            feats = feats[None]
        x = np.ascontiguousarray(feats.transpose(0, 2, 1), dtype=np.float64)
        self._check_input(x, self.arch.frames)
        caches = {}
        y, caches["proj"] = self.proj.forward(x)
        down_caches = []
        for block in self.down:
            y, c = block.forward(y)
            down_caches.append(c)
        caches["down"] = down_caches
        t_deep = y.shape[2]
        pooled = y.mean(axis=2)
        logits, caches["classifier"] = self.classifier.forward(pooled)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        probs = expd / expd.sum(axis=1, keepdims=True)
        caches["probs"] = probs
        caches["t_deep"] = t_deep
        caches["_detector"] = id(self)
        return probs, caches

    def classification_backward(self, cache: dict, grad_probs: np.ndarray):
        if cache.get("_detector") != id(self):
            raise ValueError("cache mismatch: cache was produced by a different detector")
        probs = cache["probs"]
        inner = (grad_probs * probs).sum(axis=1, keepdims=True)
        g_logits = probs * (grad_probs - inner)
        param_grads: OrderedDict[str, np.ndarray] = OrderedDict(
            (name, np.zeros_like(arr)) for name, arr in self.parameters().items()
        )

        def absorb(grads_dict):
            for name, g in grads_dict.items():
                param_grads[name] += g

        g_pooled, gp = self.classifier.backward(cache["classifier"], g_logits)
        absorb(gp)
        t_deep = cache["t_deep"]
        g_y = np.repeat(g_pooled[:, :, None], t_deep, axis=2) / t_deep
        for block, c in zip(reversed(self.down), reversed(cache["down"])):
            g_y, gp = block.backward(c, g_y)
            absorb(gp)
        _, gp = self.proj.backward(cache["proj"], g_y)
        absorb(gp)
        return param_grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path,
    detector: Detector,
    cfg: PipelineConfig,
    optimizer_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Versioned binary container with arch, config, and flat parameter arrays."""
    config_text = serialize_config(cfg)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "arch": asdict(detector.arch),
        "config_text": config_text,
        "config_sha256": config_hash(cfg),
        "identity_sha256": model_identity_hash(cfg),
        "extra": extra or {},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, arr in detector.parameters().items():
        arrays[f"param:{name}"] = arr
    if optimizer_state:
        for name, arr in optimizer_state.items():
            arrays[f"opt:{name}"] = np.asarray(arr)
    np.savez(path, **arrays)


def load_checkpoint(
    path, expected_cfg: PipelineConfig | None = None
) -> tuple[Detector, PipelineConfig, dict, dict]:
    """Load (detector, config, optimizer_state, extra); validates the config hash."""
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, zipfile.BadZipFile, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta" not in arrays:
        raise CheckpointError(f"{path} is not a detector checkpoint (missing metadata)")
    meta = json.loads(arrays["meta"].tobytes().decode("utf-8"))
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {meta.get('format_version')}"
        )
    cfg = parse_config(meta["config_text"])
    if config_hash(cfg) != meta["config_sha256"]:
        raise CheckpointError("checkpoint config hash mismatch: container is corrupt")
    if expected_cfg is not None and model_identity_hash(expected_cfg) != meta["identity_sha256"]:
        raise CheckpointError(
            "checkpoint/config hash mismatch: the supplied config describes a "
            "different model (features, targets, or architecture) than the "
            "one the checkpoint was trained with"
        )
    arch = ArchSpec(**meta["arch"])
    detector = Detector(arch, seed=0)
    params = {
        name[len("param:") :]: arr for name, arr in arrays.items() if name.startswith("param:")
    }
    detector.set_parameters(params)
    optimizer_state = {
        name[len("opt:") :]: arr for name, arr in arrays.items() if name.startswith("opt:")
    }
    return detector, cfg, optimizer_state, meta.get("extra", {})
