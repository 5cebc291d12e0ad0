"""SEW-ResNet encoder with depthwise-separable convolutions and a spiking
MixVPR aggregator producing a real-valued place descriptor."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GeometryError
from .nn import (
    BatchNorm,
    Conv2d,
    Dense,
    DepthwiseSeparableConv,
    Module,
    NeuronConfig,
    Reshape,
    Saturate,
    Sequential,
    Spike,
    SwapAxes,
    Tape,
    count_parameters,
)

SEW_FUNCTIONS = ("ADD", "AND", "IAND")


@dataclass(frozen=True)
class SewBlockConfig:
    in_channels: int
    out_channels: int
    stride: int = 1
    g: str = "ADD"

    def __post_init__(self):
        if self.g not in SEW_FUNCTIONS:
            raise ValueError(f"g must be one of {SEW_FUNCTIONS}, got {self.g!r}")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")


@dataclass(frozen=True)
class ModelConfig:
    height: int = 32
    width: int = 32
    stem_channels: int = 32
    stem_kernel: int = 7
    stage_widths: tuple[int, ...] = (32, 64, 128)
    stage_blocks: tuple[int, ...] = (2, 2, 2)
    stage_strides: tuple[int, ...] = (1, 2, 2)
    g: str = "ADD"
    reduce_channels: int = 64
    mixer_depth: int = 2
    channel_proj: int = 256
    row_proj: int = 16
    descriptor_dim: int = 4096
    v_th: float = 1.0
    alpha: float = 4.0

    def __post_init__(self):
        for name in ("stage_widths", "stage_blocks", "stage_strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not (len(self.stage_widths) == len(self.stage_blocks) == len(self.stage_strides)):
            raise ValueError("stage_widths, stage_blocks and stage_strides must have equal length")
        dims = (self.height, self.width, self.stem_channels, self.stem_kernel, self.reduce_channels,
                self.channel_proj, self.row_proj, self.descriptor_dim, *self.stage_widths, *self.stage_blocks)
        if any(d <= 0 for d in dims) or self.mixer_depth < 0:
            raise ValueError("all model dimensions must be positive")
        if self.g not in SEW_FUNCTIONS:
            raise ValueError(f"g must be one of {SEW_FUNCTIONS}")
        if self.channel_proj * self.row_proj != self.descriptor_dim:
            raise ValueError(
                f"channel_proj * row_proj = {self.channel_proj * self.row_proj} != descriptor_dim {self.descriptor_dim}"
            )

    @property
    def total_stride(self) -> int:
        return 2 * int(np.prod(self.stage_strides))

    def feature_shape(self) -> tuple[int, int, int]:
        h, w = self.height, self.width
        pad = self.stem_kernel // 2
        h = (h + 2 * pad - self.stem_kernel) // 2 + 1
        w = (w + 2 * pad - self.stem_kernel) // 2 + 1
        for s in self.stage_strides:
            h = (h + 2 - 3) // s + 1
            w = (w + 2 - 3) // s + 1
        return (self.stage_widths[-1], h, w)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("stage_widths", "stage_blocks", "stage_strides"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# Two single-block stages and one mixer: trains in well under a minute on the
# 32x32 synthetic route while keeping every component of the default layout.
DESK_SMALL = ModelConfig(
    stage_widths=(32, 64),
    stage_blocks=(1, 1),
    stage_strides=(2, 2),
    mixer_depth=1,
)

# Wider stages and a deeper aggregator at DAVIS346-like input resolution;
# 2,828,312 trainable parameters. Widths and depths are a best-effort choice.
PAPER_SCALE = ModelConfig(
    height=260, width=346,
    stem_channels=64,
    stage_widths=(64, 128, 256, 512),
    stage_blocks=(2, 2, 2, 2),
    stage_strides=(1, 2, 2, 2),
    reduce_channels=256,
    mixer_depth=8,
    channel_proj=512,
    row_proj=8,
    descriptor_dim=4096,
)


def sew_combine(g: str, s, o):
    if g == "ADD":
        return s + o
    if g == "AND":
        return s * o
    if g == "IAND":
        return (1 - s) * o
    raise ValueError(g)


def sew_combine_backward(g: str, s, o, gy):
    """Gradients of ``g(s, o)`` with respect to the spike path and the shortcut."""
    if g == "ADD":
        return gy, gy
    if g == "AND":
        return gy * o, gy * s
    if g == "IAND":
        return -gy * o, gy * (1 - s)
    raise ValueError(g)


class SewBlock(Module):
    """Spike-element-wise residual block: ``g(spike_path(x), shortcut(x))``."""

    def __init__(self, cfg: SewBlockConfig, neuron: NeuronConfig = NeuronConfig(), rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        cin, cout, s = cfg.in_channels, cfg.out_channels, cfg.stride
        self.path = self.add("path", Sequential(
            DepthwiseSeparableConv(cin, cout, 3, s, rng=rng, dtype=dtype),
            BatchNorm(cout, dtype=dtype),
            Spike(neuron),
            DepthwiseSeparableConv(cout, cout, 3, 1, rng=rng, dtype=dtype),
            BatchNorm(cout, dtype=dtype),
            Spike(neuron),
        ))
        if s != 1 or cin != cout:
            self.shortcut = self.add("shortcut", Sequential(
                Conv2d(cin, cout, 1, s, padding=0, rng=rng, dtype=dtype),
                BatchNorm(cout, dtype=dtype),
                Spike(neuron),
            ))
        else:
            self.shortcut = self.add("shortcut", Saturate())
        self.monitor: list | None = None

    def forward(self, x, tape=None):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise GeometryError(f"SEW block expects {self.cfg.in_channels} channels, got {x.shape}")
        s = self.path.forward(x, tape)
        o = self.shortcut.forward(x, tape)
        out = sew_combine(self.cfg.g, s, o)
        if self.monitor is not None:
            self.monitor.append(out)
        if tape is not None:
            tape.push(self, (s, o))
        return out

    def backward(self, gy, tape):
        s, o = tape.pop(self)
        gs, go = sew_combine_backward(self.cfg.g, s, o, gy)
        gx = self.shortcut.backward(go, tape)
        return gx + self.path.backward(gs, tape)


class MixerBlock(Module):
    """Row-wise dense mixing with spikes and a SEW ADD skip; input ``[N, C, L]``."""

    def __init__(self, channels: int, length: int, neuron: NeuronConfig = NeuronConfig(), rng=None, dtype=np.float32):
        super().__init__()
        self.path = self.add("path", Sequential(
            Dense(length, length, bias=False, rng=rng, dtype=dtype),
            BatchNorm(channels, dtype=dtype),
            Spike(neuron),
        ))
        self.shortcut = self.add("shortcut", Saturate())
        self.monitor: list | None = None

    def forward(self, x, tape=None):
        s = self.path.forward(x, tape)
        o = self.shortcut.forward(x, tape)
        out = s + o
        if self.monitor is not None:
            self.monitor.append(out)
        if tape is not None:
            tape.push(self, None)
        return out

    def backward(self, gy, tape):
        tape.pop(self)
        gx = self.shortcut.backward(gy, tape)
        return gx + self.path.backward(gy, tape)


class Encoder(Sequential):
    def __init__(self, cfg: ModelConfig, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        neuron = NeuronConfig(cfg.v_th, cfg.alpha)
        layers = [
            Conv2d(2, cfg.stem_channels, cfg.stem_kernel, 2, rng=rng, dtype=dtype),
            BatchNorm(cfg.stem_channels, dtype=dtype),
            Spike(neuron),
        ]
        cin = cfg.stem_channels
        for width, n_blocks, stride in zip(cfg.stage_widths, cfg.stage_blocks, cfg.stage_strides):
            for b in range(n_blocks):
                bc = SewBlockConfig(cin, width, stride if b == 0 else 1, cfg.g)
                layers.append(SewBlock(bc, neuron, rng=rng, dtype=dtype))
                cin = width
        super().__init__(*layers)
        self.cfg = cfg


class SpikingMixVPR(Sequential):
    """Channel reduction, spiking feature mixers, then real-valued channel and row projections."""

    def __init__(self, cfg: ModelConfig, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        neuron = NeuronConfig(cfg.v_th, cfg.alpha)
        c, h, w = cfg.feature_shape()
        rows = h * w
        r = cfg.reduce_channels
        layers = [
            Conv2d(c, r, 1, padding=0, rng=rng, dtype=dtype),
            BatchNorm(r, dtype=dtype),
            Spike(neuron),
            Reshape(r, rows),
        ]
        layers += [MixerBlock(r, rows, neuron, rng=rng, dtype=dtype) for _ in range(cfg.mixer_depth)]
        layers += [
            SwapAxes(1, 2),
            Dense(r, cfg.channel_proj, bias=True, rng=rng, dtype=dtype),
            SwapAxes(1, 2),
            Dense(rows, cfg.row_proj, bias=True, rng=rng, dtype=dtype),
            Reshape(cfg.descriptor_dim),
        ]
        super().__init__(*layers)
        self.cfg = cfg


class SpikeVPR(Module):
    """Histogram batch ``[N, 2, H, W]`` to descriptors ``[N, descriptor_dim]``."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        enc_rng = np.random.default_rng([seed, 1])
        agg_rng = np.random.default_rng([seed, 2])
        self.encoder = self.add("encoder", Encoder(cfg, rng=enc_rng, dtype=dtype))
        self.aggregator = self.add("aggregator", SpikingMixVPR(cfg, rng=agg_rng, dtype=dtype))
        self.zero_grad()

    @property
    def dtype(self):
        return next(iter(self.named_parameters()))[1].dtype

    def forward(self, x, tape=None):
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1:] != (2, self.cfg.height, self.cfg.width):
            raise GeometryError(
                f"expected histograms [N, 2, {self.cfg.height}, {self.cfg.width}], got {x.shape}"
            )
        x = x.astype(self.dtype, copy=False)
        f = self.encoder.forward(x, tape)
        return self.aggregator.forward(f, tape)

    def backward(self, gy, tape):
        gf = self.aggregator.backward(gy, tape)
        return self.encoder.backward(gf, tape)

    def embed(self, histograms, batch_size: int = 64) -> np.ndarray:
        """Inference-mode descriptors for a stack of histograms."""
        was = self.training
        self.eval()
        try:
            out = [self.forward(histograms[i:i + batch_size]) for i in range(0, len(histograms), batch_size)]
        finally:
            self.train(was)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.cfg.descriptor_dim), self.dtype)


def sew_block_forward(cfg: SewBlockConfig, x, tape: Tape | None = None, block: SewBlock | None = None):
    block = block if block is not None else SewBlock(cfg)
    return block.forward(x, tape)


def encoder_forward(model: SpikeVPR, hist, tape: Tape | None = None):
    x = np.asarray(hist.counts if hasattr(hist, "counts") else hist)
    if x.ndim == 3:
        x = x[None]
    return model.encoder.forward(x.astype(model.dtype), tape)


def aggregate(model: SpikeVPR, features, tape: Tape | None = None):
    return model.aggregator.forward(features, tape)


def param_count(model) -> int:
    """Trainable scalars (weights, biases, batch-norm affine) of a module or config."""
    if isinstance(model, ModelConfig):
        model = SpikeVPR(model)
    return count_parameters(model)


def spiking_layers(model: Module) -> list[tuple[str, Module]]:
    """Every fire layer and SEW/mixer junction, in forward order."""
    return [(n, m) for n, m in model.named_modules() if isinstance(m, (Spike, SewBlock, MixerBlock))]
