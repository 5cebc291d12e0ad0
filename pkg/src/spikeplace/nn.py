"""Stateless spiking neurons and a small tape-based reverse-mode layer library.

Tensors are plain numpy arrays in NCHW layout. Forward passes record what
backward needs on a :class:`Tape`; backward passes pop those records in
exact reverse order, so a layer can only be differentiated once per
forward call.

Spike tensors are stored in the floating compute dtype (their values are
the integers 0, 1, 2) so they can feed matrix products directly.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import GeometryError, TapeMismatchError, UninitializedStatsError


@dataclass(frozen=True)
class NeuronConfig:
    v_th: float = 1.0
    alpha: float = 4.0
    v_reset: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.v_th):
            raise ValueError("v_th must be finite")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def fire(v, cfg: NeuronConfig = NeuronConfig()) -> np.ndarray:
    """Heaviside spike: 1 where ``v >= v_th`` else 0."""
    v = np.asarray(v)
    if not np.all(np.isfinite(v)):
        raise ValueError("membrane potential contains non-finite values")
    return (v >= cfg.v_th).astype(np.int8)


def surrogate_grad(v, cfg: NeuronConfig = NeuronConfig()) -> np.ndarray:
    """Local derivative ``alpha * s * (1 - s)`` with ``s = sigmoid(alpha * (v - v_th))``."""
    s = expit(cfg.alpha * (np.asarray(v) - cfg.v_th))
    return cfg.alpha * s * (1.0 - s)


def surrogate_backward(v, upstream, cfg: NeuronConfig = NeuronConfig()) -> np.ndarray:
    v = np.asarray(v)
    upstream = np.asarray(upstream)
    if v.shape != upstream.shape:
        raise GeometryError(f"shape mismatch: v {v.shape} vs upstream {upstream.shape}")
    return upstream * surrogate_grad(v, cfg).astype(upstream.dtype, copy=False)


class Tape:
    """Stack of (layer, context) records written during a training forward pass."""

    def __init__(self):
        self._records: list[tuple[object, object]] = []

    def push(self, layer, ctx) -> None:
        self._records.append((layer, ctx))

    def pop(self, layer):
        if not self._records:
            raise TapeMismatchError(f"tape is empty; {type(layer).__name__} has no recorded forward")
        owner, ctx = self._records[-1]
        if owner is not layer:
            raise TapeMismatchError(
                f"top of tape belongs to {type(owner).__name__}, not {type(layer).__name__}"
            )
        self._records.pop()
        return ctx

    def __len__(self) -> int:
        return len(self._records)


# --------------------------------------------------------------------------
# module plumbing


class Module:
    """Base class: owns parameters, buffers and child modules."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = OrderedDict()
        self.grads: dict[str, np.ndarray] = OrderedDict()
        self.buffers: dict[str, np.ndarray] = OrderedDict()
        self._children: dict[str, Module] = OrderedDict()
        self.training = False
        self.smooth = False

    def add(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def children(self) -> Iterator[tuple[str, "Module"]]:
        return iter(self._children.items())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children.items():
            yield from child.modules()

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}{name}.")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, p in self.params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_grads(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self.params:
            yield prefix + name, self.grads[name]
        for name, child in self._children.items():
            yield from child.named_grads(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self.buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        out = OrderedDict(self.named_parameters())
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy tensors in place; returns the names that were loaded."""
        loaded = []
        for prefix, mod in self.named_modules():
            pre = f"{prefix}." if prefix else ""
            for store in (mod.params, mod.buffers):
                for name in store:
                    key = pre + name
                    if key in state:
                        src = np.asarray(state[key])
                        if src.shape != store[name].shape:
                            raise GeometryError(f"{key}: shape {src.shape} != {store[name].shape}")
                        store[name] = src.astype(store[name].dtype).copy()
                        loaded.append(key)
                    elif strict:
                        raise KeyError(f"missing tensor {key}")
        for mod in self.modules():
            mod.zero_grad(recurse=False)
        return loaded

    def zero_grad(self, recurse: bool = True) -> None:
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)
        if recurse:
            for _, child in self._children.items():
                child.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_smooth(self, mode: bool = True) -> "Module":
        """Replace Heaviside spikes by their sigmoid surrogate in forward (gradient checks)."""
        for m in self.modules():
            m.smooth = mode
        return self

    def astype(self, dtype) -> "Module":
        for m in self.modules():
            for store in (m.params, m.buffers):
                for k in store:
                    if np.issubdtype(store[k].dtype, np.floating):
                        store[k] = store[k].astype(dtype)
            m.zero_grad(recurse=False)
        return self

    def __call__(self, x, tape: Tape | None = None):
        return self.forward(x, tape)

    def forward(self, x, tape: Tape | None = None):
        raise NotImplementedError

    def backward(self, gy, tape: Tape):
        raise NotImplementedError


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            self.add(str(i), layer)

    def __len__(self) -> int:
        return len(self._children)

    def __getitem__(self, i: int) -> Module:
        return list(self._children.values())[i]

    def forward(self, x, tape=None):
        for _, layer in self._children.items():
            x = layer.forward(x, tape)
        return x

    def backward(self, gy, tape):
        for layer in reversed(list(self._children.values())):
            gy = layer.backward(gy, tape)
        return gy


def kaiming(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


# --------------------------------------------------------------------------
# layers


class Dense(Module):
    """Affine map over the last axis; weight shape ``(out, in)``."""

    def __init__(self, n_in: int, n_out: int, bias: bool = True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.params["weight"] = kaiming(rng, (n_out, n_in), n_in, dtype)
        if bias:
            self.params["bias"] = np.zeros(n_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x, tape=None):
        if x.shape[-1] != self.n_in:
            raise GeometryError(f"Dense expects last dim {self.n_in}, got {x.shape}")
        y = x @ self.params["weight"].T
        if "bias" in self.params:
            y = y + self.params["bias"]
        if tape is not None:
            tape.push(self, x)
        return y

    def backward(self, gy, tape):
        x = tape.pop(self)
        g2 = gy.reshape(-1, self.n_out)
        self.grads["weight"] += g2.T @ x.reshape(-1, self.n_in)
        if "bias" in self.params:
            self.grads["bias"] += g2.sum(axis=0)
        return gy @ self.params["weight"]


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


class Conv2d(Module):
    """2-D convolution with ``groups`` equal to 1 (full) or ``in_ch`` (depthwise)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: int | None = None, groups: int = 1, bias: bool = False,
                 rng=None, dtype=np.float32):
        super().__init__()
        if groups not in (1, in_ch):
            raise ValueError("groups must be 1 or in_ch")
        if groups == in_ch and groups > 1 and out_ch != in_ch:
            raise ValueError("depthwise convolution requires out_ch == in_ch")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        fan_in = (in_ch // groups) * kernel * kernel
        self.params["weight"] = kaiming(rng, (out_ch, in_ch // groups, kernel, kernel), fan_in, dtype)
        if bias:
            self.params["bias"] = np.zeros(out_ch, dtype=dtype)
        self.zero_grad()

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_ch and self.in_ch > 1

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        return (_out_size(h, self.kernel, self.stride, self.padding),
                _out_size(w, self.kernel, self.stride, self.padding))

    def _pad(self, x):
        p = self.padding
        if p == 0:
            return x
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))

    def forward(self, x, tape=None):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise GeometryError(f"Conv2d expects [N, {self.in_ch}, H, W], got {x.shape}")
        n, _, h, w = x.shape
        ho, wo = self.output_shape(h, w)
        if ho <= 0 or wo <= 0:
            raise GeometryError(f"input {h}x{w} too small for kernel {self.kernel}")
        k, s = self.kernel, self.stride
        weight = self.params["weight"]
        xp = self._pad(x)
        if self.depthwise:
            y = np.zeros((n, self.out_ch, ho, wo), dtype=np.result_type(x, weight))
            for i in range(k):
                for j in range(k):
                    y += xp[:, :, i:i + s * ho:s, j:j + s * wo:s] * weight[None, :, 0, i, j, None, None]
            ctx = (x.shape, xp)
        elif k == 1:
            xs = xp[:, :, ::s, ::s][:, :, :ho, :wo]
            y = np.einsum("oc,nchw->nohw", weight[:, :, 0, 0], xs, optimize=True)
            ctx = (x.shape, xs)
        else:
            win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
            cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
            y = (cols @ weight.reshape(self.out_ch, -1).T).reshape(n, ho, wo, self.out_ch)
            y = y.transpose(0, 3, 1, 2)
            ctx = (x.shape, cols)
        if "bias" in self.params:
            y = y + self.params["bias"][None, :, None, None]
        y = np.ascontiguousarray(y)
        if tape is not None:
            tape.push(self, ctx)
        return y

    def backward(self, gy, tape):
        x_shape, saved = tape.pop(self)
        n, c, h, w = x_shape
        _, _, ho, wo = gy.shape
        k, s, p = self.kernel, self.stride, self.padding
        weight = self.params["weight"]
        if "bias" in self.params:
            self.grads["bias"] += gy.sum(axis=(0, 2, 3))
        gxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=gy.dtype)
        if self.depthwise:
            xp = saved
            gw = self.grads["weight"]
            for i in range(k):
                for j in range(k):
                    sl = (slice(None), slice(None), slice(i, i + s * ho, s), slice(j, j + s * wo, s))
                    gw[:, 0, i, j] += np.einsum("nchw,nchw->c", gy, xp[sl])
                    gxp[sl] += gy * weight[None, :, 0, i, j, None, None]
        elif k == 1:
            xs = saved
            self.grads["weight"][:, :, 0, 0] += np.einsum("nohw,nchw->oc", gy, xs, optimize=True)
            gxs = np.einsum("oc,nohw->nchw", weight[:, :, 0, 0], gy, optimize=True)
            gxp[:, :, ::s, ::s][:, :, :ho, :wo] += gxs
        else:
            cols = saved
            g2 = gy.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
            self.grads["weight"] += (g2.T @ cols).reshape(weight.shape)
            gcols = (g2 @ weight.reshape(self.out_ch, -1)).reshape(n, ho, wo, c, k, k)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            return gxp[:, :, p:p + h, p:p + w]
        return gxp


def DepthwiseConv2d(channels: int, kernel: int = 3, stride: int = 1, rng=None, dtype=np.float32) -> Conv2d:
    return Conv2d(channels, channels, kernel, stride, groups=channels, rng=rng, dtype=dtype)


def PointwiseConv2d(in_ch: int, out_ch: int, stride: int = 1, bias: bool = False, rng=None, dtype=np.float32) -> Conv2d:
    return Conv2d(in_ch, out_ch, 1, stride, padding=0, bias=bias, rng=rng, dtype=dtype)


class DepthwiseSeparableConv(Sequential):
    """Depthwise ``k x k`` convolution (carrying the stride) followed by a 1x1 mix."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(
            DepthwiseConv2d(in_ch, kernel, stride, rng=rng, dtype=dtype),
            PointwiseConv2d(in_ch, out_ch, rng=rng, dtype=dtype),
        )
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride

    @property
    def depthwise(self) -> Conv2d:
        return self[0]

    @property
    def pointwise(self) -> Conv2d:
        return self[1]

    def equivalent_kernel(self) -> np.ndarray:
        """Full ``(out, in, k, k)`` kernel computing the same map."""
        dw = self.depthwise.params["weight"][:, 0]  # (in, k, k)
        pw = self.pointwise.params["weight"][:, :, 0, 0]  # (out, in)
        return pw[:, :, None, None] * dw[None]


class BatchNorm(Module):
    """Batch normalisation over axis 1; statistics pooled over all other axes."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["weight"] = np.ones(channels, dtype=dtype)
        self.params["bias"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.buffers["num_batches"] = np.zeros((), dtype=dtype)
        self.zero_grad()

    def _shape(self, x):
        return (1, self.channels) + (1,) * (x.ndim - 2)

    def _axes(self, x):
        return (0,) + tuple(range(2, x.ndim))

    @property
    def initialized(self) -> bool:
        return float(self.buffers["num_batches"]) > 0

    def mark_initialized(self) -> None:
        self.buffers["num_batches"] = np.ones((), dtype=self.buffers["num_batches"].dtype)

    def update_stats(self, x) -> None:
        axes = self._axes(x)
        m = x.size // self.channels
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        mom = self.momentum
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        if not self.initialized:
            self.buffers["running_mean"] = mean.astype(rm.dtype)
            self.buffers["running_var"] = unbiased.astype(rv.dtype)
        else:
            self.buffers["running_mean"] = ((1 - mom) * rm + mom * mean).astype(rm.dtype)
            self.buffers["running_var"] = ((1 - mom) * rv + mom * unbiased).astype(rv.dtype)
        self.buffers["num_batches"] = self.buffers["num_batches"] + 1

    def fold(self) -> tuple[np.ndarray, np.ndarray]:
        """Inference-mode per-channel ``(scale, shift)``."""
        if not self.initialized:
            raise UninitializedStatsError("batch-norm running statistics were never computed")
        scale = self.params["weight"] / np.sqrt(self.buffers["running_var"] + self.eps)
        shift = self.params["bias"] - self.buffers["running_mean"] * scale
        return scale, shift

    def forward(self, x, tape=None):
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise GeometryError(f"BatchNorm expects {self.channels} channels on axis 1, got {x.shape}")
        sh = self._shape(x)
        gamma, beta = self.params["weight"].reshape(sh), self.params["bias"].reshape(sh)
        if self.training:
            axes = self._axes(x)
            mean = x.mean(axis=axes, keepdims=True)
            var = x.var(axis=axes, keepdims=True)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv
            self.update_stats(x)
            batch = True
        else:
            if not self.initialized:
                raise UninitializedStatsError("batch-norm running statistics were never computed")
            inv = (1.0 / np.sqrt(self.buffers["running_var"] + self.eps)).reshape(sh)
            xhat = (x - self.buffers["running_mean"].reshape(sh)) * inv
            batch = False
        y = xhat * gamma + beta
        if tape is not None:
            tape.push(self, (xhat, inv, batch))
        return y.astype(x.dtype, copy=False)

    def backward(self, gy, tape):
        xhat, inv, batch = tape.pop(self)
        axes = self._axes(gy)
        sh = self._shape(gy)
        self.grads["weight"] += (gy * xhat).sum(axis=axes)
        self.grads["bias"] += gy.sum(axis=axes)
        gxhat = gy * self.params["weight"].reshape(sh)
        if not batch:
            return gxhat * inv
        m = gy.size // self.channels
        s1 = gxhat.sum(axis=axes, keepdims=True)
        s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
        return (inv / m) * (m * gxhat - s1 - xhat * s2)


class _Pool2d(Module):
    def __init__(self, kernel: int, stride: int | None = None):
        super().__init__()
        self.kernel = kernel
        self.stride = stride or kernel

    def _windows(self, x):
        k, s = self.kernel, self.stride
        n, c, h, w = x.shape
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        if ho <= 0 or wo <= 0:
            raise GeometryError(f"input {h}x{w} too small for pooling {k}")
        return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo], ho, wo


class AvgPool2d(_Pool2d):
    def forward(self, x, tape=None):
        win, ho, wo = self._windows(x)
        y = win.mean(axis=(-2, -1))
        if tape is not None:
            tape.push(self, x.shape)
        return y

    def backward(self, gy, tape):
        shape = tape.pop(self)
        k, s = self.kernel, self.stride
        _, _, ho, wo = gy.shape
        gx = np.zeros(shape, dtype=gy.dtype)
        g = gy / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += g
        return gx


class MaxPool2d(_Pool2d):
    def forward(self, x, tape=None):
        win, ho, wo = self._windows(x)
        flat = win.reshape(*win.shape[:4], -1)
        arg = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        if tape is not None:
            tape.push(self, (x.shape, arg))
        return y

    def backward(self, gy, tape):
        shape, arg = tape.pop(self)
        k, s = self.kernel, self.stride
        _, _, ho, wo = gy.shape
        gx = np.zeros(shape, dtype=gy.dtype)
        for i in range(k):
            for j in range(k):
                hit = arg == i * k + j
                gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += np.where(hit, gy, 0)
        return gx


class Spike(Module):
    """Stateless threshold neuron; sigmoid surrogate gradient in backward.

    In smooth mode the forward emits ``sigmoid(alpha * (v - v_th))``, whose
    exact derivative is the surrogate used in spiking mode.
    """

    def __init__(self, cfg: NeuronConfig = NeuronConfig()):
        super().__init__()
        self.cfg = cfg
        self.monitor: list | None = None

    def forward(self, v, tape=None):
        if self.smooth:
            out = expit(self.cfg.alpha * (v - self.cfg.v_th)).astype(v.dtype, copy=False)
        else:
            if not np.all(np.isfinite(v)):
                raise ValueError("membrane potential contains non-finite values")
            out = (v >= self.cfg.v_th).astype(v.dtype)
        if self.monitor is not None:
            self.monitor.append(out)
        if tape is not None:
            tape.push(self, v)
        return out

    def backward(self, gy, tape):
        v = tape.pop(self)
        return surrogate_backward(v, gy, self.cfg)


class Saturate(Module):
    """Spike-count identity clipped at one; straight-through gradient.

    Binary spikes pass unchanged. Counts of 2 coming out of an ADD junction
    are reduced to a single spike so that the next ADD stays within {0, 1, 2}.
    Identity in smooth mode.
    """

    def forward(self, x, tape=None):
        if tape is not None:
            tape.push(self, None)
        return x if self.smooth else np.minimum(x, 1)

    def backward(self, gy, tape):
        tape.pop(self)
        return gy


class Reshape(Module):
    def __init__(self, *shape: int):
        super().__init__()
        self.shape = shape

    def forward(self, x, tape=None):
        if tape is not None:
            tape.push(self, x.shape)
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, gy, tape):
        return gy.reshape(tape.pop(self))


class SwapAxes(Module):
    def __init__(self, a: int = 1, b: int = 2):
        super().__init__()
        self.a, self.b = a, b

    def forward(self, x, tape=None):
        if tape is not None:
            tape.push(self, None)
        return np.ascontiguousarray(np.swapaxes(x, self.a, self.b))

    def backward(self, gy, tape):
        tape.pop(self)
        return np.ascontiguousarray(np.swapaxes(gy, self.a, self.b))


# --------------------------------------------------------------------------
# functional entry points


def layer_forward(layer: Module, x, tape: Tape | None = None):
    return layer.forward(x, tape)


def layer_backward(layer: Module, upstream, tape: Tape):
    """Backpropagate ``upstream`` through ``layer``; returns ``(grad_input, grad_params)``.

    ``grad_params`` holds only this call's contribution, keyed like
    ``named_parameters``.
    """
    before = {k: g.copy() for k, g in layer.named_grads()}
    gx = layer.backward(upstream, tape)
    grads = OrderedDict((k, g - before[k]) for k, g in layer.named_grads())
    return gx, grads


def fold_batchnorm(conv: Conv2d, bn: BatchNorm) -> Conv2d:
    """Return a biased convolution equal to ``bn(conv(x))`` in inference mode."""
    scale, shift = bn.fold()
    folded = Conv2d(conv.in_ch, conv.out_ch, conv.kernel, conv.stride, conv.padding,
                    conv.groups, bias=True, dtype=conv.params["weight"].dtype)
    folded.params["weight"] = (conv.params["weight"] * scale[:, None, None, None]).astype(
        conv.params["weight"].dtype)
    b = conv.params.get("bias", np.zeros(conv.out_ch, dtype=scale.dtype))
    folded.params["bias"] = (b * scale + shift).astype(conv.params["weight"].dtype)
    folded.zero_grad()
    return folded


def count_parameters(module: Module) -> int:
    return int(sum(p.size for _, p in module.named_parameters()))
